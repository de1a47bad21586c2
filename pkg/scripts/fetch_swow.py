#!/usr/bin/env python3
"""Prepare the SWOW-EN word-association norms for ``ltm.path``.

The English Small World of Words data is distributed from
https://smallworldofwords.org/project/research after accepting its
licence, so it cannot be downloaded anonymously. Download the archive by
hand (or pass a direct link you were given with ``--url``), then run::

    python3 scripts/fetch_swow.py SWOW-EN2018.zip --mode R123 --out swow_r123.csv

Accepted inputs, as a plain file or inside a zip:

* the per-participant response table (columns ``cue, R1, R2, R3``), which
  is aggregated here into strengths;
* a precomputed strength table (``cue, response`` plus a strength column
  such as ``R123.Strength``), comma or tab separated.

The output is a ``cue,response,strength`` CSV that the package loads
directly. Loading the raw table with ``ltm.path`` also works; converting
once just saves the aggregation on every run.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
import tempfile
import urllib.request
import zipfile
from collections import Counter, defaultdict
from pathlib import Path

MISSING = {"", "na", "nan", "no more responses", "unknown word", "x"}


def _open_table(path: Path) -> io.TextIOBase:
    if zipfile.is_zipfile(path):
        zf = zipfile.ZipFile(path)
        names = [n for n in zf.namelist() if n.lower().endswith((".csv", ".tsv", ".txt"))]
        if not names:
            sys.exit(f"{path}: no table inside the archive")
        # prefer the raw response table, then any strength table
        names.sort(key=lambda n: ("r100" not in n.lower() and "strength" not in n.lower(), n))
        print(f"reading {names[0]} from {path}", file=sys.stderr)
        return io.TextIOWrapper(zf.open(names[0]), encoding="utf-8", newline="")
    return open(path, encoding="utf-8", newline="")


def _reader(fh):
    text = fh.read()
    dialect = csv.Sniffer().sniff(text[:65536], delimiters=",\t;")
    return csv.reader(io.StringIO(text), dialect)


def _clean(tok: str) -> str | None:
    t = tok.strip().lower()
    return None if t in MISSING else t


def convert(src: Path, mode: str) -> dict[tuple[str, str], float]:
    with _open_table(src) as fh:
        rows = _reader(fh)
        header = [h.strip().lower() for h in next(rows)]
        idx = {h: i for i, h in enumerate(header)}
        if "cue" in idx and {"r1", "r2", "r3"} <= idx.keys():
            cols = ["r1"] if mode == "R1" else ["r1", "r2", "r3"]
            counts: dict[str, Counter] = defaultdict(Counter)
            for row in rows:
                if len(row) < len(header):
                    continue
                cue = _clean(row[idx["cue"]])
                if cue is None:
                    continue
                for c in cols:
                    r = _clean(row[idx[c]])
                    if r is not None:
                        counts[cue][r] += 1
            edges = {}
            for cue, cnt in counts.items():
                total = sum(cnt.values())
                for r, k in cnt.items():
                    edges[(cue, r)] = k / total
            return edges
        strength_col = next((h for h in (f"{mode.lower()}.strength", "strength") if h in idx), None)
        if "cue" not in idx or "response" not in idx or strength_col is None:
            sys.exit(f"{src}: unrecognised header {header}")
        edges = {}
        for row in rows:
            try:
                cue, r = _clean(row[idx["cue"]]), _clean(row[idx["response"]])
                s = float(row[idx[strength_col]])
            except (IndexError, ValueError):
                continue
            if cue and r and s > 0:
                edges[(cue, r)] = s
        return edges


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("source", nargs="?", help="downloaded SWOW-EN file or zip")
    ap.add_argument("--url", help="direct download link (used when SOURCE is omitted)")
    ap.add_argument("--mode", choices=["R1", "R123"], default="R123")
    ap.add_argument("--out", required=True, help="edge-list CSV to write")
    args = ap.parse_args(argv)
    if args.source:
        src = Path(args.source)
    elif args.url:
        tmp = Path(tempfile.mkdtemp()) / Path(args.url).name
        print(f"downloading {args.url}", file=sys.stderr)
        urllib.request.urlretrieve(args.url, tmp)
        src = tmp
    else:
        ap.error("give a downloaded file or --url (see the module docstring for where to get it)")
    edges = convert(src, args.mode)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["cue", "response", "strength"])
        for (c, r), s in sorted(edges.items()):
            w.writerow([c, r, f"{s:.6g}"])
    print(f"wrote {len(edges)} edges to {args.out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
