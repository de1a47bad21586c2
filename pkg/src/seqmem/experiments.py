"""The four simulations, their datasets, and run output.

E1  plain temporal memory on eight letter sequences, dataset changed mid-run.
E2  nursery-rhyme excerpts: LTM-initialised D2 weights against matched random ones.
E3  E2 under noise sequences and two decay rates.
E4  excerpts against nonsense orderings of the same words, both with LTM weights.

Each arm runs in isolation from a seed, so arms can execute in any order or
in parallel and still write identical files.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import platform
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from . import checkpoint
from .config import RunConfig
from .encoder import (ConfigurationError, Vocabulary, build_vocabulary, load_stopwords,
                      make_noise_word, read_corpus_lines, tokenize_and_filter)
from .ltm import (SENSITIVITY_THRESHOLDS, D2WeightMap, LtmLoadError, binarize, load_swow,
                  make_random_control, threshold_sensitivity)
from .metrics import accuracy, curve, first_crossing, mean_defined, write_curve_csv
from .protocol import DiscreteBackend, SequenceCorpus, Trainer, TrainingLog, epochs_to_threshold
from .temporal_memory import TemporalMemory

log = logging.getLogger(__name__)

E1_SEQUENCES = ("XABCDE", "YABCFG", "XMNODE", "YMNOFG", "KPQRIJ", "KPQRLM", "SPQRUV", "SPQRWX")
# endings re-paired across families and reversed, so every learned ending transition changes
E1_MODIFIED = ("XABCGF", "YABCED", "XMNOGF", "YMNOED", "KPQRVU", "KPQRXW", "SPQRJI", "SPQRML")

DEFAULT_BACKEND = {"E1": "discrete", "E2": "spiking", "E3": "discrete", "E4": "discrete"}


# -- datasets ---------------------------------------------------------------

def _corpus(names, token_seqs, vocab: Vocabulary) -> SequenceCorpus:
    seqs = tuple(tuple([vocab.start_item] + [vocab.code(t) for t in s]) for s in token_seqs)
    return SequenceCorpus(tuple(names), seqs, vocab)


def build_e1_dataset(seed: int = 0, n_columns: int = 1024, columns_per_item: int = 6):
    """Eight letter sequences and their modified versions over one vocabulary."""
    letters = sorted(set("".join(E1_SEQUENCES + E1_MODIFIED)))
    vocab = build_vocabulary(letters, n_columns, columns_per_item, seed)
    original = _corpus(E1_SEQUENCES, [list(s) for s in E1_SEQUENCES], vocab)
    modified = _corpus(E1_MODIFIED, [list(s) for s in E1_MODIFIED], vocab)
    return original, modified


def poem_tokens(corpus_path: str | None = None, stopwords_path: str | None = None) -> list[list[str]]:
    stop = load_stopwords(stopwords_path)
    return [tokenize_and_filter(line, stop) for line in read_corpus_lines(corpus_path)]


def build_e2_dataset(seed: int = 0, n_columns: int = 1024, columns_per_item: int = 6,
                     corpus_path: str | None = None, stopwords_path: str | None = None) -> SequenceCorpus:
    seqs = poem_tokens(corpus_path, stopwords_path)
    if not any(seqs):
        raise ConfigurationError("corpus is empty after stop-word filtering")
    vocab = build_vocabulary([t for s in seqs for t in s], n_columns, columns_per_item, seed)
    return _corpus([f"poem{i + 1}" for i in range(len(seqs))], seqs, vocab)


def build_nonsense_dataset(vocab: Vocabulary, count: int, rng: np.random.Generator,
                           min_len: int = 6, max_len: int = 12) -> SequenceCorpus:
    """Random orderings of distinct vocabulary words, start item first."""
    words = vocab.word_items
    if len(words) < max_len:
        log.warning("vocabulary of %d words caps nonsense length at %d", len(words), len(words))
        max_len = len(words)
        min_len = min(min_len, max_len)
    seqs = []
    for _ in range(count):
        n = int(rng.integers(min_len, max_len + 1))
        pick = rng.choice(len(words), size=n, replace=False)
        seqs.append(tuple([vocab.start_item] + [words[int(i)] for i in pick]))
    return SequenceCorpus(tuple(f"nonsense{i + 1}" for i in range(count)), tuple(seqs), vocab)


def corpus_digest(corpus: SequenceCorpus) -> str:
    payload = json.dumps({"vocab": corpus.vocab.digest(),
                          "sequences": [list(s) for s in corpus.sequences]})
    return hashlib.sha256(payload.encode()).hexdigest()


# -- results ----------------------------------------------------------------

@dataclass
class ArmResult:
    experiment: str
    arm: str
    seed: int
    series: list[tuple[int, float, float]]
    summary: dict
    log: TrainingLog | None = None
    hashes: dict = field(default_factory=dict)
    error: str | None = None
    seconds: float = 0.0
    checkpoint: dict | None = None

    @property
    def filename(self) -> str:
        return f"{self.experiment}_{self.arm}_{self.seed}.csv"


@dataclass
class ExperimentResult:
    experiment: str
    arms: list[ArmResult]

    @property
    def partial(self) -> bool:
        return any(a.error for a in self.arms)

    def arm(self, name: str, seed: int) -> ArmResult:
        for a in self.arms:
            if a.arm == name and a.seed == seed:
                return a
        raise KeyError((name, seed))


def _presentation_curve(log: TrainingLog) -> list[float]:
    """Mean accuracy per sequence presentation (noise and repeats excluded)."""
    out: list[float] = []
    cur: list[float] = []
    for r in log.scored():
        # element 1 opens a new presentation
        if r.step == 1 and cur:
            out.append(mean_defined(cur))
            cur = []
        cur.append(r.accuracy)
    if cur:
        out.append(mean_defined(cur))
    return out


def _seeds(seed: int) -> dict[str, int]:
    """Independent sub-seeds for every random stream of one arm."""
    names = ("vocab", "control", "tm", "protocol", "order")
    state = np.random.SeedSequence(seed).generate_state(len(names))
    return dict(zip(names, (int(x) for x in state)))


def _ltm_map(cfg: RunConfig, vocab: Vocabulary) -> tuple[D2WeightMap, dict[str, int]]:
    """The binary LTM map, plus its edge count across binarisation thresholds."""
    full = load_swow(cfg.ltm.path, cfg.ltm.mode, 0.0)
    graph = full.above(cfg.ltm.min_strength)
    if not graph.edges:
        raise LtmLoadError(f"no LTM edges at min_strength={cfg.ltm.min_strength}")
    sens = threshold_sensitivity(full, vocab, (*SENSITIVITY_THRESHOLDS, cfg.ltm.min_strength))
    return binarize(graph, vocab), sens


def _d2_min_sources(cfg: RunConfig) -> int:
    return cfg.ltm.d2_min_sources or math.ceil(cfg.encoder.columns_per_item / 2)


def _make_backend(cfg: RunConfig, backend: str, tm: TemporalMemory, d2map: D2WeightMap | None):
    if backend == "spiking":
        from .spiking import SpikingBackend
        return SpikingBackend(tm, d2map, cfg.spiking.build())
    return DiscreteBackend(tm, d2map, _d2_min_sources(cfg))


def _train_arm(cfg: RunConfig, exp: str, arm: str, seed: int, corpus: SequenceCorpus,
               d2map: D2WeightMap, backend: str, sensitivity: dict | None = None,
               **protocol_overrides) -> ArmResult:
    sd = _seeds(seed)
    tm = TemporalMemory(cfg.learning.build(), seed=sd["tm"], gating=True)
    be = _make_backend(cfg, backend, tm, d2map)
    params = cfg.protocol.build(sd["protocol"], **protocol_overrides)
    trainer = Trainer(be, corpus, params)
    trainer.run()
    epochs = trainer.log.epoch_accuracy()
    pres = _presentation_curve(trainer.log)
    series = curve(pres, cfg.smoothing_window)
    smooth = [s for _, _, s in series]
    hit = first_crossing(smooth, cfg.threshold)
    summary = {
        "backend": backend,
        "epochs_to_threshold": epochs_to_threshold(epochs, cfg.threshold),
        "presentations_to_threshold": None if hit is None else hit + 1,
        "final_accuracy": epochs[-1] if epochs else None,
        "epoch_accuracy": epochs,
        "ltm_edges": d2map.m if d2map is not None else 0,
        "ltm_edges_by_min_strength": sensitivity,
        "noise_prob": params.noise_prob,
        "rho": params.rho,
        "seconds_per_step": params.seconds_per_step,
        "noise_sequences": trainer.noise_draws,
        "segments": len(tm.store.segments),
    }
    ck = (checkpoint.to_dict(tm, corpus.vocab, d2map, {"experiment": exp, "arm": arm, "seed": seed})
          if cfg.save_checkpoints else None)
    return ArmResult(exp, arm, seed, series, summary, trainer.log,
                     {"corpus": corpus_digest(corpus)}, checkpoint=ck)


# -- the experiments ----------------------------------------------------------

def run_e1_arm(cfg: RunConfig, seed: int, backend: str = "discrete") -> ArmResult:
    """Plain temporal memory (no gating, no LTM), one noise word between sequences."""
    ec = cfg.e1
    sd = _seeds(seed)
    original, modified = build_e1_dataset(sd["vocab"], cfg.learning.n_columns,
                                          cfg.encoder.columns_per_item)
    tm = TemporalMemory(cfg.learning.build(), seed=sd["tm"], gating=False)
    be = _make_backend(cfg, backend, tm, None)
    rng = np.random.default_rng(sd["order"])
    m = cfg.learning.n_columns
    noise_b = cfg.protocol.noise_b
    values: list[float] = []
    total = ec.presentations_before_swap + ec.presentations_after_swap
    order: list[int] = []
    for k in range(total):
        corpus = original if k < ec.presentations_before_swap else modified
        if not order:
            order = [int(i) for i in rng.permutation(len(corpus))]
        cols = corpus.columns(order.pop())
        be.present(make_noise_word(m, noise_b, rng).as_set())
        trace = []
        for j, c in enumerate(cols):
            out = be.present(c)
            if j > 0:
                trace.append(accuracy(c, out.predicted_columns))
        measured = [a for pos, a in enumerate(trace, start=1) if pos >= ec.measure_from_element]
        values.append(mean_defined(measured))
    series = curve(values, cfg.smoothing_window)
    swap = ec.presentations_before_swap
    smooth = [s for _, _, s in series]
    raw = [r for _, r, _ in series]
    after = raw[swap:swap + 10]
    # first smoothed value whose window holds only post-swap presentations
    clean = swap + cfg.smoothing_window - 1
    rec = first_crossing(smooth[clean:], 0.99) if len(smooth) > clean else None
    summary = {
        "backend": backend,
        "swap_at": swap,
        "pre_swap_peak_smoothed": max(smooth[:swap]),
        "pre_swap_first_0.99": first_crossing(smooth[:swap], 0.99),
        "post_swap_min_raw_10": min(after) if after else None,
        "post_swap_recovery_smoothed": max(smooth[clean:]) if len(smooth) > clean else None,
        "post_swap_recovered_at": None if rec is None else clean + rec,
        "final_accuracy": smooth[-1],
        "segments": len(tm.store.segments),
    }
    ck = (checkpoint.to_dict(tm, original.vocab, None, {"experiment": "E1", "arm": "htm", "seed": seed})
          if cfg.save_checkpoints else None)
    return ArmResult("E1", "htm", seed, series, summary, None,
                     {"corpus": corpus_digest(original), "modified": corpus_digest(modified)},
                     checkpoint=ck)


def e2_arms(cfg: RunConfig) -> list[str]:
    return ["ltm", "random"]


def run_e2_arm(cfg: RunConfig, arm: str, seed: int, backend: str) -> ArmResult:
    sd = _seeds(seed)
    corpus = build_e2_dataset(sd["vocab"], cfg.learning.n_columns, cfg.encoder.columns_per_item,
                              cfg.encoder.corpus, cfg.encoder.stopwords)
    ltm, sens = _ltm_map(cfg, corpus.vocab)
    if arm == "ltm":
        d2 = ltm
    elif arm == "random":
        d2 = make_random_control(ltm.m, corpus.vocab, sd["control"])
    else:
        raise ConfigurationError(f"unknown E2 arm {arm!r}")
    return _train_arm(cfg, "E2", arm, seed, corpus, d2, backend, sens)


def _fmt(x: float) -> str:
    return f"{x:g}"


def e3_arms(cfg: RunConfig) -> list[str]:
    return [f"{w}-n{_fmt(n)}-rho{_fmt(r)}" for r in cfg.e3_rhos for n in cfg.e3_noise_levels
            for w in ("ltm", "random")]


def parse_e3_arm(arm: str) -> tuple[str, float, float]:
    try:
        w, n, r = arm.split("-", 2)
        if not (n.startswith("n") and r.startswith("rho")):
            raise ValueError
        return w, float(n[1:]), float(r[3:])
    except ValueError:
        raise ConfigurationError(f"bad E3 arm name {arm!r} (want e.g. ltm-n0.3-rho1e-07)") from None


def run_e3_arm(cfg: RunConfig, arm: str, seed: int, backend: str) -> ArmResult:
    w, n, rho = parse_e3_arm(arm)
    sd = _seeds(seed)
    corpus = build_e2_dataset(sd["vocab"], cfg.learning.n_columns, cfg.encoder.columns_per_item,
                              cfg.encoder.corpus, cfg.encoder.stopwords)
    ltm, sens = _ltm_map(cfg, corpus.vocab)
    if w == "ltm":
        d2 = ltm
    elif w == "random":
        d2 = make_random_control(ltm.m, corpus.vocab, sd["control"])
    else:
        raise ConfigurationError(f"unknown weight init {w!r}")
    return _train_arm(cfg, "E3", arm, seed, corpus, d2, backend, sens, noise_prob=n, rho=rho,
                      seconds_per_step=cfg.e3_seconds_per_step)


def e4_arms(cfg: RunConfig) -> list[str]:
    return ["poems", "nonsense"]


def run_e4_arm(cfg: RunConfig, arm: str, seed: int, backend: str) -> ArmResult:
    sd = _seeds(seed)
    poems = build_e2_dataset(sd["vocab"], cfg.learning.n_columns, cfg.encoder.columns_per_item,
                             cfg.encoder.corpus, cfg.encoder.stopwords)
    ltm, sens = _ltm_map(cfg, poems.vocab)
    if arm == "poems":
        corpus = poems
    elif arm == "nonsense":
        e4 = cfg.e4
        corpus = build_nonsense_dataset(poems.vocab, e4.nonsense_count,
                                        np.random.default_rng(sd["control"]),
                                        e4.nonsense_min_len, e4.nonsense_max_len)
    else:
        raise ConfigurationError(f"unknown E4 arm {arm!r}")
    return _train_arm(cfg, "E4", arm, seed, corpus, ltm, backend, sens)


ARMS: dict[str, Callable[[RunConfig], list[str]]] = {
    "E1": lambda cfg: ["htm"],
    "E2": e2_arms,
    "E3": e3_arms,
    "E4": e4_arms,
}


def run_arm(cfg: RunConfig, exp: str, arm: str, seed: int, backend: str | None = None) -> ArmResult:
    backend = backend or cfg.backend or DEFAULT_BACKEND[exp]
    t0 = time.perf_counter()
    if exp == "E1":
        if arm != "htm":
            raise ConfigurationError(f"unknown E1 arm {arm!r}")
        res = run_e1_arm(cfg, seed, backend)
    elif exp == "E2":
        res = run_e2_arm(cfg, arm, seed, backend)
    elif exp == "E3":
        res = run_e3_arm(cfg, arm, seed, backend)
    elif exp == "E4":
        res = run_e4_arm(cfg, arm, seed, backend)
    else:
        raise ConfigurationError(f"unknown experiment {exp!r}")
    res.seconds = time.perf_counter() - t0
    return res


def _run_arm_safe(args) -> ArmResult:
    cfg_dict, exp, arm, seed, backend = args
    cfg = RunConfig.model_validate(cfg_dict)
    try:
        return run_arm(cfg, exp, arm, seed, backend)
    except Exception as e:  # one failing arm must not sink the others
        log.error("arm %s/%s seed %d failed: %s", exp, arm, seed, e)
        return ArmResult(exp, arm, seed, [], {}, None, error=f"{type(e).__name__}: {e}\n"
                         + traceback.format_exc(limit=5))


def run_experiment(cfg: RunConfig, exp: str | None = None, backend: str | None = None,
                   arms: list[str] | None = None, seeds: list[int] | None = None,
                   progress: Callable[[ArmResult], None] | None = None) -> ExperimentResult:
    """All requested arms x seeds; failures are recorded per arm."""
    exp = exp or cfg.experiment
    if exp not in ARMS:
        raise ConfigurationError(f"unknown experiment {exp!r}")
    all_arms = ARMS[exp](cfg)
    arms = arms or cfg.arms or all_arms
    bad = [a for a in arms if a not in all_arms and exp != "E3"]
    if bad:
        raise ConfigurationError(f"unknown arm(s) for {exp}: {bad}; choose from {all_arms}")
    if exp == "E3":
        for a in arms:
            parse_e3_arm(a)
    seeds = seeds if seeds is not None else cfg.seeds
    jobs = [(cfg.model_dump(), exp, a, s, backend) for s in seeds for a in arms]
    results: list[ArmResult] = []
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for r in pool.map(_run_arm_safe, jobs):
                results.append(r)
                if progress:
                    progress(r)
    else:
        for j in jobs:
            r = _run_arm_safe(j)
            results.append(r)
            if progress:
                progress(r)
    return ExperimentResult(exp, results)


# -- output -------------------------------------------------------------------

def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(type(o))


def _clean(x):
    if isinstance(x, float) and math.isnan(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_clean(v) for v in x]
    return x


def summarize(result: ExperimentResult) -> dict:
    out = {"experiment": result.experiment, "partial": result.partial, "arms": {}}
    for a in result.arms:
        entry = {"error": a.error} if a.error else _clean(a.summary)
        out["arms"].setdefault(a.arm, {})[str(a.seed)] = entry
    return out


def write_outputs(result: ExperimentResult, out_dir: str | Path, cfg: RunConfig,
                  write_logs: bool | None = None) -> dict:
    """Per-arm curve CSVs, ``summary.json`` and ``run-meta.json``; returns the summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_logs = cfg.write_logs if write_logs is None else write_logs
    files = []
    for a in result.arms:
        if a.error:
            continue
        write_curve_csv(out / a.filename, a.series)
        files.append(a.filename)
        if write_logs and a.log is not None:
            name = a.filename[:-4] + "_log.csv"
            a.log.write_csv(out / name)
            files.append(name)
        if a.checkpoint is not None:
            name = a.filename[:-4] + ".ckpt.json.gz"
            checkpoint.write_dict(out / name, a.checkpoint)
            files.append(name)
    summary = summarize(result)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=_json_default))
    meta = {
        "experiment": result.experiment,
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": cfg.resolved(),
        "seeds": sorted({a.seed for a in result.arms}),
        "arms": sorted({a.arm for a in result.arms}),
        "backends": sorted({a.summary.get("backend", "") for a in result.arms if not a.error}),
        "ltm_mode": cfg.ltm.mode,
        "ltm_source": cfg.ltm.path or "packaged:mini_wan.csv",
        "dataset_hashes": {f"{a.arm}/{a.seed}": a.hashes for a in result.arms},
        "runtime_seconds": {f"{a.arm}/{a.seed}": round(a.seconds, 3) for a in result.arms},
        "errors": {f"{a.arm}/{a.seed}": a.error for a in result.arms if a.error},
        "files": files,
    }
    (out / "run-meta.json").write_text(json.dumps(meta, indent=2, default=_json_default))
    return summary
