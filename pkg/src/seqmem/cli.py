"""``seqmem`` command line: a thin client over the service operations.

Without ``--server`` the operations run in this process; with it, the same
requests go to a running ``seqmem serve`` instance over HTTP. Paths are
resolved here and sent as absolute paths, so a remote server must share the
filesystem.
"""
from __future__ import annotations

import json
import logging
import sys
import time
from pathlib import Path

import click
import httpx
import yaml

from . import __version__
from .checkpoint import CheckpointError
from .encoder import ConfigurationError
from .service import core
from .service.schemas import (InspectRequest, InspectResponse, Job, RunRequest, RunResponse,
                              ValidateRequest, ValidateResponse)

EXIT_PARTIAL = 1
EXIT_CONFIG = 2


class LocalClient:
    def validate(self, config: dict) -> ValidateResponse:
        return core.validate_config(ValidateRequest(config=config))

    def run(self, req: RunRequest) -> RunResponse:
        return core.run(req, progress=_echo_arm)

    def inspect(self, path: str) -> InspectResponse:
        return core.inspect(InspectRequest(path=path))


class RemoteClient:
    def __init__(self, base_url: str, poll_seconds: float = 2.0, timeout: float = 30.0):
        self.http = httpx.Client(base_url=base_url.rstrip("/"), timeout=timeout)
        self.poll_seconds = poll_seconds

    def _post(self, path: str, body) -> dict:
        r = self.http.post(path, json=body.model_dump())
        if r.status_code == 422:
            detail = r.json().get("detail")
            raise ConfigurationError("server rejected the request:\n  "
                                     + "\n  ".join(map(str, detail if isinstance(detail, list) else [detail])))
        if r.status_code == 400:
            raise CheckpointError(r.json().get("detail"))
        r.raise_for_status()
        return r.json()

    def validate(self, config: dict) -> ValidateResponse:
        return ValidateResponse.model_validate(self._post("/validate-config", ValidateRequest(config=config)))

    def run(self, req: RunRequest) -> RunResponse:
        job = Job.model_validate(self._post("/runs", req))
        click.echo(f"job {job.id} queued on {self.http.base_url}", err=True)
        while job.state in ("queued", "running"):
            time.sleep(self.poll_seconds)
            r = self.http.get(f"/runs/{job.id}")
            r.raise_for_status()
            job = Job.model_validate(r.json())
        if job.state == "failed":
            raise click.ClickException(f"job {job.id} failed: {job.error}")
        for a in job.result.arms:
            click.echo(_arm_line(a.arm, a.seed, a.seconds, a.error))
        return job.result

    def inspect(self, path: str) -> InspectResponse:
        return InspectResponse.model_validate(self._post("/inspect", InspectRequest(path=path)))


def _arm_line(arm: str, seed: int, seconds: float, error: str | None) -> str:
    if error:
        return f"  {arm} seed {seed}: FAILED {error.splitlines()[0]}"
    return f"  {arm} seed {seed}: done in {seconds:.1f}s"


def _echo_arm(a) -> None:
    click.echo(_arm_line(a.arm, a.seed, a.seconds, a.error))


def _client(server: str | None):
    return RemoteClient(server) if server else LocalClient()


def _read_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigurationError(f"config file not found: {p}")
    text = p.read_text(encoding="utf-8")
    try:
        data = json.loads(text) if p.suffix.lower() == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigurationError(f"{p}: cannot parse: {e}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{p}: top level must be a mapping")
    return data


def _split_arms(values: tuple[str, ...]) -> list[str] | None:
    arms = [a for v in values for a in v.split(",") if a]
    return arms or None


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="seqmem")
@click.option("-v", "--verbose", count=True, help="More log output (repeatable).")
def main(verbose: int) -> None:
    """Sequence memory simulator with LTM-gated learning."""
    level = logging.WARNING - 10 * verbose
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--exp", "experiment", required=True, type=click.Choice(["E1", "E2", "E3", "E4"]))
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="YAML or JSON run config.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", "seeds", type=int, multiple=True, help="Seed(s); overrides the config.")
@click.option("--backend", type=click.Choice(["discrete", "spiking"]), default=None)
@click.option("--arms", multiple=True, help="Arm names, repeatable or comma separated.")
@click.option("--workers", type=int, default=None, help="Worker processes for arms x seeds.")
@click.option("--save-checkpoints", is_flag=True, help="Write a checkpoint per arm.")
@click.option("--server", default=None, help="Base URL of a running seqmem service.")
def run(experiment, config_path, out_dir, seeds, backend, arms, workers, save_checkpoints, server):
    """Run one experiment and write CSV curves, summary.json and run-meta.json."""
    try:
        config = _read_config(config_path)
        if workers is not None:
            config["workers"] = workers
        if save_checkpoints:
            config["save_checkpoints"] = True
        req = RunRequest(experiment=experiment, out_dir=str(Path(out_dir).resolve()), config=config,
                         seeds=list(seeds) or None, backend=backend, arms=_split_arms(arms))
        res = _client(server).run(req)
    except ConfigurationError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    click.echo(f"wrote {len(res.files)} files to {res.out_dir}")
    if res.partial:
        click.echo("run is PARTIAL: some arms failed, see run-meta.json", err=True)
        sys.exit(EXIT_PARTIAL)


@main.command("validate-config")
@click.argument("config_file", required=False, type=click.Path(dir_okay=False))
@click.option("--config", "config_opt", type=click.Path(dir_okay=False), help="Same as CONFIG_FILE.")
@click.option("--show", is_flag=True, help="Print the resolved configuration.")
@click.option("--server", default=None)
def validate_config(config_file, config_opt, show, server):
    """Check a run config; exit status 2 when it is invalid."""
    path = config_file or config_opt
    try:
        resp = _client(server).validate(_read_config(path))
    except ConfigurationError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    if not resp.valid:
        click.echo(f"{path or '<defaults>'}: invalid", err=True)
        for err in resp.errors:
            click.echo(f"  {err}", err=True)
        sys.exit(EXIT_CONFIG)
    click.echo(f"{path or '<defaults>'}: ok")
    if show:
        click.echo(yaml.safe_dump(resp.resolved, sort_keys=False))


@main.command()
@click.argument("checkpoint", type=click.Path(dir_okay=False))
@click.option("--json", "as_json", is_flag=True, help="Emit the full summary as JSON.")
@click.option("--server", default=None)
def inspect(checkpoint, as_json, server):
    """Summarise a saved layer checkpoint."""
    try:
        resp = _client(server).inspect(str(Path(checkpoint).resolve()))
    except CheckpointError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    s = resp.summary
    if as_json:
        click.echo(json.dumps(s, indent=2))
        return
    p = s["params"]
    click.echo(f"checkpoint  {checkpoint}")
    click.echo(f"layer       {p['n_columns']} columns x {p['cells_per_column']} cells, theta={p['theta']}")
    click.echo(f"segments    {s['segments']} on {s['cells_with_segments']} cells")
    click.echo(f"synapses    {s['synapses']} ({s['connected_synapses']} connected)")
    if s["mean_permanence"] is not None:
        click.echo(f"mean perm   {s['mean_permanence']:.4f}")
    if s["vocabulary_items"] is not None:
        click.echo(f"vocabulary  {s['vocabulary_items']} items")
    if s["ltm_edges"] is not None:
        click.echo(f"LTM edges   {s['ltm_edges']}")
    h = s["permanence_histogram"]
    for lo, hi, c in zip(h["edges"], h["edges"][1:], h["counts"]):
        click.echo(f"  [{lo:.1f}, {hi:.1f})  {c}")
    for k, v in s["meta"].items():
        click.echo(f"meta.{k:<7} {v}")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(host, port):
    """Start the HTTP service."""
    import uvicorn
    uvicorn.run("seqmem.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
