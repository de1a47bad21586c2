"""Operations behind every endpoint, callable without HTTP."""
from __future__ import annotations

import logging
from pathlib import Path

from .. import checkpoint
from ..config import parse_config
from ..encoder import ConfigurationError
from ..experiments import ArmResult, run_experiment, write_outputs
from .schemas import (ArmReport, InspectRequest, InspectResponse, RunRequest, RunResponse,
                      ValidateRequest, ValidateResponse)

log = logging.getLogger(__name__)


def validate_config(req: ValidateRequest) -> ValidateResponse:
    try:
        cfg = parse_config(req.config)
    except ConfigurationError as e:
        lines = str(e).splitlines()
        errors = [ln.strip() for ln in lines[1:]] if len(lines) > 1 else lines
        return ValidateResponse(valid=False, errors=errors)
    return ValidateResponse(valid=True, resolved=cfg.resolved())


def run(req: RunRequest, progress=None) -> RunResponse:
    """Run one experiment and write its files; raises ConfigurationError on bad input."""
    cfg = parse_config(req.config)

    def report(a: ArmResult):
        status = "failed" if a.error else f"{a.seconds:.1f}s"
        log.info("%s %s seed %d: %s", a.experiment, a.arm, a.seed, status)
        if progress is not None:
            progress(a)

    result = run_experiment(cfg, req.experiment, req.backend, req.arms, req.seeds, report)
    out = Path(req.out_dir)
    summary = write_outputs(result, out, cfg)
    files = sorted(p.name for p in out.iterdir() if p.is_file())
    arms = [ArmReport(arm=a.arm, seed=a.seed, file=None if a.error else a.filename,
                      seconds=round(a.seconds, 3), error=a.error) for a in result.arms]
    return RunResponse(experiment=result.experiment, out_dir=str(out), partial=result.partial,
                       arms=arms, summary=summary, files=files)


def inspect(req: InspectRequest) -> InspectResponse:
    data = checkpoint.read_dict(req.path)
    return InspectResponse(path=req.path, summary=checkpoint.describe(data))
