"""Run configuration: one YAML or JSON file, validated with pydantic.

Every section is optional; missing values take the defaults below. The
resolved configuration is echoed into each run's metadata.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .encoder import ConfigurationError
from .protocol import ProtocolParams
from .spiking import SpikingParams
from .temporal_memory import LearningParams

Backend = Literal["discrete", "spiking"]
ExperimentId = Literal["E1", "E2", "E3", "E4"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EncoderConfig(_Strict):
    columns_per_item: int = Field(6, ge=1)
    stopwords: Optional[str] = None  # path; packaged list when unset
    corpus: Optional[str] = None     # path; packaged excerpts when unset


class LearningConfig(_Strict):
    n_columns: int = Field(1024, ge=1)
    cells_per_column: int = Field(8, ge=1)
    theta: int = Field(3, ge=0)
    perm_connected: float = 0.5
    p_plus_high: float = 0.3
    p_plus_low: float = 0.05
    p_minus: float = 0.01
    p_punish: float = 0.005
    perm_init: float = 0.25
    min_match: Optional[int] = None
    max_new_synapses: int = Field(20, ge=1)
    max_segments_per_cell: int = Field(32, ge=1)
    max_synapses_per_segment: int = Field(64, ge=1)

    @model_validator(mode="after")
    def _check(self):
        try:
            self.build()
        except ConfigurationError as e:
            raise ValueError(str(e)) from None
        return self

    def build(self) -> LearningParams:
        return LearningParams(**self.model_dump())


class ProtocolConfig(_Strict):
    learn_epochs: int = Field(5, ge=0)
    rehearsal_epochs: int = Field(20, ge=0)
    q: float = Field(0.7, ge=0, le=1)
    tau_rehearsal: Optional[float] = None
    i_fatigue: int = Field(3, ge=1)
    rho: float = Field(1e-7, ge=0)
    noise_prob: float = Field(0.0, ge=0, lt=1)
    seconds_per_step: float = Field(1.0, ge=0)
    noise_b: int = Field(6, ge=1)
    noise_min_len: int = Field(7, ge=1)
    noise_max_len: int = Field(13, ge=1)
    max_repeats: int = Field(5, ge=0)

    @model_validator(mode="after")
    def _check(self):
        if self.noise_min_len > self.noise_max_len:
            raise ValueError("noise_min_len exceeds noise_max_len")
        return self

    def build(self, seed: int, **overrides) -> ProtocolParams:
        d = self.model_dump()
        d.update(overrides)
        return ProtocolParams(seed=seed, **d)


class LifConfig(_Strict):
    tau_m: Optional[float] = None
    v_rest: Optional[float] = None
    v_th: Optional[float] = None
    v_reset: Optional[float] = None
    v_ref: Optional[float] = None
    R: Optional[float] = None


class SpikingConfig(_Strict):
    dt: float = Field(0.1, gt=0)
    presentation_ms: float = Field(20.0, gt=0)
    gap_ms: float = Field(10.0, ge=0)
    onset_current: float = 20.0
    onset_ms: float = Field(0.5, gt=0)
    pools: dict[str, LifConfig] = Field(default_factory=dict)
    tau_fast: float = Field(5.0, gt=0)
    tau_s_seg: float = Field(10.0, gt=0)
    tau_s_i: float = Field(2.0, gt=0)
    tau_slow: float = Field(20.0, gt=0)
    a_ps: float = 5.0
    a_ds: float = 1.3
    a_is: float = -8.0
    a_di: float = 1.0
    a_si: float = 1.7
    a_segd: float = 5.0
    a_sd: Optional[float] = None
    a_ltm: float = 0.16
    a_pd2: float = 2.4
    quiescence_tol: float = Field(1e-6, ge=0)

    @model_validator(mode="after")
    def _check(self):
        try:
            self.build().validate()
        except (ConfigurationError, TypeError) as e:
            raise ValueError(str(e)) from None
        return self

    def build(self) -> SpikingParams:
        d = self.model_dump()
        pools = {k: {f: v for f, v in p.items() if v is not None} for k, p in d.pop("pools").items()}
        unknown = set(pools) - {"P", "S", "I", "D", "SEG", "D2"}
        if unknown:
            raise ConfigurationError(f"unknown compartment(s): {sorted(unknown)}")
        return SpikingParams.from_dict({**d, "pools": pools})


class LtmConfig(_Strict):
    path: Optional[str] = None  # WAN file; packaged miniature network when unset
    mode: Literal["R1", "R123"] = "R123"
    min_strength: float = Field(0.01, ge=0)
    d2_min_sources: Optional[int] = Field(None, ge=1)  # default: half the item width, rounded up


class E1Config(_Strict):
    presentations_before_swap: int = Field(1000, ge=1)
    presentations_after_swap: int = Field(1000, ge=0)
    measure_from_element: int = Field(4, ge=1)


class E4Config(_Strict):
    nonsense_count: int = Field(5, ge=1)
    nonsense_min_len: int = Field(6, ge=1)
    nonsense_max_len: int = Field(12, ge=1)


class RunConfig(_Strict):
    experiment: Optional[ExperimentId] = None
    seeds: list[int] = Field(default_factory=lambda: [0])
    backend: Optional[Backend] = None  # None: the experiment's default
    arms: Optional[list[str]] = None   # None: all arms of the experiment
    workers: int = Field(1, ge=1)
    threshold: float = Field(0.9, gt=0, le=1)
    smoothing_window: int = Field(20, ge=1)
    write_logs: bool = True
    save_checkpoints: bool = False
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    learning: LearningConfig = Field(default_factory=LearningConfig)
    protocol: ProtocolConfig = Field(default_factory=ProtocolConfig)
    spiking: SpikingConfig = Field(default_factory=SpikingConfig)
    ltm: LtmConfig = Field(default_factory=LtmConfig)
    e1: E1Config = Field(default_factory=E1Config)
    e3_noise_levels: list[float] = Field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7])
    e3_rhos: list[float] = Field(default_factory=lambda: [1e-7, 3e-7])
    e3_seconds_per_step: float = Field(1500.0, ge=0)
    e4: E4Config = Field(default_factory=E4Config)

    def resolved(self) -> dict:
        return self.model_dump(mode="json")


def parse_config(data: dict | None) -> RunConfig:
    try:
        return RunConfig.model_validate(data or {})
    except ValidationError as e:
        raise ConfigurationError(_format_errors(e)) from None


def _format_errors(e: ValidationError) -> str:
    lines = []
    for err in e.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "invalid configuration:\n  " + "\n  ".join(lines)


def load_config(path: str | Path | None) -> RunConfig:
    """Read a YAML or JSON configuration file (``None`` gives the defaults)."""
    if path is None:
        return parse_config({})
    p = Path(path)
    if not p.exists():
        raise ConfigurationError(f"config file not found: {p}")
    text = p.read_text(encoding="utf-8")
    try:
        data = json.loads(text) if p.suffix.lower() == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigurationError(f"{p}: cannot parse: {e}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigurationError(f"{p}: top level must be a mapping")
    return parse_config(data)

