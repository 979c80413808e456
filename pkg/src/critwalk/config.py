"""Experiment configuration: JSON file + schema, defaults, validation."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from importlib import resources

import jsonschema

from .analytics import AnalyticProfile, OffspringLaw, named_law, profile
from .embedding import FAMILIES, StepLaw

SUPERCRITICAL_EXPERIMENTS = {"speed", "covariance", "regen-stats", "duality-validate"}


class ConfigError(ValueError):
    pass


def schema() -> dict:
    text = resources.files("critwalk").joinpath("schema/experiment.schema.json").read_text()
    return json.loads(text)


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one experiment.

    ``tail_buffer``: None uses ``max(10% of horizon, 10 / eps^3)``; a value
    below 1 is a fraction of the horizon; otherwise a step count.
    ``schedule`` lists the ``n`` of ``p_n = p_c + n^(-1/4)`` for scaling runs.
    """

    experiment: str = "speed"
    base: str | list = "binary"
    p: float | None = None
    p_grid: list | None = None
    schedule: list | None = None
    L: float = 1.0
    step_law: StepLaw = field(default_factory=StepLaw)
    horizon: int | None = None
    replicas: int = 100
    master_seed: int = 0
    tail_buffer: float | None = None
    stride: int = 64
    threads: int = 1
    trap_cap: int = 10_000_000
    snap_ts: list = field(default_factory=lambda: [0.25, 0.5, 1.0])
    samples: int = 100_000
    depth_cap: int = 60
    output_dir: str | None = None

    @property
    def law(self) -> OffspringLaw:
        if isinstance(self.base, str):
            return named_law(self.base)
        return OffspringLaw(tuple(self.base))

    def profile(self, p: float | None = None) -> AnalyticProfile:
        return profile(self.law, self.p if p is None else p)

    def horizon_for(self, eps: float) -> int:
        if self.horizon is not None:
            return int(self.horizon)
        return int(round(max(1e6, 50.0 * eps**-3)))

    def tail_buffer_for(self, horizon: int, eps: float) -> int:
        if self.tail_buffer is None:
            return int(round(max(0.1 * horizon, 10.0 * eps**-3)))
        if self.tail_buffer < 1:
            return int(self.tail_buffer * horizon)
        return int(self.tail_buffer)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["step_law"] = self.step_law.to_dict()
        return out


def _fail(path: str, message: str):
    raise ConfigError(f"{path}: {message}")


def from_dict(raw: dict) -> ExperimentConfig:
    """Validate a raw mapping against the schema and the model's constraints."""
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in e.absolute_path)
        _fail(path, e.message)
    data = dict(raw)
    spec = data.pop("step_law", None) or {}
    fam = spec.get("family", "srw")
    if fam not in FAMILIES:
        _fail("$.step_law.family", f"unknown family {fam!r}; known families: {', '.join(sorted(FAMILIES))}")
    try:
        step_law = StepLaw.from_dict(spec)
    except ValueError as exc:
        _fail("$.step_law", str(exc))
    cfg = ExperimentConfig(step_law=step_law, **data)
    try:
        law = cfg.law
    except ValueError as exc:
        _fail("$.base", str(exc))
    if law.mean <= 1:
        _fail("$.base", f"offspring law must have mean > 1, got {law.mean}")
    p_c = 1.0 / law.mean
    if cfg.experiment in SUPERCRITICAL_EXPERIMENTS and cfg.p is not None and cfg.p <= p_c:
        _fail("$.p", f"p={cfg.p} must exceed p_c={p_c:.6g} for a supercritical experiment")
    for i, p in enumerate(cfg.p_grid or []):
        if p <= p_c:
            _fail(f"$.p_grid[{i}]", f"p={p} must exceed p_c={p_c:.6g}")
    for i, n in enumerate(cfg.schedule or []):
        if p_c + n ** -0.25 > 1:
            _fail(f"$.schedule[{i}]", f"p_n = p_c + n^(-1/4) exceeds 1 for n={n}")
    if cfg.tail_buffer is not None and not math.isfinite(cfg.tail_buffer):
        _fail("$.tail_buffer", "must be finite")
    return cfg


def load_raw(path: str) -> dict:
    """Parse a JSON config file into a mapping, without validating it."""
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError("$: configuration must be a JSON object")
    return raw


def load_config(path: str) -> ExperimentConfig:
    return from_dict(load_raw(path))
