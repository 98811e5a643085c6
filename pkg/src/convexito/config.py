"""Experiment configuration: TOML text in, validated immutable config out."""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .exceptions import ConfigError

EXPERIMENTS = ("tanaka_baseline", "pl_decomposition", "smoothing", "epsilon_limit",
               "conditions", "mollified_selection", "directional_limit")
FUNCTIONS = ("abs", "pl", "euclidean_norm", "quadratic", "affine")
SECTIONS = ("run", "function", "process", "schedules", "localization", "tolerances")
MAX_SEED = 2 ** 64 - 1


def _eps_default():
    return tuple(2.0 ** -k for k in range(1, 9))


def _n_default():
    return tuple(2 ** k for k in range(7))


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int = 0
    n_paths: int = 1000
    n_steps: int = 4096
    horizon: float = 1.0
    out_dir: str = "out"
    n_jobs: int = 1
    # function
    function: str = "abs"
    dim: int = 1
    pieces: tuple = ()
    matrix: tuple = ()
    # process
    martingale: str = "bm"
    scale: float = 1.0
    sigma: str = "const"
    drift: str = "zero"
    drift_vector: tuple = (1.0,)
    x0: tuple = (0.0,)
    # schedules
    eps_schedule: tuple = field(default_factory=_eps_default)
    n_levels: tuple = field(default_factory=_n_default)
    theta_schedule: tuple = ()
    lambda_schedule: tuple = ()
    levels: tuple = (10, 12, 14)
    epsilon: float = 0.25
    # localization
    r: float = 4.0
    r_prime: float = 5.0
    # tolerances and experiment knobs
    selection: str = "mollified"
    final_tol: float = 0.05
    identity_tol: float = 1e-12
    margin: Optional[float] = None
    n_points: int = 200
    dump_paths: int = 0

    def to_dict(self):
        return asdict(self)

    def digest(self):
        """sha256 of the canonical JSON echo, excluding where artifacts go."""
        echo = {k: v for k, v in self.to_dict().items() if k not in ("out_dir", "n_jobs")}
        blob = json.dumps(echo, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, **kw):
        """Apply non-None overrides and re-validate."""
        kw = {k: v for k, v in kw.items() if v is not None}
        return validate(replace(self, **kw)) if kw else self


FIELD_NAMES = tuple(f.name for f in fields(ExperimentConfig))
_TUPLE_FIELDS = {f.name for f in fields(ExperimentConfig) if f.type == "tuple"}
_INT_FIELDS = {f.name for f in fields(ExperimentConfig) if f.type == "int"}
_FLOAT_FIELDS = {f.name for f in fields(ExperimentConfig) if f.type == "float"}


def _freeze(value):
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    if isinstance(value, dict):
        return tuple(sorted((k, _freeze(v)) for k, v in value.items()))
    return value


def _flatten(doc, problems):
    flat = {}
    for key, value in doc.items():
        if isinstance(value, dict) and key in SECTIONS:
            for k, v in value.items():
                if k in flat:
                    problems.append(f"key {k!r} given more than once")
                flat[k] = v
        elif isinstance(value, dict):
            problems.append(f"unknown section [{key}]; allowed: {', '.join(SECTIONS)}")
        else:
            if key in flat:
                problems.append(f"key {key!r} given more than once")
            flat[key] = value
    return flat


def _pieces(raw):
    out = []
    for p in raw:
        d = dict(p) if not isinstance(p, dict) else p
        out.append({"alpha": float(d["alpha"]), "beta": [float(b) for b in d["beta"]]})
    return out


def _monotone(seq, decreasing):
    pairs = zip(seq[:-1], seq[1:])
    return all((b < a) if decreasing else (b > a) for a, b in pairs)


def validate(cfg):
    """Collect every invariant violation; raise ConfigError if any."""
    p = []
    if cfg.experiment not in EXPERIMENTS:
        p.append(f"experiment {cfg.experiment!r} unknown; allowed: {', '.join(EXPERIMENTS)}")
    if not (isinstance(cfg.seed, int) and 0 <= cfg.seed <= MAX_SEED):
        p.append("seed must be an unsigned 64-bit integer")
    if cfg.n_paths < 1:
        p.append("n_paths must be >= 1")
    if cfg.n_steps < 2:
        p.append("n_steps must be >= 2")
    if cfg.horizon <= 0:
        p.append("horizon must be positive")
    if cfg.n_jobs < 1:
        p.append("n_jobs must be >= 1")
    if cfg.function not in FUNCTIONS:
        p.append(f"function {cfg.function!r} unknown; allowed: {', '.join(FUNCTIONS)}")
    if cfg.function == "pl" and not cfg.pieces:
        p.append("function 'pl' needs pieces")
    if cfg.dim < 1:
        p.append("dim must be >= 1")
    if cfg.r <= 0:
        p.append("r must be positive")
    if not cfg.r_prime > cfg.r:
        p.append(f"r_prime ({cfg.r_prime}) must exceed r ({cfg.r})")
    if cfg.eps_schedule and (not _monotone(cfg.eps_schedule, True) or min(cfg.eps_schedule) <= 0):
        p.append("eps_schedule must be positive and strictly decreasing")
    if cfg.n_levels and (not _monotone(cfg.n_levels, False) or min(cfg.n_levels) < 1):
        p.append("n_levels must be positive and strictly increasing")
    for name in ("theta_schedule", "lambda_schedule"):
        s = getattr(cfg, name)
        if s and (not _monotone(s, True) or min(s) <= 0):
            p.append(f"{name} must be positive and strictly decreasing")
    if not _monotone(cfg.levels, False) or min(cfg.levels, default=1) < 1:
        p.append("levels must be strictly increasing")
    if cfg.epsilon < 0:
        p.append("epsilon must be >= 0")
    if cfg.margin is not None and cfg.margin <= 0:
        p.append("margin must be positive")
    if cfg.selection not in ("min_index_pl", "mollified", "left_derivative_1d", "oracle"):
        p.append(f"selection {cfg.selection!r} unknown")
    if cfg.dump_paths < 0:
        p.append("dump_paths must be >= 0")
    if p:
        raise ConfigError(p)
    return cfg


def parse_config(text, **overrides):
    """Parse TOML text into an :class:`ExperimentConfig`.

    Keys may sit at top level or inside the sections ``[run]``, ``[function]``,
    ``[process]``, ``[schedules]``, ``[localization]`` and ``[tolerances]``.
    Keyword overrides win over file values; ``None`` overrides are ignored.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"malformed TOML: {exc}"]) from exc
    problems = []
    flat = _flatten(doc, problems)
    flat.update({k: v for k, v in overrides.items() if v is not None})
    for key in sorted(set(flat) - set(FIELD_NAMES)):
        problems.append(f"unknown key {key!r}")
    if "experiment" not in flat:
        problems.append(f"missing key 'experiment'; allowed: {', '.join(EXPERIMENTS)}")
    kwargs = {}
    for key, value in flat.items():
        if key not in FIELD_NAMES:
            continue
        try:
            if key == "pieces":
                value = _freeze(_pieces(value))
            elif key in _TUPLE_FIELDS:
                value = _freeze(list(value) if not isinstance(value, list) else value)
            elif key in _INT_FIELDS:
                if isinstance(value, bool) or int(value) != value:
                    raise ValueError
                value = int(value)
            elif key in _FLOAT_FIELDS:
                value = float(value)
            elif key == "margin":
                value = None if value is None else float(value)
        except (TypeError, ValueError, KeyError):
            problems.append(f"key {key!r} has invalid value {value!r}")
            continue
        kwargs[key] = value
    kwargs.setdefault("experiment", "")
    cfg = ExperimentConfig(**kwargs)
    try:
        validate(cfg)
    except ConfigError as exc:
        extra = [v for v in exc.violations
                 if not (v.startswith("experiment ''") and "experiment" not in flat)]
        problems += extra
    if problems:
        raise ConfigError(problems)
    return cfg


def pieces_as_dicts(cfg):
    return [dict(p) for p in cfg.pieces]
