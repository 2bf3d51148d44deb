"""Experiment configuration: defaults per study, JSON parsing and validation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

VERBS = ("spatial", "temporal", "compare", "trace", "sine-gordon", "defect")
DEFAULT_SEED = 100


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the path of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"config error at '{key}': {message}")
        self.key = key


def _pow2(lo: int, hi: int) -> list[float]:
    return [2.0 ** -e for e in range(lo, hi + 1)]


@dataclass
class ExperimentConfig:
    """Parameters of one study.

    Convergence studies use ``k``, ``h``, ``k_exact`` and ``h_exact``.
    Energy studies use the ``energy_*`` fields: the trace study integrates
    exact moments up to ``T`` and Monte Carlo up to ``mc_T``; the
    Sine-Gordon study runs its energy curve up to ``energy_T`` with
    ``energy_M`` samples and covariance exponent ``energy_s``.
    """

    verb: str = "temporal"
    problem: str = "linear"
    s: float = 0.5
    seed: int = DEFAULT_SEED
    T: float = 1.0
    M: int = 100
    k: list[float] = field(default_factory=lambda: _pow2(1, 5))
    h: list[float] = field(default_factory=lambda: _pow2(7, 8))
    k_exact: float = 2.0 ** -9
    h_exact: float = 2.0 ** -8
    schemes: list[str] = field(default_factory=lambda: ["stm"])
    J: int | None = None
    components: list[int] = field(default_factory=lambda: [1])
    mc_T: float = 50.0
    checkpoints: int = 10
    substeps: int = 64
    energy_s: float = 0.0
    energy_k: float = 0.1
    energy_h: float = 0.1
    energy_T: float = 10.0
    energy_M: int = 2000
    batch_size: int | None = None
    threads: int = 1
    paper_scale: bool = False

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form, minus the worker count."""
        d = self.to_dict()
        d.pop("threads")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_DESK = {
    "temporal": dict(problem="linear", s=0.5, T=1.0, M=100, k=_pow2(1, 5), h=_pow2(7, 8),
                     k_exact=2.0 ** -9, h_exact=2.0 ** -8, schemes=["stm"]),
    "spatial": dict(problem="linear", s=0.0, T=1.0, M=100, k=[], h=_pow2(2, 6),
                    k_exact=2.0 ** -8, h_exact=2.0 ** -8, schemes=["stm"]),
    "compare": dict(problem="linear", s=0.5, T=1.0, M=100, k=_pow2(2, 9), h=[2.0 ** -6],
                    k_exact=2.0 ** -12, h_exact=2.0 ** -6,
                    schemes=["stm", "bem", "cnm", "sv"]),
    "trace": dict(problem="linear", s=0.5, T=500.0, M=2000, k=[], h=[], mc_T=50.0,
                  energy_k=0.1, energy_h=0.1, k_exact=0.1, h_exact=0.1,
                  schemes=["stm", "bem", "cnm", "sv"]),
    "sine-gordon": dict(problem="sine-gordon", s=1.0, T=1.0, M=100, k=_pow2(1, 4),
                        h=[2.0 ** -7], k_exact=2.0 ** -6, h_exact=2.0 ** -7,
                        schemes=["stm-nl"], energy_s=0.0, energy_k=0.1, energy_h=2.0 ** -6,
                        energy_T=10.0, energy_M=2000),
    "defect": dict(problem="linear", s=0.0, T=1.0, M=400, k=_pow2(3, 7), h=[2.0 ** -8],
                   k_exact=2.0 ** -13, h_exact=2.0 ** -8, schemes=["stm"], substeps=64),
}

_PAPER = {
    "temporal": dict(h=_pow2(9, 11), k_exact=2.0 ** -6, h_exact=2.0 ** -11),
    "spatial": dict(h=_pow2(2, 7)),
    "compare": dict(h=[2.0 ** -10], h_exact=2.0 ** -10, k=_pow2(2, 12), k_exact=2.0 ** -16),
    "trace": dict(M=15000, mc_T=500.0),
    "sine-gordon": dict(h=[2.0 ** -9], h_exact=2.0 ** -9),
    "defect": dict(),
}


def default_config(verb: str, paper_scale: bool = False) -> ExperimentConfig:
    if verb not in VERBS:
        raise ConfigError("verb", f"unknown study {verb!r}; expected one of {VERBS}")
    values = dict(_DESK[verb])
    if paper_scale:
        values.update(_PAPER[verb])
    return ExperimentConfig(verb=verb, paper_scale=paper_scale, **values)


# ---------------------------------------------------------------------------
# validation

_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_INT_KEYS = {"seed", "M", "checkpoints", "substeps", "energy_M", "threads"}
_OPT_INT_KEYS = {"J", "batch_size"}
_FLOAT_KEYS = {"s", "T", "k_exact", "h_exact", "mc_T", "energy_s", "energy_k", "energy_h",
               "energy_T"}
_LIST_KEYS = {"k", "h", "schemes", "components"}


def _is_multiple(a: float, b: float) -> bool:
    r = a / b
    return round(r) >= 1 and abs(r - round(r)) <= 1e-9 * max(1.0, r)


def _coerce(key: str, value):
    if key in _INT_KEYS or key in _OPT_INT_KEYS:
        if value is None and key in _OPT_INT_KEYS:
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if key in _FLOAT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(key, "must be finite")
        return float(value)
    if key in _LIST_KEYS:
        if not isinstance(value, list):
            raise ConfigError(key, f"expected a list, got {value!r}")
        out = []
        for i, v in enumerate(value):
            sub = f"{key}[{i}]"
            if key in ("k", "h"):
                if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
                    raise ConfigError(sub, f"expected a positive number, got {v!r}")
                out.append(float(v))
            elif key == "components":
                if v not in (1, 2):
                    raise ConfigError(sub, "component must be 1 or 2")
                out.append(int(v))
            else:
                out.append(v)
        return out
    if key == "paper_scale":
        if not isinstance(value, bool):
            raise ConfigError(key, "expected true or false")
        return value
    return value


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    from .fem import InvalidMeshError, mesh_from_width
    from .integrators import LINEAR_SCHEMES

    if cfg.verb not in VERBS:
        raise ConfigError("verb", f"unknown study {cfg.verb!r}")
    if cfg.problem not in ("linear", "sine-gordon"):
        raise ConfigError("problem", f"expected 'linear' or 'sine-gordon', got {cfg.problem!r}")
    wanted = "sine-gordon" if cfg.verb == "sine-gordon" else "linear"
    if cfg.problem != wanted:
        raise ConfigError("problem", f"study {cfg.verb!r} needs problem {wanted!r}")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed", "must fit in an unsigned 64-bit integer")
    for key in ("M", "energy_M"):
        if getattr(cfg, key) < 2:
            raise ConfigError(key, "need at least 2 samples")
    for key in ("T", "k_exact", "h_exact", "mc_T", "energy_k", "energy_h", "energy_T"):
        if not getattr(cfg, key) > 0:
            raise ConfigError(key, "must be positive")
    if cfg.threads < 1:
        raise ConfigError("threads", "must be at least 1")
    if cfg.J is not None and cfg.J < 1:
        raise ConfigError("J", "must be at least 1")
    if cfg.batch_size is not None and cfg.batch_size < 1:
        raise ConfigError("batch_size", "must be at least 1")
    if cfg.substeps < 2:
        raise ConfigError("substeps", "must be at least 2")
    if cfg.checkpoints < 1:
        raise ConfigError("checkpoints", "must be at least 1")

    allowed = ("stm-nl",) if cfg.problem == "sine-gordon" else LINEAR_SCHEMES
    if not cfg.schemes:
        raise ConfigError("schemes", "need at least one scheme")
    for i, name in enumerate(cfg.schemes):
        if name not in allowed:
            raise ConfigError(f"schemes[{i}]", f"{name!r} is not one of {allowed}")

    for key, value in (("h_exact", cfg.h_exact), ("energy_h", cfg.energy_h),
                       *((f"h[{i}]", v) for i, v in enumerate(cfg.h))):
        try:
            mesh_from_width(value)
        except InvalidMeshError as exc:
            raise ConfigError(key, str(exc)) from None

    uses_grid = cfg.verb in ("temporal", "compare", "sine-gordon", "defect")
    if uses_grid and not cfg.k:
        raise ConfigError("k", "need at least one step size")
    if cfg.verb in ("temporal", "spatial", "compare", "sine-gordon", "defect") and not cfg.h:
        raise ConfigError("h", "need at least one mesh width")

    if cfg.verb in ("temporal", "compare", "sine-gordon"):
        if not _is_multiple(cfg.T, cfg.k_exact):
            raise ConfigError("k_exact", f"{cfg.k_exact} does not divide T={cfg.T}")
        half = "sv" in cfg.schemes
        for i, k in enumerate(cfg.k):
            key = f"k[{i}]"
            if not k > cfg.k_exact:
                raise ConfigError(key, f"{k} is not coarser than k_exact={cfg.k_exact}")
            if not _is_multiple(k, cfg.k_exact):
                raise ConfigError(key, f"{k} is not an integer multiple of k_exact={cfg.k_exact}")
            if half and not _is_multiple(0.5 * k, cfg.k_exact):
                raise ConfigError(key, f"half of {k} is not a multiple of k_exact (needed by sv)")
            if not _is_multiple(cfg.T, k):
                raise ConfigError(key, f"{k} does not divide T={cfg.T}")
    if cfg.verb == "spatial":
        if not _is_multiple(cfg.T, cfg.k_exact):
            raise ConfigError("k_exact", f"{cfg.k_exact} does not divide T={cfg.T}")
        for i, h in enumerate(cfg.h):
            if not h > cfg.h_exact:
                raise ConfigError(f"h[{i}]", f"{h} is not coarser than h_exact={cfg.h_exact}")
    if cfg.verb in ("temporal", "compare", "sine-gordon", "spatial"):
        for i, h in enumerate(cfg.h):
            if not h >= cfg.h_exact or not _is_multiple(h, cfg.h_exact):
                raise ConfigError(f"h[{i}]", f"mesh {h} is not nested in h_exact={cfg.h_exact}")
    if cfg.verb == "trace":
        if not _is_multiple(cfg.T, cfg.energy_k):
            raise ConfigError("energy_k", f"{cfg.energy_k} does not divide T={cfg.T}")
        if not _is_multiple(cfg.mc_T, cfg.energy_k):
            raise ConfigError("mc_T", f"not a multiple of energy_k={cfg.energy_k}")
        n = round(cfg.mc_T / cfg.energy_k)
        if n % cfg.checkpoints:
            raise ConfigError("checkpoints", f"must divide the {n} Monte Carlo steps")
    if cfg.verb == "sine-gordon" and not _is_multiple(cfg.energy_T, cfg.energy_k):
        raise ConfigError("energy_k", f"{cfg.energy_k} does not divide energy_T={cfg.energy_T}")
    return cfg


def parse_config(path: str | Path | None, overrides: dict | None = None, *,
                 verb: str | None = None) -> ExperimentConfig:
    """Read a JSON config, fill defaults and apply overrides.

    Precedence: overrides > file > defaults of the study. ``verb`` (when
    given) selects the study; a ``verb`` key in the file must agree with it.
    Overrides whose value is None are ignored.
    """
    raw: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "expected a JSON object")
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}

    file_verb = raw.get("verb")
    if verb is not None and file_verb is not None and file_verb != verb:
        raise ConfigError("verb", f"file is for {file_verb!r}, requested {verb!r}")
    chosen = verb or file_verb or "temporal"
    paper = bool(overrides.get("paper_scale", raw.get("paper_scale", False)))
    cfg = default_config(chosen, paper)

    for source in (raw, overrides):
        for key, value in source.items():
            if key not in _FIELDS:
                raise ConfigError(key, "unknown key")
            if key == "verb":
                continue
            setattr(cfg, key, _coerce(key, value))
    return validate(cfg)


def write_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
