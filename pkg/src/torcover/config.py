"""Flat key-value experiment configuration.

A config file holds one ``key = value`` pair per line; ``#`` starts a
comment. Every key is typed by :data:`SCHEMA`, keys that do not apply to
the chosen ``kind`` are rejected, and the canonical form (sorted
``key=value`` lines of the resolved record, output location and thread
count excluded) is hashed with SHA-256.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os

from .errors import ConfigInvalid
from .parallel import THREADS_ENV

__all__ = ["KINDS", "SCHEMA", "ExperimentConfig", "parse_text", "load", "resolve"]

KINDS = ("green", "capacity", "interlace", "qsd", "cover", "uncovered", "couple", "hitscale")


def _int(v):
    return int(v)


def _float(v):
    return float(v)


def _bool(v):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _ints(v):
    return tuple(int(t) for t in str(v).replace(" ", "").split(",") if t)


def _floats(v):
    return tuple(float(t) for t in str(v).replace(" ", "").split(",") if t)


def _str(v):
    return str(v).strip()


def _choice(*options):
    def parse(v):
        s = str(v).strip()
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s
    return parse


def _fmt(v):
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclasses.dataclass(frozen=True)
class Key:
    parse: object
    default: object
    kinds: tuple
    help: str


ALL = KINDS
TORUS = ("qsd", "cover", "uncovered", "couple")

SCHEMA = {
    "kind": Key(_choice(*KINDS), None, ALL, "experiment kind"),
    "mode": Key(_str, "srw3", ALL, "named mode (srw3, diag3, ...) or path to a mode file"),
    "seed": Key(_int, 0, ALL, "master seed"),
    "threads": Key(_int, None, ALL, f"worker threads (default ${THREADS_ENV} or 1)"),
    "out": Key(_str, "out", ALL, "output directory"),
    "point": Key(_ints, None, ("green",), "lattice point x"),
    "tol": Key(_float, 1e-4, ("green", "capacity"), "absolute tolerance"),
    "K": Key(_str, None, ("capacity", "interlace"), "finite set: point, ball:r or x,y,z;x,y,z"),
    "method": Key(_str, None, ("capacity", "interlace"), "capacity: green|ladder|box; interlace: resample|truncate"),
    "box_radius": Key(_int, None, ("capacity",), "box radius for method=box"),
    "u": Key(_floats, (1.0,), ("interlace", "cover", "couple"), "interlacement level(s)"),
    "samples": Key(_int, 10_000, ("interlace", "couple"), "interlacement samples"),
    "N": Key(_ints, None, TORUS, "torus side length(s)"),
    "centers": Key(_str, None, ("qsd", "couple"), "x,y,z;x,y,z or grid:n"),
    "eps0": Key(_float, None, ("qsd", "couple"), "scale exponent epsilon0"),
    "rA": Key(_int, None, ("qsd", "couple"), "explicit A box radius"),
    "rC": Key(_int, None, ("qsd",), "explicit C box radius"),
    "walks": Key(_int, 10_000, ("qsd",), "Monte Carlo walks"),
    "exact": Key(_bool, True, ("qsd",), "exact oracle solves for the duality check"),
    "time": Key(_choice("continuous", "jumps"), "continuous", ("qsd",), "clock for conditional convergence"),
    "replicates": Key(_int, None, ("cover", "uncovered", "couple"), "independent replicates"),
    "test": Key(_choice("gumbel", "meanhit", "vacancy", "separated"), "gumbel", ("cover",), "cover experiment"),
    "F": Key(_str, "all", ("cover", "uncovered"), "all, grid:spacing or x,y,z;x,y,z"),
    "start": Key(_str, "uniform", ("cover",), "uniform or x,y,z"),
    "normalization": Key(_choice("green", "mean_hit"), "green", ("cover",), "cover time normalisation"),
    "slack": Key(_float, 0.01, ("cover", "couple"), "vacancy slack"),
    "rho": Key(_floats, (0.2,), ("uncovered",), "uncovered fraction exponent(s)"),
    "good_bar": Key(_float, 0.8, ("uncovered",), "flag when the good-event frequency is below this"),
    "delta": Key(_float, 0.3, ("couple",), "level spread delta"),
    "r1": Key(_int, None, ("hitscale",), "radius of the hit ball"),
    "r2": Key(_ints, None, ("hitscale",), "starting radii"),
    "trials": Key(_int, 20_000, ("hitscale",), "walks per starting radius"),
}

REQUIRED = {
    "green": ("point",),
    "capacity": ("K",),
    "interlace": ("K",),
    "qsd": ("N", "centers"),
    "cover": ("N",),
    "uncovered": ("N",),
    "couple": ("N", "centers"),
    "hitscale": ("r1", "r2"),
}

UNHASHED = ("out", "threads")


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """A validated, closed configuration record."""

    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        v = self.values.get(key)
        return default if v is None else v

    @property
    def kind(self):
        return self.values["kind"]

    def canonical(self):
        return "".join(
            f"{k}={_fmt(v)}\n" for k, v in sorted(self.values.items()) if k not in UNHASHED and v is not None
        )

    @property
    def hash(self):
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    @property
    def threads(self):
        if self.values.get("threads") is not None:
            return self.values["threads"]
        return int(os.environ.get(THREADS_ENV, "1") or 1)


def parse_text(text):
    """Raw ``{key: string}`` pairs of a config file."""
    raw = {}
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {no}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k in raw:
            raise ConfigInvalid(f"line {no}: duplicate key {k!r}")
        raw[k] = v
    return raw


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_text(fh.read())
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc


def resolve(raw, overrides=None):
    """Validate raw string pairs (with flag overrides) into a config.

    Raises
    ------
    ConfigInvalid
        Naming the offending key: unknown, inapplicable to the kind,
        unparsable, or required and missing.
    """
    merged = dict(raw)
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    for k in merged:
        if k not in SCHEMA:
            raise ConfigInvalid(f"unknown key {k!r}")
    if "kind" not in merged:
        raise ConfigInvalid("missing required key 'kind'")
    values = {}
    for k, v in merged.items():
        try:
            values[k] = SCHEMA[k].parse(v)
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(f"key {k!r}: {exc}") from exc
    kind = values["kind"]
    for k in values:
        if kind not in SCHEMA[k].kinds:
            raise ConfigInvalid(f"key {k!r} does not apply to kind {kind!r}")
    for k in REQUIRED[kind]:
        if k not in values:
            raise ConfigInvalid(f"missing required key {k!r} for kind {kind!r}")
    for k, key in SCHEMA.items():
        if kind in key.kinds and k not in values and key.default is not None:
            values[k] = key.default
    if values.get("threads") is not None and values["threads"] < 1:
        raise ConfigInvalid("key 'threads' must be at least 1")
    return ExperimentConfig(values)
