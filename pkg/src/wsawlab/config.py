"""Run configuration: typed ``key = value`` files with flag overrides."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

from .errors import ConfigError

THREADS_ENV = "WSAWLAB_THREADS"
REQUIRED = object()


@dataclass(frozen=True)
class Param:
    name: str
    kind: str  # float, int, str, bool, floats
    default: object = REQUIRED
    help: str = ""
    choices: tuple = ()


def _floats(*xs) -> tuple:
    return tuple(float(x) for x in xs)


COMMON = (
    Param("seed", "int", 0, "master seed of all random streams"),
    Param("threads", "int", None, f"worker threads (default ${THREADS_ENV} or 1); never changes outputs"),
    Param("out", "str", "out", "output directory"),
    Param("delimiter", "str", "comma", "CSV field separator", ("comma", "whitespace")),
)

SCHEMAS = {
    "simulate": (
        Param("d", "int", 1, "dimension"),
        Param("n", "int", 0, "torus side; 0 means Z^d"),
        Param("T", "float", 10.0, "horizon"),
        Param("samples", "int", 1000, "number of paths"),
        Param("beta", "float", 0.1, "self-repulsion"),
        Param("gamma", "float", 0.0, "contact attraction"),
    ),
    "laplace": (
        Param("beta", "float", 0.1, "self-repulsion"),
        Param("gamma", "float", 0.0, "contact attraction"),
        Param("nu", "float", 0.5, "Laplace variable"),
        Param("d", "int", 1, "dimension"),
        Param("n", "int", 0, "torus side; 0 means Z^d"),
        Param("samples", "int", 100_000, "Laplace samples"),
        Param("proposal_rate", "float", 0.0, "exponential proposal rate; 0 means nu/2"),
    ),
    "scan-nu": (
        Param("beta", "float", 0.1, "self-repulsion"),
        Param("gamma", "float", 0.0, "contact attraction"),
        Param("d", "int", 4, "dimension"),
        Param("nu_min", "float", -0.2, "lowest grid value"),
        Param("nu_max", "float", 0.05, "highest grid value"),
        Param("nu_points", "int", 26, "grid size"),
        Param("samples", "int", 20_000, "paths"),
        Param("T_a", "float", 60.0, "short horizon"),
        Param("T_b", "float", 120.0, "long horizon"),
        Param("z", "float", 3.0, "classification threshold in standard errors"),
    ),
    "phase-scan": (
        Param("betas", "floats", _floats(0, 0.25, 0.5), "beta grid"),
        Param("gammas", "floats", _floats(0, 0.25, 0.5, 0.75), "gamma grid"),
        Param("d", "int", 1, "dimension"),
        Param("T_grid", "floats", _floats(10, 20, 40, 80, 120, 160, 200), "horizons"),
        Param("samples", "int", 2000, "paths"),
        Param("fit_min", "float", 10.0, "fit window start"),
        Param("fit_max", "float", 200.0, "fit window end"),
        Param("method", "str", "auto", "MSD estimator", ("auto", "reweight", "resample")),
    ),
    "msd": (
        Param("beta", "float", 0.25, "self-repulsion"),
        Param("gamma", "float", 0.0, "contact attraction"),
        Param("d", "int", 1, "dimension"),
        Param("T_grid", "floats", _floats(10, 20, 40, 80, 120, 160, 200), "horizons"),
        Param("samples", "int", 10_000, "paths"),
        Param("fit_min", "float", 10.0, "fit window start"),
        Param("fit_max", "float", 200.0, "fit window end"),
        Param("method", "str", "auto", "MSD estimator", ("auto", "reweight", "resample")),
    ),
    "fold-check": (
        Param("d", "int", 1, "dimension"),
        Param("L", "int", 2, "scale factor"),
        Param("N_max", "int", 3, "finest torus is L^N_max"),
        Param("T", "float", 10.0, "horizon"),
        Param("samples", "int", 10_000, "paths"),
    ),
    "green": (
        Param("d", "int", 1, "dimension"),
        Param("n", "int", 8, "torus side; 0 means the Z^d origin value (d >= 3)"),
        Param("m2", "float", 0.5, "mass squared"),
    ),
    "susy-verify": (
        Param("case", "str", REQUIRED, "verification case", ("free", "z0-gauge", "prop31", "chi-hat")),
        Param("quad_order", "int", 40, "Gauss-Hermite order per real dimension"),
        Param("beta", "float", 0.2, "self-repulsion (ignored by case free)"),
        Param("gamma", "float", 0.05, "contact attraction (ignored by case free)"),
        Param("nu", "float", 0.5, "Laplace variable"),
        Param("d", "int", 1, "dimension"),
        Param("n", "int", 2, "torus side"),
        Param("samples", "int", 1_000_000, "walk samples for case prop31"),
        Param("z0s", "floats", _floats(-0.2, 0, 0.3), "z0 values of the gauge splits"),
        Param("m2s", "floats", _floats(0.1, 0.5, 1.0), "m2 values of the gauge splits"),
    ),
    "norm-check": (
        Param("suite", "str", REQUIRED, "norm suite", ("identity", "product", "lemma43", "k0-scaling")),
        Param("samples", "int", 1000, "random instances"),
        Param("h0", "float", 1.0, "norm parameter h0 (>= 1)"),
        Param("g0", "float", 0.1, "quartic coupling of V0"),
        Param("nu0", "float", 0.0, "mass coupling of V0"),
        Param("z0", "float", 0.0, "gradient coupling of V0"),
        Param("radial", "int", 9, "radial grid points of the field sweep"),
        Param("regulators", "bool", False, "also report regulator and W0 norms (k0-scaling)"),
    ),
}

# subcommands whose model needs |gamma| < beta (the free walk beta = gamma = 0 is allowed)
GATED = {"laplace", "scan-nu", "susy-verify"}


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    params: dict
    seed: int
    out_dir: str
    threads: int
    delimiter: str = ","
    defaults_used: tuple = field(default_factory=tuple)

    def resolved(self) -> dict:
        """Every key with its final value, as logged in the manifest."""
        out = {"subcommand": self.subcommand, "seed": self.seed, "threads": self.threads,
               "out": self.out_dir, "delimiter": "comma" if self.delimiter == "," else "whitespace"}
        out.update({k: list(v) if isinstance(v, tuple) else v for k, v in self.params.items()})
        return out

    def __getitem__(self, key):
        return self.params[key]


def schema(subcommand: str) -> tuple:
    if subcommand not in SCHEMAS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    return SCHEMAS[subcommand] + COMMON


def parse_value(p: Param, token: str):
    tok = token.strip()
    try:
        if p.kind == "float":
            v = float(tok)
        elif p.kind == "int":
            v = int(tok)
        elif p.kind == "bool":
            low = tok.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            v = low in ("true", "1", "yes")
        elif p.kind == "floats":
            v = tuple(float(t) for t in tok.replace(",", " ").split())
            if not v:
                raise ValueError
        else:
            v = tok
    except ValueError:
        raise ConfigError(f"{p.name}: cannot read {token!r} as {p.kind}") from None
    if p.choices and v not in p.choices:
        raise ConfigError(f"{p.name}: {token!r} is not one of {', '.join(p.choices)}")
    return v


def parse_text(text: str) -> dict:
    """``{key: raw value}`` from ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if not key:
            raise ConfigError(f"line {lineno}: empty key in {raw.strip()!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        t = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV}: cannot read {raw!r} as int") from None
    return max(1, t)


def check_gate(subcommand: str, params: dict) -> None:
    if subcommand not in GATED:
        return
    if subcommand == "susy-verify" and params.get("case") == "free":
        return
    beta, gamma = params["beta"], params["gamma"]
    if beta == 0 and gamma == 0:
        return
    if not abs(gamma) < beta:
        raise ConfigError(f"{subcommand} needs |gamma| < beta, got beta={beta}, gamma={gamma}")


def parse_config(subcommand: str, text: str = "", overrides: dict | None = None) -> RunConfig:
    """Typed config from file text plus flag overrides (flags win)."""
    params = {p.name: p for p in schema(subcommand)}
    raw = parse_text(text)
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k.replace("-", "_")] = v
    for k in raw:
        if k not in params:
            raise ConfigError(f"unknown key {k!r} for {subcommand}")
    values, defaults = {}, []
    for name, p in params.items():
        if name in raw:
            v = raw[name]
            values[name] = parse_value(p, v) if isinstance(v, str) else v
        elif p.default is REQUIRED:
            raise ConfigError(f"missing required key {name!r} for {subcommand}")
        else:
            values[name] = p.default
            defaults.append(name)
    threads = values.pop("threads")
    threads = default_threads() if threads is None else threads
    if threads < 1:
        raise ConfigError(f"threads: need a positive count, got {threads}")
    seed = values.pop("seed")
    out = values.pop("out")
    delim = "," if values.pop("delimiter") == "comma" else " "
    _validate(subcommand, values)
    check_gate(subcommand, values)
    return RunConfig(subcommand, values, seed, out, threads, delim, tuple(defaults))


def _validate(subcommand: str, v: dict) -> None:
    for key in ("samples", "d", "nu_points", "quad_order", "radial", "L", "N_max"):
        if key in v and v[key] < 1:
            raise ConfigError(f"{key}: need a positive value, got {v[key]}")
    for key in ("n",):
        if key in v and v[key] < 0:
            raise ConfigError(f"{key}: need a nonnegative value, got {v[key]}")
    for key in ("T", "T_a", "T_b"):
        if key in v and not (v[key] >= 0 and math.isfinite(v[key])):
            raise ConfigError(f"{key}: need a finite nonnegative horizon, got {v[key]}")
    if subcommand == "scan-nu" and v["nu_min"] > v["nu_max"]:
        raise ConfigError("nu_min must not exceed nu_max")
