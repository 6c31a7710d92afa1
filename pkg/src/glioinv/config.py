"""Run configuration: INI-style file plus command-line overrides, validated up front."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .adjoint import HessianMode
from .anatomy import DiffusionParams, TensorMode
from .field import Grid, TimeGrid


class ConfigError(ValueError):
    """Invalid or unknown configuration entry; the message names the field."""


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in str(text).replace(";", ",").split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in str(text).replace("x", ",").split(",") if t.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (RunConfig attribute, parser)
SCHEMA = {
    "grid": {"dims": ("dims", _ints), "nt": ("nt", int)},
    "model": {"rho": ("rho", float), "k_g": ("k_g", float), "k_w": ("k_w", float),
              "k_f": ("k_f", float), "penalty_eps": ("penalty_eps", float),
              "tensor_mode": ("tensor_mode", str)},
    "inversion": {"beta": ("beta", float), "hessian": ("hessian", str),
                  "basis_spacing": ("basis_spacing", float), "basis_per_axis": ("basis_per_axis", int),
                  "max_newton": ("max_newton", int), "warm_start": ("warm_start", _bool),
                  "precondition": ("precondition", _bool), "betas": ("betas", _floats)},
    "experiment": {"case": ("case", int), "c_d": ("c_d", _floats), "eta": ("eta", _floats),
                   "seed": ("seed", int), "jobs": ("jobs", int), "slices": ("slices", _bool)},
    "io": {"out": ("out", str)},
}


@dataclass
class RunConfig:
    dims: tuple[int, ...] = (64, 64)
    nt: int = 10
    rho: float = 2.0
    k_g: float = 0.02
    k_w: float = 0.1
    k_f: float = 0.1
    penalty_eps: float = 1e-3
    tensor_mode: str | None = None  # None: the test case's own tensor model
    beta: float = 1e-2
    hessian: str = "gn"
    basis_spacing: float = 0.3
    basis_per_axis: int | None = None
    max_newton: int = 25
    warm_start: bool = True
    precondition: bool = True
    betas: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
    case: int = 2
    c_d: tuple[float, ...] | None = None  # None: the test case's own list
    eta: tuple[float, ...] | None = None
    seed: int = 0
    jobs: int = 1
    slices: bool = True
    out: str = "glioinv_out"
    sources: dict = field(default_factory=dict, repr=False)

    def validate(self) -> "RunConfig":
        """Check every field against its owning type; raises :class:`ConfigError`."""
        def check(name, ok, msg):
            if not ok:
                raise ConfigError(f"{name}: {msg}")

        try:
            Grid.cube(tuple(self.dims))
        except ValueError as exc:
            raise ConfigError(f"dims: {exc}") from None
        try:
            TimeGrid(self.nt)
        except ValueError as exc:
            raise ConfigError(f"nt: {exc}") from None
        check("rho", self.rho >= 0, "must be non-negative")
        mode = self.tensor_mode or TensorMode.FULL_FA
        try:
            TensorMode(mode)
        except ValueError:
            raise ConfigError(f"tensor_mode: expected 'full_fa' or 'principal', got {mode!r}") from None
        try:
            DiffusionParams(self.k_g, self.k_w, self.k_f, mode, self.penalty_eps)
        except ValueError as exc:
            field_name = str(exc).split()[0]
            raise ConfigError(f"{field_name}: {exc}") from None
        check("beta", self.beta > 0, "must be positive")
        try:
            HessianMode(self.hessian)
        except ValueError:
            raise ConfigError(f"hessian: expected 'gn' or 'full', got {self.hessian!r}") from None
        check("basis_spacing", self.basis_spacing > 0, "must be positive")
        check("basis_per_axis", self.basis_per_axis is None or self.basis_per_axis >= 1, "must be >= 1")
        check("max_newton", self.max_newton >= 1, "must be >= 1")
        check("betas", all(b > 0 for b in self.betas), "must be positive")
        check("case", self.case in (1, 2, 3, 4), "must be 1, 2, 3 or 4")
        if self.c_d is not None:
            check("c_d", len(self.c_d) > 0 and all(0 <= c < 1 for c in self.c_d), "values must lie in [0, 1)")
        if self.eta is not None:
            check("eta", len(self.eta) > 0 and all(e >= 0 for e in self.eta), "values must be >= 0")
        check("jobs", self.jobs >= 1, "must be >= 1")
        return self

    def resolved(self) -> list[tuple[str, str]]:
        out = []
        for f in dataclasses.fields(self):
            if f.name == "sources":
                continue
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            out.append((f.name, str(v)))
        return out


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``[section]`` / ``key = value`` text into RunConfig keyword values."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    values = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"[{section}]: unknown section")
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{section}.{key}: unknown key")
            attr, conv = SCHEMA[section][key]
            try:
                values[attr] = conv(raw)
            except ValueError:
                raise ConfigError(f"{section}.{key}: cannot parse {raw!r}") from None
    return values


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), str(path))


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then file values, then command-line overrides; validated."""
    kw = dict(file_values or {})
    kw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        cfg = RunConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()
