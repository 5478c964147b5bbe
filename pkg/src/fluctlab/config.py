"""Experiment configuration: flat key=value files, strictly checked.

One [experiment] section holds every knob as a scalar or a grid string;
no nesting, so manifests diff line by line. Unknown keys are rejected by
name instead of silently ignored, because a typo in a config should never
turn into a silently different experiment.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import DriftField
from .lattice import coefficients_for

__all__ = ["ConfigError", "ExperimentConfig", "parse_grid"]

SECTION = "experiment"


class ConfigError(ValueError):
    """Bad configuration file: syntax, unknown key, or unusable value."""


def parse_grid(text: str) -> tuple:
    """Comma list of floats; a token lo:hi:n expands to n inclusive points."""
    out: list[float] = []
    for tok in str(text).split(","):
        tok = tok.strip()
        if not tok:
            continue
        if ":" in tok:
            parts = tok.split(":")
            if len(parts) != 3:
                raise ConfigError(f"grid token {tok!r} is not lo:hi:n")
            lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
            if n < 2:
                raise ConfigError(f"grid token {tok!r} needs n >= 2")
            out.extend(np.linspace(lo, hi, n).tolist())
        else:
            out.append(float(tok))
    return tuple(out)


def _format_grid(grid: tuple) -> str:
    return ",".join(repr(float(g)) for g in grid)


def _parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


@dataclass
class ExperimentConfig:
    """Every experiment knob with its default; see field comments for units.

    ``dt = 0`` means "choose the stable step". Grids are tuples of floats;
    in files they are comma lists with optional lo:hi:n ranges.
    """

    model: str = "ssep"          # ssep | wasep | kmp
    d: int = 1
    N: int = 128                 # microscopic sites per side
    M: int = 64                  # macroscopic grid per side
    T: float = 1.0
    dt: float = 0.0
    seed: int = 0
    out: str = "out"
    threads: int = 1
    replicas: int = 1
    tests: int = 10              # size of the test-function battery
    profile: str = "constant"    # constant | cosine | step
    m: float = 0.5
    amplitude: float = 0.0
    frequency: int = 1
    step_lo: float = 0.25
    step_hi: float = 0.75
    step_fraction: float = 0.5
    field: str = "none"          # none | constant | sine
    E: float = 0.0
    field_amplitude: float = 0.0
    field_frequency: int = 1
    J: float = 0.5
    v: float = 0.0
    K: int = 64                  # time steps for path optimization
    delta: float = 0.05
    J_grid: tuple = ()
    v_grid: tuple = ()
    T_grid: tuple = ()
    path_in: str = ""
    find_jstar: bool = False
    jstar_resolution: float = 0.05
    jstar_rel_gap: float = 1e-3

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        parser.optionxform = str  # M (grid size) and m (mass) must not collide
        try:
            with open(path, encoding="ascii") as fh:
                parser.read_file(fh, source=str(path))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            # configparser reports offending lines in its message
            raise ConfigError(f"config parse error: {exc}") from None
        for section in parser.sections():
            if section != SECTION:
                raise ConfigError(f"unknown section [{section}]; only [{SECTION}] is recognized")
        values = dict(parser[SECTION]) if parser.has_section(SECTION) else {}
        return cls.from_dict(values, source=str(path))

    @classmethod
    def from_dict(cls, values: dict, source: str = "<dict>") -> "ExperimentConfig":
        spec = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in spec:
                known = ", ".join(sorted(spec))
                raise ConfigError(f"{source}: unknown key {key!r} (known keys: {known})")
            kwargs[key] = _convert(key, spec[key].type, raw)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.model not in ("ssep", "wasep", "kmp"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.profile not in ("constant", "cosine", "step"):
            raise ConfigError(f"unknown profile {self.profile!r}")
        if self.field not in ("none", "constant", "sine"):
            raise ConfigError(f"unknown field {self.field!r}")
        if self.d < 1:
            raise ConfigError("d must be at least 1")
        if self.model == "kmp" and self.d != 1:
            raise ConfigError("the energy-exchange chain is one dimensional")
        for name in ("N", "M", "K", "threads", "replicas", "tests", "frequency"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.T <= 0:
            raise ConfigError("T must be positive")
        if not 0.0 < self.step_fraction < 1.0:
            raise ConfigError("step_fraction must lie in (0, 1)")

    def apply_overrides(self, seed=None, out=None, threads=None) -> "ExperimentConfig":
        cfg = dataclasses.replace(self)
        if seed is not None:
            cfg.seed = int(seed)
        if out is not None:
            cfg.out = str(out)
        if threads is not None:
            cfg.threads = int(threads)
        cfg.validate()
        return cfg

    # -- derived objects ---------------------------------------------------

    def coefficients(self):
        return coefficients_for(self.model)

    def profile_callable(self):
        """Density profile as a callable on positions of shape (..., d)."""
        if self.profile == "constant":
            m = self.m

            def fn(P, m=m):
                return np.full(P.shape[:-1], m)

            return fn
        if self.profile == "cosine":
            m, a, k = self.m, self.amplitude, self.frequency

            def fn(P, m=m, a=a, k=k):
                return m + a * np.cos(2.0 * np.pi * k * P[..., 0])

            return fn
        lo, hi, frac = self.step_lo, self.step_hi, self.step_fraction

        def fn(P, lo=lo, hi=hi, frac=frac):
            return np.where(P[..., 0] < frac, lo, hi)

        return fn

    def gamma(self) -> np.ndarray:
        """The profile sampled on the macroscopic (M,)*d node grid."""
        from .pde import grid_positions

        return np.asarray(self.profile_callable()(grid_positions(self.M, self.d)), dtype=float)

    def field_callable(self):
        """Drive F as fn(t, P) -> (..., d) components, or None."""
        if self.field == "none":
            return None
        if self.field == "constant":
            E, d = self.E, self.d

            def fn(t, P, E=E, d=d):
                out = np.zeros(P.shape[:-1] + (d,))
                out[..., 0] = E
                return out

            return fn
        a, k, d = self.field_amplitude, self.field_frequency, self.d

        def fn(t, P, a=a, k=k, d=d):
            out = np.zeros(P.shape[:-1] + (d,))
            out[..., 0] = a * np.sin(2.0 * np.pi * k * P[..., 0])
            return out

        return fn

    def drift_field(self) -> DriftField | None:
        fn = self.field_callable()
        if fn is None:
            return None
        return DriftField(fn=fn, time_dependent=False)

    # -- manifest ----------------------------------------------------------

    def manifest_text(self, subcommand: str, version: str) -> str:
        lines = ["[run]", f"subcommand = {subcommand}", f"version = {version}", "", f"[{SECTION}]"]
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            if isinstance(val, tuple):
                text = _format_grid(val)
            elif isinstance(val, bool):
                text = "true" if val else "false"
            elif isinstance(val, float):
                text = repr(val)
            else:
                text = str(val)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"


def _convert(key: str, ftype, raw):
    raw = str(raw).strip()
    typename = ftype if isinstance(ftype, str) else getattr(ftype, "__name__", str(ftype))
    try:
        if typename == "bool":
            return _parse_bool(raw)
        if typename == "int":
            return int(raw)
        if typename == "float":
            val = float(raw)
            if not math.isfinite(val):
                raise ValueError("not finite")
            return val
        if typename == "tuple":
            return parse_grid(raw)
        return raw
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: cannot parse {raw!r} as {typename} ({exc})") from None
