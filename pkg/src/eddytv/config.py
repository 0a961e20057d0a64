"""INI run configuration with a versioned, strictly validated schema.

A config file needs only the sections it wants to override; every value
falls back to the selected preset. Unknown sections or keys are errors,
so typos never silently revert a run to defaults.

Schema (version 1)::

    [eddytv]
    version = 1

    [domain]
    x_min/x_max/y_min/y_max/z_min/z_max = floats
    z_interface = float
    cells = NX NY NZ
    refine = int >= 0

    [physics]
    sigma0 / mu / eps / omega = floats

    [source]
    direction = DX DY DZ
    positions = grid | "x y z" lines (one position per line)

    [inversion]
    alpha, beta, outer_iterations, nlcg_iterations, armijo_c1,
    backtrack, max_backtracks, nlcg_initial_step, m_slope,
    m_cap (float or none), sigma_max, multiplier_mode,
    inner_iterations, inner_rho (float or default), inner_cg_tol,
    inner_cg_max_iter, early_stop_tol (float or none)

    [experiment]
    preset = 1|2|3
    noise = float >= 0
    seed = int
    refine_extra = int >= 1

    [run]
    workdir = path
    checkpoint_every = int >= 0 (0 disables)
    timing = true|false
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass

from .admm import OuterConfig
from .errors import ConfigError
from .experiments import DIPOLE_GRID, ExperimentPreset, preset_example
from .tv import InnerAdmmConfig

CONFIG_VERSION = 1

_SCHEMA = {
    "eddytv": {"version"},
    "domain": {"x_min", "x_max", "y_min", "y_max", "z_min", "z_max",
               "z_interface", "cells", "refine"},
    "physics": {"sigma0", "mu", "eps", "omega"},
    "source": {"direction", "positions"},
    "inversion": {"alpha", "beta", "outer_iterations", "nlcg_iterations",
                  "armijo_c1", "backtrack", "max_backtracks",
                  "nlcg_initial_step", "m_slope", "m_cap", "sigma_max",
                  "multiplier_mode", "inner_iterations", "inner_rho",
                  "inner_cg_tol", "inner_cg_max_iter", "early_stop_tol"},
    "experiment": {"preset", "noise", "seed", "refine_extra"},
    "run": {"workdir", "checkpoint_every", "timing"},
}


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline command needs, resolved and validated."""

    preset: ExperimentPreset
    refine_extra: int = 1
    workdir: str = "."
    checkpoint_every: int = 10
    timing: bool = True

    def validate(self) -> "RunConfig":
        self.preset.validate()
        if self.refine_extra < 1:
            raise ConfigError("experiment.refine_extra must be >= 1")
        if self.checkpoint_every < 0:
            raise ConfigError("run.checkpoint_every must be >= 0")
        return self


def default_config(preset_number: int = 1) -> RunConfig:
    return RunConfig(preset=preset_example(preset_number))


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Parse an INI file, apply CLI overrides, and validate."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError("cannot read config file: %s" % exc) from None
    except configparser.Error as exc:
        raise ConfigError("malformed config file: %s" % exc) from None
    return config_from_parser(parser, overrides)


def config_from_parser(parser: configparser.ConfigParser,
                       overrides: dict | None = None) -> RunConfig:
    _check_schema(parser)
    version = _get_int(parser, "eddytv", "version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError("unsupported config version %d (expected %d)"
                          % (version, CONFIG_VERSION))

    overrides = dict(overrides or {})
    preset_number = int(overrides.pop("preset", None)
                        or _get_int(parser, "experiment", "preset", 1))
    preset = preset_example(preset_number)
    domain = preset.domain

    refine_override = overrides.pop("refine", None)
    domain = dataclasses.replace(
        domain,
        x_range=(_get_float(parser, "domain", "x_min", domain.x_range[0]),
                 _get_float(parser, "domain", "x_max", domain.x_range[1])),
        y_range=(_get_float(parser, "domain", "y_min", domain.y_range[0]),
                 _get_float(parser, "domain", "y_max", domain.y_range[1])),
        z_range=(_get_float(parser, "domain", "z_min", domain.z_range[0]),
                 _get_float(parser, "domain", "z_max", domain.z_range[1])),
        z_interface=_get_float(parser, "domain", "z_interface",
                               domain.z_interface),
        cells_per_axis=_get_cells(parser, domain.cells_per_axis),
        refine_levels=(int(refine_override) if refine_override is not None
                       else _get_int(parser, "domain", "refine",
                                     domain.refine_levels)),
    )

    inner = InnerAdmmConfig(
        rho=_get_optional_float(parser, "inversion", "inner_rho",
                                preset.outer.inner.rho, none_token="default"),
        iterations=_get_int(parser, "inversion", "inner_iterations",
                            preset.outer.inner.iterations),
        cg_tol=_get_float(parser, "inversion", "inner_cg_tol",
                          preset.outer.inner.cg_tol),
        cg_max_iter=_get_int(parser, "inversion", "inner_cg_max_iter",
                             preset.outer.inner.cg_max_iter),
    )
    outer = OuterConfig(
        alpha=_get_float(parser, "inversion", "alpha", preset.outer.alpha),
        beta=_get_float(parser, "inversion", "beta", preset.outer.beta),
        outer_iterations=_get_int(parser, "inversion", "outer_iterations",
                                  preset.outer.outer_iterations),
        nlcg_iterations=_get_int(parser, "inversion", "nlcg_iterations",
                                 preset.outer.nlcg_iterations),
        armijo_c1=_get_float(parser, "inversion", "armijo_c1",
                             preset.outer.armijo_c1),
        backtrack=_get_float(parser, "inversion", "backtrack",
                             preset.outer.backtrack),
        max_backtracks=_get_int(parser, "inversion", "max_backtracks",
                                preset.outer.max_backtracks),
        nlcg_initial_step=_get_float(parser, "inversion", "nlcg_initial_step",
                                     preset.outer.nlcg_initial_step),
        m_slope=_get_float(parser, "inversion", "m_slope",
                           preset.outer.m_slope),
        m_cap=_get_optional_float(parser, "inversion", "m_cap",
                                  preset.outer.m_cap),
        sigma_max=_get_float(parser, "inversion", "sigma_max",
                             preset.outer.sigma_max),
        inner=inner,
        multiplier_mode=_get_str(parser, "inversion", "multiplier_mode",
                                 preset.outer.multiplier_mode),
        early_stop_tol=_get_optional_float(parser, "inversion",
                                           "early_stop_tol",
                                           preset.outer.early_stop_tol),
    )

    noise_override = overrides.pop("noise", None)
    seed_override = overrides.pop("seed", None)
    preset = dataclasses.replace(
        preset,
        domain=domain,
        sigma0=_get_float(parser, "physics", "sigma0", preset.sigma0),
        mu=_get_float(parser, "physics", "mu", preset.mu),
        eps=_get_float(parser, "physics", "eps", preset.eps),
        omega=_get_float(parser, "physics", "omega", preset.omega),
        source_direction=_get_vector(parser, "source", "direction",
                                     preset.source_direction),
        source_positions=_get_positions(parser, preset.source_positions),
        outer=outer,
        noise=(float(noise_override) if noise_override is not None
               else _get_float(parser, "experiment", "noise", preset.noise)),
        seed=(int(seed_override) if seed_override is not None
              else _get_int(parser, "experiment", "seed", preset.seed)),
    )
    if overrides:
        raise ConfigError("unknown overrides: %s" % sorted(overrides))

    cfg = RunConfig(
        preset=preset,
        refine_extra=_get_int(parser, "experiment", "refine_extra", 1),
        workdir=_get_str(parser, "run", "workdir", "."),
        checkpoint_every=_get_int(parser, "run", "checkpoint_every", 10),
        timing=_get_bool(parser, "run", "timing", True),
    )
    return cfg.validate()


def manifest_text(cfg: RunConfig, mesh_digest: str, extra: dict | None = None) -> str:
    """Flat key = value echo of every physical and numerical parameter."""
    from . import __version__

    p = cfg.preset
    o = p.outer
    rows = [
        ("eddytv.version", __version__),
        ("config.version", CONFIG_VERSION),
        ("preset.name", p.name),
        ("domain.x_range", "%r %r" % p.domain.x_range),
        ("domain.y_range", "%r %r" % p.domain.y_range),
        ("domain.z_range", "%r %r" % p.domain.z_range),
        ("domain.z_interface", repr(p.domain.z_interface)),
        ("domain.cells", "%d %d %d" % p.domain.cells_per_axis),
        ("domain.refine", p.domain.refine_levels),
        ("physics.sigma0", repr(p.sigma0)),
        ("physics.mu", repr(p.mu)),
        ("physics.eps", repr(p.eps)),
        ("physics.omega", repr(p.omega)),
        ("source.direction", "%r %r %r" % tuple(p.source_direction)),
        ("source.positions", len(p.source_positions)),
        ("inversion.alpha", repr(o.alpha)),
        ("inversion.beta", repr(o.beta)),
        ("inversion.outer_iterations", o.outer_iterations),
        ("inversion.nlcg_iterations", o.nlcg_iterations),
        ("inversion.armijo_c1", repr(o.armijo_c1)),
        ("inversion.backtrack", repr(o.backtrack)),
        ("inversion.max_backtracks", o.max_backtracks),
        ("inversion.nlcg_initial_step", repr(o.nlcg_initial_step)),
        ("inversion.m_slope", repr(o.m_slope)),
        ("inversion.m_cap", "none" if o.m_cap is None else repr(o.m_cap)),
        ("inversion.sigma_max", repr(o.sigma_max)),
        ("inversion.multiplier_mode", o.multiplier_mode),
        ("inversion.inner_iterations", o.inner.iterations),
        ("inversion.inner_rho",
         "default" if o.inner.rho is None else repr(o.inner.rho)),
        ("inversion.inner_cg_tol", repr(o.inner.cg_tol)),
        ("inversion.inner_cg_max_iter", o.inner.cg_max_iter),
        ("inversion.early_stop_tol",
         "none" if o.early_stop_tol is None else repr(o.early_stop_tol)),
        ("experiment.noise", repr(p.noise)),
        ("experiment.seed", p.seed),
        ("experiment.refine_extra", cfg.refine_extra),
        ("run.checkpoint_every", cfg.checkpoint_every),
        ("run.timing", str(cfg.timing).lower()),
        ("mesh.hash", mesh_digest),
    ]
    for key, value in (extra or {}).items():
        rows.append((key, value))
    return "".join("%s = %s\n" % (key, value) for key, value in rows)


# ---- typed getters ----

def _check_schema(parser: configparser.ConfigParser) -> None:
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError("unknown config section [%s]" % section)
        for key in parser.options(section):
            if key not in _SCHEMA[section]:
                raise ConfigError("unknown key '%s' in section [%s]"
                                  % (key, section))


def _raw(parser, section, key):
    if parser.has_section(section) and parser.has_option(section, key):
        return parser.get(section, key).strip()
    return None


def _get_float(parser, section, key, default):
    raw = _raw(parser, section, key)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError:
        raise ConfigError("%s.%s must be a number, got %r"
                          % (section, key, raw)) from None


def _get_optional_float(parser, section, key, default, none_token="none"):
    raw = _raw(parser, section, key)
    if raw is None:
        return default
    if raw.lower() == none_token:
        return None
    try:
        return float(raw)
    except ValueError:
        raise ConfigError("%s.%s must be a number or '%s', got %r"
                          % (section, key, none_token, raw)) from None


def _get_int(parser, section, key, default):
    raw = _raw(parser, section, key)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError("%s.%s must be an integer, got %r"
                          % (section, key, raw)) from None


def _get_str(parser, section, key, default):
    raw = _raw(parser, section, key)
    return default if raw is None else raw


def _get_bool(parser, section, key, default):
    raw = _raw(parser, section, key)
    if raw is None:
        return default
    lowered = raw.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError("%s.%s must be a boolean, got %r" % (section, key, raw))


def _get_cells(parser, default):
    raw = _raw(parser, "domain", "cells")
    if raw is None:
        return default
    parts = raw.split()
    if len(parts) != 3:
        raise ConfigError("domain.cells needs three integers, got %r" % raw)
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError("domain.cells needs three integers, got %r"
                          % raw) from None


def _get_vector(parser, section, key, default):
    raw = _raw(parser, section, key)
    if raw is None:
        return default
    parts = raw.split()
    if len(parts) != 3:
        raise ConfigError("%s.%s needs three numbers, got %r"
                          % (section, key, raw))
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError("%s.%s needs three numbers, got %r"
                          % (section, key, raw)) from None


def _get_positions(parser, default):
    raw = _raw(parser, "source", "positions")
    if raw is None or raw.lower() == "grid":
        return default if raw is None else DIPOLE_GRID
    positions = []
    for line in raw.splitlines():
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ConfigError(
                "source.positions lines need three numbers, got %r" % line)
        try:
            positions.append(tuple(float(p) for p in parts))
        except ValueError:
            raise ConfigError(
                "source.positions lines need three numbers, got %r"
                % line) from None
    if not positions:
        raise ConfigError("source.positions is empty")
    return tuple(positions)
