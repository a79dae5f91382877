"""Run configuration: flat key = value text format, defaults, and presets.

Unknown keys are errors so typos cannot silently fall back to defaults.
A ``preset`` key expands a named preset first; any other keys in the same
file then override the preset's values. ``dt`` defaults depend on the
scheme: 1e-2 for the implicit solver, the diffusive CFL value 0.2 h^2 for
the naive explicit baseline. The same applies to ``stop_on_violation``,
which defaults to on for the naive scheme only.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigurationError
from .grid import Grid, make_grid
from .kernel import KERNEL_SHAPES, DiscreteKernel, KernelSpec, build_kernel
from .potential import POTENTIAL_KINDS, Potential, make_potential
from .scheme import SOLVERS, SchemeParams

__all__ = ["RunConfig", "parse_config", "preset_text", "PRESETS", "DEFAULTS"]

SCHEMES = ("bound_preserving", "naive_explicit")

DEFAULTS = {
    "N": 64,
    "L": 1.0,
    "beta": 5.0,
    "dt": None,  # resolved by scheme: 1e-2 implicit, 0.2 h^2 naive
    "t_final": 5.0,
    "potential": "fh",
    "kernel_shape": "bump",
    "kernel_radius": 0.25,
    "kernel_gamma": 1.0,
    "kernel_table": None,
    "seed": 42,
    "amplitude": 0.05,
    "solver": "damped_newton",
    "tol": 1e-10,
    "max_iter": 400,
    "damping": 1.0,
    "scheme": "bound_preserving",
    "snapshot_stride": 0,
    "snapshot_dir": "snapshots",
    "timeseries_path": "timeseries.csv",
    "slope_window": None,  # (t_min, t_max); default second half in log time
    "stop_on_violation": None,  # resolved by scheme
}

PRESETS: dict[str, dict] = {
    # phase separation protocols at the published scale: N = 2^7, beta = 5,
    # dt = 1e-2, well-mixed random start
    "fig2-fh": {
        "N": 128,
        "beta": 5.0,
        "dt": 1e-2,
        "t_final": 50.0,
        "potential": "fh",
        "kernel_radius": 0.1,
        "seed": 42,
        "amplitude": 0.05,
        "solver": "damped_newton",
        "snapshot_stride": 500,
        "slope_window": (5.0, 50.0),
        "timeseries_path": "fig2-fh.csv",
        "snapshot_dir": "snapshots-fig2-fh",
    },
    "fig2-gl": {
        "N": 128,
        "beta": 5.0,
        "dt": 1e-2,
        "t_final": 50.0,
        "potential": "gl",
        "kernel_radius": 0.1,
        "seed": 42,
        "amplitude": 0.05,
        "solver": "damped_newton",
        "snapshot_stride": 500,
        "slope_window": (5.0, 50.0),
        "timeseries_path": "fig2-gl.csv",
        "snapshot_dir": "snapshots-fig2-gl",
    },
    # the no-limiter explicit baseline that loses the |rho| <= 1 bound
    "fig1-naive": {
        "N": 128,
        "beta": 5.0,
        "t_final": 50.0,
        "potential": "fh",
        "kernel_radius": 0.1,
        "seed": 42,
        "amplitude": 0.05,
        "scheme": "naive_explicit",
        "timeseries_path": "fig1-naive.csv",
    },
    # energy decay rate fit over t in [5, 50]
    "fig4-slope": {
        "N": 128,
        "beta": 5.0,
        "dt": 1e-2,
        "t_final": 50.0,
        "potential": "fh",
        "kernel_radius": 0.1,
        "seed": 42,
        "amplitude": 0.05,
        "solver": "damped_newton",
        "slope_window": (5.0, 50.0),
        "timeseries_path": "fig4-slope.csv",
    },
}


@dataclass
class RunConfig:
    n: int = DEFAULTS["N"]
    length: float = DEFAULTS["L"]
    beta: float = DEFAULTS["beta"]
    dt: float | None = DEFAULTS["dt"]
    t_final: float = DEFAULTS["t_final"]
    potential: str = DEFAULTS["potential"]
    kernel_shape: str = DEFAULTS["kernel_shape"]
    kernel_radius: float = DEFAULTS["kernel_radius"]
    kernel_gamma: float = DEFAULTS["kernel_gamma"]
    kernel_table: str | None = DEFAULTS["kernel_table"]
    seed: int = DEFAULTS["seed"]
    amplitude: float = DEFAULTS["amplitude"]
    solver: str = DEFAULTS["solver"]
    tol: float = DEFAULTS["tol"]
    max_iter: int = DEFAULTS["max_iter"]
    damping: float = DEFAULTS["damping"]
    scheme: str = DEFAULTS["scheme"]
    snapshot_stride: int = DEFAULTS["snapshot_stride"]
    snapshot_dir: str = DEFAULTS["snapshot_dir"]
    timeseries_path: str = DEFAULTS["timeseries_path"]
    slope_window: tuple[float, float] | None = DEFAULTS["slope_window"]
    stop_on_violation: bool | None = DEFAULTS["stop_on_violation"]
    preset: str | None = None

    # -- resolved accessors ------------------------------------------------

    def resolved_dt(self) -> float:
        if self.dt is not None:
            return self.dt
        if self.scheme == "naive_explicit":
            h = self.length / self.n
            return 0.2 * h * h
        return 1e-2

    def resolved_stop_on_violation(self) -> bool:
        if self.stop_on_violation is not None:
            return self.stop_on_violation
        return self.scheme == "naive_explicit"

    def resolved_slope_window(self) -> tuple[float, float]:
        if self.slope_window is not None:
            return self.slope_window
        # second half of the horizon in log time, starting after step one
        t0 = self.resolved_dt()
        mid = (t0 * self.t_final) ** 0.5
        return (mid, self.t_final)

    def make_grid(self) -> Grid:
        return make_grid(self.n, self.length)

    def make_kernel_spec(self) -> KernelSpec:
        return KernelSpec(
            shape=self.kernel_shape,
            support_radius=self.kernel_radius,
            scaling=self.kernel_gamma,
            table_path=self.kernel_table,
        )

    def make_kernel(self, grid: Grid | None = None) -> DiscreteKernel:
        return build_kernel(self.make_kernel_spec(), grid or self.make_grid())

    def make_potential(self) -> Potential:
        return make_potential(self.potential, beta=self.beta)

    def make_scheme_params(self) -> SchemeParams:
        return SchemeParams(
            dt=self.resolved_dt(),
            beta=self.beta,
            solver=self.solver,
            tol=self.tol,
            max_iter=self.max_iter,
            damping=self.damping,
        )


_KEY_TO_FIELD = {
    "N": "n",
    "L": "length",
    "beta": "beta",
    "dt": "dt",
    "t_final": "t_final",
    "potential": "potential",
    "kernel_shape": "kernel_shape",
    "kernel_radius": "kernel_radius",
    "kernel_gamma": "kernel_gamma",
    "kernel_table": "kernel_table",
    "seed": "seed",
    "amplitude": "amplitude",
    "solver": "solver",
    "tol": "tol",
    "max_iter": "max_iter",
    "damping": "damping",
    "scheme": "scheme",
    "snapshot_stride": "snapshot_stride",
    "snapshot_dir": "snapshot_dir",
    "timeseries_path": "timeseries_path",
    "slope_window": "slope_window",
    "stop_on_violation": "stop_on_violation",
    "preset": "preset",
}


def _parse_int(key, raw, line_no):
    try:
        return int(raw)
    except ValueError:
        raise ConfigurationError(f"line {line_no}: {key} must be an integer, got {raw!r}") from None


def _parse_float(key, raw, line_no):
    try:
        return float(raw)
    except ValueError:
        raise ConfigurationError(f"line {line_no}: {key} must be a number, got {raw!r}") from None


def _parse_bool(key, raw, line_no):
    low = raw.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ConfigurationError(f"line {line_no}: {key} must be a boolean, got {raw!r}")


def _parse_window(key, raw, line_no):
    parts = [s.strip() for s in raw.split(",")]
    if len(parts) != 2:
        raise ConfigurationError(f"line {line_no}: {key} must be 't_min,t_max', got {raw!r}")
    a = _parse_float(key, parts[0], line_no)
    b = _parse_float(key, parts[1], line_no)
    return (a, b)


_PARSERS = {
    "N": _parse_int,
    "seed": _parse_int,
    "max_iter": _parse_int,
    "snapshot_stride": _parse_int,
    "L": _parse_float,
    "beta": _parse_float,
    "dt": _parse_float,
    "t_final": _parse_float,
    "kernel_radius": _parse_float,
    "kernel_gamma": _parse_float,
    "amplitude": _parse_float,
    "tol": _parse_float,
    "damping": _parse_float,
    "stop_on_violation": _parse_bool,
    "slope_window": _parse_window,
}


def parse_config(text: str) -> RunConfig:
    """Parse and validate the flat key = value config format."""
    pairs: dict[str, tuple[str, int]] = {}
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {line_no}: expected 'key = value', got {raw_line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _KEY_TO_FIELD:
            raise ConfigurationError(f"line {line_no}: unknown key {key!r}")
        if key in pairs:
            raise ConfigurationError(
                f"line {line_no}: duplicate key {key!r} (first set on line {pairs[key][1]})"
            )
        if not value:
            raise ConfigurationError(f"line {line_no}: empty value for {key!r}")
        pairs[key] = (value, line_no)

    values: dict[str, object] = {}
    if "preset" in pairs:
        name = pairs.pop("preset")[0]
        if name not in PRESETS:
            raise ConfigurationError(
                f"unknown preset {name!r}, available: {', '.join(sorted(PRESETS))}"
            )
        for key, val in PRESETS[name].items():
            values[_KEY_TO_FIELD[key]] = val
        values["preset"] = name

    for key, (raw, line_no) in pairs.items():
        parser = _PARSERS.get(key)
        values[_KEY_TO_FIELD[key]] = parser(key, raw, line_no) if parser else raw

    cfg = RunConfig(**values)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    def bad(msg):
        raise ConfigurationError(f"invalid config: {msg}")

    if not isinstance(cfg.n, int) or cfg.n < 2:
        bad(f"N must be an integer >= 2, got {cfg.n}")
    if not (cfg.length > 0):
        bad(f"L must be positive, got {cfg.length}")
    if not (cfg.beta > 0):
        bad(f"beta must be positive, got {cfg.beta}")
    if cfg.dt is not None and not (cfg.dt > 0):
        bad(f"dt must be positive, got {cfg.dt}")
    if not (cfg.t_final > 0):
        bad(f"t_final must be positive, got {cfg.t_final}")
    if cfg.potential not in POTENTIAL_KINDS:
        bad(f"potential must be one of {POTENTIAL_KINDS}, got {cfg.potential!r}")
    if cfg.kernel_shape not in KERNEL_SHAPES:
        bad(f"kernel_shape must be one of {KERNEL_SHAPES}, got {cfg.kernel_shape!r}")
    if cfg.kernel_shape == "custom-table" and not cfg.kernel_table:
        bad("kernel_shape = custom-table requires kernel_table = <path>")
    if not (cfg.kernel_radius > 0):
        bad(f"kernel_radius must be positive, got {cfg.kernel_radius}")
    if not (cfg.kernel_gamma > 0):
        bad(f"kernel_gamma must be positive, got {cfg.kernel_gamma}")
    if cfg.kernel_shape != "custom-table":
        if 2.0 * cfg.kernel_radius / cfg.kernel_gamma >= cfg.length:
            bad(
                "kernel support does not fit the box: "
                f"2*{cfg.kernel_radius}/{cfg.kernel_gamma} >= L={cfg.length}"
            )
    if not (0 < cfg.amplitude < 1):
        bad(f"amplitude must be in (0, 1), got {cfg.amplitude}")
    if cfg.solver not in SOLVERS:
        bad(f"solver must be one of {SOLVERS}, got {cfg.solver!r}")
    if not (cfg.tol >= 1e-14):
        bad(f"tol must be >= 1e-14, got {cfg.tol}")
    if cfg.max_iter < 1:
        bad(f"max_iter must be >= 1, got {cfg.max_iter}")
    if not (0 < cfg.damping <= 1):
        bad(f"damping must lie in (0, 1], got {cfg.damping}")
    if cfg.scheme not in SCHEMES:
        bad(f"scheme must be one of {SCHEMES}, got {cfg.scheme!r}")
    if cfg.snapshot_stride < 0:
        bad(f"snapshot_stride must be >= 0, got {cfg.snapshot_stride}")
    if cfg.slope_window is not None:
        a, b = cfg.slope_window
        if not (0 < a < b):
            bad(f"slope_window must satisfy 0 < t_min < t_max, got {cfg.slope_window}")


def preset_text(name: str) -> str:
    """Render a preset as config text (suitable for `nlch run`)."""
    if name not in PRESETS:
        raise ConfigurationError(
            f"unknown preset {name!r}, available: {', '.join(sorted(PRESETS))}"
        )
    lines = [f"# preset {name}"]
    for key, val in PRESETS[name].items():
        if key == "slope_window":
            val = f"{val[0]},{val[1]}"
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"
