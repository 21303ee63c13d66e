"""Preset scenarios: temporal accuracy, magnetic chevron, sheared chevron."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .energy import EnergyReport, total_energy
from .fields import (
    BC,
    NEUMANN,
    NO_SLIP,
    PhysParams,
    ScalarField,
    SchemeParams,
    State,
    VectorField2,
    make_grid,
    zero_mean_noise,
)
from .ops import context
from .scheme import StepOutputs, advance, check_stabilizer

log = logging.getLogger(__name__)

PRESETS = ("accuracy", "chevron", "shear", "custom")
CHEVRON_TIMES = (0.0, 0.2, 0.4, 0.8)
SHEAR_TIMES = (0.0, 0.3, 0.4, 0.5, 0.6, 0.8)
SHEAR_PROFILE_TIMES = (0.0, 0.45, 0.8)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce a run.

    ``initial`` names the initial/boundary data family (``accuracy``,
    ``chevron`` or ``shear``); presets set it to their own name and a custom
    run picks one.  ``snapshot_every`` (steps, 0 = off) adds regular
    snapshots to the fixed ``snapshot_times``.
    """

    preset: str = "custom"
    initial: str = "chevron"
    nx: int = 128
    ny: int = 128
    lx: float = 4.0
    y0: float = -1.0
    y1: float = 1.0
    phys: PhysParams = PhysParams()
    scheme: SchemeParams = SchemeParams()
    t_final: float = 0.8
    seed: int = 42
    noise_amplitude: float = 1e-3
    flow: bool = True
    shear_speed: float = 10.0
    snapshot_times: tuple[float, ...] = ()
    snapshot_every: int = 0
    out_dir: str | None = None
    allow_unstable: bool = False
    strict_energy: bool = False
    energy_tol: float = 1e-8

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; expected one of {PRESETS}")
        if self.initial not in PRESETS[:3]:
            raise ValueError(f"unknown initial data {self.initial!r}")
        if not self.t_final >= 0:
            raise ValueError("t_final must be non-negative")
        if self.snapshot_every < 0:
            raise ValueError("snapshot_every must be >= 0")
        make_grid(self.nx, self.ny, self.lx, self.y0, self.y1)

    @property
    def grid(self):
        return make_grid(self.nx, self.ny, self.lx, self.y0, self.y1)

    @property
    def n_steps(self) -> int:
        return steps_for(self.t_final, self.scheme.dt)


def steps_for(t: float, dt: float) -> int:
    n = round(t / dt)
    if abs(n * dt - t) > 1e-9 * max(1.0, t):
        raise ValueError(f"time {t} is not a multiple of dt = {dt}")
    return int(n)


ACCURACY_T_FINAL = 0.104     # smallest horizon >= 0.1 that 8e-3 divides


def preset_accuracy() -> ExperimentConfig:
    return ExperimentConfig(
        preset="accuracy", initial="accuracy", lx=4.0, y0=0.0, y1=2.0,
        phys=PhysParams(h=(0.0, 1.0)), scheme=SchemeParams(dt=1e-3), t_final=ACCURACY_T_FINAL, flow=True,
    )


def preset_chevron(seed: int = 42) -> ExperimentConfig:
    # the field points along the layers (x); see the README
    return ExperimentConfig(
        preset="chevron", initial="chevron", phys=PhysParams(h=(1.0, 0.0)),
        scheme=SchemeParams(dt=1e-3), t_final=0.8, seed=seed, flow=False,
        snapshot_times=CHEVRON_TIMES,
    )


def preset_shear(seed: int = 42) -> ExperimentConfig:
    return replace(preset_chevron(seed), preset="shear", initial="shear", flow=True,
                   snapshot_times=SHEAR_TIMES)


PRESET_FACTORIES: dict[str, Callable[[], ExperimentConfig]] = {
    "accuracy": preset_accuracy,
    "chevron": preset_chevron,
    "shear": preset_shear,
    "custom": ExperimentConfig,
}


def initial_state(cfg: ExperimentConfig) -> State:
    grid = cfg.grid
    X, Y = grid.mesh()
    zeros = np.zeros(grid.shape)
    if cfg.initial == "accuracy":
        phi = ScalarField(grid, np.cos(np.pi * Y), NEUMANN)
        d = VectorField2.from_arrays(
            grid, [np.sin(np.pi * X) * np.cos(np.pi * Y), np.cos(np.pi * X) * np.cos(np.pi * Y)])
        u = VectorField2.zeros(grid, (NO_SLIP, NO_SLIP))
    else:
        phi = ScalarField(grid, Y.copy(), BC("dirichlet", cfg.y0, cfg.y1))
        s1, s2 = np.random.SeedSequence(cfg.seed).spawn(2)
        n1 = zero_mean_noise(grid, cfg.noise_amplitude, s1, interior_only=True).values
        n2 = zero_mean_noise(grid, cfg.noise_amplitude, s2, interior_only=True).values
        d = VectorField2.from_arrays(grid, [n1, 1.0 + n2], (BC("dirichlet", 0.0, 0.0), BC("dirichlet", 1.0, 1.0)))
        if cfg.initial == "shear":
            c = cfg.shear_speed
            ubc = BC("dirichlet", c * cfg.y0, c * cfg.y1)
            u = VectorField2.from_arrays(grid, [c * Y, zeros], (ubc, NO_SLIP))
        else:
            u = VectorField2.zeros(grid, (NO_SLIP, NO_SLIP))
    state = State(u.apply_bc(), ScalarField.zeros(grid), phi.apply_bc(), d.apply_bc())
    if not state.is_valid():
        raise ValueError("initial state is not valid")
    return state


@dataclass
class StepStats:
    step: int
    iterations: dict[str, int]
    div_rel: float
    p_min_eig: float
    dissipation: float


@dataclass
class RunResult:
    config: ExperimentConfig
    final: State
    energies: list[EnergyReport]
    snapshots: dict[float, State]
    stats: list[StepStats] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def violations(self) -> int:
        return sum(not r.monotone_ok for r in self.energies)

    @property
    def max_div_rel(self) -> float:
        return max((s.div_rel for s in self.stats), default=0.0)


class EnergyViolation(RuntimeError):
    pass


def simulate(cfg: ExperimentConfig, state: State | None = None,
             observer: Callable[[State, StepOutputs | None, EnergyReport], None] | None = None) -> RunResult:
    """Advance ``cfg``'s initial state to ``t_final``.

    Snapshots are kept at ``cfg.snapshot_times`` (those within the horizon)
    and every ``cfg.snapshot_every`` steps.
    """
    check_stabilizer(cfg.phys, cfg.scheme, cfg.allow_unstable)
    state = initial_state(cfg) if state is None else state
    dt = cfg.scheme.dt
    n = cfg.n_steps
    snap_steps = {steps_for(t, dt): t for t in cfg.snapshot_times if t <= cfg.t_final + 1e-12}
    snapshots: dict[float, State] = {}

    def keep(st: State):
        k = st.step
        if k in snap_steps:
            snapshots[snap_steps[k]] = st.copy()
        elif cfg.snapshot_every and k % cfg.snapshot_every == 0:
            snapshots[round(k * dt, 12)] = st.copy()

    report = total_energy(state, cfg.phys, dt)
    energies = [report]
    stats: list[StepStats] = []
    warnings: list[str] = []
    keep(state)
    if observer:
        observer(state, None, report)
    for _ in range(n):
        state, out, new = advance(state, cfg.phys, cfg.scheme, flow=cfg.flow,
                                  prev_report=report, energy_tol=cfg.energy_tol)
        energies.append(new)
        stats.append(StepStats(state.step, {k: r.iterations for k, r in out.reports.items()},
                               out.div_rel, out.p_min_eig, out.dissipation))
        warnings.extend(f"step {state.step}: {w}" for w in out.warnings)
        if not new.monotone_ok:
            msg = (f"step {state.step}: modified energy grew by "
                   f"{new.e_modified - report.e_modified:.3e}")
            log.warning(msg)
            if cfg.strict_energy:
                raise EnergyViolation(msg)
        report = new
        keep(state)
        if observer:
            observer(state, out, new)
    return RunResult(cfg, state, energies, snapshots, stats, warnings)


# --- pattern metrics ------------------------------------------------------------

def midline_values(f: np.ndarray, grid) -> np.ndarray:
    """Values along ``y = (y0 + y1)/2``; averages the two central rows when ``ny`` is even."""
    ny = grid.ny
    if ny % 2:
        return f[:, ny // 2].copy()
    return 0.5 * (f[:, ny // 2 - 1] + f[:, ny // 2])


def sign_changes_periodic(v: np.ndarray) -> int:
    s = np.sign(v)
    s = s[s != 0]
    if s.size < 2:
        return 0
    return int(np.sum(s != np.roll(s, -1)))


def undulation_count(state: State) -> int:
    return sign_changes_periodic(midline_values(state.d.x.values, state.grid))


def layer_deviation(state: State) -> float:
    _, Y = state.grid.mesh()
    return float(np.max(np.abs(state.phi.values - Y)))


def mirror_symmetry(f: np.ndarray) -> float:
    """Best correlation between ``f`` and its x-reflection over all periodic shifts.

    Equals 1 when ``f`` is mirror symmetric about some vertical line; the
    mean along x of each row is removed first.
    """
    g = f - f.mean(axis=0, keepdims=True)
    norm = float(np.sum(g * g))
    if norm == 0.0:
        return 1.0
    flipped = g[::-1]
    # circular cross-correlation along x for all shifts at once
    corr = np.fft.irfft(np.conj(np.fft.rfft(g, axis=0)) * np.fft.rfft(flipped, axis=0), n=g.shape[0], axis=0)
    return float(np.max(corr.sum(axis=1)) / norm)


@dataclass
class ChevronMetrics:
    time: float
    max_abs_d1: float
    undulations: int
    max_layer_deviation: float


def chevron_metrics(state: State) -> ChevronMetrics:
    return ChevronMetrics(state.time, float(np.max(np.abs(state.d.x.values))),
                          undulation_count(state), layer_deviation(state))


@dataclass
class ChevronResult:
    run: RunResult
    metrics: dict[float, ChevronMetrics]


def run_chevron(cfg: ExperimentConfig | None = None) -> ChevronResult:
    cfg = cfg or preset_chevron()
    run = simulate(cfg)
    metrics = {t: chevron_metrics(s) for t, s in sorted(run.snapshots.items())}
    return ChevronResult(run, metrics)


@dataclass
class ShearResult:
    run: RunResult
    metrics: dict[float, ChevronMetrics]
    profiles: dict[float, np.ndarray]      # u(x = lx/2, y) at SHEAR_PROFILE_TIMES
    y: np.ndarray
    symmetry: float
    baseline_symmetry: float | None = None

    def profile_deviation(self, t: float) -> float:
        c = self.run.config.shear_speed
        return float(np.max(np.abs(self.profiles[t] - c * self.y)))


def run_shear(cfg: ExperimentConfig | None = None, baseline: ChevronResult | None = None) -> ShearResult:
    """Sheared chevron; ``baseline`` (a no-shear run) supplies the reference symmetry score."""
    cfg = cfg or preset_shear()
    grid = cfg.grid
    times = tuple(sorted(set(cfg.snapshot_times) | set(SHEAR_PROFILE_TIMES)))
    run = simulate(replace(cfg, snapshot_times=times))
    ix = grid.nx // 2
    profiles = {t: run.snapshots[t].u.x.values[ix].copy() for t in SHEAR_PROFILE_TIMES if t in run.snapshots}
    keep = set(cfg.snapshot_times)
    run.snapshots = {t: s for t, s in run.snapshots.items() if t in keep or t == 0.0}
    metrics = {t: chevron_metrics(s) for t, s in sorted(run.snapshots.items())}
    _, Y = grid.mesh()
    sym = mirror_symmetry(run.final.phi.values - Y)
    base = None
    if baseline is not None:
        base = mirror_symmetry(baseline.run.final.phi.values - Y)
    return ShearResult(run, metrics, profiles, grid.y, sym, base)


# --- temporal accuracy -------------------------------------------------------------

ACCURACY_VARIABLES = ("phi", "d1", "d2", "u", "v", "p")


def state_components(state: State) -> dict[str, np.ndarray]:
    ctx = context(state.grid)
    p = state.p.values
    p = p - np.sum(p * ctx.weights) / state.grid.area
    return {"phi": state.phi.values, "d1": state.d.x.values, "d2": state.d.y.values,
            "u": state.u.x.values, "v": state.u.y.values, "p": p}


def fit_slope(dts, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(dt)``."""
    dts = np.asarray(dts, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if dts.size < 3 or dts.shape != errors.shape:
        raise ValueError("need at least three (dt, error) pairs")
    if np.any(dts <= 0) or np.any(errors <= 0):
        raise ValueError("dt and error values must be positive")
    slope, _ = np.polyfit(np.log(dts), np.log(errors), 1)
    return float(slope)


@dataclass
class ConvergenceTable:
    dts: list[float]
    errors: dict[str, list[float]]
    slopes: dict[str, float]
    monotone: dict[str, bool]
    dt_benchmark: float
    max_div_rel: dict[float, float] = field(default_factory=dict)     # per run, benchmark included
    violations: dict[float, int] = field(default_factory=dict)

    def halving_ratio(self, var: str) -> float:
        """``error(dt)/error(dt/2)`` for the smallest pair of time steps."""
        order = np.argsort(self.dts)
        e = np.asarray(self.errors[var])[order]
        return float(e[1] / e[0])

    def rows(self):
        for i, dt in enumerate(self.dts):
            yield dt, {v: self.errors[v][i] for v in self.errors}


def run_accuracy(cfg: ExperimentConfig | None = None, dt_list=(8e-3, 4e-3, 2e-3, 1e-3, 5e-4),
                 dt_benchmark: float = 1e-4) -> ConvergenceTable:
    cfg = cfg or preset_accuracy()
    dt_list = sorted(float(dt) for dt in dt_list)[::-1]
    if len(dt_list) < 3:
        raise ValueError("need at least three time steps")
    if not dt_benchmark < min(dt_list):
        raise ValueError("benchmark dt must be smaller than every dt in the list")
    for dt in dt_list + [dt_benchmark]:
        steps_for(cfg.t_final, dt)

    div: dict[float, float] = {}
    bad: dict[float, int] = {}

    def final(dt):
        c = replace(cfg, scheme=replace(cfg.scheme, dt=dt), snapshot_times=(), snapshot_every=0)
        run = simulate(c)
        div[dt], bad[dt] = run.max_div_rel, run.violations
        return state_components(run.final)

    ref = final(dt_benchmark)
    ctx = context(cfg.grid)
    errors: dict[str, list[float]] = {v: [] for v in ACCURACY_VARIABLES}
    for dt in dt_list:
        comp = final(dt)
        for v in ACCURACY_VARIABLES:
            errors[v].append(ctx.norm(comp[v] - ref[v]))
    slopes = {v: fit_slope(dt_list, errors[v]) for v in ACCURACY_VARIABLES}
    monotone = {v: bool(np.all(np.diff(errors[v]) < 0)) for v in ACCURACY_VARIABLES}
    for v, ok in monotone.items():
        if not ok:
            log.warning("errors of %s do not decrease monotonically with dt", v)
    return ConvergenceTable(dt_list, errors, slopes, monotone, dt_benchmark, div, bad)


__all__ = [
    "ACCURACY_T_FINAL",
    "ACCURACY_VARIABLES",
    "CHEVRON_TIMES",
    "ChevronMetrics",
    "ChevronResult",
    "ConvergenceTable",
    "EnergyViolation",
    "ExperimentConfig",
    "PRESETS",
    "PRESET_FACTORIES",
    "RunResult",
    "SHEAR_PROFILE_TIMES",
    "SHEAR_TIMES",
    "ShearResult",
    "StepStats",
    "chevron_metrics",
    "fit_slope",
    "initial_state",
    "layer_deviation",
    "midline_values",
    "mirror_symmetry",
    "preset_accuracy",
    "preset_chevron",
    "preset_shear",
    "run_accuracy",
    "run_chevron",
    "run_shear",
    "sign_changes_periodic",
    "simulate",
    "state_components",
    "steps_for",
]
