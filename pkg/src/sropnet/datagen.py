"""Low/high-resolution sample generation for forced-diffusion problems.

Families:

* ``exp1``: 1D, parametric forcing ``(beta + D alpha)/50 e^{-2 beta t} sin(alpha x)``,
  zero initial state, grid layout.
* ``exp2``: 1D, fixed forcing ``3/5 sin(12x) e^{0.2x - 0.5t}``, random
  piecewise-constant initial states, grid layout.
* ``exp3``: 1D, analytic solution ``0.5 + 0.5 e^{beta t}(x^2-1) sin(alpha x)``
  sampled at scattered spacetime locations.
* ``diff2d`` / ``diff2d-var``: 2D unforced diffusion from random disks,
  fixed or per-sample diffusion constant.
* ``forced2d``: 2D diffusion with a random spiral forcing.

Grid-layout samples are stored in the "temporal" layout (one value per
output frame); scattered samples use the "spacetime" layout.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DataFormatError

FAMILIES = ("exp1", "exp2", "exp3", "diff2d", "diff2d-var", "forced2d")
FORMAT_TAG = "SROP1"


# ---------------------------------------------------------------------------
# domains and forcing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Domain1D:
    x_min: float
    x_max: float
    t_min: float
    t_max: float
    D: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.t_min < self.t_max and self.D > 0):
            raise ConfigError(f"invalid 1D domain {self}")

    @property
    def d(self) -> int:
        return 1

    def bounds(self) -> list[tuple[float, float]]:
        """Per-axis bounds, spatial axes first and time last."""
        return [(self.x_min, self.x_max), (self.t_min, self.t_max)]


@dataclass(frozen=True)
class Domain2D:
    x1_min: float
    x1_max: float
    x2_min: float
    x2_max: float
    t_min: float
    t_max: float
    D: float

    def __post_init__(self):
        if not (
            self.x1_min < self.x1_max
            and self.x2_min < self.x2_max
            and self.t_min < self.t_max
            and self.D > 0
        ):
            raise ConfigError(f"invalid 2D domain {self}")

    @property
    def d(self) -> int:
        return 2

    def bounds(self) -> list[tuple[float, float]]:
        return [(self.x1_min, self.x1_max), (self.x2_min, self.x2_max), (self.t_min, self.t_max)]


@dataclass(frozen=True)
class ForcingSpec:
    family: str
    alpha: float = 0.0
    beta: float = 0.0
    # spiral2d only
    center: tuple[float, float] = (0.0, 0.0)
    amplitude: float = 0.0
    pitch: float = 0.0
    width: float = 0.0
    r0: float = 0.0


SPIRAL_TURNS = 4.0 * math.pi


def spiral_field(spec: ForcingSpec, x1, x2) -> np.ndarray:
    """Rasterize the Archimedean arm ``r = r0 + pitch * theta``, theta in [0, 4 pi]."""
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    dx = x1 - spec.center[0]
    dy = x2 - spec.center[1]
    rho = np.hypot(dx, dy)
    phi = np.mod(np.arctan2(dy, dx), 2.0 * math.pi)
    on_arm = np.zeros(np.broadcast(x1, x2).shape, dtype=bool)
    for turn in range(2):
        theta = phi + 2.0 * math.pi * turn
        arm_r = spec.r0 + spec.pitch * theta
        on_arm |= np.abs(rho - arm_r) <= spec.width
    # the arm is a closed band around [r0, r0 + 4 pi p]; clip the end caps
    on_arm &= rho <= spec.r0 + SPIRAL_TURNS * spec.pitch + spec.width
    return np.where(on_arm, spec.amplitude, 0.0)


def forcing_eval(spec: ForcingSpec, D: float, x, t):
    """Pointwise forcing value; ``x`` is an array (1D) or an ``(x1, x2)`` pair (2D)."""
    fam = spec.family
    if fam == "exp1":
        a, b = spec.alpha, spec.beta
        x = np.asarray(x, dtype=np.float64)
        return (b + D * a) / 50.0 * np.exp(-2.0 * b * t) * np.sin(a * x)
    if fam == "exp2":
        x = np.asarray(x, dtype=np.float64)
        return 0.6 * np.sin(12.0 * x) * np.exp(0.2 * x - 0.5 * t)
    if fam == "exp3":
        a, b = spec.alpha, spec.beta
        x = np.asarray(x, dtype=np.float64)
        g = np.exp(b * t)
        return 0.5 * ((x * x - 1.0) * (a * a + b) - 2.0) * np.sin(a * x) * g - 2.0 * a * x * np.cos(a * x) * g
    if fam == "none":
        if isinstance(x, tuple):
            return np.zeros(np.broadcast(*x).shape)
        return np.zeros(np.shape(x))
    if fam == "spiral2d":
        x1, x2 = x
        return spiral_field(spec, x1, x2) + 0.0 * np.asarray(t)
    raise ConfigError(f"unknown forcing family {fam!r}")


def exact_solution_exp3(alpha: float, beta: float, x, t):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 + 0.5 * np.exp(beta * np.asarray(t)) * (x * x - 1.0) * np.sin(alpha * x)


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------


def make_rng(seed: int, index: int | None = None) -> np.random.Generator:
    """Philox stream for ``seed``; ``index`` selects an independent substream."""
    key = () if index is None else (int(index),)
    seq = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(seq))


# ---------------------------------------------------------------------------
# initial states and spiral forcing
# ---------------------------------------------------------------------------

INTERVAL_COUNT = (1, 5)
INTERVAL_HALF_WIDTH = (0.025, 0.15)  # fraction of the domain length
DISK_COUNT = (1, 5)
DISK_RADIUS = (0.2, 0.8)


def draw_intervals(rng: np.random.Generator, lo: float, hi: float, count: int | None = None):
    """List of ``(center, half_width, value)``; later entries overwrite earlier ones."""
    if count is None:
        count = int(rng.integers(INTERVAL_COUNT[0], INTERVAL_COUNT[1] + 1))
    length = hi - lo
    out = []
    for _ in range(count):
        center = rng.uniform(lo, hi)
        half = rng.uniform(*INTERVAL_HALF_WIDTH) * length
        value = rng.uniform(0.0, 1.0)
        out.append((center, half, value))
    return out


def rasterize_intervals(intervals, grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    u = np.zeros_like(grid)
    for center, half, value in intervals:
        a = max(center - half, grid[0])
        b = min(center + half, grid[-1])
        u[(grid >= a) & (grid <= b)] = value
    u[0] = u[-1] = 0.0
    return u


def initial_state_1d_intervals(rng: np.random.Generator, grid, count: int | None = None) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    return rasterize_intervals(draw_intervals(rng, grid[0], grid[-1], count), grid)


def draw_disks(rng: np.random.Generator, bounds, count: int | None = None):
    """List of ``(c1, c2, radius, value)`` inside ``bounds = ((x1lo, x1hi), (x2lo, x2hi))``."""
    if count is None:
        count = int(rng.integers(DISK_COUNT[0], DISK_COUNT[1] + 1))
    (a1, b1), (a2, b2) = bounds
    out = []
    for _ in range(count):
        c1 = rng.uniform(a1, b1)
        c2 = rng.uniform(a2, b2)
        radius = rng.uniform(*DISK_RADIUS)
        value = rng.uniform(0.0, 1.0)
        out.append((c1, c2, radius, value))
    return out


def rasterize_disks(disks, g1: np.ndarray, g2: np.ndarray) -> np.ndarray:
    X1, X2 = np.meshgrid(np.asarray(g1, float), np.asarray(g2, float), indexing="ij")
    u = np.zeros_like(X1)
    for c1, c2, radius, value in disks:
        u[(X1 - c1) ** 2 + (X2 - c2) ** 2 <= radius * radius] = value
    u[0, :] = u[-1, :] = u[:, 0] = u[:, -1] = 0.0
    return u


def initial_state_2d_disks(rng: np.random.Generator, g1, g2, count: int | None = None) -> np.ndarray:
    g1 = np.asarray(g1, float)
    g2 = np.asarray(g2, float)
    disks = draw_disks(rng, ((g1[0], g1[-1]), (g2[0], g2[-1])), count)
    return rasterize_disks(disks, g1, g2)


def spiral_forcing_2d(rng: np.random.Generator, domain: Domain2D | None = None) -> ForcingSpec:
    if domain is None:
        domain = DEFAULT_DOMAINS["forced2d"]
    q1 = 0.25 * (domain.x1_max - domain.x1_min)
    q2 = 0.25 * (domain.x2_max - domain.x2_min)
    c1 = rng.uniform(domain.x1_min + q1, domain.x1_max - q1)
    c2 = rng.uniform(domain.x2_min + q2, domain.x2_max - q2)
    amplitude = rng.uniform(0.5, 1.5)
    pitch = rng.uniform(0.05, 0.15)
    width = rng.uniform(0.05, 0.1)
    r0 = rng.uniform(0.0, 0.2)
    return ForcingSpec("spiral2d", center=(c1, c2), amplitude=amplitude, pitch=pitch, width=width, r0=r0)


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------

R_MAX = 0.45


def _substeps(D: float, frame_dt: float, dx2: float, dims: int) -> int:
    # dims * r <= R_MAX keeps the explicit scheme stable (bound is 1/2)
    return max(1, math.ceil(dims * D * frame_dt / (R_MAX * dx2)))


def solve_heat_1d(domain: Domain1D, init, forcing: ForcingSpec, nx: int, nt: int) -> np.ndarray:
    """Explicit FTCS solve, frames on ``linspace(t_min, t_max, nt)``.

    The boundary nodes keep the values of ``init`` (zero for every family
    except exp3, whose analytic solution is pinned at 0.5 there).
    """
    if nx < 3 or nt < 1:
        raise ConfigError(f"solve_heat_1d needs nx >= 3 and nt >= 1, got nx={nx}, nt={nt}")
    init = np.asarray(init, dtype=np.float64)
    if init.shape != (nx,):
        raise ConfigError(f"initial state has shape {init.shape}, expected ({nx},)")
    x = np.linspace(domain.x_min, domain.x_max, nx)
    dx = x[1] - x[0]
    out = np.empty((nt, nx))
    out[0] = init
    if nt == 1:
        return out
    frame_dt = (domain.t_max - domain.t_min) / (nt - 1)
    m = _substeps(domain.D, frame_dt, dx * dx, 1)
    dt = frame_dt / m
    r = domain.D * dt / (dx * dx)
    if r > 0.5:
        raise RuntimeError(f"unstable step selection r={r}")
    xi = x[1:-1]
    forced = forcing.family != "none"
    u = init.copy()
    t = domain.t_min
    for n in range(1, nt):
        for k in range(m):
            lap = u[2:] - 2.0 * u[1:-1] + u[:-2]
            if forced:
                u[1:-1] = u[1:-1] + r * lap + dt * forcing_eval(forcing, domain.D, xi, t)
            else:
                u[1:-1] = u[1:-1] + r * lap
            t = domain.t_min + ((n - 1) * m + k + 1) * dt
        out[n] = u
    return out


def solve_heat_2d(domain: Domain2D, init, forcing: ForcingSpec | None, n: int, nt: int) -> np.ndarray:
    """2D FTCS on an ``n x n`` node grid, indexed ``[frame, i1, i2]``."""
    if n < 3 or nt < 1:
        raise ConfigError(f"solve_heat_2d needs n >= 3 and nt >= 1, got n={n}, nt={nt}")
    init = np.asarray(init, dtype=np.float64)
    if init.shape != (n, n):
        raise ConfigError(f"initial state has shape {init.shape}, expected ({n}, {n})")
    g1 = np.linspace(domain.x1_min, domain.x1_max, n)
    g2 = np.linspace(domain.x2_min, domain.x2_max, n)
    d1 = g1[1] - g1[0]
    d2 = g2[1] - g2[0]
    out = np.empty((nt, n, n))
    out[0] = init
    if nt == 1:
        return out
    frame_dt = (domain.t_max - domain.t_min) / (nt - 1)
    m = _substeps(domain.D, frame_dt, min(d1, d2) ** 2, 2)
    dt = frame_dt / m
    r1 = domain.D * dt / d1**2
    r2 = domain.D * dt / d2**2
    if r1 + r2 > 0.5:
        raise RuntimeError(f"unstable step selection r1+r2={r1 + r2}")
    static = None
    time_dependent = False
    if forcing is not None and forcing.family != "none":
        X1, X2 = np.meshgrid(g1[1:-1], g2[1:-1], indexing="ij")
        if forcing.family == "spiral2d":
            static = forcing_eval(forcing, domain.D, (X1, X2), 0.0)
        else:
            time_dependent = True
    u = init.copy()
    t = domain.t_min
    for k_frame in range(1, nt):
        for k in range(m):
            c = u[1:-1, 1:-1]
            lap1 = u[2:, 1:-1] - 2.0 * c + u[:-2, 1:-1]
            lap2 = u[1:-1, 2:] - 2.0 * c + u[1:-1, :-2]
            new = c + r1 * lap1 + r2 * lap2
            if static is not None:
                new = new + dt * static
            elif time_dependent:
                new = new + dt * forcing_eval(forcing, domain.D, (X1, X2), t)
            u[1:-1, 1:-1] = new
            t = domain.t_min + ((k_frame - 1) * m + k + 1) * dt
        out[k_frame] = u
    return out


def make_lr(
    hr_field,
    mode: str = "downsample",
    factors: Sequence[int] | None = None,
    resolve: Callable[[tuple[int, ...]], np.ndarray] | None = None,
    lr_shape: Sequence[int] | None = None,
) -> np.ndarray:
    """Low-resolution counterpart of ``hr_field``.

    ``downsample`` keeps every ``factors[axis]``-th entry. ``coarse_solve``
    calls ``resolve(lr_shape)``, which re-runs the solver on the coarse grid
    from the same (re-rasterized) initial state and forcing.
    """
    hr_field = np.asarray(hr_field, dtype=np.float64)
    if mode == "downsample":
        if factors is None:
            raise ConfigError("downsample needs factors")
        factors = tuple(int(f) for f in factors)
        if len(factors) != hr_field.ndim:
            raise ConfigError(f"{len(factors)} factors for a {hr_field.ndim}-axis field")
        for n, f in zip(hr_field.shape, factors):
            if f < 1 or n % f:
                raise ConfigError(f"factor {f} does not divide resolution {n}")
        return hr_field[tuple(slice(None, None, f) for f in factors)].copy()
    if mode == "coarse_solve":
        if resolve is None or lr_shape is None:
            raise ConfigError("coarse_solve needs a resolve callback and lr_shape")
        return np.asarray(resolve(tuple(lr_shape)), dtype=np.float64)
    raise ConfigError(f"unknown LR mode {mode!r}")


def sample_locations(
    rng: np.random.Generator,
    count: int,
    bounds: Sequence[tuple[float, float]],
    n_times: int | None = None,
) -> np.ndarray:
    """``count`` spacetime points ``[count, d+1]`` (time last), sorted by (t, x).

    Spatial coordinates are uniform in the open interior; times come from a
    fixed uniform grid of ``n_times`` levels shared by every sample.
    """
    if count <= 0:
        raise ConfigError("count must be positive")
    *space, (t0, t1) = bounds
    if n_times is None:
        n_times = max(1, int(round(math.sqrt(count))))
    times = np.linspace(t0, t1, n_times) if n_times > 1 else np.array([t0])
    level = (np.arange(count) * n_times) // count
    pts = np.empty((count, len(space) + 1))
    for j, (lo, hi) in enumerate(space):
        col = rng.uniform(lo, hi, size=count)
        bad = (col <= lo) | (col >= hi)
        while bad.any():
            col[bad] = rng.uniform(lo, hi, size=int(bad.sum()))
            bad = (col <= lo) | (col >= hi)
        pts[:, j] = col
    pts[:, -1] = times[level]
    keys = [pts[:, j] for j in reversed(range(len(space)))] + [pts[:, -1]]
    return pts[np.lexsort(keys)]


# ---------------------------------------------------------------------------
# samples and datasets
# ---------------------------------------------------------------------------

DEFAULT_DOMAINS = {
    "exp1": Domain1D(-1.0, 1.0, 0.0, 2.0, 1.0 / 1000.0),
    "exp2": Domain1D(0.0, 2.0, 0.0, 1.0, 1.0 / 50.0),
    "exp3": Domain1D(-1.0, 1.0, 0.0, 2.0, 1.0),
    "diff2d": Domain2D(0.0, 4.0, 0.0, 4.0, 0.0, 1.0, 0.15),
    "diff2d-var": Domain2D(0.0, 4.0, 0.0, 4.0, 0.0, 1.0, 0.25),
    "forced2d": Domain2D(0.0, 4.0, 0.0, 4.0, 0.0, 1.0, 0.1),
}

PARAM_NAMES = {
    "exp1": ["alpha", "beta", "D"],
    "exp2": ["D"],
    "exp3": ["alpha", "beta", "D"],
    "diff2d": ["D"],
    "diff2d-var": ["D"],
    "forced2d": ["D", "center1", "center2", "amplitude", "pitch", "width", "r0"],
}

# (lr frames, lr nodes per axis), (hr frames, hr nodes per axis)
DEFAULT_RESOLUTION = {
    "exp1": ((40, 16), (80, 64)),
    "exp2": ((50, 24), (100, 96)),
    "diff2d": ((25, 24), (50, 72)),
    "diff2d-var": ((100, 24), (100, 72)),
    "forced2d": ((30, 24), (30, 72)),
}


@dataclass
class DatasetConfig:
    family: str = "exp1"
    n_samples: int = 16
    seed: int = 0
    lr_frames: int | None = None
    lr_nodes: int | None = None
    hr_frames: int | None = None
    hr_nodes: int | None = None
    lr_mode: str = "coarse_solve"
    # keep only the first fraction of LR frames (partial-input experiments)
    lr_fraction: float = 1.0
    alpha_range: tuple[float, float] | None = None
    beta_range: tuple[float, float] | None = None
    D_range: tuple[float, float] | None = None
    # exp3 scattered layout
    n_sensors: int = 144
    n_sensor_times: int = 12
    n_queries: int = 3600
    n_query_times: int = 60

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown problem {self.family!r}; choose from {FAMILIES}")
        if self.n_samples < 0:
            raise ConfigError("n_samples must be nonnegative")
        if self.lr_mode not in ("coarse_solve", "downsample"):
            raise ConfigError(f"unknown lr_mode {self.lr_mode!r}")
        if not 0.0 < self.lr_fraction <= 1.0:
            raise ConfigError("lr_fraction must lie in (0, 1]")
        if self.family in DEFAULT_RESOLUTION:
            (lt, ln), (ht, hn) = DEFAULT_RESOLUTION[self.family]
            self.lr_frames = self.lr_frames or lt
            self.lr_nodes = self.lr_nodes or ln
            self.hr_frames = self.hr_frames or ht
            self.hr_nodes = self.hr_nodes or hn
        for name in ("alpha_range", "beta_range", "D_range"):
            val = getattr(self, name)
            if val is not None:
                setattr(self, name, (float(val[0]), float(val[1])))
        if self.family == "exp3" and self.n_sensors % self.n_sensor_times:
            raise ConfigError("n_sensors must be a multiple of n_sensor_times")

    @property
    def layout(self) -> str:
        return "spacetime" if self.family == "exp3" else "temporal"

    @property
    def d(self) -> int:
        return 2 if self.family in ("diff2d", "diff2d-var", "forced2d") else 1

    def ranges(self) -> dict[str, tuple[float, float]]:
        defaults = {
            "exp1": {"alpha": (-6.0, 6.0), "beta": (-1.0, 1.0)},
            "exp3": {"alpha": (-8.0, 8.0), "beta": (-1.0, 0.0)},
            "diff2d-var": {"D": (0.1, 0.4)},
        }.get(self.family, {})
        out = dict(defaults)
        if self.alpha_range is not None:
            out["alpha"] = self.alpha_range
        if self.beta_range is not None:
            out["beta"] = self.beta_range
        if self.D_range is not None:
            out["D"] = self.D_range
        return out


@dataclass
class SampleRecord:
    params: np.ndarray
    sensor_coords: np.ndarray  # [d+1, s] spacetime or [d, s] temporal
    lr_field: np.ndarray  # [s] spacetime or [T, N(, N)] temporal
    query_coords: np.ndarray  # [M, d+1] spacetime or [M, d] temporal
    hr_targets: np.ndarray  # [M] spacetime or [T+, M] temporal

    def validate(self, bounds: Sequence[tuple[float, float]], tol: float = 1e-5) -> None:
        for name in ("params", "sensor_coords", "lr_field", "query_coords", "hr_targets"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DataFormatError(f"non-finite values in {name}")
        for coords in (self.sensor_coords.T, self.query_coords):
            for j in range(coords.shape[1]):
                lo, hi = bounds[j]
                if coords[:, j].min() < lo - tol or coords[:, j].max() > hi + tol:
                    raise DataFormatError(f"coordinate axis {j} leaves the domain [{lo}, {hi}]")


@dataclass
class Dataset:
    header: dict
    records: list[SampleRecord] = field(default_factory=list)

    @property
    def layout(self) -> str:
        return self.header["layout"]

    @property
    def family(self) -> str:
        return self.header["family"]

    @property
    def bounds(self) -> list[tuple[float, float]]:
        return [tuple(b) for b in self.header["domain"]]

    def __len__(self) -> int:
        return len(self.records)

    def subset(self, indices) -> "Dataset":
        recs = [self.records[i] for i in indices]
        header = dict(self.header, n_samples=len(recs))
        return Dataset(header, recs)

    def param(self, name: str) -> np.ndarray:
        j = self.header["param_names"].index(name)
        return np.array([r.params[j] for r in self.records])


def _domain_for(cfg: DatasetConfig, D: float | None = None):
    base = DEFAULT_DOMAINS[cfg.family]
    if D is None:
        return base
    if isinstance(base, Domain1D):
        return Domain1D(base.x_min, base.x_max, base.t_min, base.t_max, D)
    return Domain2D(base.x1_min, base.x1_max, base.x2_min, base.x2_max, base.t_min, base.t_max, D)


def _lr_time_span(cfg: DatasetConfig, domain) -> tuple[int, tuple[float, float]]:
    """(number of LR frames kept, their time span)."""
    if cfg.lr_mode == "downsample":
        factor = cfg.hr_frames // cfg.lr_frames
        times = np.linspace(domain.t_min, domain.t_max, cfg.hr_frames)[::factor]
    else:
        times = np.linspace(domain.t_min, domain.t_max, cfg.lr_frames)
    kept = max(2, int(math.ceil(cfg.lr_fraction * len(times)))) if cfg.lr_fraction < 1 else len(times)
    return kept, (float(times[0]), float(times[kept - 1]))


def _downsample_factors(cfg: DatasetConfig) -> tuple[int, int]:
    ft, rem_t = divmod(cfg.hr_frames, cfg.lr_frames)
    fs, rem_s = divmod(cfg.hr_nodes, cfg.lr_nodes)
    if rem_t or rem_s:
        raise ConfigError(
            f"downsample mode needs LR resolution ({cfg.lr_frames}, {cfg.lr_nodes}) "
            f"to divide HR resolution ({cfg.hr_frames}, {cfg.hr_nodes})"
        )
    return ft, fs


def generate_sample(cfg: DatasetConfig, index: int) -> SampleRecord:
    rng = make_rng(cfg.seed, index)
    fam = cfg.family
    ranges = cfg.ranges()
    if fam == "exp3":
        alpha = rng.uniform(*ranges["alpha"])
        beta = rng.uniform(*ranges["beta"])
        domain = _domain_for(cfg)
        bounds = domain.bounds()
        sensors = sample_locations(rng, cfg.n_sensors, bounds, cfg.n_sensor_times)
        queries = sample_locations(rng, cfg.n_queries, bounds, cfg.n_query_times)
        lr = exact_solution_exp3(alpha, beta, sensors[:, 0], sensors[:, 1])
        hr = exact_solution_exp3(alpha, beta, queries[:, 0], queries[:, 1])
        return SampleRecord(
            params=np.array([alpha, beta, domain.D]),
            sensor_coords=sensors.T.copy(),
            lr_field=lr,
            query_coords=queries,
            hr_targets=hr,
        )

    D = rng.uniform(*ranges["D"]) if "D" in ranges else None
    domain = _domain_for(cfg, D)
    if fam == "exp1":
        alpha = rng.uniform(*ranges["alpha"])
        beta = rng.uniform(*ranges["beta"])
        forcing = ForcingSpec("exp1", alpha=alpha, beta=beta)
        params = [alpha, beta, domain.D]
        make_init = lambda grid: np.zeros_like(grid)  # noqa: E731
    elif fam == "exp2":
        forcing = ForcingSpec("exp2")
        params = [domain.D]
        intervals = draw_intervals(rng, domain.x_min, domain.x_max)
        make_init = lambda grid: rasterize_intervals(intervals, grid)  # noqa: E731
    else:
        disks = draw_disks(rng, ((domain.x1_min, domain.x1_max), (domain.x2_min, domain.x2_max)))
        if fam == "forced2d":
            forcing = spiral_forcing_2d(rng, domain)
            params = [domain.D, *forcing.center, forcing.amplitude, forcing.pitch, forcing.width, forcing.r0]
        else:
            forcing = ForcingSpec("none")
            params = [domain.D]
        make_init = lambda grid: rasterize_disks(disks, grid, grid)  # noqa: E731

    def solve(frames: int, nodes: int) -> np.ndarray:
        if domain.d == 1:
            grid = np.linspace(domain.x_min, domain.x_max, nodes)
            return solve_heat_1d(domain, make_init(grid), forcing, nodes, frames)
        grid = np.linspace(domain.x1_min, domain.x1_max, nodes)
        return solve_heat_2d(domain, make_init(grid), forcing, nodes, frames)

    hr = solve(cfg.hr_frames, cfg.hr_nodes)
    space_bounds = domain.bounds()[:-1]
    if cfg.lr_mode == "downsample":
        ft, fs = _downsample_factors(cfg)
        lr = make_lr(hr, "downsample", (ft,) + (fs,) * domain.d)
        lr_axis = np.linspace(*space_bounds[0], cfg.hr_nodes)[::fs]
    else:
        lr = make_lr(hr, "coarse_solve", resolve=lambda shape: solve(shape[0], shape[1]),
                     lr_shape=(cfg.lr_frames, cfg.lr_nodes))
        lr_axis = np.linspace(*space_bounds[0], cfg.lr_nodes)
    kept, _ = _lr_time_span(cfg, domain)
    lr = lr[:kept]
    hr_axis = np.linspace(*space_bounds[0], cfg.hr_nodes)
    sensors = _grid_coords(lr_axis, domain.d)
    queries = _grid_coords(hr_axis, domain.d).T.copy()
    return SampleRecord(
        params=np.asarray(params, dtype=np.float64),
        sensor_coords=sensors,
        lr_field=lr,
        query_coords=queries,
        hr_targets=hr.reshape(hr.shape[0], -1),
    )


def _grid_coords(axis: np.ndarray, d: int) -> np.ndarray:
    """[d, N^d] node coordinates in ``[i1, i2]`` (C) order."""
    if d == 1:
        return axis[None, :].copy()
    X1, X2 = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([X1.ravel(), X2.ravel()])


def dataset_header(cfg: DatasetConfig) -> dict:
    fam = cfg.family
    domain = _domain_for(cfg)
    bounds = [list(b) for b in domain.bounds()]
    if "D" in cfg.ranges():
        bounds_note = list(cfg.ranges()["D"])
    else:
        bounds_note = None
    if cfg.layout == "spacetime":
        lr_shape = [cfg.n_sensors]
        s = cfg.n_sensors
        m = cfg.n_queries
        hr_frames = None
        hr_shape = None
        lr_span = [domain.t_min, domain.t_max]
    else:
        kept, span = _lr_time_span(cfg, domain)
        if cfg.lr_mode == "downsample":
            _, fs = _downsample_factors(cfg)
            n_lr = len(range(0, cfg.hr_nodes, fs))
        else:
            n_lr = cfg.lr_nodes
        lr_shape = [kept] + [n_lr] * domain.d
        s = n_lr**domain.d
        m = cfg.hr_nodes**domain.d
        hr_frames = cfg.hr_frames
        hr_shape = [cfg.hr_frames] + [cfg.hr_nodes] * domain.d
        lr_span = list(span)
    return {
        "format": FORMAT_TAG,
        "family": fam,
        "layout": cfg.layout,
        "n_samples": cfg.n_samples,
        "s": s,
        "lr_shape": lr_shape,
        "hr_query_count": m,
        "hr_frames": hr_frames,
        "hr_shape": hr_shape,
        "d": domain.d,
        "param_names": PARAM_NAMES[fam],
        "seed": cfg.seed,
        "endianness": "little",
        "domain": bounds,
        "lr_time_span": lr_span,
        "lr_mode": cfg.lr_mode,
        "D_range": bounds_note,
    }


def _threads() -> int:
    env = os.environ.get("SROP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"SROP_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def generate_dataset(cfg: DatasetConfig) -> Dataset:
    header = dataset_header(cfg)
    workers = min(_threads(), max(1, cfg.n_samples))
    if workers == 1:
        records = [generate_sample(cfg, i) for i in range(cfg.n_samples)]
    else:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(lambda i: generate_sample(cfg, i), range(cfg.n_samples)))
    return Dataset(header, records)


def build_dataset(cfg: DatasetConfig, path) -> Dataset:
    """Generate ``cfg.n_samples`` records and write them as an SROP1 file."""
    ds = generate_dataset(cfg)
    write_dataset(path, ds)
    return ds


# ---------------------------------------------------------------------------
# SROP1 serialization
# ---------------------------------------------------------------------------


def _section_sizes(header: dict) -> list[tuple[str, tuple[int, ...]]]:
    d = header["d"]
    s = header["s"]
    m = header["hr_query_count"]
    p = len(header["param_names"])
    lr_shape = tuple(header["lr_shape"])
    if header["layout"] == "spacetime":
        return [
            ("params", (p,)),
            ("sensor_coords", (d + 1, s)),
            ("lr_field", lr_shape),
            ("query_coords", (m, d + 1)),
            ("hr_targets", (m,)),
        ]
    return [
        ("params", (p,)),
        ("sensor_coords", (d, s)),
        ("lr_field", lr_shape),
        ("query_coords", (m, d)),
        ("hr_targets", (header["hr_frames"], m)),
    ]


def encode_header(header: dict) -> bytes:
    return (json.dumps(header, separators=(",", ":")) + "\n").encode("utf-8")


def write_dataset(path, ds: Dataset) -> None:
    header = dict(ds.header, n_samples=len(ds.records))
    sections = _section_sizes(header)
    with open(path, "wb") as fh:
        fh.write(encode_header(header))
        for rec in ds.records:
            for name, shape in sections:
                arr = np.asarray(getattr(rec, name))
                if arr.shape != shape:
                    raise ConfigError(f"record field {name} has shape {arr.shape}, header implies {shape}")
                fh.write(arr.astype("<f4").tobytes())


def read_dataset(path, validate: bool = True) -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.find(b"\n")
    if nl < 0:
        raise DataFormatError("missing header line", 0)
    try:
        header = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"unreadable header: {exc}", 0) from None
    if not isinstance(header, dict) or header.get("format") != FORMAT_TAG:
        raise DataFormatError(f"not an {FORMAT_TAG} file", 0)
    if header.get("endianness") != "little":
        raise DataFormatError("only little-endian payloads are supported", 0)
    try:
        sections = _section_sizes(header)
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"incomplete header: {exc}", 0) from None
    offset = nl + 1
    bounds = [tuple(b) for b in header["domain"]]
    records = []
    for i in range(header["n_samples"]):
        fields = {}
        for name, shape in sections:
            n = int(np.prod(shape))
            end = offset + 4 * n
            if end > len(blob):
                raise DataFormatError(f"truncated record {i} ({name})", offset)
            fields[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).astype(np.float64).reshape(shape)
            offset = end
        rec = SampleRecord(**fields)
        if validate:
            try:
                rec.validate(bounds)
            except DataFormatError as exc:
                raise DataFormatError(f"record {i}: {exc}", offset) from None
        records.append(rec)
    if offset != len(blob):
        raise DataFormatError("trailing bytes after the last record", offset)
    return Dataset(header, records)


def config_echo(cfg: DatasetConfig) -> dict:
    return asdict(cfg)
