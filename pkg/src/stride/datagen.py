"""Dataset generation: chaotic 1-d flow, 2-d shallow water, sensors, noise.

Both generators are deterministic under a master seed; per-trajectory
seeds derive from a counter so trajectories are independent of how many
are requested before them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, GenerationError
from .util import as_f64, derive_seed

KS_DEFAULT_LENGTH = 22.0
KS_DEFAULT_DT = 0.25
SWE_GRAVITY = 1.0
SWE_DEPTH = 100.0
SWE_BASE_RES = 128
SWE_DEFAULT_TFINAL = 0.3
SWE_DEFAULT_SIGMA = 0.05
SWE_CENTER_BOX = ((-1.0, 0.0), (-1.0, 0.0))  # lower-left quadrant of [-1,1]^2


@dataclass
class Trajectory:
    """One gridded spatiotemporal run with optional hidden parameters."""

    coords: np.ndarray           # (N_xi, d_xi)
    fields: np.ndarray           # (N_t, N_xi, d_x)
    dt: float
    mu: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coords = as_f64(self.coords)
        self.fields = as_f64(self.fields)
        if self.mu is not None:
            self.mu = as_f64(np.atleast_1d(self.mu))
        if self.fields.ndim != 3 or self.fields.shape[1] != self.coords.shape[0]:
            raise DimensionError(
                f"fields {self.fields.shape} vs coords {self.coords.shape}")
        if not np.isfinite(self.fields).all():
            raise GenerationError("trajectory contains non-finite values")

    @property
    def n_t(self) -> int:
        return self.fields.shape[0]

    @property
    def n_xi(self) -> int:
        return self.fields.shape[1]

    @property
    def d_x(self) -> int:
        return self.fields.shape[2]


@dataclass
class SensorSet:
    """Grid indices plus the observed-channel projection."""

    indices: np.ndarray   # (N_s,) int
    channels: np.ndarray  # (d_o,) int
    strategy: str = "random"

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.channels = np.asarray(self.channels, dtype=np.int64)
        if len(np.unique(self.indices)) != len(self.indices):
            raise ContractError("sensor indices must be unique")

    @property
    def n_sensors(self) -> int:
        return len(self.indices)

    @property
    def p(self) -> int:
        return len(self.indices) * len(self.channels)

    def to_dict(self) -> dict:
        return {"indices": self.indices.tolist(), "channels": self.channels.tolist(),
                "strategy": self.strategy}

    @classmethod
    def from_dict(cls, d: dict) -> "SensorSet":
        return cls(np.asarray(d["indices"]), np.asarray(d["channels"]), d.get("strategy", "random"))


# ---------------------------------------------------------------------------
# Kuramoto-Sivashinsky (spectral ETDRK4)
# ---------------------------------------------------------------------------


def _etdrk4_tables(lam: np.ndarray, h: float, n_contour: int = 32):
    """ETDRK4 coefficients via contour-integral averaging around each eigenvalue."""
    r = np.exp(1j * np.pi * (np.arange(1, n_contour + 1) - 0.5) / n_contour)
    lr = h * lam[:, None] + r[None, :]
    elr = np.exp(lr)
    q = h * ((np.exp(lr / 2.0) - 1.0) / lr).mean(axis=1).real
    f1 = h * ((-4.0 - lr + elr * (4.0 - 3.0 * lr + lr ** 2)) / lr ** 3).mean(axis=1).real
    f2 = h * ((2.0 + lr + elr * (lr - 2.0)) / lr ** 3).mean(axis=1).real
    f3 = h * ((-4.0 - 3.0 * lr - lr ** 2 + elr * (4.0 - lr)) / lr ** 3).mean(axis=1).real
    return np.exp(h * lam), np.exp(h * lam / 2.0), q, f1, f2, f3


def ks_initial_condition(x: np.ndarray, length: float, freq: float) -> np.ndarray:
    arg = 2.0 * np.pi * freq * x / length
    return np.cos(arg) * (1.0 + np.sin(arg))


def simulate_ks(u0: np.ndarray, n_t: int, dt: float, length: float,
                substeps: int = 1, traj_label: str = "") -> np.ndarray:
    """Integrate u_t = -u u_x - u_xx - u_xxxx on a periodic grid.

    ``dt`` is the snapshot interval; the ETDRK4 step is dt/substeps.
    Returns (n_t, N) including the initial snapshot.
    """
    u0 = as_f64(u0)
    n = u0.shape[0]
    if n % 2:
        raise ConfigError("KS grid size must be even")
    if dt <= 0 or substeps < 1:
        raise ConfigError("KS time step must be positive")
    k = 2.0 * np.pi * np.fft.rfftfreq(n, d=length / n)
    lam = k ** 2 - k ** 4
    g = -0.5j * k
    g[-1] = 0.0  # drop Nyquist from the derivative of the quadratic term
    h = dt / substeps
    e_full, e_half, q, f1, f2, f3 = _etdrk4_tables(lam, h)

    def nonlin(vhat):
        u = np.fft.irfft(vhat, n=n)
        return g * np.fft.rfft(u * u)

    out = np.empty((n_t, n))
    out[0] = u0
    v = np.fft.rfft(u0)
    for it in range(1, n_t):
        for _ in range(substeps):
            nv = nonlin(v)
            a = e_half * v + q * nv
            na = nonlin(a)
            b = e_half * v + q * na
            nb = nonlin(b)
            c = e_half * a + q * (2.0 * nb - nv)
            nc = nonlin(c)
            v = e_full * v + nv * f1 + 2.0 * (na + nb) * f2 + nc * f3
        u = np.fft.irfft(v, n=n)
        if np.max(np.abs(u)) > 1e6 or not np.isfinite(u).all():
            raise GenerationError(f"KS blow-up in trajectory {traj_label or '?'} at snapshot {it}")
        out[it] = u
    return out


def generate_ks(n_traj: int, n_xi: int = 100, n_t: int = 201,
                length: float = KS_DEFAULT_LENGTH, dt: float = KS_DEFAULT_DT,
                seed: int = 0, substeps: int = 5,
                freq_range: tuple[float, float] = (2.5, 3.5),
                freqs: Optional[Sequence[float]] = None) -> list[Trajectory]:
    """Chaotic 1-d trajectories varying only the initial-condition frequency."""
    x = np.arange(n_xi) * (length / n_xi)
    coords = x[:, None].copy()
    out = []
    for j in range(n_traj):
        rng = np.random.default_rng(derive_seed(seed, 0, j))
        f = float(freqs[j]) if freqs is not None else float(rng.uniform(*freq_range))
        u = simulate_ks(ks_initial_condition(x, length, f), n_t, dt, length,
                        substeps=substeps, traj_label=str(j))
        out.append(Trajectory(coords, u[:, :, None], dt, mu=np.array([f]),
                              meta={"generator": "ks", "seed": int(seed), "index": j,
                                    "length": length, "freq": f, "grid_shape": [n_xi]}))
    return out


# ---------------------------------------------------------------------------
# linearized shallow water (staggered grid, reflective walls)
# ---------------------------------------------------------------------------


def _swe_cell_centers(res: int) -> np.ndarray:
    dx = 2.0 / res
    return -1.0 + (np.arange(res) + 0.5) * dx


def simulate_swe(res: int, n_t: int, t_final: float, center: tuple[float, float],
                 sigma: float, amplitude: float = 1.0,
                 dt: Optional[float] = None) -> np.ndarray:
    """Linear shallow-water run; returns (n_t, res, res, 3) as (u, v, eta).

    Staggered flux-form stepping keeps the total surface elevation
    conserved to rounding under the closed (reflective) boundaries.
    """
    dx = 2.0 / res
    wave_speed = np.sqrt(SWE_GRAVITY * SWE_DEPTH)
    dt_max = 0.5 * dx / (wave_speed * np.sqrt(2.0))
    interval = t_final / (n_t - 1)
    if dt is None:
        substeps = max(1, int(np.ceil(interval / dt_max)))
        dt = interval / substeps
    else:
        if dt > dt_max:
            raise ConfigError(f"SWE time step {dt} violates the CFL bound {dt_max:.3e}")
        substeps = max(1, int(round(interval / dt)))
        if abs(substeps * dt - interval) > 1e-12 * interval:
            raise ConfigError("SWE time step must divide the snapshot interval")

    xc = _swe_cell_centers(res)
    xg, yg = np.meshgrid(xc, xc, indexing="ij")
    eta = amplitude * np.exp(-(((xg - center[0]) ** 2) + ((yg - center[1]) ** 2))
                             / (2.0 * sigma ** 2))
    u = np.zeros((res + 1, res))  # x-face normal velocity, walls pinned to zero
    v = np.zeros((res, res + 1))

    cu = SWE_GRAVITY * dt / dx
    ce = SWE_DEPTH * dt / dx
    out = np.empty((n_t, res, res, 3))

    def record(i):
        out[i, :, :, 0] = 0.5 * (u[:-1, :] + u[1:, :])
        out[i, :, :, 1] = 0.5 * (v[:, :-1] + v[:, 1:])
        out[i, :, :, 2] = eta

    record(0)
    for it in range(1, n_t):
        for _ in range(substeps):
            u[1:-1, :] -= cu * (eta[1:, :] - eta[:-1, :])
            v[:, 1:-1] -= cu * (eta[:, 1:] - eta[:, :-1])
            eta -= ce * ((u[1:, :] - u[:-1, :]) + (v[:, 1:] - v[:, :-1]))
        record(it)
    return out


def generate_swe(n_traj: int, resolution: int = 64, n_t: int = 201,
                 t_final: float = SWE_DEFAULT_TFINAL, sigma: float = SWE_DEFAULT_SIGMA,
                 amplitude: float = 1.0, seed: int = 0,
                 centers: Optional[np.ndarray] = None,
                 center_box=SWE_CENTER_BOX) -> list[Trajectory]:
    """Gaussian-bump shallow-water trajectories on [-1, 1]^2.

    Resolutions below the 128 base grid are produced by running the base
    simulation and striding it spatially, so coarse and fine datasets
    agree exactly at shared coordinates.  The bump center is the hidden
    per-trajectory parameter.
    """
    if resolution < 16:
        raise ConfigError("SWE resolution must be >= 16")
    if resolution <= SWE_BASE_RES and SWE_BASE_RES % resolution == 0:
        sim_res, stride = SWE_BASE_RES, SWE_BASE_RES // resolution
    else:
        sim_res, stride = resolution, 1

    xc = _swe_cell_centers(sim_res)[::stride]
    xg, yg = np.meshgrid(xc, xc, indexing="ij")
    coords = np.column_stack([xg.ravel(), yg.ravel()])

    out = []
    for j in range(n_traj):
        rng = np.random.default_rng(derive_seed(seed, 1, j))
        if centers is not None:
            cx, cy = float(centers[j][0]), float(centers[j][1])
        else:
            (x0, x1), (y0, y1) = center_box
            cx, cy = float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1))
        cube = simulate_swe(sim_res, n_t, t_final, (cx, cy), sigma, amplitude)
        cube = cube[:, ::stride, ::stride, :]
        fields = cube.reshape(n_t, resolution * resolution, 3)
        out.append(Trajectory(coords, fields, t_final / (n_t - 1), mu=np.array([cx, cy]),
                              meta={"generator": "swe", "seed": int(seed), "index": j,
                                    "sigma": sigma, "t_final": t_final,
                                    "grid_shape": [resolution, resolution]}))
    return out


# ---------------------------------------------------------------------------
# sensors
# ---------------------------------------------------------------------------


def qr_pivot_order(snapshots: np.ndarray, n_pivots: int) -> np.ndarray:
    """Greedy column-pivoted QR ranking of grid points.

    ``snapshots`` is (space, snapshots); pivoting runs over the columns of
    its transpose.  Ties break toward the lowest index.
    """
    m = as_f64(snapshots).T.copy()  # (snapshots, space)
    n_space = m.shape[1]
    norms = (m * m).sum(axis=0)
    order = np.empty(min(n_pivots, n_space), dtype=np.int64)
    chosen = np.zeros(n_space, dtype=bool)
    for step in range(len(order)):
        masked = np.where(chosen, -1.0, norms)
        pick = int(np.argmax(masked))  # argmax takes the first maximum
        order[step] = pick
        chosen[pick] = True
        col = m[:, pick]
        nrm = np.linalg.norm(col)
        if nrm > 0:
            qcol = col / nrm
            proj = qcol @ m
            m -= np.outer(qcol, proj)
            m[:, pick] = 0.0
            norms = (m * m).sum(axis=0)
            norms[chosen] = -1.0
    return order


def place_sensors(coords: np.ndarray, n_sensors: int, strategy: str = "random",
                  train_fields: Optional[np.ndarray] = None, seed: int = 0,
                  channels: Sequence[int] = (0,)) -> SensorSet:
    """Pick sensor grid points: random, a uniform lattice, or QR ranking.

    ``train_fields`` (space x snapshots) is required for ``qr_pivot``.
    """
    coords = as_f64(coords)
    n_xi = coords.shape[0]
    if n_sensors > n_xi:
        raise ConfigError(f"cannot place {n_sensors} sensors on {n_xi} grid points")
    if n_sensors == n_xi:
        idx = np.arange(n_xi)
    elif strategy == "random":
        idx = np.sort(np.random.default_rng(derive_seed(seed, 2)).choice(
            n_xi, size=n_sensors, replace=False))
    elif strategy == "uniform_grid":
        d = coords.shape[1]
        if d == 1:
            lo, hi = coords[:, 0].min(), coords[:, 0].max()
            targets = lo + (np.arange(n_sensors) + 0.5) * (hi - lo) / n_sensors
            targets = targets[:, None]
        else:
            side = int(np.ceil(np.sqrt(n_sensors)))
            axes = []
            for a in range(2):
                lo, hi = coords[:, a].min(), coords[:, a].max()
                axes.append(lo + (np.arange(side) + 0.5) * (hi - lo) / side)
            gx, gy = np.meshgrid(axes[0], axes[1], indexing="ij")
            targets = np.column_stack([gx.ravel(), gy.ravel()])
        picked: list[int] = []
        for trow in targets:
            j = int(np.argmin(((coords - trow) ** 2).sum(axis=1)))
            if j not in picked:
                picked.append(j)
            if len(picked) == n_sensors:
                break
        for j in range(n_xi):  # top up if snapping collided
            if len(picked) == n_sensors:
                break
            if j not in picked:
                picked.append(j)
        idx = np.sort(np.asarray(picked[:n_sensors]))
    elif strategy == "qr_pivot":
        if train_fields is None:
            raise ConfigError("qr_pivot placement requires a training snapshot matrix")
        if train_fields.shape[0] != n_xi:
            raise DimensionError(
                f"snapshot matrix {train_fields.shape} vs {n_xi} grid points")
        idx = qr_pivot_order(train_fields, n_sensors)
    else:
        raise ConfigError(f"unknown sensor strategy '{strategy}'")
    return SensorSet(idx, np.asarray(channels, dtype=np.int64), strategy)


def extract_sensor_series(traj: Trajectory, sensors: SensorSet) -> np.ndarray:
    """Measurement rows (N_t, p), sensor-major channel order."""
    sub = traj.fields[:, sensors.indices][:, :, sensors.channels]
    return sub.reshape(traj.n_t, sensors.p).copy()


def add_noise(series: np.ndarray, level: float, seed: int = 0) -> np.ndarray:
    """Gaussian noise scaled to ``level`` times the series std."""
    if level < 0:
        raise ConfigError("noise level must be >= 0")
    series = as_f64(series)
    if level == 0:
        return series.copy()
    rng = np.random.default_rng(derive_seed(seed, 3))
    return series + level * series.std() * rng.standard_normal(series.shape)


def split_indices(n_traj: int, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> dict[str, np.ndarray]:
    """Disjoint, exhaustive, seed-deterministic trajectory split."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions {fractions} must sum to 1")
    perm = np.random.default_rng(derive_seed(seed, 4)).permutation(n_traj)
    n_train = int(round(fractions[0] * n_traj))
    n_val = int(round((fractions[0] + fractions[1]) * n_traj)) - n_train
    return {"train": np.sort(perm[:n_train]),
            "val": np.sort(perm[n_train:n_train + n_val]),
            "test": np.sort(perm[n_train + n_val:])}
