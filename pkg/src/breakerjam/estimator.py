"""Generalized state estimation on the DC model: topology processing, weighted least
squares, residual-based bad-data detection.

Jammed or unmetered flows are missing rows, not zero-valued readings.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as la
from scipy.stats import chi2

from .grid import Grid, flows

RANK_RTOL = 1e-8
DEFAULT_THRESHOLD = 1e-6


@dataclass(frozen=True)
class MeasurementSet:
    z_f: np.ndarray
    z_inj: np.ndarray
    received_flow_mask: np.ndarray
    injection_buses: tuple[int, ...]
    flow_variance: np.ndarray | None = None
    injection_variance: np.ndarray | None = None

    def __post_init__(self):
        mask = np.asarray(self.received_flow_mask, dtype=bool)
        z_f = np.asarray(self.z_f, dtype=float)
        if z_f.shape != mask.shape:
            raise ValueError("z_f and received_flow_mask must have the same length")
        if np.any(z_f[~mask] != 0):
            raise ValueError("z_f must be zero wherever the flow is not received")
        object.__setattr__(self, "received_flow_mask", mask)
        object.__setattr__(self, "z_f", z_f)
        object.__setattr__(self, "z_inj", np.asarray(self.z_inj, dtype=float))
        object.__setattr__(self, "injection_buses", tuple(self.injection_buses))
        if len(self.z_inj) != len(self.injection_buses):
            raise ValueError("z_inj needs one value per injection-metered bus")


@dataclass(frozen=True)
class EstimateResult:
    x_hat: np.ndarray
    residual_norm: float
    observable: bool
    rank: int
    n_measurements: int
    undetermined_buses: tuple[int, ...] = ()

    @property
    def degrees_of_freedom(self) -> int:
        return self.n_measurements - len(self.x_hat) + 1


def topology_process(grid: Grid, reported_breakers) -> Grid:
    """Drop lines reported open from the operational edge set.

    Line ids are preserved: an open line stays in ``grid.lines`` with
    ``breaker_closed=False`` and its flow meter removed.
    """
    reported = np.asarray(reported_breakers).astype(bool).ravel()
    if reported.shape != (grid.n_lines,):
        raise ValueError(f"expected {grid.n_lines} breaker statuses, got {reported.size}")
    lines = tuple(
        l if closed else replace(l, breaker_closed=False, flow_metered=False)
        for l, closed in zip(grid.lines, reported)
    )
    return replace(grid, lines=lines)


def generate_measurements(grid: Grid, x, noise_stddev: float = 0.0, seed=None) -> MeasurementSet:
    """Meter readings produced by state ``x`` on ``grid`` (closed lines only)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (grid.n_buses,):
        raise ValueError(f"state must have length {grid.n_buses}")
    closed = np.array([l.breaker_closed for l in grid.lines], dtype=bool)
    mask = np.array([l.flow_metered for l in grid.lines], dtype=bool) & closed
    f = np.where(closed, flows(grid, x), 0.0)
    inj = grid.injection_buses
    frm, to = grid.endpoints()
    net = np.zeros(grid.n_buses)
    np.add.at(net, frm, f)
    np.add.at(net, to, -f)
    z_f = np.where(mask, f, 0.0)
    z_inj = net[list(inj)]
    if noise_stddev > 0:
        rng = np.random.default_rng(seed)
        z_f = np.where(mask, z_f + rng.normal(0.0, noise_stddev, z_f.shape), 0.0)
        z_inj = z_inj + rng.normal(0.0, noise_stddev, z_inj.shape)
    return MeasurementSet(z_f, z_inj, mask, inj)


def measurement_rows(grid: Grid, mask) -> np.ndarray:
    """Dense measurement matrix for received flows (rows in line order) then injections.

    Lines whose breaker is open on ``grid`` contribute nothing: a flow reading
    received from such a line gets an all-zero row (the model predicts no flow).
    """
    frm, to = grid.endpoints()
    b = grid.susceptances()
    closed = np.array([l.breaker_closed for l in grid.lines], dtype=bool)
    BM = np.zeros((grid.n_lines, grid.n_buses))
    k = np.arange(grid.n_lines)
    BM[k, frm] = b
    BM[k, to] = -b
    flow_rows = (BM * closed[:, None])[np.flatnonzero(mask)]
    inj = list(grid.injection_buses)
    M = np.zeros_like(BM)
    M[k, frm] = 1.0
    M[k, to] = -1.0
    inj_rows = M[:, inj].T @ (BM * closed[:, None])
    return np.vstack([flow_rows, inj_rows])


def estimate(grid: Grid, measurements: MeasurementSet) -> EstimateResult:
    """Weighted least squares estimate with the reference angle pinned to zero.

    The rank of the reduced measurement matrix is decided by pivoted QR with
    tolerance ``RANK_RTOL * |R[0, 0]|``. When the system is not observable the
    minimum-norm solution is returned and the buses whose angles are not fixed
    by the data are listed.
    """
    if tuple(measurements.injection_buses) != grid.injection_buses:
        raise ValueError("measurement set was generated for a different injection placement")
    mask = measurements.received_flow_mask
    if mask.shape != (grid.n_lines,):
        raise ValueError(f"expected {grid.n_lines} flow entries, got {mask.size}")
    H = measurement_rows(grid, mask)
    z = np.concatenate([measurements.z_f[mask], measurements.z_inj])
    var = _variances(measurements, mask)
    w = 1.0 / np.sqrt(var)
    ref = grid.reference_bus
    keep = [i for i in range(grid.n_buses) if i != ref]
    A = H[:, keep] * w[:, None]
    zw = z * w
    n = len(keep)

    if A.shape[0] == 0:
        return EstimateResult(np.zeros(grid.n_buses), 0.0, False, 0, 0, tuple(keep))
    Q, R, piv = la.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > RANK_RTOL * diag[0])) if diag.size and diag[0] > 0 else 0
    if rank == n:
        y = la.solve_triangular(R[:n, :n], Q[:, :n].T @ zw)
        sol = np.empty(n)
        sol[piv] = y
        undetermined: tuple[int, ...] = ()
    else:
        sol, *_ = la.lstsq(A, zw)
        _, s, vt = la.svd(A)
        null = vt[rank:]
        loose = np.flatnonzero(np.linalg.norm(null, axis=0) > 1e-9)
        undetermined = tuple(keep[i] for i in loose)
    x_hat = np.zeros(grid.n_buses)
    x_hat[keep] = sol
    resid = float(np.linalg.norm(zw - A @ sol))
    return EstimateResult(x_hat, resid, rank == n, rank, len(z), undetermined)


def _variances(ms: MeasurementSet, mask: np.ndarray) -> np.ndarray:
    fv = np.ones(len(mask)) if ms.flow_variance is None else np.asarray(ms.flow_variance, dtype=float)
    iv = np.ones(len(ms.z_inj)) if ms.injection_variance is None else np.asarray(ms.injection_variance, dtype=float)
    return np.concatenate([fv[mask], iv])


def bad_data_check(result: EstimateResult, threshold: float = DEFAULT_THRESHOLD) -> bool:
    """True (pass, nothing detected) iff the weighted residual norm is within ``threshold``."""
    return result.residual_norm <= threshold


def chi_square_threshold(dof: int, confidence: float = 0.95) -> float:
    """Residual-norm threshold for noisy data: sqrt of the chi-square quantile.

    The squared weighted residual follows a chi-square law with ``dof`` degrees of
    freedom under Gaussian noise of the assumed variances.
    """
    if dof <= 0:
        return 0.0
    return float(np.sqrt(chi2.ppf(confidence, dof)))
