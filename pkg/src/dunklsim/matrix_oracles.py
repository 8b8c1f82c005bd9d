"""Random-matrix eigenvalue oracles for cross-validating the chamber SDE.

Matrix Brownian convention, fixed once here: for beta = 1 the symmetric path
is H_t = (M_t + M_t^T)/2 with i.i.d. standard Brownian entries (variance t),
so diagonal entries have variance t and off-diagonal t/2; for beta = 2 the
Hermitian path uses i.i.d. complex entries whose real and imaginary parts are
each standard Brownian.  With this normalization the eigenvalues follow the
interacting SDE with coupling beta/2 driven by unit Brownian motions, which
the A-type cross-check test pins down empirically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import integrator
from .integrator import BatchResult, ConfigError, Trajectory
from .root_system import MultiplicityMap


@dataclass(frozen=True)
class LaguerreParams:
    """Eigenvalue-SDE parameters; the short/long multiplicities derive from them."""

    m: int
    beta: float
    delta: float

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError("need m >= 1")
        if self.beta <= 0.0:
            raise ConfigError("need beta > 0")

    @property
    def k0(self) -> float:
        return 0.5 * (self.beta * (self.delta - self.m + 1.0) - 1.0)

    @property
    def k1(self) -> float:
        return 0.5 * self.beta

    @property
    def strong_regime(self) -> bool:
        """Both multiplicities positive, i.e. delta > m - 1 + 1/beta."""
        return self.k0 > 0.0 and self.k1 > 0.0


def mult_dictionary(params: LaguerreParams) -> MultiplicityMap:
    """B_m multiplicities (short orbit k0, long orbit k1) for these parameters."""
    if params.k0 < 0.0:
        raise ConfigError("k0 < 0: outside the admissible multiplicity range")
    if params.m == 1:
        return MultiplicityMap((params.k0,))
    # Canonical orbit labels sort by root length, so short comes first.
    return MultiplicityMap((params.k0, params.k1))


def sqrt_map(lambda_traj):
    """Coordinate-wise square root of eigenvalue data (array or Trajectory)."""
    if isinstance(lambda_traj, Trajectory):
        states = sqrt_map(lambda_traj.states)
        return Trajectory(lambda_traj.path_id, lambda_traj.times.copy(), states,
                          _eigen_min_margin(states, include_last=True),
                          lambda_traj.hit)
    arr = np.asarray(lambda_traj, dtype=float)
    if arr.min() < 0.0:
        raise ValueError("square-root map needs nonnegative input")
    return np.sqrt(arr)


def _eigen_min_margin(states: np.ndarray, include_last: bool) -> np.ndarray:
    """Minimum of adjacent gaps (and of the smallest value when requested)."""
    parts = []
    if states.shape[-1] > 1:
        parts.append(states[..., :-1] - states[..., 1:])
    if include_last:
        parts.append(states[..., -1:])
    return np.concatenate(parts, axis=-1).min(axis=-1)


# ---------------------------------------------------------------------------
# Dyson paths: eigenvalues of a symmetric / Hermitian matrix Brownian motion
# ---------------------------------------------------------------------------

def dyson_batch(m: int, beta: int, x0, horizon: float, dt: float,
                rng: np.random.Generator, n_paths: int,
                record_stride: Optional[int] = None):
    """Sorted eigenvalue marginals of a batch of matrix Brownian paths.

    Euler increments at resolution dt; eigen-decomposition happens only at
    recorded times.  Returns (times, eigenvalues (n_rec, P, m), n_failed).
    """
    if beta not in (1, 2):
        raise ConfigError("matrix construction exists for beta in {1, 2}")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (m,) or np.any(np.diff(x0) >= 0):
        raise ConfigError("start must be m strictly decreasing eigenvalues")
    n_steps = max(1, int(math.ceil(horizon / dt - 1e-9)))
    stride = record_stride if record_stride is not None else n_steps
    dtype = complex if beta == 2 else float
    H = np.zeros((n_paths, m, m), dtype=dtype)
    H += np.diag(x0)
    times = [0.0]
    eigs = [np.tile(x0, (n_paths, 1))]
    n_failed = 0
    for i in range(n_steps):
        s = min(dt, horizon - i * dt)
        if beta == 1:
            M = rng.standard_normal((n_paths, m, m)) * math.sqrt(s)
        else:
            M = (rng.standard_normal((n_paths, m, m))
                 + 1j * rng.standard_normal((n_paths, m, m))) * math.sqrt(s)
        H += 0.5 * (M + np.conj(np.swapaxes(M, 1, 2)))
        if (i + 1) % stride == 0 or i + 1 == n_steps:
            ev, failed = _safe_eigvalsh(H)
            n_failed += failed
            times.append(min((i + 1) * dt, horizon))
            eigs.append(ev)
    return np.asarray(times), np.stack(eigs), n_failed


def _safe_eigvalsh(H: np.ndarray):
    """Descending eigenvalues per path; failed decompositions become nan rows."""
    try:
        ev = np.linalg.eigvalsh(H)[:, ::-1]
        return ev, 0
    except np.linalg.LinAlgError:
        out = np.full(H.shape[:2], np.nan)
        failed = 0
        for i in range(H.shape[0]):
            try:
                out[i] = np.linalg.eigvalsh(H[i])[::-1]
            except np.linalg.LinAlgError:
                failed += 1
        return out, failed


def dyson_path(m: int, beta: int, x0, horizon: float, dt: float,
               stream: np.random.Generator, record_stride: int = 1) -> Trajectory:
    """Single Dyson eigenvalue path as a Trajectory (margins are the gaps)."""
    times, eigs, _ = dyson_batch(m, beta, x0, horizon, dt, stream, 1,
                                 record_stride=record_stride)
    states = eigs[:, 0, :]
    return Trajectory(0, times, states,
                      _eigen_min_margin(states, include_last=False)
                      if m > 1 else np.full(len(times), np.inf))


# ---------------------------------------------------------------------------
# beta-Laguerre eigenvalue SDE (adaptive Euler, same halving policy)
# ---------------------------------------------------------------------------

class LaguerreSystem:
    """Engine adapter for the eigenvalue SDE with state-dependent noise."""

    def __init__(self, params: LaguerreParams):
        self.params = params
        self.dim = params.m
        self.n_noise = params.m
        self._off = ~np.eye(params.m, dtype=bool)

    def drift(self, L):
        p = self.params
        if p.m == 1:
            return np.full_like(L, p.beta * p.delta)
        diff = L[:, :, None] - L[:, None, :]
        summ = L[:, :, None] + L[:, None, :]
        ratio = np.where(self._off, summ / np.where(self._off, diff, 1.0), 0.0)
        return p.beta * (p.delta + ratio.sum(axis=2))

    def noise(self, L, dW):
        return 2.0 * np.sqrt(L) * dW

    def margins(self, L):
        # Ordering gaps plus the distance of the smallest eigenvalue to zero.
        if self.params.m == 1:
            return L
        return np.concatenate([L[:, :-1] - L[:, 1:], L[:, -1:]], axis=1)

    walls = margins

    def trigger_margins(self, L):
        # Only the gaps carry singular drift; near lambda = 0 the drift stays
        # bounded (the noise vanishes instead), so no refinement is needed.
        if self.params.m == 1:
            return np.full((L.shape[0], 1), np.inf)
        return L[:, :-1] - L[:, 1:]

    def functional(self, margins):
        raise NotImplementedError

    def project(self, L, target):
        L = np.sort(L, axis=1)[:, ::-1]
        L[:, -1] = np.maximum(L[:, -1], target)
        for i in range(self.params.m - 2, -1, -1):
            L[:, i] = np.maximum(L[:, i], L[:, i + 1] + target)
        return L


def interaction_sum(L) -> np.ndarray:
    """sum_i sum_{k != i} (l_i + l_k)/(l_i - l_k); identically zero by antisymmetry."""
    L = np.atleast_2d(np.asarray(L, dtype=float))
    m = L.shape[1]
    if m == 1:
        return np.zeros(L.shape[0])
    off = ~np.eye(m, dtype=bool)
    diff = L[:, :, None] - L[:, None, :]
    summ = L[:, :, None] + L[:, None, :]
    ratio = np.where(off, summ / np.where(off, diff, 1.0), 0.0)
    return ratio.sum(axis=(1, 2))


def laguerre_batch(params: LaguerreParams, lambda0, horizon: float, dt: float,
                   rng: np.random.Generator, n_paths: int,
                   record_stride: Optional[int] = None,
                   absorb_eps: float = 1e-8,
                   dt_min: Optional[float] = None,
                   mode: str = "absorb") -> BatchResult:
    """Adaptive Euler paths of the eigenvalue SDE.

    Default semantics absorb at the collision/zero proxy (margin <= eps); in
    the strong-solution regime neither boundary is reached, so law comparisons
    run with mode="continue" to avoid censoring near-critical excursions.
    """
    lambda0 = np.asarray(lambda0, dtype=float)
    if lambda0.shape != (params.m,):
        raise ConfigError("start must have length m")
    if np.any(np.diff(lambda0) >= 0) or lambda0[-1] <= 0.0:
        raise ConfigError("start must be strictly decreasing and positive")
    n_steps = max(1, int(math.ceil(horizon / dt - 1e-9)))
    stride = record_stride if record_stride is not None else n_steps
    return integrator.integrate_batch(
        LaguerreSystem(params), np.tile(lambda0, (n_paths, 1)),
        horizon=horizon, dt_base=dt,
        dt_min=dt_min if dt_min is not None else dt * integrator.DT_MIN_FACTOR,
        theta=integrator.DEFAULT_THETA, absorb_eps=absorb_eps, mode=mode,
        rng=rng, record_stride=stride)


def laguerre_eigen_path(params: LaguerreParams, lambda0, horizon: float, dt: float,
                        stream: np.random.Generator, record_stride: int = 1,
                        absorb_eps: float = 1e-8) -> Trajectory:
    res = laguerre_batch(params, lambda0, horizon, dt, stream, 1,
                         record_stride=record_stride, absorb_eps=absorb_eps)
    keep = res.valid[:, 0]
    states = res.states[keep, 0, :]
    return Trajectory(0, res.times[keep], states,
                      _eigen_min_margin(states, include_last=True),
                      None if np.isnan(res.hit_time[0])
                      else (float(res.hit_time[0]), int(res.hit_wall[0])))


# ---------------------------------------------------------------------------
# Wishart / Laguerre matrix realization (integer dimension parameter)
# ---------------------------------------------------------------------------

def wishart_batch(n: int, m: int, beta: int, horizon: float, dt: float,
                  rng: np.random.Generator, n_paths: int,
                  sv0: Optional[Sequence[float]] = None,
                  record_stride: Optional[int] = None):
    """Eigenvalues of A_t^* A_t for an n x m Brownian matrix A.

    Entries are real (beta=1) or complex with independent real/imaginary
    Brownian parts (beta=2); A_0 carries the start singular values on its
    leading diagonal (defaults to m, m-1, ..., 1).  Returns
    (times, eigenvalues (n_rec, P, m), n_failed).
    """
    if beta not in (1, 2):
        raise ConfigError("matrix construction exists for beta in {1, 2}")
    if n < m:
        raise ConfigError("need n >= m")
    sv = np.asarray(sv0 if sv0 is not None else np.arange(m, 0, -1), dtype=float)
    if sv.shape != (m,) or len(np.unique(np.round(sv, 12))) != m:
        raise ConfigError("start singular values must be m distinct reals")
    n_steps = max(1, int(math.ceil(horizon / dt - 1e-9)))
    stride = record_stride if record_stride is not None else n_steps
    dtype = complex if beta == 2 else float
    A = np.zeros((n_paths, n, m), dtype=dtype)
    A[:, np.arange(m), np.arange(m)] = sv
    times = [0.0]
    ev0, _ = _gram_eigs(A)
    eigs = [ev0]
    n_failed = 0
    for i in range(n_steps):
        s = min(dt, horizon - i * dt)
        G = rng.standard_normal((n_paths, n, m)) * math.sqrt(s)
        if beta == 2:
            G = G + 1j * rng.standard_normal((n_paths, n, m)) * math.sqrt(s)
        A += G
        if (i + 1) % stride == 0 or i + 1 == n_steps:
            ev, failed = _gram_eigs(A)
            n_failed += failed
            times.append(min((i + 1) * dt, horizon))
            eigs.append(ev)
    return np.asarray(times), np.stack(eigs), n_failed


def _gram_eigs(A: np.ndarray):
    G = np.swapaxes(np.conj(A), 1, 2) @ A
    ev, failed = _safe_eigvalsh(G)
    # Hermitian PSD input; clip eigenvalue roundoff just below zero.
    ev[(ev < 0.0) & (ev > -1e-10)] = 0.0
    return ev, failed


def wishart_matrix_eigen_path(n: int, m: int, beta: int, horizon: float, dt: float,
                              stream: np.random.Generator,
                              sv0: Optional[Sequence[float]] = None,
                              record_stride: int = 1) -> Trajectory:
    times, eigs, _ = wishart_batch(n, m, beta, horizon, dt, stream, 1, sv0=sv0,
                                   record_stride=record_stride)
    states = eigs[:, 0, :]
    return Trajectory(0, times, states, _eigen_min_margin(states, include_last=True))
