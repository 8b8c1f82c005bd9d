"""Monte Carlo estimators: wall hitting, coupled Bessel comparison, boundary
occupation, the singular path functional, and the squared-radius moment slope.

Hitting statistics come from a single absorption run per configuration: paths
absorb at the smallest ladder threshold while the first-crossing time of every
larger rung is recorded on the way, which makes the ladder pathwise coupled
(hit fractions are monotone in eps by construction, not only statistically).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy import integrate as _sciint
from scipy import stats as _scistats

from . import integrator, stattests
from .integrator import (BatchResult, ConfigError, DunklSystem, SimConfig,
                         derive_stream, integrate_batch)
from .potential import PotentialContext
from .root_system import sample_interior


# ---------------------------------------------------------------------------
# Wall hitting
# ---------------------------------------------------------------------------

@dataclass
class EpsRungStats:
    eps: float
    hit_fraction: float          # first crossing of the alpha0 margin seen
    hit_fraction_se: float
    mean_hit_time: float         # over hitting paths, nan when none hit
    mean_hit_time_se: float
    n_hits: int
    any_wall_fraction: float     # T_0 proxy: any simple margin reached eps
    argmin_wall_share: float     # share of hitting paths whose first wall is alpha0


@dataclass
class HittingStats:
    alpha0: int                  # simple root index (into rs.roots)
    eps_ladder: tuple
    per_eps: list
    extrapolated_fraction: float
    n_paths: int
    horizon: float
    min_recorded_pairing: float  # chamber containment evidence

    def to_dict(self) -> dict:
        return {
            "alpha0": self.alpha0,
            "eps_ladder": list(self.eps_ladder),
            "per_eps": [vars(r) for r in self.per_eps],
            "extrapolated_fraction": self.extrapolated_fraction,
            "n_paths": self.n_paths,
            "horizon": self.horizon,
            "min_recorded_pairing": self.min_recorded_pairing,
        }


def estimate_hitting(cfg: SimConfig, alpha0: int, eps_ladder: Sequence[float],
                     *, workers: int = 1) -> HittingStats:
    """First-passage statistics for the alpha0 wall over an eps ladder.

    Paths absorb at the smallest rung on any wall; alpha0 crossings after an
    earlier contact with a different wall are unobservable and count as
    non-hits (the any-wall fraction is reported alongside as the T_0 proxy).
    """
    rs = cfg.ctx.rs
    ladder = tuple(sorted(set(float(e) for e in eps_ladder), reverse=True))
    if not ladder or ladder[-1] <= 0.0:
        raise ConfigError("eps ladder must be positive")
    wall_pos = _wall_position(rs, alpha0)
    run_cfg = replace(cfg, mode="absorb", absorb_eps=ladder[-1])
    batch = integrator.simulate_batch(run_cfg, workers=workers,
                                      crossing_levels=ladder)
    per_eps = []
    fracs = []
    P = batch.n_paths
    for li, eps in enumerate(ladder):
        t_alpha = batch.crossings[:, wall_pos, li]
        hits = ~np.isnan(t_alpha)
        frac = float(hits.mean())
        filled = np.where(np.isnan(batch.crossings[:, :, li]), np.inf,
                          batch.crossings[:, :, li])
        t_any = filled.min(axis=1)
        any_hit = np.isfinite(t_any)
        if any_hit.any():
            first_wall = filled[any_hit].argmin(axis=1)
            argmin_share = float((first_wall == wall_pos).mean())
        else:
            argmin_share = float("nan")
        mt = float(t_alpha[hits].mean()) if hits.any() else float("nan")
        mtse = (float(t_alpha[hits].std(ddof=1) / math.sqrt(hits.sum()))
                if hits.sum() > 1 else float("nan"))
        per_eps.append(EpsRungStats(
            eps=eps, hit_fraction=frac,
            hit_fraction_se=stattests.binomial_se(frac, P),
            mean_hit_time=mt, mean_hit_time_se=mtse, n_hits=int(hits.sum()),
            any_wall_fraction=float(any_hit.mean()),
            argmin_wall_share=argmin_share))
        fracs.append(frac)
    extrap = stattests.loglinear_extrapolated_fraction(ladder, fracs)
    return HittingStats(int(alpha0), ladder, per_eps, extrap, P, cfg.horizon,
                        _min_recorded_pairing(cfg.ctx, batch.states))


def _wall_position(rs, alpha0: int) -> int:
    pos = np.flatnonzero(rs.simple == alpha0)
    if pos.size != 1:
        raise ConfigError(f"alpha0={alpha0} is not a simple root index")
    return int(pos[0])


def _min_recorded_pairing(ctx: PotentialContext, states: np.ndarray) -> float:
    """Smallest positive-root pairing over all recorded states."""
    return min(float((states[t] @ ctx.pos_mat.T).min())
               for t in range(states.shape[0]))


# ---------------------------------------------------------------------------
# Coupled comparison with the one-dimensional dominating process
# ---------------------------------------------------------------------------

class _CoupledSystem:
    """Chamber state augmented with the dominating scalar Z on the same noise.

    Z solves dZ = <alpha0, dB> + k0 |alpha0|^2 / Z dt, the time-changed Bessel
    of dimension 2 k0 + 1 driven by the alpha0 projection of the same Brownian
    increments that drive the chamber path.
    """

    def __init__(self, ctx: PotentialContext, alpha0: int):
        self.inner = DunklSystem(ctx)
        self.alpha = ctx.rs.roots[alpha0].astype(float)
        self.n2 = float(self.alpha @ self.alpha)
        self.k0 = float(ctx.k.per_root(ctx.rs)[alpha0])
        self.dim = self.inner.dim + 1
        self.n_noise = self.inner.dim

    def drift(self, X):
        y, z = X[:, :-1], X[:, -1]
        return np.column_stack([self.inner.drift(y), self.k0 * self.n2 / z])

    def noise(self, X, dW):
        return np.column_stack([dW, dW @ self.alpha])

    def margins(self, X):
        return np.column_stack([self.inner.margins(X[:, :-1]), X[:, -1]])

    def walls(self, X):
        return self.inner.walls(X[:, :-1])

    def project(self, X, target):
        out = X.copy()
        out[:, :-1] = self.inner.project(X[:, :-1], target)
        out[:, -1] = np.maximum(X[:, -1], target)
        return out

    def violation(self, X):
        return X[:, :-1] @ self.alpha - X[:, -1]


@dataclass
class ComparisonReport:
    alpha0: int
    dt_base: float
    n_paths: int
    max_violation: np.ndarray    # per path, max over time of <alpha0, Y> - Z
    z0: float
    min_recorded_pairing: float = float("nan")

    def quantile(self, q: float) -> float:
        return float(np.quantile(self.max_violation, q))

    def to_dict(self) -> dict:
        return {
            "alpha0": self.alpha0,
            "dt_base": self.dt_base,
            "n_paths": self.n_paths,
            "z0": self.z0,
            "violation_quantiles": {str(q): self.quantile(q)
                                    for q in (0.5, 0.9, 0.99, 1.0)},
        }


def _run_coupled_block(args):
    cfg, alpha0, z0, block, lo, hi = args
    system = _CoupledSystem(cfg.ctx, alpha0)
    rng = derive_stream(cfg.seed, block, integrator.SUB_BLOCK)
    x0 = np.tile(np.append(cfg.resolved_start(), z0), (hi - lo, 1))
    return integrate_batch(
        system, x0, horizon=cfg.horizon, dt_base=cfg.dt_base, dt_min=cfg.dt_min,
        theta=cfg.theta, absorb_eps=cfg.absorb_eps, mode="continue", rng=rng,
        record_stride=cfg.record_stride, track_max=system.violation,
        path_offset=lo)


def coupled_comparison(cfg: SimConfig, alpha0: int, *, z0: Optional[float] = None,
                       workers: int = 1) -> ComparisonReport:
    """Pathwise max of <alpha0, Y_t> - Z_t under the shared increment stream."""
    if not cfg.ctx.k.strictly_positive:
        raise ConfigError("the comparison needs strictly positive multiplicities")
    _wall_position(cfg.ctx.rs, alpha0)
    start = float(cfg.ctx.rs.roots[alpha0] @ cfg.resolved_start())
    z0 = start if z0 is None else float(z0)
    if z0 < start:
        raise ConfigError("Z must start at or above the alpha0 pairing")
    tasks = [(cfg, alpha0, z0, b, lo, hi)
             for b, lo, hi in integrator.block_spans(cfg.n_paths)]
    parts = integrator.run_blocks(_run_coupled_block, tasks, workers)
    merged = BatchResult.merge(parts)
    return ComparisonReport(int(alpha0), cfg.dt_base, merged.n_paths,
                            merged.max_track, z0,
                            _min_recorded_pairing(cfg.ctx, merged.states[:, :, :-1]))


def comparison_drift_residual(ctx: PotentialContext, alpha0: int, x) -> float:
    """F(x) = <alpha0, b(x)> - k0 |alpha0|^2 / <alpha0, x>; nonpositive inside C."""
    x = np.asarray(x, dtype=float)
    alpha = ctx.rs.roots[alpha0]
    k0 = float(ctx.k.per_root(ctx.rs)[alpha0])
    p = ctx.pairings(x)
    b = (ctx.k_pos / p) @ ctx.pos_mat
    return float(b @ alpha - k0 * float(alpha @ alpha) / float(alpha @ x))


def max_drift_residual(ctx: PotentialContext, alpha0: int, n_points: int,
                       rng: np.random.Generator, min_margin: float = 0.05) -> float:
    """Largest residual over random interior points (should stay <= 0)."""
    pts = sample_interior(ctx.rs, n_points, rng, min_margin=min_margin)
    return max(comparison_drift_residual(ctx, alpha0, x) for x in pts)


# ---------------------------------------------------------------------------
# Occupation near the boundary
# ---------------------------------------------------------------------------

def occupation_fraction(batch: BatchResult, eps: float) -> float:
    frac, _ = occupation_fraction_with_se(batch, eps)
    return frac


def occupation_fraction_with_se(batch: BatchResult, eps: float):
    """Time-weighted fraction of recorded path time with min wall margin < eps."""
    t = batch.times
    if np.isposinf(eps):
        return 1.0, 0.0
    w = np.empty_like(t)
    w[0] = 0.5 * (t[1] - t[0])
    w[-1] = 0.5 * (t[-1] - t[-2])
    if len(t) > 2:
        w[1:-1] = 0.5 * (t[2:] - t[:-2])
    below = batch.min_wall < eps
    per_path = (w[:, None] * below).sum(axis=0) / w.sum()
    se = per_path.std(ddof=1) / math.sqrt(batch.n_paths) if batch.n_paths > 1 else 0.0
    return float(per_path.mean()), float(se)


# ---------------------------------------------------------------------------
# Singular functional and moment slope
# ---------------------------------------------------------------------------

@dataclass
class FunctionalEstimate:
    mean: float
    se: float
    n_paths: int
    dt_base: float


def estimate_singular_functional(cfg: SimConfig, *, workers: int = 1) -> FunctionalEstimate:
    """Monte Carlo mean of the pathwise integral of the wall-distance functional.

    Trapezoidal accumulation happens at internal sub-step resolution, so
    near-wall excursions are integrated at the same adaptive resolution the
    integrator uses to resolve them.
    """
    if not cfg.ctx.k.strictly_positive:
        raise ConfigError("the functional needs strictly positive multiplicities")
    run_cfg = cfg if cfg.mode == "continue" else replace(cfg, mode="continue")
    batch = integrator.simulate_batch(run_cfg, workers=workers, track_functional=True)
    vals = batch.functional
    return FunctionalEstimate(float(vals.mean()),
                              float(vals.std(ddof=1) / math.sqrt(len(vals))),
                              len(vals), cfg.dt_base)


@dataclass
class SlopeEstimate:
    slope: float
    se: float
    n_paths: int


def moment_slope(batch: BatchResult) -> SlopeEstimate:
    """Least-squares slope of t -> mean |Y_t|^2 with a per-path spread SE."""
    if len(batch.times) < 2:
        raise ConfigError("need at least two recorded times")
    if not batch.valid.all():
        raise ConfigError("moment slope needs continuation-mode trajectories")
    sq = (batch.states ** 2).sum(axis=2)
    slopes = stattests.per_path_slopes(batch.times, sq)
    return SlopeEstimate(float(slopes.mean()),
                         float(slopes.std(ddof=1) / math.sqrt(len(slopes))),
                         len(slopes))


# ---------------------------------------------------------------------------
# Exact Bessel references (independent of the Euler path route)
# ---------------------------------------------------------------------------

def bessel_inverse_moment(dim: float, x0: float, t: float) -> float:
    """E[1/Y_t] for a Bessel process, by quadrature over the exact marginal.

    Y_t^2/t is noncentral chi-square(dim, x0^2/t); the integrand q^{-1/2} is
    integrable at zero for dim > 1.  The density is sharply peaked at large
    noncentrality, so the quadrature is bracketed by extreme quantiles.
    """
    if dim <= 1.0:
        raise ConfigError("1/Y is only integrable for dimension > 1")
    nc = x0 * x0 / t
    dist = _scistats.ncx2(dim, nc)
    lo = max(float(dist.ppf(1e-14)), 0.0)
    hi = float(dist.isf(1e-14))
    val, _ = _sciint.quad(lambda q: dist.pdf(q) / math.sqrt(q), lo, hi,
                          limit=400, points=[float(dist.median())])
    return val / math.sqrt(t)


def singular_functional_reference(k: float, x0: float, horizon: float) -> float:
    """Exact value of E int_0^T k/Y_s ds for the rank-1 process (dim 2k+1)."""
    dim = 2.0 * k + 1.0

    def integrand(s):
        if s < 1e-12:
            return k / x0
        return k * bessel_inverse_moment(dim, x0, s)

    val, _ = _sciint.quad(integrand, 0.0, horizon, limit=200)
    return val


def bm_hit_probability(x0: float, horizon: float) -> float:
    """Reflection principle: P(BM from x0 reaches 0 by the horizon)."""
    return 2.0 * (1.0 - _scistats.norm.cdf(x0 / math.sqrt(horizon)))


def bessel_hit_probability(dim: float, x0: float, horizon: float) -> float:
    """P(T_0 <= horizon) for a Bessel of dimension < 2 (gamma subordination)."""
    if not (0.0 < dim < 2.0):
        raise ConfigError("zero is only reached for dimension in (0, 2)")
    return float(_scistats.gamma.sf(x0 * x0 / (2.0 * horizon), 1.0 - dim / 2.0))


# ---------------------------------------------------------------------------
# Exploratory wall race (open comparison question; no acceptance target)
# ---------------------------------------------------------------------------

@dataclass
class RaceReport:
    alpha_pair: tuple
    eps: float
    grid: np.ndarray
    cdf_first: np.ndarray
    cdf_second: np.ndarray
    p_first_before_second: float
    n_paths: int
    n_both: int

    def to_dict(self) -> dict:
        return {
            "alpha_pair": list(self.alpha_pair),
            "eps": self.eps,
            "time_grid": self.grid.tolist(),
            "cdf_first_wall": self.cdf_first.tolist(),
            "cdf_second_wall": self.cdf_second.tolist(),
            "p_first_before_second": self.p_first_before_second,
            "n_paths": self.n_paths,
            "n_both_hit": self.n_both,
            "exploratory": True,
        }


def race_walls(cfg: SimConfig, alpha_pair: Sequence[int], eps: float,
               *, n_grid: int = 64, workers: int = 1) -> RaceReport:
    """Joint empirical CDFs of the first eps-crossing times of two walls."""
    a1, a2 = (int(a) for a in alpha_pair)
    p1, p2 = _wall_position(cfg.ctx.rs, a1), _wall_position(cfg.ctx.rs, a2)
    run_cfg = replace(cfg, mode="continue",
                      absorb_eps=min(cfg.absorb_eps, eps / 30.0))
    batch = integrator.simulate_batch(run_cfg, workers=workers,
                                      crossing_levels=[eps])
    t1 = batch.crossings[:, p1, 0]
    t2 = batch.crossings[:, p2, 0]
    grid = np.linspace(0.0, cfg.horizon, n_grid)
    cdf1 = np.array([np.mean(~np.isnan(t1) & (t1 <= g)) for g in grid])
    cdf2 = np.array([np.mean(~np.isnan(t2) & (t2 <= g)) for g in grid])
    both = ~np.isnan(t1) & ~np.isnan(t2)
    p12 = float((t1[both] < t2[both]).mean()) if both.any() else float("nan")
    return RaceReport((a1, a2), float(eps), grid, cdf1, cdf2, p12,
                      batch.n_paths, int(both.sum()))
