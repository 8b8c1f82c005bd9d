"""Adaptive Euler integration of the singular-drift chamber SDE.

Stepping policy: propose y + b(y) dt + dW and accept only when the proposal
stays strictly inside the chamber and the deterministic displacement obeys
|b(y)| dt <= theta * (minimum positive-root margin).  Rejected increments are
discarded and the step retries at half size with fresh N(0, dt/2) noise (a
slight law violation below discretization error); at the dt_min floor the
proposal is projected back to margin = absorb_eps and flagged as wall contact.
Sub-step sizes stay dyadic fractions of the base step, so every base step
advances time exactly.

Monte Carlo batches integrate all paths of a block simultaneously; each block
of BLOCK_SIZE paths owns one deterministic RNG stream, which keeps reports
byte-identical regardless of worker count.  ``simulate_path`` runs a single
path on its own (seed, path_id) stream as a reproducible reference.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .potential import PotentialContext
from .root_system import fold_into_chamber, inward_direction

BLOCK_SIZE = 4096
# Substream roles: 0 = single-path noise, 1 = oracle draws, 2 = auxiliary;
# block streams live at 16+ so they never collide with per-path streams.
SUB_PATH = 0
SUB_ORACLE = 1
SUB_AUX = 2
SUB_BLOCK = 16

DEFAULT_THETA = 0.5
# dt_min default: dt_base * 2^-30 keeps the floor far below the adaptive
# trigger at any margin the experiments reach.
DT_MIN_FACTOR = 2.0 ** -30


class ConfigError(ValueError):
    """Invalid simulation configuration."""


def derive_stream(seed: int, path_id: int, substream: int = 0) -> np.random.Generator:
    """Independent, reproducible generator keyed by (seed, path_id, substream)."""
    pid = int(path_id)
    key = (int(substream) & 0xFFFFFFFF, pid & 0xFFFFFFFF, (pid >> 32) & 0xFFFFFFFF)
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def sample_bessel_exact(dim: float, x0: float, t: float, rng: np.random.Generator,
                        size: Optional[int] = None):
    """Exact draw(s) from the time-t marginal of a Bessel process.

    Uses the squared process: X_t^2 / t is noncentral chi-square with ``dim``
    degrees of freedom and noncentrality x0^2/t, realized as a Poisson mixture
    of chi-squares so any dim > 0 works.  ``x0`` may be an array, giving one
    draw per entry (exact Markov transitions of a whole batch).
    """
    if dim <= 0.0:
        raise ConfigError("Bessel dimension must be > 0")
    x0 = np.asarray(x0, dtype=float)
    if np.any(x0 < 0.0):
        raise ConfigError("Bessel start must be >= 0")
    if t <= 0.0:
        raise ConfigError("time must be > 0")
    nc = x0 * x0 / t
    n_mix = rng.poisson(0.5 * nc, size=size)
    q = rng.chisquare(dim + 2.0 * n_mix)
    out = np.sqrt(t * q)
    return float(out) if (size is None and x0.ndim == 0) else out


# ---------------------------------------------------------------------------
# Configuration and per-path trajectory container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    """Inputs of one simulation experiment.

    ``mode`` is "absorb" (stop at first wall contact) or "continue" (keep
    integrating, projecting near-wall proposals back to margin absorb_eps).
    Zero multiplicities are only valid with absorption, where runs stop at the
    first boundary contact, unless ``permissive`` explicitly opts into the
    diagnostic drift-free behaviour.
    """

    ctx: PotentialContext
    y0: tuple
    horizon: float
    dt_base: float
    dt_min: float
    seed: int
    n_paths: int
    record_stride: int = 1
    absorb_eps: float = 1e-4
    mode: str = "absorb"
    theta: float = DEFAULT_THETA
    boundary_offset: float = 0.0
    permissive: bool = False

    def __post_init__(self):
        object.__setattr__(self, "y0", tuple(float(v) for v in self.y0))
        if self.mode not in ("absorb", "continue"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not (self.horizon > 0.0):
            raise ConfigError("horizon must be > 0")
        if not (0.0 < self.dt_min <= self.dt_base <= self.horizon):
            raise ConfigError("need 0 < dt_min <= dt_base <= horizon")
        if self.absorb_eps < 0.0:
            raise ConfigError("absorb_eps must be >= 0")
        if self.mode == "continue" and self.absorb_eps <= 0.0:
            raise ConfigError("continuation mode needs absorb_eps > 0 as projection target")
        if self.n_paths < 1 or self.record_stride < 1:
            raise ConfigError("n_paths and record_stride must be >= 1")
        if not (0.0 < self.theta <= 1.0):
            raise ConfigError("theta must be in (0, 1]")
        if len(self.y0) != self.ctx.rs.ambient_dim:
            raise ConfigError("start point dimension mismatch")
        if (not self.ctx.k.strictly_positive and self.mode == "continue"
                and not self.permissive):
            raise ConfigError("zero multiplicities require absorption mode "
                              "(the SDE is only valid up to the first wall time)")
        self.resolved_start()  # validate interiority now

    def resolved_start(self) -> np.ndarray:
        """Start point, nudged inward by boundary_offset when on the boundary."""
        y = np.asarray(self.y0, dtype=float)
        if self.ctx.pairings(y).min() > 0.0:
            return y
        if self.boundary_offset > 0.0:
            d = inward_direction(self.ctx.rs)
            y = y + self.boundary_offset * d / np.linalg.norm(d)
            if self.ctx.pairings(y).min() > 0.0:
                return y
        raise ConfigError("start point is not strictly inside the chamber "
                          "(use boundary_offset to nudge a boundary start)")


@dataclass
class Trajectory:
    """One recorded path: time grid, states, and per-time minimum wall margin."""

    path_id: int
    times: np.ndarray
    states: np.ndarray
    min_margin: np.ndarray
    hit: Optional[tuple] = None  # (time, simple root index into rs.roots)


# ---------------------------------------------------------------------------
# Scalar adaptive step (reference implementation of the policy)
# ---------------------------------------------------------------------------

@dataclass
class StepResult:
    y: np.ndarray
    dt_used: float
    min_margin: float
    contact: bool


def step(ctx: PotentialContext, y, dt: float, dW, rng: Optional[np.random.Generator] = None,
         *, dt_min: float = 1e-12, theta: float = DEFAULT_THETA,
         absorb_eps: float = 0.0) -> StepResult:
    """Advance one state by total time dt under the adaptive policy.

    The supplied increment drives the first proposal; halved retries draw
    fresh increments from ``rng`` (required only if halving happens).
    ``dt_used`` is the smallest sub-step actually accepted.
    """
    y = np.asarray(y, dtype=float).copy()
    dW = np.asarray(dW, dtype=float)
    advanced = 0.0
    trial = float(dt)
    dt_used = float(dt)
    contact = False
    first = True
    while advanced < dt:
        s = min(trial, dt - advanced)
        p = ctx.pairings(y)
        b = (ctx.k_pos / p) @ ctx.pos_mat
        if first and s == dt:
            dw = dW
        else:
            if rng is None:
                raise ConfigError("step halving requires an rng for fresh increments")
            dw = rng.standard_normal(y.shape[0]) * math.sqrt(s)
        first = False
        prop = y + b * s + dw
        pm = ctx.pairings(prop)
        ok = (np.linalg.norm(b) * s <= theta * p.min()) and pm.min() > 0.0
        if ok:
            y = prop
            advanced += s
            dt_used = min(dt_used, s)
            trial = min(2.0 * s, dt)
        elif s <= dt_min * (1.0 + 1e-12):
            y = _project_to_margin(ctx, prop[None, :], absorb_eps)[0]
            advanced += s
            dt_used = min(dt_used, s)
            contact = True
            trial = min(2.0 * s, dt)
        else:
            trial = max(0.5 * s, dt_min)
    walls = ctx.simple_mat @ y
    if walls.min() <= absorb_eps:
        contact = True
    return StepResult(y, dt_used, float(walls.min()), contact)


def _project_to_margin(ctx: PotentialContext, X: np.ndarray, target: float) -> np.ndarray:
    """Push states so every positive-root pairing is >= target.

    Shifts along the most-violated root first; a chamber fold plus a shift
    along the sum of positive roots guarantees termination.
    """
    X = X.copy()
    pos = ctx.pos_mat
    norms = np.einsum("ij,ij->i", pos, pos)
    for _ in range(32):
        pm = X @ pos.T
        mn = pm.min(axis=1)
        bad = np.flatnonzero(mn < target - 1e-15)
        if bad.size == 0:
            return X
        amin = pm[bad].argmin(axis=1)
        shift = (target - pm[bad, amin]) / norms[amin]
        X[bad] += shift[:, None] * pos[amin]
    pm = X @ pos.T
    mn = pm.min(axis=1)
    bad = np.flatnonzero(mn < target - 1e-15)
    if bad.size:
        X[bad] = fold_into_chamber(ctx.rs, X[bad])
        d = inward_direction(ctx.rs)
        dmarg = float((pos @ d).min())
        mn = (X[bad] @ pos.T).min(axis=1)
        X[bad] += ((target - np.minimum(mn, target)) / dmarg)[:, None] * d
    return X


# ---------------------------------------------------------------------------
# Vectorized batch engine
# ---------------------------------------------------------------------------

class DunklSystem:
    """Chamber SDE in engine form: drift, unit noise, root-pairing margins."""

    def __init__(self, ctx: PotentialContext):
        self.ctx = ctx
        self.dim = ctx.rs.ambient_dim
        self.n_noise = self.dim

    def drift(self, X):
        p = X @ self.ctx.pos_mat.T
        return (self.ctx.k_pos / p) @ self.ctx.pos_mat

    def noise(self, X, dW):
        return dW

    def margins(self, X):
        return X @ self.ctx.pos_mat.T

    def walls(self, X):
        return X @ self.ctx.simple_mat.T

    def functional(self, margins):
        # Wall-distance integrand, reusing the margin matrix already computed.
        return (self.ctx.k_pos / margins).sum(axis=1)

    def project(self, X, target):
        return _project_to_margin(self.ctx, X, target)


@dataclass
class BatchResult:
    """Recorded output of a batch of paths sharing one configuration."""

    times: np.ndarray            # (n_rec,)
    states: np.ndarray           # (n_rec, P, dim)
    min_wall: np.ndarray         # (n_rec, P) minimum wall margin of each recorded state
    valid: np.ndarray            # (n_rec, P) False once a path is absorbed
    hit_time: np.ndarray         # (P,), nan when no wall contact happened
    hit_wall: np.ndarray         # (P,), wall position (index into walls), -1 if none
    pathwise_min_wall: np.ndarray
    end_time: np.ndarray         # absorption time or horizon
    path_offset: int = 0
    crossings: Optional[np.ndarray] = None   # (P, n_walls, n_levels) first times
    functional: Optional[np.ndarray] = None  # (P,) pathwise integral
    max_track: Optional[np.ndarray] = None   # (P,) running max of tracked scalar
    n_failed: int = 0

    @property
    def n_paths(self) -> int:
        return self.states.shape[1]

    @staticmethod
    def merge(parts: Sequence["BatchResult"]) -> "BatchResult":
        parts = sorted(parts, key=lambda r: r.path_offset)
        base = parts[0]
        for p in parts[1:]:
            if not np.array_equal(p.times, base.times):
                raise ValueError("cannot merge batches with different time grids")

        def cat(name, axis):
            vals = [getattr(p, name) for p in parts]
            if any(v is None for v in vals):
                return None
            return np.concatenate(vals, axis=axis)

        return BatchResult(
            times=base.times,
            states=cat("states", 1),
            min_wall=cat("min_wall", 1),
            valid=cat("valid", 1),
            hit_time=cat("hit_time", 0),
            hit_wall=cat("hit_wall", 0),
            pathwise_min_wall=cat("pathwise_min_wall", 0),
            end_time=cat("end_time", 0),
            path_offset=base.path_offset,
            crossings=cat("crossings", 0),
            functional=cat("functional", 0),
            max_track=cat("max_track", 0),
            n_failed=sum(p.n_failed for p in parts),
        )


def integrate_batch(system, x0: np.ndarray, *, horizon: float, dt_base: float,
                    dt_min: float, theta: float, absorb_eps: float, mode: str,
                    rng: np.random.Generator, record_stride: int = 1,
                    crossing_levels: Optional[Sequence[float]] = None,
                    track_functional: bool = False,
                    track_max: Optional[Callable] = None,
                    path_offset: int = 0,
                    max_subiter: int = 1_000_000) -> BatchResult:
    """Advance a batch of paths to the horizon under the adaptive policy.

    Wall contact (margin <= absorb_eps, or a floor projection) is recorded at
    internal sub-step resolution; in "absorb" mode contacted paths stop.
    ``crossing_levels`` additionally records, per path and wall, the first
    time each threshold is reached.
    """
    X = np.array(x0, dtype=float)
    P = X.shape[0]
    n_base = max(1, int(math.ceil(horizon / dt_base - 1e-9)))
    # Systems whose drift stays bounded along some constraint directions can
    # exclude those from the refinement trigger via ``trigger_margins``.
    trigger_fn = getattr(system, "trigger_margins", None)

    levels = None
    if crossing_levels is not None:
        levels = np.asarray(sorted(crossing_levels, reverse=True), dtype=float)

    walls0 = system.walls(X)
    n_walls = walls0.shape[1]
    hit_time = np.full(P, np.nan)
    hit_wall = np.full(P, -1, dtype=np.int64)
    alive = np.ones(P, dtype=bool)
    pathwise_min = walls0.min(axis=1).copy()
    crossings = np.full((P, n_walls, len(levels)), np.nan) if levels is not None else None
    integral = np.zeros(P) if track_functional else None
    vmax = track_max(X).copy() if track_max is not None else None

    def register_contact(j, w, tn, forced):
        contact = forced | (w.min(axis=1) <= absorb_eps)
        new = contact & np.isnan(hit_time[j])
        if new.any():
            jj = j[new]
            hit_time[jj] = tn[new]
            hit_wall[jj] = w[new].argmin(axis=1)
        if mode == "absorb" and contact.any():
            alive[j[contact]] = False
        return contact

    def register_crossings(j, w, tn):
        # Slack absorbs roundoff of states projected exactly onto a level.
        for li, lvl in enumerate(levels):
            sub = crossings[j, :, li]
            upd = (w <= lvl + 1e-12) & np.isnan(sub)
            if upd.any():
                crossings[j, :, li] = np.where(upd, tn[:, None], sub)

    # t = 0 bookkeeping (a start inside the detection band counts immediately).
    if levels is not None:
        register_crossings(np.arange(P), walls0, np.zeros(P))
    register_contact(np.arange(P), walls0, np.zeros(P), np.zeros(P, dtype=bool))

    rec_t = [0.0]
    rec_x = [X.copy()]
    rec_w = [walls0.min(axis=1).copy()]
    rec_v = [np.ones(P, dtype=bool)]  # the t=0 row is always valid

    for i in range(n_base):
        t0 = i * dt_base
        step_dt = min(dt_base, horizon - t0)
        active = alive.copy()
        remaining = np.where(active, step_dt, 0.0)
        trial = np.full(P, step_dt)
        iters = 0
        while True:
            ia = np.flatnonzero(active)
            if ia.size == 0:
                break
            iters += 1
            if iters > max_subiter:
                raise RuntimeError("adaptive stepping exceeded the sub-iteration cap; "
                                   "dt_min is likely too small for this configuration")
            s = np.minimum(trial[ia], remaining[ia])
            Xa = X[ia]
            marg = system.margins(Xa)
            tmarg = trigger_fn(Xa).min(axis=1) if trigger_fn is not None else marg.min(axis=1)
            b = system.drift(Xa)
            dW = rng.standard_normal((ia.size, system.n_noise)) * np.sqrt(s)[:, None]
            prop = Xa + b * s[:, None] + system.noise(Xa, dW)
            pmarg = system.margins(prop)
            drift_ok = np.linalg.norm(b, axis=1) * s <= theta * tmarg
            ok = drift_ok & (pmarg.min(axis=1) > 0.0)
            forced = (s <= dt_min * (1.0 + 1e-12)) & ~ok
            if mode == "absorb":
                # First-passage semantics: a trustworthy proposal that enters
                # the detection band is wall contact, not a step to resample
                # (resampling would silently reflect the path off the wall).
                # Rare coarse-noise jumps across the band from afar register
                # too; that overcount is the discretization artifact the eps
                # ladder extrapolation is built to remove.
                crossed = drift_ok & (system.walls(prop).min(axis=1) <= absorb_eps)
                forced = forced | crossed
            if forced.any():
                prop[forced] = system.project(prop[forced], absorb_eps)
                pmarg[forced] = system.margins(prop[forced])
            acc = ok | forced
            if acc.any():
                j = ia[acc]
                new_states = prop[acc]
                X[j] = new_states
                remaining[j] -= s[acc]
                tn = t0 + (step_dt - remaining[j])
                w = system.walls(new_states)
                pathwise_min[j] = np.minimum(pathwise_min[j], w.min(axis=1))
                if track_functional:
                    fa = system.functional(marg[acc])
                    fb = system.functional(pmarg[acc])
                    integral[j] += 0.5 * (fa + fb) * s[acc]
                if track_max is not None:
                    vmax[j] = np.maximum(vmax[j], track_max(new_states))
                if levels is not None:
                    register_crossings(j, w, tn)
                register_contact(j, w, tn, forced[acc])
                active &= alive
                trial[j] = np.minimum(2.0 * trial[j], step_dt)
                done = remaining[j] <= 0.0
                active[j[done]] = False
            rej = ia[~acc]
            if rej.size:
                trial[rej] = np.maximum(0.5 * s[~acc], dt_min)
        if (i + 1) % record_stride == 0 or i + 1 == n_base:
            rec_t.append(min((i + 1) * dt_base, horizon))
            rec_x.append(X.copy())
            rec_w.append(system.walls(X).min(axis=1))
            rec_v.append(alive.copy())

    end_time = np.where(np.isnan(hit_time) | (mode != "absorb"), horizon, hit_time)
    return BatchResult(
        times=np.asarray(rec_t),
        states=np.stack(rec_x),
        min_wall=np.stack(rec_w),
        valid=np.stack(rec_v),
        hit_time=hit_time,
        hit_wall=hit_wall,
        pathwise_min_wall=pathwise_min,
        end_time=end_time,
        path_offset=path_offset,
        crossings=crossings,
        functional=integral,
        max_track=vmax,
    )


# ---------------------------------------------------------------------------
# Batch front ends
# ---------------------------------------------------------------------------

def _run_dunkl_block(args):
    cfg, block, lo, hi, crossing_levels, track_functional, substream = args
    rng = derive_stream(cfg.seed, block, substream)
    y0 = cfg.resolved_start()
    x0 = np.tile(y0, (hi - lo, 1))
    return integrate_batch(
        DunklSystem(cfg.ctx), x0, horizon=cfg.horizon, dt_base=cfg.dt_base,
        dt_min=cfg.dt_min, theta=cfg.theta, absorb_eps=cfg.absorb_eps,
        mode=cfg.mode, rng=rng, record_stride=cfg.record_stride,
        crossing_levels=crossing_levels, track_functional=track_functional,
        path_offset=lo)


def block_spans(n_paths: int, block_size: Optional[int] = None):
    size = block_size if block_size is not None else BLOCK_SIZE
    return [(b, b * size, min((b + 1) * size, n_paths))
            for b in range((n_paths + size - 1) // size)]


def run_blocks(worker: Callable, tasks: list, workers: int = 1) -> list:
    """Run block tasks serially or across processes; order follows ``tasks``."""
    if workers <= 1 or len(tasks) <= 1:
        return [worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, tasks))


def simulate_batch(cfg: SimConfig, *, workers: int = 1,
                   crossing_levels: Optional[Sequence[float]] = None,
                   track_functional: bool = False,
                   substream: int = SUB_BLOCK) -> BatchResult:
    """All paths of the configuration, block-parallel and seed-deterministic."""
    tasks = [(cfg, b, lo, hi, crossing_levels, track_functional, substream)
             for b, lo, hi in block_spans(cfg.n_paths)]
    return BatchResult.merge(run_blocks(_run_dunkl_block, tasks, workers))


def simulate_path(cfg: SimConfig, path_id: int) -> Trajectory:
    """One path driven by its own (seed, path_id) stream."""
    rng = derive_stream(cfg.seed, path_id, SUB_PATH)
    x0 = cfg.resolved_start()[None, :]
    res = integrate_batch(
        DunklSystem(cfg.ctx), x0, horizon=cfg.horizon, dt_base=cfg.dt_base,
        dt_min=cfg.dt_min, theta=cfg.theta, absorb_eps=cfg.absorb_eps,
        mode=cfg.mode, rng=rng, record_stride=cfg.record_stride)
    return extract_trajectory(cfg, res, 0, path_id=path_id)


def extract_trajectory(cfg: SimConfig, batch: BatchResult, col: int,
                       path_id: Optional[int] = None) -> Trajectory:
    """Per-path view of a batch; absorbed paths end at their hit time."""
    pid = path_id if path_id is not None else batch.path_offset + col
    hit = None
    if not np.isnan(batch.hit_time[col]):
        wall_root = int(cfg.ctx.rs.simple[batch.hit_wall[col]])
        hit = (float(batch.hit_time[col]), wall_root)
    keep = batch.valid[:, col]
    times = batch.times[keep]
    states = batch.states[keep, col, :]
    margins = batch.min_wall[keep, col]
    if hit is not None and cfg.mode == "absorb":
        # Close the record with the contact state the path froze at.
        times = np.append(times, hit[0])
        states = np.vstack([states, batch.states[-1, col, :]])
        margins = np.append(margins, batch.min_wall[-1, col])
    return Trajectory(pid, times, states, margins, hit)


# ---------------------------------------------------------------------------
# CSV output (17 significant digits)
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_trajectory_csv(fh, trajectories) -> None:
    """Rows ``path_id,t,x_1..x_n,min_margin`` for every recorded state."""
    first = True
    for traj in trajectories:
        if first:
            n = traj.states.shape[1]
            cols = ",".join(f"x_{i + 1}" for i in range(n))
            fh.write(f"path_id,t,{cols},min_margin\n")
            first = False
        for t, x, mm in zip(traj.times, traj.states, traj.min_margin):
            xs = ",".join(_fmt(v) for v in x)
            fh.write(f"{traj.path_id},{_fmt(t)},{xs},{_fmt(mm)}\n")


def write_hits_csv(fh, trajectories) -> None:
    """Rows ``path_id,t_hit,simple_root_index`` for paths that contacted a wall."""
    fh.write("path_id,t_hit,simple_root_index\n")
    for traj in trajectories:
        if traj.hit is not None:
            fh.write(f"{traj.path_id},{_fmt(traj.hit[0])},{traj.hit[1]}\n")


def batch_trajectories(cfg: SimConfig, batch: BatchResult):
    for col in range(batch.n_paths):
        yield extract_trajectory(cfg, batch, col)
