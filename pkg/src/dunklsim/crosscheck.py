"""Cross-model law agreement between the chamber SDE and matrix oracles.

Each check runs the two models on independent streams (the identification is
in law, not pathwise) and compares time-horizon marginals per coordinate.
"""
from __future__ import annotations

import math

import numpy as np

from . import integrator, matrix_oracles, stattests
from .integrator import ConfigError, SimConfig, derive_stream
from .matrix_oracles import LaguerreParams
from .potential import PotentialContext
from .root_system import MultiplicityMap, build_root_system

CONTINUE_EPS = 1e-6


def _dunkl_final_states(family: str, rank: int, k: MultiplicityMap, y0, horizon,
                        dt, n_paths, seed, workers=1) -> np.ndarray:
    rs = build_root_system(family, rank)
    ctx = PotentialContext(rs, k)
    cfg = SimConfig(ctx=ctx, y0=tuple(y0), horizon=horizon, dt_base=dt,
                    dt_min=dt * integrator.DT_MIN_FACTOR, seed=seed,
                    n_paths=n_paths, record_stride=10 ** 9,
                    absorb_eps=CONTINUE_EPS, mode="continue")
    batch = integrator.simulate_batch(cfg, workers=workers)
    return batch.states[-1]


def dyson_vs_dunkl(m: int, beta: int, x0, horizon: float, dt: float,
                   n_paths: int, seed: int, workers: int = 1) -> dict:
    """Per-coordinate KS between Dyson eigenvalues and the A-type chamber SDE."""
    if m < 2:
        raise ConfigError("the A-type check needs m >= 2")
    rng = derive_stream(seed, 0, integrator.SUB_ORACLE)
    _, eigs, n_failed = matrix_oracles.dyson_batch(m, beta, x0, horizon, dt, rng,
                                                   n_paths)
    rs = build_root_system("A", m)
    final = _dunkl_final_states("A", m, MultiplicityMap.uniform(rs, beta / 2.0),
                                x0, horizon, dt, n_paths, seed, workers)
    pvals = [stattests.ks_pvalue(eigs[-1, :, i], final[:, i]) for i in range(m)]
    return {
        "model": "dyson",
        "m": m, "beta": beta, "k": beta / 2.0,
        "horizon": horizon, "dt": dt, "n_paths": n_paths,
        "ks_pvalues": pvals,
        "eigen_failures": n_failed,
    }


def laguerre_vs_dunkl(m: int, beta: float, delta: float, lambda0, horizon: float,
                      dt: float, n_paths: int, seed: int, workers: int = 1) -> dict:
    """sqrt of the eigenvalue SDE against the B-type chamber SDE, plus identities."""
    params = LaguerreParams(m, beta, delta)
    if not params.strong_regime:
        raise ConfigError("need the strong-solution regime (k0, k1 > 0) "
                          "for the chamber comparison")
    lambda0 = np.asarray(lambda0, dtype=float)
    rng = derive_stream(seed, 0, integrator.SUB_ORACLE)
    n_steps = max(1, int(math.ceil(horizon / dt - 1e-9)))
    # Strong regime: no absorption a.s., so integrate through near-boundary
    # excursions rather than censoring them at a threshold.
    batch = matrix_oracles.laguerre_batch(params, lambda0, horizon, dt, rng,
                                          n_paths, mode="continue",
                                          absorb_eps=1e-9,
                                          record_stride=max(1, n_steps // 16))
    finished = batch.valid[-1]
    lam_final = batch.states[-1][finished]
    r_oracle = matrix_oracles.sqrt_map(lam_final)

    k = matrix_oracles.mult_dictionary(params)
    final = _dunkl_final_states("B", m, k, np.sqrt(lambda0), horizon, dt,
                                n_paths, seed, workers)
    pvals = [stattests.ks_pvalue(r_oracle[:, i], final[:, i]) for i in range(m)]

    # Trace slope: interactions cancel, so d/dt E[sum lambda] = beta*delta*m.
    traces = batch.states.sum(axis=2)
    slopes = stattests.per_path_slopes(batch.times, traces)
    trace_slope = float(slopes.mean())
    trace_se = float(slopes.std(ddof=1) / math.sqrt(len(slopes)))

    inter = max(float(np.abs(matrix_oracles.interaction_sum(states)).max())
                for states in batch.states)
    return {
        "model": "laguerre",
        "m": m, "beta": beta, "delta": delta,
        "k0": params.k0, "k1": params.k1,
        "horizon": horizon, "dt": dt, "n_paths": n_paths,
        "n_absorbed": int((~finished).sum()),
        "ks_pvalues": pvals,
        "trace_slope": trace_slope,
        "trace_slope_se": trace_se,
        "trace_slope_expected": beta * delta * m,
        "interaction_sum_max": inter,
    }


def wishart_vs_laguerre(n: int, m: int, beta: int, horizon: float, dt: float,
                        n_paths: int, seed: int, sv0=None,
                        n_permutations: int = 199) -> dict:
    """Energy-distance test of Wishart eigenvalues against the delta = n SDE."""
    sv = np.asarray(sv0 if sv0 is not None else np.arange(m, 0, -1), dtype=float)
    rng_w = derive_stream(seed, 0, integrator.SUB_ORACLE)
    _, eigs, n_failed = matrix_oracles.wishart_batch(n, m, beta, horizon, dt,
                                                     rng_w, n_paths, sv0=sv)
    params = LaguerreParams(m, beta, float(n))
    rng_l = derive_stream(seed, 1, integrator.SUB_ORACLE)
    batch = matrix_oracles.laguerre_batch(params, sv ** 2, horizon, dt, rng_l,
                                          n_paths, mode="continue",
                                          absorb_eps=1e-9)
    finished = batch.valid[-1]
    lam = batch.states[-1][finished]

    rng_perm = derive_stream(seed, 2, integrator.SUB_AUX)
    stat, pvalue = stattests.energy_distance_test(eigs[-1], lam, rng_perm,
                                                  n_permutations=n_permutations)
    c = 1.0 if beta == 1 else 2.0
    trace = eigs[-1].sum(axis=1)
    expected = float((sv ** 2).sum() + c * n * m * horizon)
    return {
        "model": "wishart",
        "matrix_n": n, "m": m, "beta": beta,
        "horizon": horizon, "dt": dt, "n_paths": n_paths,
        "energy_statistic": stat,
        "energy_pvalue": pvalue,
        "trace_mean": float(trace.mean()),
        "trace_mean_se": float(trace.std(ddof=1) / math.sqrt(len(trace))),
        "trace_mean_expected": expected,
        "eigen_failures": n_failed,
        "n_absorbed": int((~finished).sum()),
    }
