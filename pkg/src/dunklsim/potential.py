"""Log-singular chamber potential, its gradient drift, and exact identities.

The potential is Phi(x) = -sum_{alpha in R+} k(alpha) ln<alpha, x> on the open
chamber; the SDE drift is b = -grad Phi.  Evaluation is direct summation over
positive roots, which is negligible at desk-scale ranks.  Domain violations
raise instead of clamping; boundary policy belongs to the integrator.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .root_system import MultiplicityMap, RootSystemData


class ChamberDomainError(ValueError):
    """A positive-root pairing was not strictly positive."""


@dataclass(eq=False)
class PotentialContext:
    """Root system plus multiplicities, with cached matrices for evaluation."""

    rs: RootSystemData
    k: MultiplicityMap
    pos_mat: np.ndarray = field(init=False, repr=False)
    k_pos: np.ndarray = field(init=False, repr=False)
    simple_mat: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.pos_mat = self.rs.positive_roots()
        self.k_pos = self.k.per_positive_root(self.rs)
        self.simple_mat = self.rs.simple_roots()
        for arr in (self.pos_mat, self.k_pos, self.simple_mat):
            arr.setflags(write=False)

    @property
    def gamma(self) -> float:
        """Sum of multiplicities over positive roots."""
        return float(self.k_pos.sum())

    def pairings(self, x) -> np.ndarray:
        """<alpha, x> for every positive root; works on (n,) or (..., n)."""
        return np.asarray(x, dtype=float) @ self.pos_mat.T


def _interior_pairings(ctx: PotentialContext, x) -> np.ndarray:
    p = ctx.pairings(x)
    if p.min() <= 0.0:
        raise ChamberDomainError(
            f"point has nonpositive pairing (min={p.min():.3g}); "
            "potential is only defined strictly inside the chamber")
    return p


def phi(ctx: PotentialContext, x) -> float:
    """Potential value at an interior point."""
    p = _interior_pairings(ctx, x)
    return float(-(ctx.k_pos * np.log(p)).sum())


def grad_phi(ctx: PotentialContext, x) -> np.ndarray:
    """Gradient of the potential; the SDE drift is its negative."""
    p = _interior_pairings(ctx, x)
    return -(ctx.k_pos / p) @ ctx.pos_mat


def drift(ctx: PotentialContext, x) -> np.ndarray:
    """SDE drift b(x) = sum_{alpha in R+} k(alpha) alpha / <alpha, x>."""
    return -grad_phi(ctx, x)


def euler_pairing(ctx: PotentialContext, x) -> float:
    """<grad Phi(x), x>; equals -gamma identically (degree -1 homogeneity)."""
    return float(grad_phi(ctx, x) @ np.asarray(x, dtype=float))


def singular_integrand(ctx: PotentialContext, x) -> float:
    """sum_{alpha in R+} k(alpha)/<alpha, x>, the wall-distance functional."""
    p = _interior_pairings(ctx, x)
    return float((ctx.k_pos / p).sum())
