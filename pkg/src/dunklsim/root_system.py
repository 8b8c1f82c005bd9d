"""Reduced root systems of type A and B.

Builds the A_{m-1} system embedded in R^m (roots e_i - e_j, all coordinates
kept, so the chamber is x_1 > ... > x_m) and the B_m system with short roots
e_i (squared norm 1) and long roots e_i +- e_j (squared norm 2).  Orbits under
the reflection group are computed by union-find closure rather than hardcoded,
and ``validate`` re-checks the defining axioms exhaustively.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

# Coordinate tolerance for set membership among roots.  Both families have
# exact small-integer coordinates, so this is safe.
MATCH_TOL = 1e-9


class RootSystemError(ValueError):
    """Invalid construction parameters or malformed root data."""


def reflect(alpha, x):
    """Mirror x across the hyperplane orthogonal to alpha.

    Accepts a single point of shape (n,) or a batch of shape (..., n).
    """
    alpha = np.asarray(alpha, dtype=float)
    x = np.asarray(x, dtype=float)
    n2 = float(alpha @ alpha)
    if n2 <= 0.0:
        raise RootSystemError("reflection axis must be a nonzero vector")
    coef = 2.0 * (x @ alpha) / n2
    return x - np.multiply.outer(coef, alpha) if x.ndim > 1 else x - coef * alpha


@dataclass(frozen=True, eq=False)
class RootSystemData:
    """A root system with its positive/simple choices and orbit partition.

    ``positive`` and ``simple`` are index lists into ``roots``; ``orbit_of``
    assigns each root a canonical orbit label (orbits sorted by squared norm,
    so for B the short orbit is label 0 and the long orbit label 1).
    """

    family: str
    rank: int
    ambient_dim: int
    roots: np.ndarray
    positive: np.ndarray
    simple: np.ndarray
    orbit_of: np.ndarray

    def __post_init__(self):
        for arr in (self.roots, self.positive, self.simple, self.orbit_of):
            arr.setflags(write=False)

    @property
    def n_orbits(self) -> int:
        return int(self.orbit_of.max()) + 1 if self.orbit_of.size else 0

    def positive_roots(self) -> np.ndarray:
        return self.roots[self.positive]

    def simple_roots(self) -> np.ndarray:
        return self.roots[self.simple]

    def root_index(self, v, tol: float = MATCH_TOL) -> int:
        """Index of the root matching v coordinate-wise, or raise."""
        i = find_root_index(self.roots, v, tol)
        if i < 0:
            raise RootSystemError(f"vector {np.asarray(v)} is not a root of this system")
        return i

    def orbit_label_of_norm(self, norm2: float, tol: float = 1e-9) -> int:
        """Orbit label of the roots with the given squared norm."""
        for label in range(self.n_orbits):
            rep = self.roots[np.flatnonzero(self.orbit_of == label)[0]]
            if abs(float(rep @ rep) - norm2) <= tol:
                return label
        raise RootSystemError(f"no orbit with squared norm {norm2}")


def find_root_index(roots: np.ndarray, v, tol: float = MATCH_TOL) -> int:
    """Linear tolerance lookup; returns -1 when absent."""
    d = np.abs(roots - np.asarray(v, dtype=float)).max(axis=1)
    hits = np.flatnonzero(d <= tol)
    return int(hits[0]) if hits.size else -1


def _union_find_orbits(roots: np.ndarray) -> np.ndarray:
    """Orbit labels by closing under all reflections; unmatched images are skipped."""
    n = len(roots)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    for b in range(n):
        images = reflect(roots[b], roots)
        for a in range(n):
            j = find_root_index(roots, images[a])
            if j >= 0:
                union(a, j)

    comps: dict[int, list[int]] = {}
    for a in range(n):
        comps.setdefault(find(a), []).append(a)

    # Canonical labels: sort components by squared norm of their shortest
    # member, then by the lexicographically smallest member.
    def comp_key(members):
        norms = [float(roots[i] @ roots[i]) for i in members]
        vecs = sorted(tuple(np.round(roots[i], 9)) for i in members)
        return (min(norms), vecs[0])

    ordered = sorted(comps.values(), key=comp_key)
    labels = np.empty(n, dtype=np.int64)
    for lab, members in enumerate(ordered):
        labels[members] = lab
    return labels


def build_root_system(family: str, rank: int) -> RootSystemData:
    """Construct A_{rank-1} (ambient dim = rank, rank >= 2) or B_rank (rank >= 1)."""
    fam = str(family).upper()
    m = int(rank)
    vectors: list[np.ndarray] = []
    if fam == "A":
        if m < 2:
            raise RootSystemError("family A needs rank >= 2")
        for i in range(m):
            for j in range(i + 1, m):
                v = np.zeros(m)
                v[i], v[j] = 1.0, -1.0
                vectors.append(v)
        simple_vecs = [_e(m, i) - _e(m, i + 1) for i in range(m - 1)]
    elif fam == "B":
        if m < 1:
            raise RootSystemError("family B needs rank >= 1")
        for i in range(m):
            vectors.append(_e(m, i))
        for i in range(m):
            for j in range(i + 1, m):
                vectors.append(_e(m, i) - _e(m, j))
        for i in range(m):
            for j in range(i + 1, m):
                vectors.append(_e(m, i) + _e(m, j))
        simple_vecs = [_e(m, i) - _e(m, i + 1) for i in range(m - 1)] + [_e(m, m - 1)]
    else:
        raise RootSystemError(f"unknown family {family!r}")

    positive_block = np.array(vectors)
    roots = np.vstack([positive_block, -positive_block])
    positive = np.arange(len(vectors), dtype=np.int64)
    simple = np.array([find_root_index(roots, v) for v in simple_vecs], dtype=np.int64)
    orbit_of = _union_find_orbits(roots)
    return RootSystemData(fam, m, m, roots, positive, simple, orbit_of)


def from_vectors(vectors, positive=None, simple=None, family: str = "custom",
                 rank: Optional[int] = None) -> RootSystemData:
    """Wrap an explicit root list (mainly for feeding ``validate`` bad inputs)."""
    roots = np.asarray(vectors, dtype=float)
    if roots.ndim != 2:
        raise RootSystemError("expected a 2d array of root vectors")
    pos = np.asarray(positive if positive is not None else [], dtype=np.int64)
    simp = np.asarray(simple if simple is not None else [], dtype=np.int64)
    n = roots.shape[1]
    return RootSystemData(family, rank if rank is not None else n, n, roots,
                          pos, simp, _union_find_orbits(roots))


def _e(m: int, i: int) -> np.ndarray:
    v = np.zeros(m)
    v[i] = 1.0
    return v


# ---------------------------------------------------------------------------
# Multiplicities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MultiplicityMap:
    """Nonnegative multiplicity per orbit label (W-invariance is automatic)."""

    value_per_orbit: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.value_per_orbit)
        object.__setattr__(self, "value_per_orbit", vals)
        if any(v < 0.0 for v in vals):
            raise RootSystemError("multiplicities must be nonnegative")

    @property
    def strictly_positive(self) -> bool:
        return all(v > 0.0 for v in self.value_per_orbit)

    def of_orbit(self, label: int) -> float:
        return self.value_per_orbit[label]

    def per_root(self, rs: RootSystemData) -> np.ndarray:
        if len(self.value_per_orbit) != rs.n_orbits:
            raise RootSystemError(
                f"multiplicity map has {len(self.value_per_orbit)} orbits, "
                f"system has {rs.n_orbits}")
        return np.asarray(self.value_per_orbit, dtype=float)[rs.orbit_of]

    def per_positive_root(self, rs: RootSystemData) -> np.ndarray:
        return self.per_root(rs)[rs.positive]

    @classmethod
    def uniform(cls, rs: RootSystemData, k: float) -> "MultiplicityMap":
        return cls((float(k),) * rs.n_orbits)

    @classmethod
    def short_long(cls, rs: RootSystemData, k_short: float, k_long: float) -> "MultiplicityMap":
        """B-family map keyed by root length; B_1 only has the short orbit."""
        if rs.n_orbits == 1:
            return cls((float(k_short),))
        vals = [0.0] * rs.n_orbits
        vals[rs.orbit_label_of_norm(1.0)] = float(k_short)
        vals[rs.orbit_label_of_norm(2.0)] = float(k_long)
        return cls(tuple(vals))


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------

def wall_margins(rs: RootSystemData, x) -> dict:
    """Map simple-root index -> <alpha, x>; all > 0 iff x is in the open chamber."""
    x = np.asarray(x, dtype=float)
    return {int(i): float(rs.roots[i] @ x) for i in rs.simple}


def opposite_in_class(rs: RootSystemData, alpha0: int, alpha: int) -> int:
    """Index of sigma_{alpha0}(alpha) among the positive roots.

    alpha0 must be simple and alpha positive with alpha != alpha0; the image
    is then positive and in the same orbit.
    """
    if alpha0 not in rs.simple:
        raise RootSystemError("alpha0 must be a simple root index")
    if alpha not in rs.positive:
        raise RootSystemError("alpha must be a positive root index")
    if alpha == alpha0:
        raise RootSystemError("alpha0 is the only positive root reflected negative")
    img = reflect(rs.roots[alpha0], rs.roots[alpha])
    idx = rs.root_index(img)
    if idx not in rs.positive:
        raise RootSystemError("reflected root is not positive; malformed system")
    return idx


def fold_into_chamber(rs: RootSystemData, x) -> np.ndarray:
    """Map x to its W-orbit representative in the closed chamber."""
    x = np.asarray(x, dtype=float)
    if rs.family == "A":
        return np.sort(x, axis=-1)[..., ::-1].copy()
    if rs.family == "B":
        return np.sort(np.abs(x), axis=-1)[..., ::-1].copy()
    raise RootSystemError("chamber folding is only defined for built families")


def inward_direction(rs: RootSystemData) -> np.ndarray:
    """Sum of positive roots; strictly inward (every simple pairing > 0)."""
    return rs.positive_roots().sum(axis=0)


def sample_interior(rs: RootSystemData, n_points: int, rng,
                    min_margin: float = 0.05, spread: float = 1.0) -> np.ndarray:
    """Random chamber points with every simple margin >= min_margin."""
    simple_mat = rs.simple_roots()
    out = []
    have = 0
    while have < n_points:
        draw = fold_into_chamber(rs, rng.normal(0.0, spread, (4 * n_points, rs.ambient_dim)))
        margins = draw @ simple_mat.T
        good = draw[margins.min(axis=1) >= min_margin]
        out.append(good)
        have += len(good)
    return np.vstack(out)[:n_points]


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, passed: bool, detail: str = ""):
        self.checks.append(CheckResult(name, bool(passed), detail))

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail}
                       for c in self.checks],
        }


def expected_orbit_count(family: str, rank: int) -> Optional[int]:
    if family == "A":
        return 1
    if family == "B":
        return 2 if rank >= 2 else 1
    return None


def validate(rs: RootSystemData, tol: float = MATCH_TOL) -> ValidationReport:
    """Exhaustively check the root-system axioms; failures are report rows."""
    rep = ValidationReport()
    roots = rs.roots
    n = len(roots)

    norms = np.einsum("ij,ij->i", roots, roots)
    rep.add("roots_nonzero", bool(np.all(norms > tol)),
            f"min squared norm {norms.min() if n else 0.0:.3g}")

    # Axiom 1: the only multiples of alpha present are +-alpha.
    ok1 = True
    bad1 = ""
    for a in range(n):
        scal = roots @ roots[a] / norms[a]
        parallel = np.abs(roots - np.multiply.outer(scal, roots[a])).max(axis=1) <= tol
        coeffs = sorted(np.round(scal[parallel], 9))
        if coeffs != [-1.0, 1.0]:
            ok1 = False
            bad1 = f"root {a}: multiples present with coefficients {coeffs}"
            break
    rep.add("axiom1_reduced", ok1, bad1)

    # Axiom 2: every reflection permutes the set.
    ok2 = True
    bad2 = ""
    for b in range(n):
        images = reflect(roots[b], roots)
        for a in range(n):
            if find_root_index(roots, images[a], tol) < 0:
                ok2 = False
                bad2 = f"sigma_{b}({a}) leaves the set"
                break
        if not ok2:
            break
    rep.add("axiom2_reflection_closure", ok2, bad2)

    rep.add("cardinality_paired", n == 2 * len(rs.positive),
            f"|R|={n}, |R+|={len(rs.positive)}")

    if len(rs.simple):
        smat = rs.simple_roots().T  # (n_dim, n_simple)
        okd = True
        badd = ""
        for idx in rs.positive:
            coef, res, _, _ = np.linalg.lstsq(smat, roots[idx], rcond=None)
            resid = float(np.linalg.norm(smat @ coef - roots[idx]))
            if resid > 1e-9 or coef.min() < -1e-9 or np.abs(coef - np.round(coef)).max() > 1e-6:
                okd = False
                badd = f"positive root {idx} decomposition failed (coef {np.round(coef, 6)})"
                break
        rep.add("positive_simple_decomposition", okd, badd)

    # Orbit closure under every reflection.
    okc = True
    badc = ""
    for b in range(n):
        images = reflect(roots[b], roots)
        for a in range(n):
            j = find_root_index(roots, images[a], tol)
            if j >= 0 and rs.orbit_of[j] != rs.orbit_of[a]:
                okc = False
                badc = f"orbit label changes under sigma_{b} at root {a}"
                break
        if not okc:
            break
    rep.add("orbit_closure", okc, badc)

    expected = expected_orbit_count(rs.family, rs.rank)
    if expected is not None:
        rep.add("orbit_count", rs.n_orbits == expected,
                f"found {rs.n_orbits}, expected {expected}")
        if rs.family == "A":
            rep.add("positive_count", len(rs.positive) == rs.rank * (rs.rank - 1) // 2,
                    f"|R+|={len(rs.positive)}")
            rep.add("root_norms", bool(np.allclose(norms, 2.0, atol=tol)), "")
        if rs.family == "B":
            rep.add("positive_count", len(rs.positive) == rs.rank ** 2,
                    f"|R+|={len(rs.positive)}")
            rep.add("root_norms",
                    bool(np.all((np.abs(norms - 1.0) <= tol) | (np.abs(norms - 2.0) <= tol))),
                    "")
    return rep
