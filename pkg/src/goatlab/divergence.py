"""Worst-case distribution shift on finite ground sets.

For a data distribution ``s`` over ``n`` points and the family of distributions
whose per-point mass is capped at ``C`` (``C * n >= 1``), this module computes

    sup_Z d1(Z, s),    d1(p, q) = 2 * sup_J |p(J) - q(J)| = sum_i |p_i - q_i|

exactly, checks it against a vertex-enumeration oracle, and runs the randomized
check that the uniform distribution minimizes the worst case.

The exact supremum: for any subset ``J`` of size ``k`` a capped ``Z`` can put at
most ``min(1, C k)`` on ``J``, and ``s(J)`` is smallest when ``J`` holds the ``k``
least likely points, so

    sup_Z d1(Z, s) = 2 * max_k [ min(1, C k) - (sum of the k smallest s_i) ].

When ``1/C`` is an integer and ``s`` is uniform this equals ``2 (1 - 1/(C n))``;
for other caps the uniform worst case is smaller than that expression (for
example ``n = 2, C = 0.6`` gives 0.2, not 1/3).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError, TheoremCheckError

SUM_TOL = 1e-12
CAP_TOL = 1e-12
EXACT_MAX_N = 12


@dataclass(frozen=True)
class DiscreteDist:
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise ShapeError("a distribution is a non-empty 1-D probability vector")
        if not np.isfinite(p).all() or (p < 0).any():
            raise ConfigError("probabilities must be finite and non-negative")
        if abs(p.sum() - 1.0) > SUM_TOL * max(1, p.size):
            raise ConfigError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.p.size

    @classmethod
    def uniform(cls, n: int) -> "DiscreteDist":
        if n < 1:
            raise ConfigError("n must be >= 1")
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def from_weights(cls, w) -> "DiscreteDist":
        w = np.asarray(w, dtype=np.float64)
        total = w.sum()
        if not total > 0:
            raise ConfigError("weights must have a positive sum")
        return cls(w / total)


@dataclass(frozen=True)
class CapFamily:
    """All distributions on ``n`` points with every mass at most ``C``."""

    n: int
    C: float

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if not math.isfinite(self.C) or self.C * self.n < 1 - CAP_TOL:
            raise ConfigError(f"C={self.C!r} with n={self.n} gives an empty family (need C * n >= 1)")

    def contains(self, z: DiscreteDist, tol: float = 1e-12) -> bool:
        return z.n == self.n and bool((z.p <= self.C + tol).all())


def _as_dist(x) -> DiscreteDist:
    return x if isinstance(x, DiscreteDist) else DiscreteDist(np.asarray(x, dtype=np.float64))


def variation_divergence(p, q) -> float:
    """``d1(p, q) = sum_i |p_i - q_i|``, in ``[0, 2]``."""
    p, q = _as_dist(p), _as_dist(q)
    if p.n != q.n:
        raise ShapeError(f"ground sets differ: {p.n} vs {q.n}")
    return float(min(np.abs(p.p - q.p).sum(), 2.0))


def subset_divergence(p, q) -> float:
    """``2 * max_J |p(J) - q(J)|`` by enumerating all subsets; for checking the L1 form."""
    p, q = _as_dist(p), _as_dist(q)
    if p.n != q.n:
        raise ShapeError(f"ground sets differ: {p.n} vs {q.n}")
    if p.n > EXACT_MAX_N:
        raise ConfigError(f"subset enumeration limited to n <= {EXACT_MAX_N}")
    diff = p.p - q.p
    best = 0.0
    for mask in range(1 << p.n):
        idx = [i for i in range(p.n) if mask >> i & 1]
        best = max(best, abs(float(diff[idx].sum())))
    return 2.0 * best


@dataclass
class WorstCase:
    value: float
    k: int  # size of the subset J that carries the capped mass
    subset: list[int]
    maximizer: np.ndarray


def _check_pair(s: DiscreteDist, fam: CapFamily) -> None:
    if s.n != fam.n:
        raise ShapeError(f"distribution has {s.n} points, family has {fam.n}")


def worst_case(s, fam: CapFamily) -> WorstCase:
    """Exact ``sup_Z d1(Z, s)`` over the capped family plus one maximizing ``Z``.

    Ties among equal masses of ``s`` go to the lowest index.
    """
    s = _as_dist(s)
    _check_pair(s, fam)
    order = np.argsort(s.p, kind="stable")
    prefix = np.concatenate([[0.0], np.cumsum(s.p[order])])
    ks = np.arange(fam.n + 1)
    gains = np.minimum(1.0, fam.C * ks) - prefix
    k = int(np.argmax(gains))
    value = max(2.0 * float(gains[k]), 0.0)

    z = np.zeros(fam.n)
    inside = order[:k]
    mass_in = min(1.0, fam.C * k)
    remaining = mass_in
    for i in inside:
        z[i] = min(fam.C, remaining)
        remaining -= z[i]
    # whatever mass J cannot hold goes to the most likely points outside J
    remaining = 1.0 - mass_in
    for i in order[k:][::-1]:
        if remaining <= 0:
            break
        z[i] = min(fam.C, remaining)
        remaining -= z[i]
    return WorstCase(value, k, sorted(int(i) for i in inside), z)


def worst_case_d1(s, fam: CapFamily) -> float:
    return worst_case(s, fam).value


def uniform_worst_case(fam: CapFamily) -> float:
    return worst_case_d1(DiscreteDist.uniform(fam.n), fam)


def uniform_closed_form(fam: CapFamily) -> float:
    """``2 (1 - 1/(C n))``; equals the uniform worst case only when ``1/C`` is an integer."""
    return 2.0 * (1.0 - 1.0 / (fam.C * fam.n))


def capped_vertices(fam: CapFamily):
    """Yield the vertices of ``{z : 0 <= z_i <= C, sum z = 1}``.

    A vertex has ``m = floor(1/C)`` coordinates at ``C``, at most one coordinate
    holding the residual ``1 - m C`` and zeros elsewhere.
    """
    n, C = fam.n, fam.C
    m = min(int(math.floor(1.0 / C + CAP_TOL)), n)
    residual = 1.0 - m * C
    if residual <= CAP_TOL:
        residual = 0.0
    for full in itertools.combinations(range(n), m):
        if residual == 0.0:
            z = np.zeros(n)
            z[list(full)] = C
            yield z
            continue
        rest = [i for i in range(n) if i not in full]
        for j in rest:
            z = np.zeros(n)
            z[list(full)] = C
            z[j] = residual
            yield z


def brute_force_worst_case(s, fam: CapFamily, mode: str = "vertex") -> float:
    """Maximize ``d1(Z, s)`` over every vertex of the capped simplex.

    ``d1(., s)`` is convex, so its maximum over the polytope sits at a vertex.
    ``mode="subset"`` scores each vertex with subset enumeration instead of the
    L1 form (slower, but shares no code with :func:`worst_case`).
    """
    s = _as_dist(s)
    _check_pair(s, fam)
    if fam.n > EXACT_MAX_N:
        raise ConfigError(f"exact enumeration supports n <= {EXACT_MAX_N}, got {fam.n}")
    if mode not in ("vertex", "subset"):
        raise ConfigError(f"unknown mode {mode!r}")
    score = variation_divergence if mode == "vertex" else subset_divergence
    best = 0.0
    for z in capped_vertices(fam):
        best = max(best, score(DiscreteDist.from_weights(z), s))
    return best


@dataclass
class MinimaxReport:
    n: int
    C: float
    trials: int
    passes: int
    uniform_value: float
    min_margin: float
    mean_margin: float
    failures: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures and self.passes == self.trials

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "C": self.C,
            "trials": self.trials,
            "passes": self.passes,
            "uniform_worst_case": self.uniform_value,
            "min_margin": self.min_margin,
            "mean_margin": self.mean_margin,
            "failures": self.failures,
        }


def sample_nonuniform(n: int, rng: np.random.Generator, min_gap: float = 1e-6) -> DiscreteDist:
    """Dirichlet(1, ..., 1) draw with full support and L-inf distance > ``min_gap`` from uniform."""
    if n < 2:
        raise ConfigError("a non-uniform distribution needs n >= 2")
    while True:
        p = rng.dirichlet(np.ones(n))
        if (p > 0).all() and np.max(np.abs(p - 1.0 / n)) > min_gap:
            return DiscreteDist(p / p.sum())


def verify_uniform_minimax(n: int, C: float, trials: int = 1000, seed: int = 0, strict: bool = True) -> MinimaxReport:
    """Check ``sup_Z d1(Z, s) > sup_Z d1(Z, uniform)`` for random non-uniform ``s``.

    With ``strict`` any violation raises :class:`TheoremCheckError` carrying the
    counterexamples; otherwise they are listed in the report.
    """
    fam = CapFamily(n, C)
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    u = uniform_worst_case(fam)
    margins = np.empty(trials)
    failures = []
    for k in range(trials):
        s = sample_nonuniform(n, rng)
        margins[k] = worst_case_d1(s, fam) - u
        if not margins[k] > 0:
            failures.append({"trial": k, "s": s.p.tolist(), "worst_case": u + margins[k], "uniform": u})
    report = MinimaxReport(n, C, trials, trials - len(failures), u, float(margins.min()), float(margins.mean()), failures)
    if strict and failures:
        raise TheoremCheckError(f"{len(failures)} of {trials} trials did not beat the uniform worst case", failures)
    return report
