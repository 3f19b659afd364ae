"""Coupling-matrix algebra for weakly coupled Hamilton-Jacobi systems.

The m x m coupling matrix A enters the running-cost ODE

    du/ds = L(xi, xi') - A u,

so everything downstream is driven by the three exponential families

    decay(tau)  = exp(-A tau)      (homogeneous propagator of the u-system)
    growth(tau) = exp(+A tau)      (its inverse)
    weight(s)   = exp(A (s - t))   (running-cost weights on a horizon t)

A is *cooperative* when all off-diagonal entries are <= 0 (Kamke-Mueller
condition: -A is then essentially nonnegative / Metzler) and *irreducible*
when the directed graph with an edge i -> j for every nonzero off-diagonal
entry a[i][j] is strongly connected.  Cooperative + irreducible implies
every entry of decay(tau) is strictly positive for tau > 0, which is what
keeps the weighted Lagrangians Tonelli for all horizons.  For arbitrary A
the same positivity margins hold only on a short horizon, computed here by
`short_horizon`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import expm

from .errors import DomainError, InvalidMatrixError, PreconditionError, RangeError

# exp(x) overflows float64 near x ~ 709; stay clear of it
_OVERFLOW_EXPONENT = 700.0

# tau samples per margin evaluation in the short-horizon search
_MARGIN_SAMPLES = 1024

# doubling search gives up (margin never decays) beyond this horizon
_HORIZON_CAP = 1.0e3


@dataclass(frozen=True)
class CouplingMatrix:
    """Validated m x m real coupling matrix with certification flags."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise InvalidMatrixError(f"coupling matrix must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidMatrixError("coupling matrix has non-finite entries")
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @cached_property
    def report(self) -> "CertificationReport":
        return certify(self)

    @property
    def cooperative(self) -> bool:
        return self.report.cooperative

    @property
    def irreducible(self) -> bool:
        return self.report.irreducible


def as_coupling(a) -> CouplingMatrix:
    """Coerce an array-like (or pass a CouplingMatrix through)."""
    if isinstance(a, CouplingMatrix):
        return a
    return CouplingMatrix(np.asarray(a, dtype=float))


@dataclass(frozen=True)
class CertificationReport:
    """Outcome of the (C1)/(C2) certification of a coupling matrix."""

    cooperative: bool
    irreducible: bool
    violations: tuple  # (i, j) pairs with a[i][j] > 0 off the diagonal, 0-based
    components: tuple  # strongly connected components, a partition of 0..m-1

    def to_dict(self) -> dict:
        return {
            "cooperative": self.cooperative,
            "irreducible": self.irreducible,
            "violations": [list(p) for p in self.violations],
            "strongly_connected_components": [list(c) for c in self.components],
        }


def _strongly_connected_components(adj: np.ndarray) -> list[list[int]]:
    """Kosaraju SCC on a boolean adjacency matrix (m <= 16, dense is fine)."""
    m = adj.shape[0]

    def dfs_order(graph):
        seen = [False] * m
        order = []
        for start in range(m):
            if seen[start]:
                continue
            stack = [(start, 0)]
            seen[start] = True
            while stack:
                node, nxt = stack.pop()
                advanced = False
                for j in range(nxt, m):
                    if graph[node, j] and not seen[j]:
                        stack.append((node, j + 1))
                        stack.append((j, 0))
                        seen[j] = True
                        advanced = True
                        break
                if not advanced:
                    order.append(node)
        return order

    order = dfs_order(adj)
    transpose = adj.T
    assigned = [-1] * m
    components: list[list[int]] = []
    for start in reversed(order):
        if assigned[start] >= 0:
            continue
        comp = len(components)
        components.append([start])
        assigned[start] = comp
        stack = [start]
        while stack:
            node = stack.pop()
            for j in range(m):
                if transpose[node, j] and assigned[j] < 0:
                    assigned[j] = comp
                    components[comp].append(j)
                    stack.append(j)
    return [sorted(c) for c in components]


def certify(a) -> CertificationReport:
    """Certify conditions (C1) cooperativity and (C2) irreducibility.

    (C1) holds iff every off-diagonal entry is <= 0; violations are listed.
    (C2) is strong connectivity of the off-diagonal sparsity graph
    (edge i -> j iff i != j and a[i][j] != 0), equivalent to the
    permutation-block definition of irreducibility.
    """
    mat = as_coupling(a)
    entries = mat.entries
    m = mat.m
    off = ~np.eye(m, dtype=bool)
    viol = np.argwhere((entries > 0) & off)
    violations = tuple((int(i), int(j)) for i, j in viol)
    adj = (entries != 0) & off
    components = _strongly_connected_components(adj)
    return CertificationReport(
        cooperative=len(violations) == 0,
        irreducible=len(components) == 1,
        violations=violations,
        components=tuple(tuple(c) for c in components),
    )


def matrix_exponential(a, tau: float) -> np.ndarray:
    """exp(A * tau) by scaling-and-squaring with the degree-13 Pade approximant.

    Raises RangeError when ||A||_1 * |tau| is large enough that entries of
    the result could overflow double precision.
    """
    mat = as_coupling(a)
    if not np.isfinite(tau):
        raise DomainError(f"tau must be finite, got {tau}")
    scale = np.linalg.norm(mat.entries, 1) * abs(tau)
    if scale > _OVERFLOW_EXPONENT:
        raise RangeError(f"||A||*|tau| = {scale:.3g} exceeds the overflow guard")
    return expm(mat.entries * tau)


@dataclass(frozen=True)
class PropagatorCoefficients:
    """The exponential families of a coupling matrix on a fixed horizon t.

    decay/growth/weight evaluate exp(-A tau), exp(A tau) and exp(A (s-t));
    weight is materialized as decay(t) @ growth(s) so the inverse identity
    sum_k decay(t)[i,k] growth(t)[k,j] = delta[i,j] is inherited exactly by
    weight(t) = I.  Construction self-checks the inverse identity and the
    derivative residual d/dtau decay = -A decay by central differences.
    """

    matrix: CouplingMatrix
    t: float
    _decay_t: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if not (self.t > 0) or not np.isfinite(self.t):
            raise DomainError(f"propagator horizon must be positive, got {self.t}")
        object.__setattr__(self, "_decay_t", self.decay(self.t))

    @property
    def m(self) -> int:
        return self.matrix.m

    def decay(self, tau: float) -> np.ndarray:
        return matrix_exponential(self.matrix, -tau)

    def growth(self, tau: float) -> np.ndarray:
        return matrix_exponential(self.matrix, tau)

    def weight(self, s: float) -> np.ndarray:
        """Running-cost weight matrix exp(A (s - t)) for s in [0, t]."""
        return self._decay_t @ self.growth(s)

    def weight_table(self, s_values: np.ndarray) -> np.ndarray:
        """weight(s) stacked over a sorted array of sample times, shape (k, m, m).

        Uniformly spaced tables (the quadrature grids) reuse a single
        exp(A * ds) advance matrix, so a length-N table costs N matrix
        products instead of N Pade factorizations.
        """
        s_values = np.asarray(s_values, dtype=float)
        out = np.empty((s_values.size, self.m, self.m))
        if s_values.size == 0:
            return out
        gaps = np.diff(s_values)
        uniform = gaps.size > 0 and np.max(np.abs(gaps - gaps[0])) <= 1.0e-9 * (1 + abs(gaps[0]))
        advance = self.growth(gaps[0]) if uniform else None
        current = self.growth(s_values[0])
        out[0] = self._decay_t @ current
        for idx in range(1, s_values.size):
            step = advance if uniform else self.growth(gaps[idx - 1])
            current = current @ step
            out[idx] = self._decay_t @ current
        return out

    def verify(self, taus=None, diff_step: float = 1.0e-5):
        """Self-check: inverse identity and derivative residual at sampled tau."""
        if taus is None:
            taus = np.linspace(0.0, self.t, 5)
        for tau in taus:
            b = self.decay(tau)
            c = self.growth(tau)
            if np.max(np.abs(b @ c - np.eye(self.m))) > 1.0e-10:
                raise PreconditionError(f"decay*growth deviates from identity at tau={tau}")
            db = (self.decay(tau + diff_step) - self.decay(tau - diff_step)) / (2 * diff_step)
            if np.max(np.abs(db + self.matrix.entries @ b)) > 1.0e-8:
                raise PreconditionError(f"derivative residual above 1e-8 at tau={tau}")
        return True


def propagator(a, t: float) -> PropagatorCoefficients:
    """Propagator coefficients on [0, t], self-checked at construction."""
    prop = PropagatorCoefficients(as_coupling(a), float(t))
    prop.verify()
    return prop


def verify_positivity(a, t_samples) -> bool:
    """True iff every entry of exp(-A t) is positive at each sampled t > 0.

    Requires A certified cooperative and irreducible (then -A is essentially
    nonnegative and irreducible, and positivity is guaranteed); nonpositive
    samples are excluded, matching the strict-inequality statement.
    """
    mat = as_coupling(a)
    report = mat.report
    if not report.cooperative:
        raise PreconditionError(f"matrix is not cooperative, violations at {report.violations}")
    if not report.irreducible:
        raise PreconditionError(
            f"matrix is not irreducible, components {report.components}"
        )
    for t in t_samples:
        if t <= 0:
            continue
        if np.min(matrix_exponential(mat, -t)) <= 0:
            return False
    return True


def _margin(a: np.ndarray, horizon: float, c_const: float) -> float:
    """min over i and tau in [-horizon, 0] of g_ii - C * sum_{j!=i} |g_ij|, g = exp(A tau)."""
    m = a.shape[0]
    step = horizon / (_MARGIN_SAMPLES - 1)
    g = expm(-a * horizon)  # tau = -horizon, then march toward 0
    advance = expm(a * step)
    off = ~np.eye(m, dtype=bool)
    worst = np.inf
    for _ in range(_MARGIN_SAMPLES):
        margins = np.diag(g) - c_const * np.sum(np.abs(g) * off, axis=1)
        worst = min(worst, float(np.min(margins)))
        g = g @ advance
    return worst


def short_horizon(a, c1_growth: float, c2_hess: float, kappa: float,
                  tol: float = 1.0e-6) -> float:
    """Largest horizon on which both weight-positivity margins stay >= kappa.

    The margins are g_ii(tau) - C sum_{j != i} |g_ij(tau)| over tau in
    [-t, 0] with g = exp(A tau), evaluated for C = c1_growth (coercivity of
    the weighted Lagrangian) and C = c2_hess (convexity of its velocity
    Hessian).  Found by doubling then bisection to `tol`, with 1024 uniform
    tau samples per margin evaluation; returns +inf when the margin never
    drops below kappa before the doubling cap.
    """
    mat = as_coupling(a)
    if not (kappa > 0) or kappa >= 1:
        raise DomainError(f"kappa must lie in (0, 1), got {kappa} (margin is 1 at tau=0)")
    if c1_growth < 1 or c2_hess < 1:
        raise DomainError("growth and Hessian constants must be >= 1")

    entries = mat.entries
    c_max = max(c1_growth, c2_hess)

    def ok(horizon: float) -> bool:
        return _margin(entries, horizon, c_max) >= kappa

    lo = 0.0
    hi = 1.0
    while ok(hi):
        lo = hi
        hi *= 2.0
        if hi > _HORIZON_CAP:
            return float("inf")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
