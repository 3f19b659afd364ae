"""Component Lagrangians, their convex duals, and the weighted combinations.

A component Lagrangian L(x, v) is Tonelli: C^2, strictly convex and
superlinear in v.  On a horizon t the coupling propagator turns the list
(L^1 .. L^m) into time-dependent weighted Lagrangians

    WL^i(s, x, v) = sum_j weight(s)[i, j] * L^j(x, v),

whose convex dual in v is an inf-convolution of the component Hamiltonians

    WH^i(s, x, p) = inf { sum_j w_j H^j(x, q_j / w_j) : sum_j q_j = p }.

At the optimum all component gradients H^j_p(x, q_j / w_j) coincide with
a single velocity v*, so the whole transform reduces to one Newton solve
p = sum_j w_j L^j_v(x, v*) followed by pure algebra for the value and the
optimal splits q_j = w_j L^j_v(x, v*).

All jet callables are vectorized: x, v of shape (..., dim) produce values
of shape (...), gradients (..., dim) and Hessians (..., dim, dim).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .coupling import PropagatorCoefficients
from .errors import ConvergenceError, DomainError, InvalidInputError, PreconditionError

# default box on which potential-dependent growth certificates are quoted
_CERT_BOX_RADIUS = 10.0

_ARMIJO_SLOPE = 1.0e-4
_MIN_BACKTRACK = 1.0e-14


@dataclass(frozen=True)
class TonelliLagrangian:
    """One component Lagrangian with derivative jets and growth certificates.

    theta0/theta1 are the superlinear sandwich bounds
    theta1(|v|) >= L(x, v) >= theta0(|v|) - c0 (valid for |x| within the
    certificate box for unbounded potentials), and c1_growth / c2_hess are
    the per-component growth and convexity constants feeding the short-time
    horizon; the joint constants of a whole system come from
    `system_constants`.
    """

    dim: int
    value: Callable
    grad_x: Callable
    grad_v: Callable
    hess_v: Callable
    theta0: Callable
    theta1: Callable
    c0: float
    c1_growth: float = 1.0
    c2_hess: float = 1.0
    hess_vx: Optional[Callable] = None  # mixed d(grad_v)/dx jet; None means zero
    label: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidInputError(f"state dimension must be positive, got {self.dim}")


def _as_mass_matrix(mass, dim: int) -> np.ndarray:
    m = np.asarray(mass, dtype=float)
    if m.ndim == 0:
        if m <= 0:
            raise InvalidInputError("scalar mass must be positive")
        return np.eye(dim) * float(m)
    if m.shape != (dim, dim):
        raise InvalidInputError(f"mass matrix shape {m.shape} does not match dim {dim}")
    if np.max(np.abs(m - m.T)) > 1.0e-12 * (1 + np.max(np.abs(m))):
        raise InvalidInputError("mass matrix must be symmetric")
    if np.min(np.linalg.eigvalsh(m)) <= 0:
        raise InvalidInputError("mass matrix must be positive definite")
    return m


def _potential_callables(kind: str, dim: int, params: dict):
    """(V, V', sup V, inf V) on the certificate box for a potential family."""
    radius = params.get("box_radius", _CERT_BOX_RADIUS)
    if kind == "zero":
        return (lambda x: np.zeros(np.shape(x)[:-1]),
                lambda x: np.zeros(np.shape(x)),
                0.0, 0.0)
    if kind == "harmonic":
        omega2 = float(params["omega2"])

        def v_val(x):
            return 0.5 * omega2 * np.sum(np.square(x), axis=-1)

        def v_grad(x):
            return omega2 * np.asarray(x, dtype=float)

        extreme = 0.5 * omega2 * radius**2
        return v_val, v_grad, max(0.0, extreme), min(0.0, extreme)
    if kind == "cosine":
        amp = float(params["amplitude"])
        wavenumber = np.asarray(params["wavenumber"], dtype=float).reshape(dim)

        def v_val(x):
            return amp * np.cos(np.tensordot(np.asarray(x, dtype=float), wavenumber, axes=([-1], [0])))

        def v_grad(x):
            phase = np.tensordot(np.asarray(x, dtype=float), wavenumber, axes=([-1], [0]))
            return -amp * np.sin(phase)[..., None] * wavenumber

        return v_val, v_grad, abs(amp), -abs(amp)
    raise InvalidInputError(f"unknown potential family '{kind}'")


def quadratic_kinetic(dim: int, mass=1.0, potential: str = "zero", **pot_params) -> TonelliLagrangian:
    """L(x, v) = 1/2 <v, M v> + V(x) with V in {zero, harmonic, cosine}.

    The closed-form dual H(x, p) = 1/2 <p, M^-1 p> - V(x) of this family is
    used in tests as an oracle; the library itself always goes through the
    Newton transform.
    """
    m_mat = _as_mass_matrix(mass, dim)
    v_val, v_grad, v_sup, v_inf = _potential_callables(potential, dim, pot_params)
    eigs = np.linalg.eigvalsh(m_mat)
    lam_min, lam_max = float(eigs[0]), float(eigs[-1])
    c0 = max(0.0, -v_inf)
    c1 = max(1.0, v_sup, lam_max / lam_min)

    def value(x, v):
        v = np.asarray(v, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", v, m_mat, v) + v_val(x)

    def grad_x(x, v):
        del v
        return v_grad(x)

    def grad_v(x, v):
        del x
        return np.tensordot(np.asarray(v, dtype=float), m_mat, axes=([-1], [1]))

    def hess_v(x, v):
        shape = np.shape(v)[:-1]
        return np.broadcast_to(m_mat, shape + (dim, dim)).copy()

    return TonelliLagrangian(
        dim=dim,
        value=value,
        grad_x=grad_x,
        grad_v=grad_v,
        hess_v=hess_v,
        theta0=lambda nu: 0.5 * lam_min * np.square(nu),
        theta1=lambda nu: 0.5 * lam_max * np.square(nu) + v_sup,
        c0=c0,
        c1_growth=c1,
        c2_hess=1.0,
        label=f"quadratic/{potential}",
        params={"mass": m_mat, "potential": potential, **pot_params},
    )


def quartic_kinetic(dim: int, eps: float) -> TonelliLagrangian:
    """L(v) = 1/2 |v|^2 + eps |v|^4; exercises the Newton dual (no closed form)."""
    if eps < 0:
        raise InvalidInputError("quartic coefficient must be nonnegative")

    def value(x, v):
        del x
        sq = np.sum(np.square(v), axis=-1)
        return 0.5 * sq + eps * sq**2

    def grad_x(x, v):
        del v
        return np.zeros(np.shape(x))

    def grad_v(x, v):
        del x
        v = np.asarray(v, dtype=float)
        sq = np.sum(np.square(v), axis=-1)
        return (1.0 + 4.0 * eps * sq)[..., None] * v

    def hess_v(x, v):
        del x
        v = np.asarray(v, dtype=float)
        sq = np.sum(np.square(v), axis=-1)
        eye = np.eye(dim)
        return (1.0 + 4.0 * eps * sq)[..., None, None] * eye \
            + 8.0 * eps * v[..., :, None] * v[..., None, :]

    return TonelliLagrangian(
        dim=dim,
        value=value,
        grad_x=grad_x,
        grad_v=grad_v,
        hess_v=hess_v,
        theta0=lambda nu: 0.5 * np.square(nu) + eps * np.square(nu) ** 2,
        theta1=lambda nu: 0.5 * np.square(nu) + eps * np.square(nu) ** 2,
        c0=0.0,
        c1_growth=1.0,
        c2_hess=1.0,
        label="quartic",
        params={"eps": eps},
    )


def reversed_lagrangian(lag: TonelliLagrangian) -> TonelliLagrangian:
    """Velocity reversal Lrev(x, v) = L(x, -v); certificates are unchanged."""
    return TonelliLagrangian(
        dim=lag.dim,
        value=lambda x, v: lag.value(x, -np.asarray(v, dtype=float)),
        grad_x=lambda x, v: lag.grad_x(x, -np.asarray(v, dtype=float)),
        grad_v=lambda x, v: -lag.grad_v(x, -np.asarray(v, dtype=float)),
        hess_v=lambda x, v: lag.hess_v(x, -np.asarray(v, dtype=float)),
        theta0=lag.theta0,
        theta1=lag.theta1,
        c0=lag.c0,
        c1_growth=lag.c1_growth,
        c2_hess=lag.c2_hess,
        hess_vx=None if lag.hess_vx is None
        else (lambda x, v: -lag.hess_vx(x, -np.asarray(v, dtype=float))),
        label=f"reversed({lag.label})",
        params=dict(lag.params),
    )


def system_constants(lagrangians: Sequence[TonelliLagrangian],
                     v_radius: float = 10.0, samples: int = 512) -> dict:
    """Joint growth/convexity constants of a Lagrangian list.

    c1: smallest C with max_i theta1_i(nu) <= C (1 + min_i theta0_i(nu)),
    sampled on [0, v_radius].  c2: smallest C with
    sum_j D2L^j(x, v) <= C * D2L^i(x, v) for every i, computed from mass
    eigenvalue ratios for quadratic members and sampled over a velocity box
    otherwise (no global constant exists for mixed quartic lists).
    """
    # large-nu probes capture the asymptotic ratio of the envelopes
    nus = np.concatenate([np.linspace(0.0, v_radius, samples), [1.0e3, 1.0e6]])
    theta1_max = np.max([lag.theta1(nus) for lag in lagrangians], axis=0)
    theta0_min = np.min([lag.theta0(nus) for lag in lagrangians], axis=0)
    c1 = max(1.0, float(np.max(theta1_max / (1.0 + theta0_min))))
    c0 = max(lag.c0 for lag in lagrangians)

    dim = lagrangians[0].dim
    rng = np.random.default_rng(0)
    v_samples = rng.uniform(-v_radius, v_radius, size=(max(8, samples // 16), dim))
    v_samples[0] = 0.0
    x0 = np.zeros(dim)
    hessians = np.array([lag.hess_v(np.broadcast_to(x0, v_samples.shape), v_samples)
                         for lag in lagrangians])  # (m, k, dim, dim)
    total = np.sum(hessians, axis=0)
    c2 = 1.0
    for i in range(len(lagrangians)):
        for k in range(v_samples.shape[0]):
            ratio = np.max(np.abs(np.linalg.eigvals(
                np.linalg.solve(hessians[i, k], total[k]))))
            c2 = max(c2, float(ratio))
    return {"c0": c0, "c1_growth": c1, "c2_hess": c2}


def _damped_newton(target_p: np.ndarray, grad: Callable, hess: Callable,
                   merit: Callable, v0: np.ndarray, tol: float, max_iter: int):
    """Minimize merit(v) - p.v by damped Newton with Armijo backtracking.

    Strict convexity makes the Newton direction a descent direction, so the
    damped iteration converges globally; returns (v*, iterations).
    """
    v = np.array(v0, dtype=float)
    f_cur = merit(v) - target_p @ v
    for iteration in range(max_iter):
        residual = grad(v) - target_p
        if np.max(np.abs(residual)) <= tol:
            return v, iteration
        try:
            delta = np.linalg.solve(hess(v), -residual)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("Newton Hessian solve failed", last_iterate=v) from exc
        slope = float(residual @ delta)
        step = 1.0
        while True:
            v_new = v + step * delta
            f_new = merit(v_new) - target_p @ v_new
            if f_new <= f_cur + _ARMIJO_SLOPE * step * slope + 1.0e-15 * (1 + abs(f_cur)):
                break
            step *= 0.5
            if step < _MIN_BACKTRACK:
                raise ConvergenceError(
                    "Armijo backtracking stalled in Legendre Newton",
                    last_iterate=v,
                    diagnostics={"residual": float(np.max(np.abs(residual)))},
                )
        v, f_cur = v_new, f_new
    residual = grad(v) - target_p
    if np.max(np.abs(residual)) <= tol:
        return v, max_iter
    raise ConvergenceError(
        f"Legendre Newton did not reach tolerance {tol} in {max_iter} iterations",
        last_iterate=v,
        diagnostics={"residual": float(np.max(np.abs(residual)))},
    )


def legendre_transform(lag: TonelliLagrangian, x, p, tol: float = 1.0e-10,
                       max_iter: int = 100, v0=None):
    """H(x, p) = sup_v { p.v - L(x, v) } and its maximizer.

    The maximizer solves p = L_v(x, v*); damped Newton from v = 0 (or a
    caller-supplied warm start, which cannot change the unique answer).
    """
    x = np.asarray(x, dtype=float).reshape(lag.dim)
    p = np.asarray(p, dtype=float).reshape(lag.dim)
    start = np.zeros(lag.dim) if v0 is None else np.asarray(v0, dtype=float).reshape(lag.dim)
    v_star, _ = _damped_newton(
        p,
        grad=lambda v: lag.grad_v(x, v),
        hess=lambda v: lag.hess_v(x, v),
        merit=lambda v: lag.value(x, v),
        v0=start,
        tol=tol,
        max_iter=max_iter,
    )
    return float(p @ v_star - lag.value(x, v_star)), v_star


@dataclass(frozen=True)
class HamiltonianDual:
    """Newton-backed convex dual of one component Lagrangian.

    H(x,p) + L(x,v*) = p.v* at the maximizer v*, H_p(x,p) = v*, and
    H_x(x,p) = -L_x(x,v*).
    """

    lagrangian: TonelliLagrangian
    tol: float = 1.0e-10
    max_iter: int = 100

    def value(self, x, p, v0=None) -> float:
        h, _ = legendre_transform(self.lagrangian, x, p, self.tol, self.max_iter, v0)
        return h

    def maximizer(self, x, p, v0=None) -> np.ndarray:
        _, v_star = legendre_transform(self.lagrangian, x, p, self.tol, self.max_iter, v0)
        return v_star

    def value_and_grads(self, x, p, v0=None):
        """(H, H_x, H_p) from a single Newton solve."""
        h, v_star = legendre_transform(self.lagrangian, x, p, self.tol, self.max_iter, v0)
        return h, -self.lagrangian.grad_x(np.asarray(x, dtype=float), v_star), v_star


@dataclass(frozen=True)
class WeightedLagrangian:
    """Time-dependent Lagrangian sum_j weight(s)[i, j] L^j(x, v) on [0, t]."""

    index: int
    lagrangians: tuple
    propagator: PropagatorCoefficients

    def __post_init__(self):
        if len(self.lagrangians) != self.propagator.m:
            raise InvalidInputError(
                f"{len(self.lagrangians)} Lagrangians vs coupling size {self.propagator.m}")
        if not 0 <= self.index < self.propagator.m:
            raise InvalidInputError(f"component index {self.index} out of range")

    @property
    def t(self) -> float:
        return self.propagator.t

    @property
    def dim(self) -> int:
        return self.lagrangians[0].dim

    def weights(self, s: float) -> np.ndarray:
        if s < -1.0e-12 or s > self.t * (1 + 1.0e-12) + 1.0e-12:
            raise DomainError(f"s = {s} outside the horizon [0, {self.t}]")
        return self.propagator.weight(float(np.clip(s, 0.0, self.t)))[self.index]

    def value(self, s: float, x, v) -> float:
        w = self.weights(s)
        return float(sum(w[j] * lag.value(np.asarray(x, float), np.asarray(v, float))
                         for j, lag in enumerate(self.lagrangians)))

    def jet(self, s: float, x, v):
        """(value, grad_x, grad_v, hess_v) of the weighted Lagrangian at (s, x, v)."""
        w = self.weights(s)
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        val = 0.0
        gx = np.zeros_like(x)
        gv = np.zeros_like(v)
        hv = np.zeros(v.shape + (v.shape[-1],))
        for j, lag in enumerate(self.lagrangians):
            val = val + w[j] * lag.value(x, v)
            gx = gx + w[j] * lag.grad_x(x, v)
            gv = gv + w[j] * lag.grad_v(x, v)
            hv = hv + w[j] * lag.hess_v(x, v)
        return val, gx, gv, hv


def weighted_value_jet(weighted: WeightedLagrangian, s: float, x, v):
    """Jet of the weighted Lagrangian; thin functional wrapper."""
    return weighted.jet(s, x, v)


def inf_convolution_hamiltonian(index: int, prop: PropagatorCoefficients,
                                lagrangians: Sequence[TonelliLagrangian],
                                s: float, x, p,
                                tol: float = 1.0e-10, max_iter: int = 100,
                                v0=None):
    """Dual of the weighted Lagrangian as an inf-convolution, with its splits.

    Returns (value, splits) where splits[j] = w_j L^j_v(x, v*) satisfy
    sum_j splits[j] = p and the common-gradient property
    H^j_p(x, splits[j] / w_j) = v* for every active component.  Weights that
    vanish exactly drop out of the convolution (the term w H(q/w) collapses
    to the indicator at q = 0 as w -> 0+), contributing a zero split;
    negative weights violate the positivity precondition.
    """
    if len(lagrangians) != prop.m:
        raise InvalidInputError(
            f"{len(lagrangians)} Lagrangians vs coupling size {prop.m}")
    w = prop.weight(float(s))[index]
    if np.any(w < 0):
        raise PreconditionError(
            f"weight row {w} has negative entries at s={s}; inf-convolution undefined")
    active = [j for j in range(len(w)) if w[j] != 0.0]
    if not active:
        raise PreconditionError("all convolution weights vanish")
    x = np.asarray(x, dtype=float).reshape(lagrangians[0].dim)
    p = np.asarray(p, dtype=float).reshape(lagrangians[0].dim)

    def grad(v):
        return sum(w[j] * lagrangians[j].grad_v(x, v) for j in active)

    def hess(v):
        return sum(w[j] * lagrangians[j].hess_v(x, v) for j in active)

    def merit(v):
        return sum(w[j] * lagrangians[j].value(x, v) for j in active)

    start = np.zeros(lagrangians[0].dim) if v0 is None else np.asarray(v0, float)
    v_star, _ = _damped_newton(p, grad, hess, merit, start, tol, max_iter)
    value = float(p @ v_star - merit(v_star))
    splits = np.zeros((len(w), lagrangians[0].dim))
    for j in active:
        splits[j] = w[j] * lagrangians[j].grad_v(x, v_star)
    return value, splits
