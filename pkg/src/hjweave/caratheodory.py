"""Running-cost ODEs along fixed curves (Caratheodory solutions).

Curves are piecewise linear on a uniform grid; along such a curve the
linearly coupled running costs solve

    du/ds = L(xi(s), xi'(s)) - A u(s)

exactly via the propagator.  The discrete path freezes the forcing at
segment midpoints, which makes the accumulated terminal value identical
(to rounding) to the midpoint quadrature of the weighted action used by
the variational layer:

    u(t) = decay(t) a + h * sum_k decay(t - s_mid_k) L(mid_k, vel_k).

General nonlinear couplings du_i/ds = G^i(xi_i, xi_i', u) ride their own
curve tuple and are integrated by classical RK4 aligned with the segments,
with one global step-halving pass for the error estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .coupling import as_coupling
from .errors import AccuracyError, InvalidInputError

_DEFAULT_RK4_TOL = 1.0e-8
_MAX_HALVINGS = 8


@dataclass(frozen=True)
class Trajectory:
    """Piecewise-linear curve on [0, t] with N uniform segments."""

    t: float
    nodes: np.ndarray  # (N + 1, dim)

    def __post_init__(self):
        nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))
        if nodes.shape[0] < 2:
            raise InvalidInputError("a trajectory needs at least one segment")
        if not np.all(np.isfinite(nodes)):
            raise InvalidInputError("trajectory nodes must be finite")
        if not (self.t > 0):
            raise InvalidInputError(f"horizon must be positive, got {self.t}")
        nodes = nodes.copy()
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def straight_line(cls, start, end, t: float, n_segments: int) -> "Trajectory":
        start = np.atleast_1d(np.asarray(start, dtype=float))
        end = np.atleast_1d(np.asarray(end, dtype=float))
        lam = np.linspace(0.0, 1.0, n_segments + 1)[:, None]
        return cls(t=t, nodes=(1 - lam) * start + lam * end)

    @property
    def n_segments(self) -> int:
        return self.nodes.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def step(self) -> float:
        return self.t / self.n_segments

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t, self.n_segments + 1)

    @property
    def midtimes(self) -> np.ndarray:
        return (np.arange(self.n_segments) + 0.5) * self.step

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])

    @property
    def velocities(self) -> np.ndarray:
        """Constant velocity of each segment, shape (N, dim)."""
        return np.diff(self.nodes, axis=0) / self.step

    def at(self, s: float) -> np.ndarray:
        """Linear interpolation at time s in [0, t]."""
        s = float(np.clip(s, 0.0, self.t))
        k = min(int(s / self.step), self.n_segments - 1)
        lam = (s - k * self.step) / self.step
        return (1 - lam) * self.nodes[k] + lam * self.nodes[k + 1]


@dataclass(frozen=True)
class CaratheodoryState:
    """Sampled running costs u_i(s_k) along a curve, with its boundary mode."""

    times: np.ndarray      # (N + 1,)
    samples: np.ndarray    # (N + 1, m)
    mode: str              # "initial" or "terminal"
    error_estimate: Optional[float] = None

    @property
    def terminal(self) -> np.ndarray:
        return self.samples[-1]

    @property
    def initial(self) -> np.ndarray:
        return self.samples[0]


@dataclass(frozen=True)
class GeneralCoupledLagrangian:
    """One equation of a nonlinearly coupled running-cost system.

    value(x, v, u) is the full right-hand side; the bound `k_coupling`
    certifies |d value / d u_j| <= K as required for uniqueness of the
    Caratheodory solution.
    """

    dim: int
    value: Callable  # (x, v, u) -> float
    k_coupling: float

    @classmethod
    def linear(cls, lagrangian, coupling_row) -> "GeneralCoupledLagrangian":
        """Adapter for the linearly coupled form L(x, v) - sum_j a_j u_j."""
        row = np.asarray(coupling_row, dtype=float)
        return cls(
            dim=lagrangian.dim,
            value=lambda x, v, u: float(lagrangian.value(x, v) - row @ u),
            k_coupling=float(np.max(np.abs(row))),
        )


def _check_linear_inputs(mat, lagrangians, xi: Trajectory, a: np.ndarray):
    if len(lagrangians) != mat.m:
        raise InvalidInputError(
            f"{len(lagrangians)} Lagrangians vs coupling size {mat.m}")
    if a.shape != (mat.m,):
        raise InvalidInputError(f"boundary data shape {a.shape} vs system size {mat.m}")
    for lag in lagrangians:
        if lag.dim != xi.dim:
            raise InvalidInputError(
                f"Lagrangian dim {lag.dim} vs trajectory dim {xi.dim}")


def _segment_forcing(lagrangians, xi: Trajectory) -> np.ndarray:
    """L^j frozen at segment midpoints, shape (N, m)."""
    mids = xi.midpoints
    vels = xi.velocities
    return np.stack([lag.value(mids, vels) for lag in lagrangians], axis=1)


def integrate_linear(a_matrix, lagrangians, xi: Trajectory, a, mode: str = "initial") -> CaratheodoryState:
    """Propagator-form solution of du/ds = L(xi, xi') - A u along xi.

    Initial mode marches u_{k+1} = decay(h) u_k + h decay(h/2) L_mid_k from
    u(0) = a; terminal mode applies the exact inverse step backward from
    u(t) = a, so a forward pass followed by a backward pass reproduces the
    boundary data to rounding.
    """
    mat = as_coupling(a_matrix)
    a = np.asarray(a, dtype=float).reshape(-1)
    _check_linear_inputs(mat, lagrangians, xi, a)
    if mode not in ("initial", "terminal"):
        raise InvalidInputError(f"unknown boundary mode '{mode}'")

    n = xi.n_segments
    h = xi.step
    forcing = _segment_forcing(lagrangians, xi)  # (N, m)
    decay_h = expm(-mat.entries * h)
    decay_half = expm(-mat.entries * (0.5 * h))
    samples = np.empty((n + 1, mat.m))
    if mode == "initial":
        samples[0] = a
        for k in range(n):
            samples[k + 1] = decay_h @ samples[k] + h * (decay_half @ forcing[k])
    else:
        grow_h = expm(mat.entries * h)
        grow_half = expm(mat.entries * (0.5 * h))
        samples[n] = a
        for k in range(n - 1, -1, -1):
            samples[k] = grow_h @ samples[k + 1] - h * (grow_half @ forcing[k])
    return CaratheodoryState(times=xi.times, samples=samples, mode=mode)


def _rk4_pass(equations, trajectories, a: np.ndarray, substeps: int) -> np.ndarray:
    """RK4 over the shared segment grid with `substeps` stages per segment."""
    n = trajectories[0].n_segments
    h = trajectories[0].step / substeps
    nodes = [traj.nodes for traj in trajectories]
    vels = [traj.velocities for traj in trajectories]

    def rhs(seg: int, local_s: float, u: np.ndarray) -> np.ndarray:
        out = np.empty(len(equations))
        for i, eq in enumerate(equations):
            lam = local_s / trajectories[i].step
            x = (1 - lam) * nodes[i][seg] + lam * nodes[i][seg + 1]
            out[i] = eq.value(x, vels[i][seg], u)
        return out

    u = np.array(a, dtype=float)
    samples = np.empty((n + 1, len(equations)))
    samples[0] = u
    for seg in range(n):
        for sub in range(substeps):
            s0 = sub * h
            k1 = rhs(seg, s0, u)
            k2 = rhs(seg, s0 + 0.5 * h, u + 0.5 * h * k1)
            k3 = rhs(seg, s0 + 0.5 * h, u + 0.5 * h * k2)
            k4 = rhs(seg, s0 + h, u + h * k3)
            u = u + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        samples[seg + 1] = u
    return samples


def integrate_general(equations: Sequence[GeneralCoupledLagrangian],
                      trajectories: Sequence[Trajectory], a,
                      tol: float = _DEFAULT_RK4_TOL) -> CaratheodoryState:
    """RK4 solution of the fully nonlinear running-cost system.

    Each equation rides its own trajectory; all trajectories must share the
    horizon and segment count.  A step-halving pass estimates the error;
    halving continues until the Richardson estimate drops below `tol` or the
    refinement budget is exhausted.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    if len(equations) != a.size:
        raise InvalidInputError(f"{len(equations)} equations vs data size {a.size}")
    if len(trajectories) != len(equations):
        raise InvalidInputError(
            f"{len(trajectories)} trajectories vs {len(equations)} equations")
    base = trajectories[0]
    for traj in trajectories:
        if traj.n_segments != base.n_segments or abs(traj.t - base.t) > 1.0e-12 * base.t:
            raise InvalidInputError("trajectories must share horizon and segment count")

    substeps = 1
    coarse = _rk4_pass(equations, trajectories, a, substeps)
    for _ in range(_MAX_HALVINGS):
        fine = _rk4_pass(equations, trajectories, a, substeps * 2)
        estimate = float(np.max(np.abs(fine[-1] - coarse[-1]))) / 15.0
        if estimate <= tol:
            return CaratheodoryState(times=base.times, samples=fine,
                                     mode="initial", error_estimate=estimate)
        coarse = fine
        substeps *= 2
    raise AccuracyError(
        f"RK4 error estimate {estimate:.3e} above {tol} after {_MAX_HALVINGS} halvings")
