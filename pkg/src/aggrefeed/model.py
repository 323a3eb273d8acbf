"""
Agent-level problem data and network-level oracles.

Jacobian orientation follows the gradient convention: a Jacobian of
``g: R^a -> R^b`` is stored as an ``a x b`` matrix, so that it premultiplies
gradients living in ``R^b``. In particular ``steady_state_jac(u_i)`` is
``m_i x n_i`` and ``phi_jac(x_i)`` is ``n_i x d``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import block_diag

from .graph import NetworkGraph

Array = np.ndarray

FD_RTOL = 1e-5
STEADY_STATE_TOL = 1e-9


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class AgentModel:
    """
    One agent: plant, steady-state map and the locally measurable oracles.

    All callables must be pure. ``cost`` is only used by monitors and
    verification, never by the controller. ``stable_idx`` selects the part of
    the plant state that is exponentially stable and on which the cost
    depends (all of it by default); the remaining state components are free.
    """

    state_dim: int
    input_dim: int
    agg_dim: int
    plant: Callable[[Array, Array], Array]
    steady_state: Callable[[Array], Array]
    steady_state_jac: Callable[[Array], Array]
    grad1: Callable[[Array, Array], Array]
    grad2: Callable[[Array, Array], Array]
    cost: Callable[[Array, Array], float]
    phi: Callable[[Array], Array]
    phi_jac: Callable[[Array], Array]
    stable_idx: tuple[int, ...] | None = None

    @property
    def tracked(self) -> tuple[int, ...]:
        if self.stable_idx is None:
            return tuple(range(self.state_dim))
        return self.stable_idx


@dataclass
class NetworkModel:
    agents: Sequence[AgentModel]
    graph: NetworkGraph
    agg_dim: int = field(init=False)
    sample_box: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        if not self.agents:
            raise DimensionError("network needs at least one agent")
        dims = {a.agg_dim for a in self.agents}
        if len(dims) != 1:
            raise DimensionError(f"agents disagree on the aggregation dimension: {sorted(dims)}")
        if self.graph.n_agents != len(self.agents):
            raise DimensionError(f"graph has {self.graph.n_agents} nodes but there are {len(self.agents)} agents")
        self.agg_dim = dims.pop()
        self.x_slices = _slices([a.state_dim for a in self.agents])
        self.u_slices = _slices([a.input_dim for a in self.agents])
        d = self.agg_dim
        self.s_slices = [slice(i * d, (i + 1) * d) for i in range(len(self.agents))]
        self.n = sum(a.state_dim for a in self.agents)
        self.m = sum(a.input_dim for a in self.agents)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    def check_x(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise DimensionError(f"expected stacked state of shape ({self.n},), got {x.shape}")
        return x

    def check_u(self, u) -> Array:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.m,):
            raise DimensionError(f"expected stacked input of shape ({self.m},), got {u.shape}")
        return u

    def check_s(self, s) -> Array:
        s = np.asarray(s, dtype=float)
        if s.shape != (self.n_agents * self.agg_dim,):
            raise DimensionError(f"expected stacked aggregate of shape ({self.n_agents * self.agg_dim},), got {s.shape}")
        return s

    # stacked maps, each assembled agent by agent

    def phi(self, x: Array) -> Array:
        return np.concatenate([a.phi(x[sl]) for a, sl in zip(self.agents, self.x_slices)])

    def steady_state(self, u: Array) -> Array:
        return np.concatenate([a.steady_state(u[sl]) for a, sl in zip(self.agents, self.u_slices)])

    def plant(self, x: Array, u: Array) -> Array:
        return np.concatenate(
            [a.plant(x[xs], u[us]) for a, xs, us in zip(self.agents, self.x_slices, self.u_slices)]
        )

    def grad1_stack(self, x: Array, s: Array) -> Array:
        """``G_1(x, s)``: each agent's first-argument gradient at its own aggregate estimate."""
        return np.concatenate(
            [a.grad1(x[xs], s[ss]) for a, xs, ss in zip(self.agents, self.x_slices, self.s_slices)]
        )

    def grad2_stack(self, x: Array, s: Array) -> Array:
        return np.concatenate(
            [a.grad2(x[xs], s[ss]) for a, xs, ss in zip(self.agents, self.x_slices, self.s_slices)]
        )

    def lift(self, s: Array) -> Array:
        """Copy a single aggregate value to every agent: ``1 s``."""
        return np.tile(s, self.n_agents)

    def tracking_error(self, x: Array, u: Array) -> Array:
        """``x - h(u)`` restricted to each agent's exponentially stable state block."""
        hu = self.steady_state(u)
        return np.concatenate(
            [(x[sl] - hu[sl])[list(a.tracked)] for a, sl in zip(self.agents, self.x_slices)]
        )


def _slices(sizes: Sequence[int]) -> list[slice]:
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    return [slice(int(a), int(b)) for a, b in zip(offsets[:-1], offsets[1:])]


def sigma(model: NetworkModel, x) -> Array:
    """Aggregate ``(1/N) sum_i phi_i(x_i)``."""
    x = model.check_x(x)
    return model.phi(x).reshape(model.n_agents, model.agg_dim).mean(axis=0)


def total_cost(model: NetworkModel, x) -> float:
    x = model.check_x(x)
    s = sigma(model, x)
    return float(sum(a.cost(x[sl], s) for a, sl in zip(model.agents, model.x_slices)))


def grad_total(model: NetworkModel, x) -> Array:
    """Gradient of ``x -> sum_i f_i(x_i, sigma(x))``, chain rule through the aggregate."""
    x = model.check_x(x)
    s = sigma(model, x)
    g2_sum = sum(a.grad2(x[sl], s) for a, sl in zip(model.agents, model.x_slices))
    n_agents = model.n_agents
    return np.concatenate(
        [a.grad1(x[sl], s) + a.phi_jac(x[sl]) @ g2_sum / n_agents for a, sl in zip(model.agents, model.x_slices)]
    )


def reduced_cost(model: NetworkModel, u) -> float:
    """``F(h(u), sigma(h(u)))``."""
    u = model.check_u(u)
    return total_cost(model, model.steady_state(u))


def grad_reduced(model: NetworkModel, u) -> Array:
    u = model.check_u(u)
    g = grad_total(model, model.steady_state(u))
    return np.concatenate(
        [a.steady_state_jac(u[us]) @ g[xs] for a, us, xs in zip(model.agents, model.u_slices, model.x_slices)]
    )


def steady_state_jacobian(model: NetworkModel, u) -> Array:
    """Block-diagonal ``m x n`` matrix of the per-agent steady-state Jacobians."""
    u = model.check_u(u)
    return block_diag(*[a.steady_state_jac(u[sl]) for a, sl in zip(model.agents, model.u_slices)])


# finite-difference verification ---------------------------------------------

def fd_step(point) -> float:
    return 1e-6 * (1.0 + float(np.linalg.norm(point)))


def fd_gradient(fun: Callable[[Array], float], point: Array) -> Array:
    point = np.asarray(point, dtype=float)
    h = fd_step(point)
    out = np.empty(point.size)
    for k in range(point.size):
        e = np.zeros(point.size)
        e[k] = h
        out[k] = (fun(point + e) - fun(point - e)) / (2 * h)
    return out


def fd_jacobian(fun: Callable[[Array], Array], point: Array) -> Array:
    """Central-difference Jacobian in the gradient orientation (``len(point) x len(fun(point))``)."""
    point = np.asarray(point, dtype=float)
    h = fd_step(point)
    rows = []
    for k in range(point.size):
        e = np.zeros(point.size)
        e[k] = h
        rows.append((np.atleast_1d(fun(point + e)) - np.atleast_1d(fun(point - e))) / (2 * h))
    return np.array(rows)


def relative_error(analytic, reference) -> float:
    analytic = np.asarray(analytic, dtype=float)
    reference = np.asarray(reference, dtype=float)
    return float(np.linalg.norm(analytic - reference) / max(1.0, np.linalg.norm(reference)))


@dataclass
class FDReport:
    max_errors: dict[str, float]
    tolerances: dict[str, float]

    @property
    def failures(self) -> list[str]:
        return [k for k, v in self.max_errors.items() if not v <= self.tolerances[k]]

    @property
    def passed(self) -> bool:
        return not self.failures

    def lines(self) -> list[str]:
        return [
            f"{k:<18} max err {v:.2e}  (tol {self.tolerances[k]:.0e})  {'ok' if k not in self.failures else 'FAIL'}"
            for k, v in self.max_errors.items()
        ]


def finite_diff_check(model: NetworkModel, samples: int = 10, seed: int = 0, tol: float = FD_RTOL) -> FDReport:
    """
    Compare every analytic derivative of ``model`` with central differences.

    Points are drawn uniformly from ``model.sample_box`` in every coordinate.
    Errors are relative, ``|a - fd| / max(1, |fd|)``, except the steady-state
    residual ``|p_i(h_i(u), u)|`` which is absolute.
    """
    rng = np.random.default_rng(seed)
    lo, hi = model.sample_box
    d = model.agg_dim
    err = {k: 0.0 for k in ("grad1", "grad2", "phi_jac", "steady_state_jac", "steady_state", "grad_total", "grad_reduced")}

    for _ in range(samples):
        for a in model.agents:
            x = rng.uniform(lo, hi, a.state_dim)
            s = rng.uniform(lo, hi, d)
            u = rng.uniform(lo, hi, a.input_dim)
            err["grad1"] = max(err["grad1"], relative_error(a.grad1(x, s), fd_gradient(lambda v: a.cost(v, s), x)))
            err["grad2"] = max(err["grad2"], relative_error(a.grad2(x, s), fd_gradient(lambda v: a.cost(x, v), s)))
            err["phi_jac"] = max(err["phi_jac"], relative_error(a.phi_jac(x), fd_jacobian(a.phi, x)))
            err["steady_state_jac"] = max(
                err["steady_state_jac"], relative_error(a.steady_state_jac(u), fd_jacobian(a.steady_state, u))
            )
            err["steady_state"] = max(err["steady_state"], float(np.linalg.norm(a.plant(a.steady_state(u), u))))
        x = rng.uniform(lo, hi, model.n)
        u = rng.uniform(lo, hi, model.m)
        err["grad_total"] = max(
            err["grad_total"], relative_error(grad_total(model, x), fd_gradient(lambda v: total_cost(model, v), x))
        )
        err["grad_reduced"] = max(
            err["grad_reduced"], relative_error(grad_reduced(model, u), fd_gradient(lambda v: reduced_cost(model, v), u))
        )

    tolerances = {k: tol for k in err}
    tolerances["steady_state"] = STEADY_STATE_TOL
    return FDReport(err, tolerances)
