"""
Closed-loop dynamics of the distributed feedback-optimization law.

Each agent runs its plant, a gradient-flow update of its input ``u_i`` and two
consensus compensators: ``w_i`` tracks the network aggregate through
``w_i + phi_i(x_i)`` and ``z_i`` tracks the average of the second-argument
gradients through ``z_i + grad2 f_i``. Agents exchange exactly those two
``d``-vectors with their in-neighbors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .graph import build_laplacian
from .model import AgentModel, DimensionError, NetworkModel, grad_reduced, sigma, total_cost


@dataclass(frozen=True)
class Gains:
    """``alpha1`` sets the controller speed relative to the plant, ``alpha2`` the
    controller speed relative to the compensators (consensus runs at ``alpha1/alpha2``)."""

    alpha1: float
    alpha2: float

    def __post_init__(self):
        if not self.alpha2 > 0:
            raise ValueError(f"alpha2 must be positive, got {self.alpha2}")
        if not self.alpha1 >= 0:
            raise ValueError(f"alpha1 must be nonnegative, got {self.alpha1}")

    @property
    def consensus_rate(self) -> float:
        return self.alpha1 / self.alpha2


@dataclass
class NetworkState:
    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    z: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.x, self.u, self.w, self.z])

    @classmethod
    def from_flat(cls, model: NetworkModel, y) -> "NetworkState":
        y = np.asarray(y, dtype=float)
        n, m, nd = model.n, model.m, model.n_agents * model.agg_dim
        if y.shape != (n + m + 2 * nd,):
            raise DimensionError(f"expected flat state of length {n + m + 2 * nd}, got {y.shape}")
        return cls(y[:n], y[n:n + m], y[n + m:n + m + nd], y[n + m + nd:])

    @classmethod
    def initial(cls, model: NetworkModel, x0, u0) -> "NetworkState":
        """State with the compensators at zero, as the convergence result requires."""
        nd = model.n_agents * model.agg_dim
        return cls(model.check_x(x0).copy(), model.check_u(u0).copy(), np.zeros(nd), np.zeros(nd))

    def validate(self, model: NetworkModel) -> None:
        model.check_x(self.x)
        model.check_u(self.u)
        model.check_s(self.w)
        model.check_s(self.z)

    def agent(self, model: NetworkModel, i: int):
        return (self.x[model.x_slices[i]], self.u[model.u_slices[i]],
                self.w[model.s_slices[i]], self.z[model.s_slices[i]])


def check_initial(state: NetworkState) -> bool:
    """Warn (and return False) when the compensators do not start at zero."""
    if np.any(state.w != 0) or np.any(state.z != 0):
        warnings.warn(
            "compensators w(0), z(0) are not zero: the average-preservation argument "
            "behind convergence does not apply to this run",
            RuntimeWarning,
            stacklevel=2,
        )
        return False
    return True


def agent_message(agent: AgentModel, x_i, w_i, z_i):
    """The two ``d``-vectors agent ``i`` broadcasts: its aggregate estimate and its
    estimate of the average second-argument gradient."""
    s_hat = w_i + agent.phi(x_i)
    return s_hat, z_i + agent.grad2(x_i, s_hat)


def agent_rhs(agent: AgentModel, state_i, neighbor_msgs, gains: Gains, allow_isolated: bool = False):
    """
    Time derivative of one agent's ``(x_i, u_i, w_i, z_i)``.

    Parameters
    ----------
    agent : AgentModel
        Local plant and oracles.
    state_i : tuple
        ``(x_i, u_i, w_i, z_i)``.
    neighbor_msgs : sequence of (a_ij, msg_w_j, msg_z_j)
        Weighted messages from the in-neighbors, as produced by
        :func:`agent_message`.
    gains : Gains

    Returns
    -------
    tuple of ndarray
        ``(dx_i, du_i, dw_i, dz_i)``.
    """
    x_i, u_i, w_i, z_i = (np.asarray(v, dtype=float) for v in state_i)
    d = agent.agg_dim
    if not neighbor_msgs and not allow_isolated:
        raise ValueError("agent has no in-neighbors; the graph cannot be strongly connected")

    s_hat = w_i + agent.phi(x_i)
    g2 = agent.grad2(x_i, s_hat)
    own_z = z_i + g2

    dx = agent.plant(x_i, u_i)
    du = -gains.alpha1 * (agent.steady_state_jac(u_i) @ (agent.grad1(x_i, s_hat) + agent.phi_jac(x_i) @ own_z))

    acc_w = np.zeros(d)
    acc_z = np.zeros(d)
    for a_ij, msg_w, msg_z in neighbor_msgs:
        if np.shape(msg_w) != (d,) or np.shape(msg_z) != (d,):
            raise DimensionError(f"neighbor messages must carry 2 x {d} reals")
        acc_w += a_ij * (s_hat - msg_w)
        acc_z += a_ij * (own_z - msg_z)
    k = gains.consensus_rate
    return dx, du, -k * acc_w, -k * acc_z


def local_rhs(model: NetworkModel, state: NetworkState, gains: Gains, i: int):
    """Derivative of agent ``i`` computed only from its own state and its
    in-neighbors' broadcast messages."""
    agent = model.agents[i]
    msgs = []
    for j in model.graph.neighbors(i):
        x_j, _, w_j, z_j = state.agent(model, j)
        msg_w, msg_z = agent_message(model.agents[j], x_j, w_j, z_j)
        msgs.append((model.graph.adjacency[i, j], msg_w, msg_z))
    return agent_rhs(agent, state.agent(model, i), msgs, gains, allow_isolated=model.n_agents == 1)


def network_rhs_local(model: NetworkModel, state: NetworkState, gains: Gains) -> NetworkState:
    """Closed-loop derivative assembled agent by agent through message passing."""
    parts = [local_rhs(model, state, gains, i) for i in range(model.n_agents)]
    return NetworkState(*(np.concatenate([p[k] for p in parts]) for k in range(4)))


class StackedDynamics:
    """Stacked closed loop with the Laplacian precomputed.

    ``dw = -(alpha1/alpha2) L (w + phi(x))`` and
    ``dz = -(alpha1/alpha2) L (z + G_2(x, w + phi(x)))``.
    """

    def __init__(self, model: NetworkModel, gains: Gains):
        self.model = model
        self.gains = gains
        self.laplacian = build_laplacian(model.graph, model.agg_dim).laplacian_big
        self._n, self._m = model.n, model.m
        self._nd = model.n_agents * model.agg_dim

    def __call__(self, state: NetworkState) -> NetworkState:
        model, g = self.model, self.gains
        x, u, w, z = state.x, state.u, state.w, state.z
        s_hat = w + model.phi(x)
        own_z = z + model.grad2_stack(x, s_hat)
        grad1 = model.grad1_stack(x, s_hat)
        du = np.concatenate([
            a.steady_state_jac(u[us]) @ (grad1[xs] + a.phi_jac(x[xs]) @ own_z[ss])
            for a, xs, us, ss in zip(model.agents, model.x_slices, model.u_slices, model.s_slices)
        ])
        k = g.consensus_rate
        return NetworkState(
            model.plant(x, u),
            -g.alpha1 * du,
            -k * (self.laplacian @ s_hat),
            -k * (self.laplacian @ own_z),
        )

    def flat(self, t: float, y: np.ndarray) -> np.ndarray:
        n, m, nd = self._n, self._m, self._nd
        st = NetworkState(y[:n], y[n:n + m], y[n + m:n + m + nd], y[n + m + nd:])
        return self(st).flat()


def network_rhs(model: NetworkModel, state: NetworkState, gains: Gains) -> NetworkState:
    """Closed-loop derivative in stacked form."""
    state.validate(model)
    return StackedDynamics(model, gains)(state)


def pi_w(model: NetworkModel, x) -> np.ndarray:
    """Steady-state value of ``w``: each agent's ``sigma(x) - phi_i(x_i)``."""
    x = model.check_x(x)
    return model.lift(sigma(model, x)) - model.phi(x)


def pi_z(model: NetworkModel, x) -> np.ndarray:
    """Steady-state value of ``z``: average of the second-argument gradients minus the agent's own."""
    x = model.check_x(x)
    g2 = model.grad2_stack(x, model.lift(sigma(model, x)))
    mean = g2.reshape(model.n_agents, model.agg_dim).mean(axis=0)
    return model.lift(mean) - g2


@dataclass(frozen=True)
class Metrics:
    e_opt: float
    e_wz: float
    cost: float
    stationarity: float

    def as_tuple(self):
        return (self.e_opt, self.e_wz, self.cost, self.stationarity)


def metrics(model: NetworkModel, state: NetworkState) -> Metrics:
    """
    Optimality and compensator errors of a closed-loop state.

    ``e_opt = |col(x - h(u), grad F_{sigma,h}(u))|`` (the state mismatch is taken
    on each agent's exponentially stable block) and
    ``e_wz = |col(w - pi_w(x), z - pi_z(x))|``.
    """
    grad = grad_reduced(model, state.u)
    track = model.tracking_error(state.x, state.u)
    e_opt = float(np.sqrt(track @ track + grad @ grad))
    dw = state.w - pi_w(model, state.x)
    dz = state.z - pi_z(model, state.x)
    e_wz = float(np.sqrt(dw @ dw + dz @ dz))
    return Metrics(e_opt, e_wz, total_cost(model, state.x), float(np.linalg.norm(grad)))
