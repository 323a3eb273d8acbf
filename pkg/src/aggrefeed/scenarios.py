"""
Scenarios: multi-robot surveillance over a nonconvex terrain and a strongly
convex quadratic benchmark with a closed-form minimizer.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
from scipy.stats import ortho_group

from .graph import NetworkGraph, generate_er_balanced
from .model import AgentModel, NetworkModel

UNICYCLE_EPS = 1e-6
PLANTS = ("single_integrator", "unicycle")


def seed_streams(seed: int, names=("graph", "params", "initial", "disturbance")) -> dict[str, np.random.Generator]:
    """Independent generators for each random ingredient of a run."""
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(child) for name, child in zip(names, children)}


def _int_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**31 - 1))


@dataclass(frozen=True)
class Terrain:
    """Altitude ``-a1 cos(rho l1) sin(rho l2) - sum_g a_g exp(-|l - mu_g|^2 / s_g)``."""

    a1: float = 10.0
    rho: float = 0.02
    amps: np.ndarray = field(default_factory=lambda: np.zeros(0))
    centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    widths: np.ndarray = field(default_factory=lambda: np.ones(0))

    def __post_init__(self):
        object.__setattr__(self, "amps", np.asarray(self.amps, dtype=float).reshape(-1))
        object.__setattr__(self, "centers", np.asarray(self.centers, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "widths", np.asarray(self.widths, dtype=float).reshape(-1))
        if not len(self.amps) == len(self.centers) == len(self.widths):
            raise ValueError("crevasse amplitudes, centers and widths must have equal length")
        if np.any(self.widths <= 0):
            raise ValueError("crevasse widths must be positive")


def altitude(terrain: Terrain, loc) -> float:
    l1, l2 = float(loc[0]), float(loc[1])
    diff = np.array([l1, l2]) - terrain.centers
    bumps = terrain.amps * np.exp(-np.einsum("ij,ij->i", diff, diff) / terrain.widths)
    return -terrain.a1 * np.cos(terrain.rho * l1) * np.sin(terrain.rho * l2) - float(bumps.sum())


def altitude_grad(terrain: Terrain, loc) -> np.ndarray:
    l1, l2 = float(loc[0]), float(loc[1])
    a1, rho = terrain.a1, terrain.rho
    grad = np.array([
        a1 * rho * np.sin(rho * l1) * np.sin(rho * l2),
        -a1 * rho * np.cos(rho * l1) * np.cos(rho * l2),
    ])
    diff = np.array([l1, l2]) - terrain.centers
    weights = terrain.amps * np.exp(-np.einsum("ij,ij->i", diff, diff) / terrain.widths) * 2.0 / terrain.widths
    return grad + weights @ diff


def altitude_grid(terrain: Terrain, xs, ys) -> np.ndarray:
    """Altitude on the grid ``xs x ys`` (rows follow ``ys``), for plotting."""
    l1, l2 = np.meshgrid(xs, ys)
    out = -terrain.a1 * np.cos(terrain.rho * l1) * np.sin(terrain.rho * l2)
    for a, mu, s in zip(terrain.amps, terrain.centers, terrain.widths):
        out -= a * np.exp(-((l1 - mu[0]) ** 2 + (l2 - mu[1]) ** 2) / s)
    return out


# unicycle -------------------------------------------------------------------

def unicycle_closed_loop(k: float, position, heading: float, target, distance_scaled: bool = False,
                         eps: float = UNICYCLE_EPS):
    """
    Go-to-goal unicycle under the low-level law steering it to ``target``.

    ``v = k |x - u| cos(e)`` and ``omega = c (cos(e) sin(e) + sin(e))`` with the
    bearing error ``e = atan2(u2 - x2, u1 - x1) - heading``. The turn gain ``c``
    is ``k`` by default, which makes ``de/dt = -k sin(e)`` and the target
    almost globally exponentially stable; ``distance_scaled=True`` uses
    ``k / max(|x - u|, eps)`` instead. Inside the ``eps``-ball around the
    target both commands are zero.

    Returns
    -------
    (ndarray, float)
        Position derivative and heading derivative.
    """
    position = np.asarray(position, dtype=float)
    delta = np.asarray(target, dtype=float) - position
    dist = float(np.hypot(delta[0], delta[1]))
    if dist < eps:
        return np.zeros(2), 0.0
    err = np.arctan2(delta[1], delta[0]) - heading
    c, s = np.cos(err), np.sin(err)
    v = k * dist * c
    turn = k / max(dist, eps) if distance_scaled else k
    omega = turn * (c * s + s)
    return np.array([np.cos(heading) * v, np.sin(heading) * v]), float(omega)


# surveillance -----------------------------------------------------------------

@dataclass
class SurveillanceConfig:
    n_agents: int = 6
    edge_prob: float = 0.4
    gamma1: float = 1.0
    gamma2: float = 0.3
    gamma_alt: float = 1.0
    n_crevasses: int = 5
    a1: float = 10.0
    rho: float = 0.02
    plant: str = "single_integrator"
    distance_scaled_turn: bool = False
    arena: float = 100.0
    crevasse_amp_max: float = 5.0
    crevasse_width_range: tuple[float, float] = (5.0, 10.0)
    unicycle_gain_range: tuple[float, float] = (1.0, 2.0)
    # explicit values override the seeded draws
    intruders: Any = None
    betas: Any = None
    crevasse_amps: Any = None
    crevasse_widths: Any = None
    crevasse_centers: Any = None
    unicycle_gains: Any = None

    def validate(self):
        if self.n_agents < 1:
            raise ValueError("n_agents must be positive")
        if self.plant not in PLANTS:
            raise ValueError(f"unknown plant {self.plant!r}; choose one of {PLANTS}")
        if self.gamma1 < 0 or self.gamma2 < 0 or self.gamma_alt < 0:
            raise ValueError("cost weights must be nonnegative")
        if self.n_crevasses < 0:
            raise ValueError("n_crevasses must be nonnegative")
        lo, hi = self.crevasse_width_range
        if not 0 < lo <= hi:
            raise ValueError("crevasse widths must be positive")


@dataclass
class Scenario:
    name: str
    model: NetworkModel
    x0: np.ndarray
    u0: np.ndarray
    params: dict = field(default_factory=dict)
    solution: np.ndarray | None = None
    terrain: Terrain | None = None


def single_integrator_plant(dim: int):
    """``dx = -x + u`` with ``h(u) = u``: globally exponentially stable, unit rate."""
    eye = np.eye(dim)

    def plant(x, u):
        return u - x

    def steady_state(u):
        return np.array(u, dtype=float)

    def steady_state_jac(u):
        return eye

    return plant, steady_state, steady_state_jac, dim


def unicycle_plant(k: float, distance_scaled: bool = False):
    """Unicycle state ``(x1, x2, heading)``; only the position block is steered to ``u``."""
    jac = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])

    def plant(x, u):
        pos_dot, heading_dot = unicycle_closed_loop(k, x[:2], x[2], u, distance_scaled)
        return np.array([pos_dot[0], pos_dot[1], heading_dot])

    def steady_state(u):
        return np.array([u[0], u[1], 0.0])

    def steady_state_jac(u):
        return jac

    return plant, steady_state, steady_state_jac, 3


def plant_variant(cfg: SurveillanceConfig, kind: str, k: float = 1.0):
    """Per-agent ``(plant, h, grad h, state_dim)`` for a planar robot."""
    if kind == "single_integrator":
        return single_integrator_plant(2)
    if kind == "unicycle":
        return unicycle_plant(k, cfg.distance_scaled_turn)
    raise ValueError(f"unknown plant {kind!r}; choose one of {PLANTS}")


def _surveillance_agent(cfg: SurveillanceConfig, terrain: Terrain, intruder, beta, k) -> AgentModel:
    plant, h, h_jac, n_i = plant_variant(cfg, cfg.plant, k)
    g1, g2, g_alt = cfg.gamma1, cfg.gamma2, cfg.gamma_alt
    intruder = np.asarray(intruder, dtype=float)
    pad = n_i - 2
    phi_jac = np.vstack([beta * np.eye(2), np.zeros((pad, 2))])

    def cost(x, s):
        p = x[:2]
        return float(g1 * np.sum((p - intruder) ** 2) - g_alt * altitude(terrain, p) + g2 * np.sum((p - s) ** 2))

    def grad1(x, s):
        p = x[:2]
        g = 2 * g1 * (p - intruder) + 2 * g2 * (p - s)
        if g_alt:
            g = g - g_alt * altitude_grad(terrain, p)
        return np.concatenate([g, np.zeros(pad)]) if pad else g

    def grad2(x, s):
        return -2 * g2 * (x[:2] - s)

    def phi(x):
        return beta * x[:2]

    return AgentModel(
        state_dim=n_i, input_dim=2, agg_dim=2, plant=plant, steady_state=h, steady_state_jac=h_jac,
        grad1=grad1, grad2=grad2, cost=cost, phi=phi, phi_jac=lambda x: phi_jac,
        stable_idx=(0, 1) if pad else None,
    )


def surveillance_scenario(cfg: SurveillanceConfig | None = None, seed: int = 0,
                          graph: NetworkGraph | None = None) -> Scenario:
    """
    Surveillance team: robot ``i`` trades off staying near intruder ``s_i``,
    staying high on the terrain and staying near the weighted center of mass
    ``(1/N) sum_j beta_j x_j``.

    All unspecified parameters are drawn from ``seed``: intruders and
    crevasse centers in ``[0, arena]^2``, ``beta_i`` in ``(0, 1)``, crevasse
    amplitudes in ``[0, 5]`` and widths in ``(5, 10)``.
    """
    cfg = cfg or SurveillanceConfig()
    cfg.validate()
    rng = seed_streams(seed)
    n, box = cfg.n_agents, cfg.arena
    p = rng["params"]
    # fixed draw order so overriding one field does not shift the others
    drawn = {
        "intruders": p.uniform(0.0, box, (n, 2)),
        "betas": p.uniform(0.0, 1.0, n),
        "crevasse_amps": p.uniform(0.0, cfg.crevasse_amp_max, cfg.n_crevasses),
        "crevasse_widths": p.uniform(*cfg.crevasse_width_range, cfg.n_crevasses),
        "crevasse_centers": p.uniform(0.0, box, (cfg.n_crevasses, 2)),
        "unicycle_gains": p.uniform(*cfg.unicycle_gain_range, n),
    }
    params = {}
    for key, value in drawn.items():
        given = getattr(cfg, key)
        params[key] = value if given is None else np.asarray(given, dtype=float)
    if np.any(params["betas"] <= 0):
        raise ValueError("weights beta_i must be positive")
    if np.any(params["unicycle_gains"] <= 0):
        raise ValueError("unicycle gains must be positive")

    terrain = Terrain(cfg.a1, cfg.rho, params["crevasse_amps"], params["crevasse_centers"], params["crevasse_widths"])
    if graph is None:
        graph = NetworkGraph(np.zeros((1, 1))) if n == 1 else generate_er_balanced(n, cfg.edge_prob, _int_seed(rng["graph"]))
    agents = [
        _surveillance_agent(cfg, terrain, params["intruders"][i], params["betas"][i], params["unicycle_gains"][i])
        for i in range(n)
    ]
    model = NetworkModel(agents, graph, sample_box=(0.0, box))

    init = rng["initial"]
    pos0 = init.uniform(0.0, box, (n, 2))
    u0 = init.uniform(0.0, box, (n, 2)).reshape(-1)
    if cfg.plant == "unicycle":
        heading0 = init.uniform(-np.pi, np.pi, n)
        x0 = np.column_stack([pos0, heading0]).reshape(-1)
    else:
        x0 = pos0.reshape(-1)
    return Scenario("surveillance", model, x0, u0, params, terrain=terrain)


# quadratic benchmark ------------------------------------------------------------

@dataclass
class QuadraticConfig:
    n_agents: int = 6
    dim: int = 2
    gamma: float = 0.5
    edge_prob: float = 0.5
    eig_range: tuple[float, float] = (1.0, 3.0)
    beta_range: tuple[float, float] = (0.2, 1.0)
    offset_scale: float = 5.0
    init_scale: float = 10.0


def quadratic_hessian(Qs, betas, gamma: float) -> np.ndarray:
    """Hessian of ``x -> sum_i 0.5 x_i'Q_i x_i + c_i'x_i + gamma |x_i - sigma(x)|^2``,
    written directly as ``blkdiag(Q) + 2 gamma sum_i (E_i - B)'(E_i - B)``."""
    n_agents, d = len(Qs), Qs[0].shape[0]
    mean_op = np.kron(np.asarray(betas, dtype=float)[None, :], np.eye(d)) / n_agents  # sigma(x) = B x
    hess = np.zeros((n_agents * d, n_agents * d))
    for i, Q in enumerate(Qs):
        sel = np.zeros((d, n_agents * d))
        sel[:, i * d:(i + 1) * d] = np.eye(d)
        diff = sel - mean_op
        hess[i * d:(i + 1) * d, i * d:(i + 1) * d] += Q
        hess += 2.0 * gamma * diff.T @ diff
    return hess


def quadratic_agent(Q, c, beta: float, gamma: float) -> AgentModel:
    Q = np.asarray(Q, dtype=float)
    c = np.asarray(c, dtype=float)
    d = len(c)
    plant, h, h_jac, _ = single_integrator_plant(d)
    phi_jac = beta * np.eye(d)

    def cost(x, s):
        return float(0.5 * x @ Q @ x + c @ x + gamma * np.sum((x - s) ** 2))

    return AgentModel(
        state_dim=d, input_dim=d, agg_dim=d, plant=plant, steady_state=h, steady_state_jac=h_jac,
        grad1=lambda x, s: Q @ x + c + 2 * gamma * (x - s),
        grad2=lambda x, s: -2 * gamma * (x - s),
        cost=cost, phi=lambda x: beta * x, phi_jac=lambda x: phi_jac,
    )


def quadratic_benchmark(cfg: QuadraticConfig | None = None, seed: int = 0,
                        graph: NetworkGraph | None = None, Qs=None, cs=None, betas=None) -> Scenario:
    """
    Random strongly convex quadratic instance on single-integrator plants.

    The returned scenario carries the exact minimizer, obtained by solving
    ``H x = -c`` with the Hessian assembled in :func:`quadratic_hessian`.
    """
    cfg = cfg or QuadraticConfig()
    n, d = cfg.n_agents, cfg.dim
    if n < 1 or d < 1:
        raise ValueError("need n_agents >= 1 and dim >= 1")
    rng = seed_streams(seed)
    p = rng["params"]
    if Qs is None:
        lo, hi = cfg.eig_range
        Qs = []
        for _ in range(n):
            basis = ortho_group.rvs(d, random_state=p) if d > 1 else np.eye(1)
            Qs.append(basis @ np.diag(p.uniform(lo, hi, d)) @ basis.T)
    if cs is None:
        cs = p.normal(0.0, cfg.offset_scale, (n, d))
    if betas is None:
        betas = p.uniform(*cfg.beta_range, n)
    Qs = [np.asarray(Q, dtype=float) for Q in Qs]
    cs = np.asarray(cs, dtype=float).reshape(n, d)
    betas = np.asarray(betas, dtype=float).reshape(n)

    hess = quadratic_hessian(Qs, betas, cfg.gamma)
    if np.linalg.cond(hess) > 1e12:
        raise np.linalg.LinAlgError("assembled stationarity system is singular; draw another seed")
    solution = np.linalg.solve(hess, -cs.reshape(-1))

    if graph is None:
        graph = NetworkGraph(np.zeros((1, 1))) if n == 1 else generate_er_balanced(n, cfg.edge_prob, _int_seed(rng["graph"]))
    agents = [quadratic_agent(Qs[i], cs[i], betas[i], cfg.gamma) for i in range(n)]
    model = NetworkModel(agents, graph, sample_box=(-cfg.init_scale, cfg.init_scale))

    init = rng["initial"]
    x0 = init.uniform(-cfg.init_scale, cfg.init_scale, n * d)
    u0 = init.uniform(-cfg.init_scale, cfg.init_scale, n * d)
    params = {"Qs": np.array(Qs), "cs": cs, "betas": betas, "hessian": hess}
    return Scenario("quadratic", model, x0, u0, params, solution=solution)


def config_dict(cfg) -> dict:
    """Plain-data view of a scenario config (tuples become lists)."""
    out = {}
    for k, v in asdict(cfg).items():
        if isinstance(v, np.ndarray):
            v = v.tolist()
        elif isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out
