"""
Offline analysis of closed-loop logs.

The compensator states are split into their network average and their
disagreement part, ``(eta, eta_avg) = T w`` and ``(zeta, zeta_avg) = T z`` with
``T = [R, 1/N]^T``. The disagreement coordinates are measured relative to
their quasi-steady value, ``xi = psi - psi_bar(x)``, and certified with a
quadratic Lyapunov function ``xi' P xi`` built from the restricted Laplacian.
These objects are global and never used by the distributed controller.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .controller import NetworkState
from .graph import ConsensusBasis, GraphError, NetworkGraph, build_consensus_basis, disagreement_matrix
from .model import NetworkModel, grad_reduced, reduced_cost, sigma

HURWITZ_TOL = 1e-10
MONITOR_COLUMNS = ("reduced_cost", "lyapunov_value", "disagreement_error", "tracking_error")


@dataclass
class TransformedState:
    eta: np.ndarray
    eta_avg: np.ndarray
    zeta: np.ndarray
    zeta_avg: np.ndarray
    psi_bar: np.ndarray

    @property
    def psi(self) -> np.ndarray:
        return np.concatenate([self.eta, self.zeta])

    @property
    def xi(self) -> np.ndarray:
        return self.psi - self.psi_bar


def psi_bar(model: NetworkModel, x, basis: ConsensusBasis) -> np.ndarray:
    """Quasi-steady disagreement coordinates ``-blkdiag(R', R') col(phi(x), G_2(x, 1 sigma(x)))``."""
    x = model.check_x(x)
    rt = basis.r_matrix.T
    g2 = model.grad2_stack(x, model.lift(sigma(model, x)))
    return -np.concatenate([rt @ model.phi(x), rt @ g2])


def transform(model: NetworkModel, state: NetworkState, basis: ConsensusBasis) -> TransformedState:
    state.validate(model)
    if basis.r_matrix.shape[0] != len(state.w):
        raise ValueError("consensus basis does not match the network size")
    T = basis.transform
    k = basis.r_matrix.shape[1]
    tw, tz = T @ state.w, T @ state.z
    return TransformedState(tw[:k], tw[k:], tz[:k], tz[k:], psi_bar(model, state.x, basis))


def inverse_transform(ts: TransformedState, basis: ConsensusBasis) -> tuple[np.ndarray, np.ndarray]:
    """Recover ``(w, z)``; ``T^{-1} = [R, 1]``."""
    r, ones = basis.r_matrix, basis.ones
    return r @ ts.eta + ones @ ts.eta_avg, r @ ts.zeta + ones @ ts.zeta_avg


@dataclass
class LyapunovCertificate:
    basis: ConsensusBasis
    q1: float
    q2: float
    P1: np.ndarray
    P2: np.ndarray
    restricted: np.ndarray  # R' L R

    @property
    def P(self) -> np.ndarray:
        k = self.P1.shape[0]
        out = np.zeros((2 * k, 2 * k))
        out[:k, :k] = self.P1
        out[k:, k:] = self.P2
        return out

    def value(self, xi) -> float:
        k = self.P1.shape[0]
        xi = np.asarray(xi, dtype=float)
        return float(xi[:k] @ self.P1 @ xi[:k] + xi[k:] @ self.P2 @ xi[k:])

    def residuals(self) -> tuple[float, float]:
        """Max-abs residuals of ``-P_k A - A' P_k + q_k I`` for ``A = R' L R``."""
        a = self.restricted
        eye = np.eye(a.shape[0])
        return tuple(
            float(np.max(np.abs(-P @ a - a.T @ P + q * eye))) for P, q in ((self.P1, self.q1), (self.P2, self.q2))
        )

    def eig_bounds(self) -> tuple[float, float]:
        ev = np.concatenate([np.linalg.eigvalsh(self.P1), np.linalg.eigvalsh(self.P2)])
        return float(ev.min()), float(ev.max())


def lyapunov_certificate(graph: NetworkGraph, block_dim: int = 1, q1: float = 1.0, q2: float = 1.0) -> LyapunovCertificate:
    """
    Solve ``-P_k R'LR - (R'LR)' P_k = -q_k I`` for ``k = 1, 2``.

    Raises
    ------
    GraphError
        If the graph is not balanced and strongly connected, or ``-R'LR`` is
        not numerically Hurwitz.
    """
    if not (q1 > 0 and q2 > 0):
        raise ValueError("q1 and q2 must be positive")
    graph.validate()
    basis = build_consensus_basis(graph.n_agents, block_dim)
    a = disagreement_matrix(graph, block_dim, basis)
    margin = float(np.min(np.linalg.eigvals(a).real))
    if margin <= HURWITZ_TOL:
        raise GraphError(f"-R'LR is not Hurwitz (min real eigenvalue of R'LR = {margin:.3e})")
    eye = np.eye(a.shape[0])
    P1, P2 = (solve_continuous_lyapunov(a.T, q * eye) for q in (q1, q2))
    P1, P2 = (0.5 * (P + P.T) for P in (P1, P2))
    for P in (P1, P2):
        if np.linalg.eigvalsh(P).min() <= 0:
            raise GraphError("Lyapunov solution is not positive definite")
    return LyapunovCertificate(basis, q1, q2, P1, P2, a)


def stationarity_residual(model: NetworkModel, u) -> float:
    return float(np.linalg.norm(grad_reduced(model, u)))


@dataclass
class MonitorSeries:
    times: np.ndarray
    reduced_cost: np.ndarray
    lyapunov_value: np.ndarray
    disagreement_error: np.ndarray
    tracking_error: np.ndarray
    stationarity: np.ndarray
    avg_drift: np.ndarray  # |eta_avg| + |zeta_avg|

    def columns(self) -> dict[str, np.ndarray]:
        """Columns appended to the trajectory CSV."""
        return {name: getattr(self, name) for name in MONITOR_COLUMNS}

    def composite(self) -> np.ndarray:
        return self.lyapunov_value + self.reduced_cost


def monitor(model: NetworkModel, log, cert: LyapunovCertificate) -> MonitorSeries:
    """Evaluate the cost monitor ``F_{sigma,h}(u)``, the compensator certificate
    ``xi' P xi`` and the error norms on every logged sample."""
    k = len(log.times)
    cols = {name: np.empty(k) for name in (*MONITOR_COLUMNS, "stationarity", "avg_drift")}
    for i in range(k):
        st = log.state_at(i)
        ts = transform(model, st, cert.basis)
        xi = ts.xi
        cols["reduced_cost"][i] = reduced_cost(model, st.u)
        cols["lyapunov_value"][i] = cert.value(xi)
        cols["disagreement_error"][i] = np.linalg.norm(xi)
        cols["tracking_error"][i] = np.linalg.norm(model.tracking_error(st.x, st.u))
        cols["stationarity"][i] = stationarity_residual(model, st.u)
        cols["avg_drift"][i] = np.linalg.norm(ts.eta_avg) + np.linalg.norm(ts.zeta_avg)
    return MonitorSeries(np.asarray(log.times), **cols)


def max_increase(series, times, after: float = 0.0) -> float:
    """Largest sample-to-sample increase of ``series`` past time ``after`` (0 if nonincreasing)."""
    series = np.asarray(series)
    mask = np.asarray(times)[1:] > after
    diffs = np.diff(series)[mask]
    return float(max(0.0, diffs.max())) if diffs.size else 0.0
