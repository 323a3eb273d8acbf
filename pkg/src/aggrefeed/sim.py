"""
Time integration of the closed loop.

Two integrators are provided: an embedded Dormand-Prince 5(4) pair with PI
step-size control and free dense output (``rk45``), and classical fixed-step
RK4 (``rk4``). Both report the solution on a fixed sampling grid so that logs
from either integrator line up row by row.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .controller import Gains, NetworkState, StackedDynamics, check_initial, metrics
from .model import NetworkModel, grad_reduced, reduced_cost
from .scenarios import seed_streams

log = logging.getLogger(__name__)

INTEGRATORS = ("rk45", "rk4")


class IntegrationError(RuntimeError):
    """Integration stopped early. ``partial`` holds the samples logged so far, if any."""

    def __init__(self, message: str, time: float, partial=None):
        super().__init__(message)
        self.time = time
        self.partial = partial


class DivergenceError(IntegrationError):
    pass


@dataclass(frozen=True)
class DisturbanceSpec:
    """Sample-and-hold disturbance: every ``hold_period`` seconds each plant-state
    component receives a fresh draw from ``U[-amplitude, amplitude]``."""

    amplitude: float = 0.5
    hold_period: float = 0.1

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("disturbance amplitude must be nonnegative")
        if not self.hold_period > 0:
            raise ValueError("hold_period must be positive")


@dataclass(frozen=True)
class SimConfig:
    gains: Gains
    horizon: float = 200.0
    integrator: str = "rk45"
    rel_tol: float = 1e-6
    abs_tol: float = 1e-8
    step_size: float = 1e-3
    sample_period: float = 0.1
    seed: int = 0
    disturbance: DisturbanceSpec | None = None
    blowup: float = 1e8
    max_steps: int = 5_000_000

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}, got {self.integrator!r}")
        if not (0 < self.rel_tol < 1 and 0 < self.abs_tol < 1):
            raise ValueError("tolerances must lie in (0, 1)")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not 0 < self.sample_period <= self.horizon:
            raise ValueError("sample_period must lie in (0, horizon]")

    def sample_times(self) -> np.ndarray:
        k = int(np.floor(self.horizon / self.sample_period + 1e-9))
        times = np.arange(k + 1) * self.sample_period
        if self.horizon - times[-1] > 1e-9 * self.horizon:
            times = np.append(times, self.horizon)
        else:
            times[-1] = self.horizon
        return times


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# fifth- minus fourth-order weights, last entry multiplies the FSAL stage
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# continuous extension: y(t + th) = y + h K^T P [th, th^2, th^3, th^4]
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_SAFETY, _FAC_MIN, _FAC_MAX = 0.9, 0.2, 10.0
_BETA = 0.04
_ALPHA = 0.2 - 0.75 * _BETA


@dataclass
class SolverStats:
    steps: int = 0
    rejected: int = 0
    rhs_evals: int = 0


def _rms(v) -> float:
    return float(np.sqrt(np.mean(v * v))) if v.size else 0.0


def _check_state(y, t, blowup):
    if not np.all(np.isfinite(y)):
        bad = int(np.flatnonzero(~np.isfinite(y))[0])
        raise IntegrationError(f"non-finite state component {bad} at t={t:.6g}", t)
    peak = float(np.max(np.abs(y))) if y.size else 0.0
    if peak > blowup:
        raise DivergenceError(f"state magnitude {peak:.3e} exceeded {blowup:.1e} at t={t:.6g}", t)


def _initial_step(f, t0, y0, f0, rtol, atol) -> float:
    # Hairer, Norsett & Wanner, starting step heuristic for order 5
    scale = atol + rtol * np.abs(y0)
    d0, d1 = _rms(y0 / scale), _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    f1 = f(t0 + h0, y0 + h0 * f0)
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def _dopri_segment(f, t0, t1, y0, out_times, rtol, atol, h, stats, blowup, max_steps, err_old=1e-4):
    """Integrate ``f`` on ``[t0, t1]``, yielding the dense-output value at each of
    ``out_times``. Returns the final state, the step size to continue with and
    the last error estimate."""
    k_out = 0
    while k_out < len(out_times) and out_times[k_out] <= t0:
        yield y0
        k_out += 1
    t, y = t0, y0.copy()
    fy = f(t, y)
    stats.rhs_evals += 1
    if h is None:
        h = _initial_step(f, t, y, fy, rtol, atol)
        stats.rhs_evals += 1
    K = np.empty((7, y.size))
    while t < t1:
        min_step = 16 * np.spacing(max(abs(t), 1.0))
        h = min(h, t1 - t)
        if h < min_step:
            if t1 - t < min_step:
                break
            raise IntegrationError(f"step size underflow (h={h:.3e}) at t={t:.6g}", t)
        rejected_here = False
        while True:
            K[0] = fy
            for s in range(1, 6):
                K[s] = f(t + _C[s] * h, y + h * (_A[s] @ K[:s]))
            y_new = y + h * (_B @ K[:6])
            K[6] = f(t + h, y_new)
            stats.rhs_evals += 6
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = _rms(h * (_E @ K) / scale)
            if err <= 1.0 and np.all(np.isfinite(y_new)):
                break
            stats.rejected += 1
            rejected_here = True
            if not np.isfinite(err):
                h *= _FAC_MIN
            else:
                h *= max(_FAC_MIN, _SAFETY * err ** (-1 / 5))
            if h < min_step:
                raise IntegrationError(f"step size underflow (h={h:.3e}) at t={t:.6g}", t)
        stats.steps += 1
        if stats.steps > max_steps:
            raise IntegrationError(f"exceeded {max_steps} steps at t={t:.6g}", t)
        t_new = t + h if t1 - (t + h) > min_step else t1
        if k_out < len(out_times) and out_times[k_out] <= t_new:
            Q = K.T @ _P
            while k_out < len(out_times) and out_times[k_out] <= t_new:
                theta = (out_times[k_out] - t) / h
                yield y + h * (Q @ (theta ** np.arange(1, 5)))
                k_out += 1
        # PI controller
        err = max(err, 1e-10)
        fac = _SAFETY * err ** (-_ALPHA) * err_old ** _BETA
        fac = min(1.0 if rejected_here else _FAC_MAX, max(_FAC_MIN, fac))
        err_old = err
        t, y, fy = t_new, y_new, K[6].copy()
        _check_state(y, t, blowup)
        h *= fac
    while k_out < len(out_times):
        yield y
        k_out += 1
    return y, h, err_old


def _rk4_step(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + h / 2, y + h / 2 * k1)
    k3 = f(t + h / 2, y + h / 2 * k2)
    k4 = f(t + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _rk4_segment(f, t0, t1, y0, h, stats, blowup):
    n_sub = max(1, int(np.ceil((t1 - t0) / h - 1e-9)))
    dt = (t1 - t0) / n_sub
    y = y0
    for k in range(n_sub):
        t = t0 + k * dt
        y = _rk4_step(f, t, y, dt)
        stats.steps += 1
        stats.rhs_evals += 4
        _check_state(y, t + dt, blowup)
    return y


def solve(f: Callable, y0, sample_times, *, integrator="rk45", rel_tol=1e-6, abs_tol=1e-8,
          step_size=1e-3, breakpoints=(), segment_rhs: Callable | None = None,
          blowup=np.inf, max_steps=5_000_000):
    """
    Integrate ``dy/dt = f(t, y)`` from ``sample_times[0]`` and return the
    solution at every sample time.

    ``breakpoints`` split the horizon into segments on which the right-hand
    side is smooth; if ``segment_rhs`` is given, ``segment_rhs(k)`` supplies the
    right-hand side on segment ``k``. Fixed-step RK4 additionally restarts at
    every sample time so that samples are exact step points.

    Returns ``(samples, stats)``; on failure the raised
    :class:`IntegrationError` carries the samples computed so far in ``partial``.
    """
    y0 = np.array(y0, dtype=float)
    sample_times = np.asarray(sample_times, dtype=float)
    t_start, t_end = sample_times[0], sample_times[-1]
    bps = sorted({float(b) for b in breakpoints if t_start < b < t_end})
    edges = [t_start, *bps, t_end]
    stats = SolverStats()
    samples = np.empty((len(sample_times), y0.size))
    samples[0] = y0
    filled = 1
    y = y0
    h = None
    err_old = 1e-4
    try:
        _check_state(y0, t_start, blowup)
        for k, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
            fk = segment_rhs(k) if segment_rhs is not None else f
            inside = sample_times[(sample_times > a) & (sample_times <= b)]
            if integrator == "rk45":
                seg = _dopri_segment(fk, a, b, y, inside, rel_tol, abs_tol, h, stats, blowup, max_steps, err_old)
                while True:
                    try:
                        samples[filled] = next(seg)
                    except StopIteration as done:
                        y, h, err_old = done.value
                        break
                    filled += 1
            else:
                prev = a
                for t_s in inside:
                    y = _rk4_segment(fk, prev, t_s, y, step_size, stats, blowup)
                    samples[filled] = y
                    filled += 1
                    prev = t_s
                if b > prev:
                    y = _rk4_segment(fk, prev, b, y, step_size, stats, blowup)
    except IntegrationError as exc:
        exc.partial = (sample_times[:filled], samples[:filled])
        raise
    return samples, stats


# closed-loop simulation -------------------------------------------------------

METRIC_NAMES = ("e_opt", "e_wz", "cost", "stationarity")


@dataclass
class TrajectoryLog:
    """Sampled closed-loop trajectory with per-sample metrics."""

    times: np.ndarray
    states: np.ndarray
    metrics: np.ndarray
    conservation: np.ndarray
    dims: tuple[int, int, int]
    extra: dict[str, np.ndarray] = field(default_factory=dict)
    status: str = "ok"
    message: str = ""
    stats: SolverStats | None = None

    def _cols(self, k):
        n, m, nd = self.dims
        bounds = [0, n, n + m, n + m + nd, n + m + 2 * nd]
        return self.states[:, bounds[k]:bounds[k + 1]]

    @property
    def x(self):
        return self._cols(0)

    @property
    def u(self):
        return self._cols(1)

    @property
    def w(self):
        return self._cols(2)

    @property
    def z(self):
        return self._cols(3)

    def metric(self, name: str) -> np.ndarray:
        return self.metrics[:, METRIC_NAMES.index(name)]

    @property
    def e_opt(self):
        return self.metric("e_opt")

    @property
    def e_wz(self):
        return self.metric("e_wz")

    def state_at(self, k: int) -> NetworkState:
        return NetworkState(self.x[k].copy(), self.u[k].copy(), self.w[k].copy(), self.z[k].copy())

    def header(self) -> list[str]:
        n, m, nd = self.dims
        cols = ["t"]
        for name, size in (("x", n), ("u", m), ("w", nd), ("z", nd)):
            cols += [f"{name}_{i}" for i in range(size)]
        cols += list(METRIC_NAMES) + ["cons_w", "cons_z"] + list(self.extra)
        return cols

    def table(self) -> np.ndarray:
        parts = [self.times[:, None], self.states, self.metrics, self.conservation]
        parts += [v[:, None] for v in self.extra.values()]
        return np.hstack(parts)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.header())
            for row in self.table():
                writer.writerow([f"{v:.17g}" for v in row])

    @classmethod
    def from_csv(cls, path) -> "TrajectoryLog":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader)]
            data = np.array([[float(v) for v in row] for row in reader if row])
        data = data.reshape(-1, len(header))
        col = {name: i for i, name in enumerate(header)}
        counts = [sum(1 for h in header if h.startswith(p + "_") and h[len(p) + 1:].isdigit()) for p in "xuwz"]
        n, m, nd = counts[0], counts[1], counts[2]
        states = data[:, 1:1 + n + m + 2 * nd]
        mets = data[:, [col[k] for k in METRIC_NAMES]]
        cons = data[:, [col["cons_w"], col["cons_z"]]]
        known = set(METRIC_NAMES) | {"t", "cons_w", "cons_z"}
        extra = {h: data[:, i] for i, h in enumerate(header) if i > n + m + 2 * nd and h not in known}
        return cls(data[:, 0], states, mets, cons, (n, m, nd), extra)


def conservation(model: NetworkModel, w: np.ndarray, z: np.ndarray) -> tuple[float, float]:
    """Norms of the network sums ``1^T w`` and ``1^T z``."""
    d = model.agg_dim
    return (float(np.linalg.norm(w.reshape(-1, d).sum(axis=0))),
            float(np.linalg.norm(z.reshape(-1, d).sum(axis=0))))


class _Disturbance:
    def __init__(self, spec: DisturbanceSpec, n: int, seed: int):
        self.spec = spec
        self.n = n
        self.rng = seed_streams(seed)["disturbance"]
        self.values: list[np.ndarray] = []

    def value(self, k: int) -> np.ndarray:
        # draws are generated in segment order, so the stream is reproducible
        while len(self.values) <= k:
            a = self.spec.amplitude
            self.values.append(self.rng.uniform(-a, a, self.n))
        return self.values[k]


def build_log(model: NetworkModel, times, samples, stats=None, status="ok", message="") -> TrajectoryLog:
    n, m, nd = model.n, model.m, model.n_agents * model.agg_dim
    mets = np.empty((len(times), 4))
    cons = np.empty((len(times), 2))
    for k, y in enumerate(samples):
        st = NetworkState.from_flat(model, y)
        mets[k] = metrics(model, st).as_tuple()
        cons[k] = conservation(model, st.w, st.z)
    return TrajectoryLog(np.asarray(times, dtype=float), np.asarray(samples), mets, cons, (n, m, nd),
                         status=status, message=message, stats=stats)


def integrate(model: NetworkModel, initial: NetworkState, config: SimConfig) -> TrajectoryLog:
    """
    Simulate the closed loop over ``[0, config.horizon]``.

    With a disturbance, the horizon is cut at every hold instant and a fresh
    seeded draw is added to the plant derivative on each piece. A
    :class:`DivergenceError` or :class:`IntegrationError` carries the partial
    :class:`TrajectoryLog` in ``partial``.
    """
    initial.validate(model)
    check_initial(initial)
    dyn = StackedDynamics(model, config.gains)
    times = config.sample_times()
    n = model.n
    breakpoints, segment_rhs = (), None
    dist = config.disturbance
    if dist is not None and dist.amplitude > 0:
        noise = _Disturbance(dist, n, config.seed)
        breakpoints = np.arange(1, int(np.ceil(config.horizon / dist.hold_period))) * dist.hold_period

        def segment_rhs(k):
            d_k = noise.value(k)

            def f(t, y):
                out = dyn.flat(t, y)
                out[:n] += d_k
                return out
            return f

    try:
        samples, stats = solve(
            dyn.flat, initial.flat(), times, integrator=config.integrator, rel_tol=config.rel_tol,
            abs_tol=config.abs_tol, step_size=config.step_size, breakpoints=breakpoints,
            segment_rhs=segment_rhs, blowup=config.blowup, max_steps=config.max_steps,
        )
    except IntegrationError as exc:
        t_part, y_part = exc.partial
        exc.partial = build_log(model, t_part, y_part, status="diverged" if isinstance(exc, DivergenceError) else "failed",
                                message=str(exc))
        log.warning("integration stopped: %s", exc)
        raise
    return build_log(model, times, samples, stats)


@dataclass
class CentralizedTrajectory:
    times: np.ndarray
    u: np.ndarray
    cost: np.ndarray


def run_centralized_oracle(model: NetworkModel, u0, config: SimConfig) -> CentralizedTrajectory:
    """Idealized centralized gradient flow ``du/dt = -grad F_{sigma,h}(u)`` with exact
    aggregate and steady states, used as a reference for the distributed loop."""
    u0 = model.check_u(u0)
    times = config.sample_times()
    samples, _ = solve(
        lambda t, u: -grad_reduced(model, u), u0, times, integrator=config.integrator,
        rel_tol=config.rel_tol, abs_tol=config.abs_tol, step_size=config.step_size,
        blowup=config.blowup, max_steps=config.max_steps,
    )
    return CentralizedTrajectory(times, samples, np.array([reduced_cost(model, u) for u in samples]))
