"""Closed-loop simulation: one step, one path, and Monte Carlo ensembles.

Step order (signals at time k):

1. output maps are drawn with the previous signal ``pi(k-1)``;
2. ``y = sum_i y_i``;
3. ``yhat = C_f x_f + D_f y``;
4. ``e = r - yhat``;
5. ``pi = C_c x_c + D_c e``, clamped to the signal interval when it is bounded;
6. transition maps are drawn with ``pi(k)`` and applied;
7. filter and controller states advance;
8. ``pi(k)`` becomes the previous signal.

Paths are evaluated in batches. All arithmetic is elementwise with a fixed
summation order, so a path gives the same bits alone or inside any batch.
"""

from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .agents import Agent
from .blocks import LinearBlock, NonlinearBlock
from .core import path_draws

DIVERGENCE_LIMIT = 1e300
CHUNK = 256
BASE_OBSERVABLES = ("y", "yhat", "e", "pi")
_AGENT_OBS = re.compile(r"^(x|y)(\d+)$")


class DivergedPathError(RuntimeError):
    def __init__(self, step: int, trajectory=None):
        super().__init__(f"path diverged at step {step}; last finite step {step - 1}")
        self.step = step
        self.last_finite_step = step - 1
        self.trajectory = trajectory


class UnknownObservableError(KeyError):
    pass


@dataclass(frozen=True, eq=False)
class ClosedLoopSystem:
    agents: tuple
    filter: LinearBlock | NonlinearBlock
    controller: LinearBlock | NonlinearBlock
    reference: float | Fraction
    pi_prev_init: float = 0.0
    signal_interval: tuple = (-math.inf, math.inf)

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        if not self.agents:
            raise ValueError("closed loop needs at least one agent")
        if not all(isinstance(a, Agent) for a in self.agents):
            raise TypeError("agents must be agent models")
        if not math.isfinite(float(self.reference)):
            raise ValueError("reference must be finite")
        lo, hi = self.signal_interval
        if not lo <= hi:
            raise ValueError("signal interval is empty")

    @property
    def r(self) -> float:
        return float(self.reference)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    def initial_state(self, agents=None, filter=None, controller=None,
                      pi_prev=None) -> "SimState":
        if agents is None:
            agents = [np.zeros(a.dim) for a in self.agents]
        return SimState(
            agents=tuple(np.asarray(x, dtype=float).reshape(a.dim)
                         for a, x in zip(self.agents, agents)),
            filter=self.filter.zero_state() if filter is None
            else np.asarray(filter, dtype=float).reshape(self.filter.order),
            controller=self.controller.zero_state() if controller is None
            else np.asarray(controller, dtype=float).reshape(self.controller.order),
            pi_prev=self.pi_prev_init if pi_prev is None else float(pi_prev),
        )

    def clamp(self, pi: np.ndarray) -> np.ndarray:
        lo, hi = self.signal_interval
        if math.isinf(lo) and math.isinf(hi):
            return pi
        return np.clip(pi, lo, hi)

    def observable_names(self) -> list[str]:
        n = self.n_agents
        return list(BASE_OBSERVABLES) + [f"x{i}" for i in range(1, n + 1)] + [
            f"y{i}" for i in range(1, n + 1)]

    def check_observable(self, name: str) -> None:
        if name in BASE_OBSERVABLES:
            return
        m = _AGENT_OBS.match(name)
        if m and 1 <= int(m.group(2)) <= self.n_agents:
            return
        raise UnknownObservableError(f"unknown observable {name!r}")


@dataclass
class SimState:
    agents: tuple
    filter: np.ndarray
    controller: np.ndarray
    pi_prev: float = 0.0

    def augmented(self) -> np.ndarray:
        """Agent states, then filter state, then controller state."""
        return np.concatenate([*self.agents, self.filter, self.controller])


@dataclass
class Trajectory:
    """Per-step signals of one path. Index ``k`` holds time ``k``.

    ``x`` holds the first state component of each agent (before the
    transition at step ``k``) and ``y_agents`` each agent's output; both are
    optional.
    """

    y: np.ndarray
    yhat: np.ndarray
    e: np.ndarray
    pi: np.ndarray
    x: Optional[np.ndarray] = None
    y_agents: Optional[np.ndarray] = None
    final_state: Optional[SimState] = None
    seed: int = 0
    path_id: int = 0

    def __len__(self) -> int:
        return len(self.y)

    def observable(self, name: str) -> np.ndarray:
        if name in BASE_OBSERVABLES:
            return getattr(self, name)
        m = _AGENT_OBS.match(name)
        if m:
            data = self.x if m.group(1) == "x" else self.y_agents
            i = int(m.group(2))
            if data is not None and 1 <= i <= data.shape[1]:
                return data[:, i - 1]
        raise UnknownObservableError(f"unknown observable {name!r}")

    def records(self) -> list[dict]:
        out = []
        for k in range(len(self)):
            rec = {"k": k, "y": self.y[k], "yhat": self.yhat[k], "e": self.e[k], "pi": self.pi[k]}
            if self.y_agents is not None:
                rec["y_i"] = self.y_agents[k].tolist()
            if self.x is not None:
                rec["x_i"] = self.x[k].tolist()
            out.append(rec)
        return out


@dataclass
class MonteCarloSummary:
    observables: tuple
    mean: dict
    std: dict
    n_paths: int
    n_diverged: int
    seed: int
    horizon: int
    feasibility_violation_fraction: float
    config_digest: Optional[str] = None

    def sample_std(self, name: str) -> np.ndarray:
        """Standard deviation with the n - 1 divisor (zero for a single path)."""
        n = self.n_paths
        if n < 2:
            return np.zeros_like(self.std[name])
        return self.std[name] * math.sqrt(n / (n - 1))


# ---------------------------------------------------------------------------
# batched step
# ---------------------------------------------------------------------------

@dataclass
class _Batch:
    X: list  # per agent (P, dim)
    xf: np.ndarray
    xc: np.ndarray
    pi_prev: np.ndarray

    @classmethod
    def from_state(cls, state: SimState, P: int) -> "_Batch":
        return cls(
            X=[np.tile(x, (P, 1)) for x in state.agents],
            xf=np.tile(state.filter, (P, 1)),
            xc=np.tile(state.controller, (P, 1)),
            pi_prev=np.full(P, float(state.pi_prev)),
        )

    def row(self, p: int) -> SimState:
        return SimState(tuple(x[p].copy() for x in self.X), self.xf[p].copy(),
                        self.xc[p].copy(), float(self.pi_prev[p]))

    def augmented(self) -> np.ndarray:
        return np.concatenate([*self.X, self.xf, self.xc], axis=1)


def _step(system: ClosedLoopSystem, b: _Batch, u_out: np.ndarray, u_tr: np.ndarray):
    y_i = [a.output_batch(x, b.pi_prev, u_out[:, i])
           for i, (a, x) in enumerate(zip(system.agents, b.X))]
    y = np.zeros(len(b.pi_prev))
    for v in y_i:
        y = y + v
    yhat = system.filter.output_batch(b.xf, y)
    e = system.r - yhat
    pi = system.clamp(system.controller.output_batch(b.xc, e))
    x_now = [x[:, 0] for x in b.X]
    nxt = _Batch(
        X=[a.transition_batch(x, pi, u_tr[:, i])
           for i, (a, x) in enumerate(zip(system.agents, b.X))],
        xf=system.filter.next_batch(b.xf, y),
        xc=system.controller.next_batch(b.xc, e),
        pi_prev=pi,
    )
    rec = {"y": y, "yhat": yhat, "e": e, "pi": pi, "y_i": y_i, "x_i": x_now}
    return nxt, rec


def _bad_rows(rec, b: _Batch) -> np.ndarray:
    vals = [rec["y"], rec["yhat"], rec["e"], rec["pi"]]
    bad = np.zeros(len(rec["y"]), dtype=bool)
    for v in vals:
        bad |= ~(np.abs(v) <= DIVERGENCE_LIMIT)
    for arr in [*b.X, b.xf, b.xc]:
        if arr.shape[1]:
            bad |= ~np.all(np.abs(arr) <= DIVERGENCE_LIMIT, axis=1)
    return bad


def _zero_rows(b: _Batch, rows: np.ndarray, init: SimState) -> None:
    for x, x0 in zip(b.X, init.agents):
        x[rows] = x0
    b.xf[rows] = init.filter
    b.xc[rows] = init.controller
    b.pi_prev[rows] = init.pi_prev


def loop_step(system: ClosedLoopSystem, state: SimState, draws) -> tuple[SimState, dict]:
    """Advance one path by one step.

    ``draws`` is a ``(2, n_agents)`` array of uniforms: row 0 selects output
    maps, row 1 transition maps. Returns ``(next_state, record)``.
    """
    draws = np.asarray(draws, dtype=float).reshape(2, system.n_agents)
    b = _Batch.from_state(state, 1)
    with np.errstate(over="ignore", invalid="ignore"):
        nxt, rec = _step(system, b, draws[0][None, :], draws[1][None, :])
    if _bad_rows(rec, nxt)[0]:
        raise DivergedPathError(0)
    record = {
        "y": float(rec["y"][0]), "yhat": float(rec["yhat"][0]), "e": float(rec["e"][0]),
        "pi": float(rec["pi"][0]),
        "y_i": [float(v[0]) for v in rec["y_i"]],
        "x_i": [float(v[0]) for v in rec["x_i"]],
    }
    return nxt.row(0), record


def _run_batch(system, init, horizon, seed, path_ids, track, keep_agents):
    P, N = len(path_ids), system.n_agents
    draws = np.stack([path_draws(seed, pid, horizon, N) for pid in path_ids])
    b = _Batch.from_state(init, P)
    out = {name: np.empty((P, horizon)) for name in track}
    xs = np.empty((P, horizon, N)) if keep_agents else None
    ys = np.empty((P, horizon, N)) if keep_agents else None
    diverged_at = np.full(P, -1)
    violations = np.zeros(P, dtype=np.int64)
    agent_track = [(name, _AGENT_OBS.match(name)) for name in track
                   if name not in BASE_OBSERVABLES]
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(horizon):
            b, rec = _step(system, b, draws[:, k, 0, :], draws[:, k, 1, :])
            for name in BASE_OBSERVABLES:
                if name in out:
                    out[name][:, k] = rec[name]
            for name, m in agent_track:
                src = rec["x_i"] if m.group(1) == "x" else rec["y_i"]
                out[name][:, k] = src[int(m.group(2)) - 1]
            if keep_agents:
                for i in range(N):
                    xs[:, k, i] = rec["x_i"][i]
                    ys[:, k, i] = rec["y_i"][i]
            violations += rec["y"] > system.r
            bad = _bad_rows(rec, b) & (diverged_at < 0)
            if bad.any():
                diverged_at[bad] = k
                _zero_rows(b, bad, init)
    return out, xs, ys, diverged_at, violations, b


def simulate_path(system: ClosedLoopSystem, init: SimState, horizon: int, seed: int,
                  path_id: int = 0, record_agents: bool = True) -> Trajectory:
    """Simulate one path; a pure function of (system, init, horizon, seed, path_id).

    Raises :class:`DivergedPathError` carrying the finite prefix of the
    trajectory if any signal or state leaves ``[-1e300, 1e300]``.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    out, xs, ys, diverged_at, _, b = _run_batch(
        system, init, horizon, seed, [path_id], BASE_OBSERVABLES, record_agents)
    cut = int(diverged_at[0]) if diverged_at[0] >= 0 else horizon
    traj = Trajectory(
        y=out["y"][0, :cut], yhat=out["yhat"][0, :cut], e=out["e"][0, :cut],
        pi=out["pi"][0, :cut],
        x=xs[0, :cut] if record_agents else None,
        y_agents=ys[0, :cut] if record_agents else None,
        final_state=b.row(0) if cut == horizon else None,
        seed=seed, path_id=path_id,
    )
    if cut < horizon:
        raise DivergedPathError(cut, traj)
    return traj


def _fsum_columns(arr: np.ndarray) -> np.ndarray:
    return np.array([math.fsum(col) for col in arr.T])


def monte_carlo(system: ClosedLoopSystem, init: SimState, horizon: int, n_paths: int,
                seed: int, observables: Sequence[str] = ("y",), workers: int = 1,
                config_digest: Optional[str] = None) -> MonteCarloSummary:
    """Per-step mean and standard deviation over ``n_paths`` sample paths.

    Path ``p`` uses path id ``p``. Means and deviations are exactly rounded
    sums (``math.fsum``), so the summary does not depend on how paths were
    scheduled across workers. Diverged paths are excluded and counted.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    observables = tuple(dict.fromkeys(observables))
    for name in observables:
        system.check_observable(name)

    values = {name: np.empty((n_paths, horizon)) for name in observables}
    diverged = np.empty(n_paths, dtype=np.int64)
    violations = np.empty(n_paths, dtype=np.int64)
    chunks = [list(range(s, min(s + CHUNK, n_paths))) for s in range(0, n_paths, CHUNK)]

    def run(ids):
        out, _, _, div, vio, _ = _run_batch(system, init, horizon, seed, ids, observables, False)
        sl = slice(ids[0], ids[-1] + 1)
        for name in observables:
            values[name][sl] = out[name]
        diverged[sl] = div
        violations[sl] = vio

    if workers <= 1:
        for ids in chunks:
            run(ids)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, chunks))

    keep = diverged < 0
    n_ok = int(keep.sum())
    mean, std = {}, {}
    for name in observables:
        arr = values[name][keep]
        if n_ok == 0:
            mean[name] = np.full(horizon, np.nan)
            std[name] = np.full(horizon, np.nan)
            continue
        mu = _fsum_columns(arr) / n_ok
        mean[name] = mu
        std[name] = np.sqrt(_fsum_columns((arr - mu[None, :]) ** 2) / n_ok)
    frac = float(violations[keep].sum()) / (n_ok * horizon) if n_ok else math.nan
    return MonteCarloSummary(observables, mean, std, n_ok, n_paths - n_ok, seed, horizon,
                             frac, config_digest)


# ---------------------------------------------------------------------------
# empirical diagnostics
# ---------------------------------------------------------------------------

def _series(trajectory, observable) -> np.ndarray:
    if isinstance(trajectory, Trajectory):
        return trajectory.observable(observable)
    if isinstance(trajectory, dict):
        if observable not in trajectory:
            raise UnknownObservableError(f"unknown observable {observable!r}")
        return np.asarray(trajectory[observable], dtype=float)
    raise TypeError("expected a Trajectory or a mapping of series")


def time_average(trajectory, observable: str) -> np.ndarray:
    """Running average ``a(k) = (1/(k+1)) sum_{j<=k} g(j)``, Neumaier-compensated."""
    g = _series(trajectory, observable)
    if len(g) == 0:
        raise ValueError("empty trajectory")
    out = np.empty(len(g))
    total = comp = 0.0
    for k, v in enumerate(g.tolist()):
        t = total + v
        if abs(total) >= abs(v):
            comp += (total - t) + v
        else:
            comp += (v - t) + total
        total = t
        out[k] = (total + comp) / (k + 1)
    return out


@dataclass
class Histogram:
    """Normalized mass on ``support``; ``edges`` is set for binned histograms."""

    support: np.ndarray
    mass: np.ndarray
    edges: Optional[np.ndarray] = None

    def as_dict(self) -> dict:
        return dict(zip(self.support.tolist(), self.mass.tolist()))


def empirical_distribution(trajectories, observable: str, burn_in: int = 0,
                           bins="discrete") -> Histogram:
    """Histogram of an observable over post-burn-in samples of one or more paths.

    ``bins="discrete"`` counts exact values; an integer gives that many
    equal-width bins.
    """
    if isinstance(trajectories, (Trajectory, dict)):
        trajectories = [trajectories]
    samples = []
    for t in trajectories:
        g = _series(t, observable)
        if burn_in >= len(g) and len(g):
            raise ValueError("burn-in must be shorter than the horizon")
        samples.append(g[burn_in:])
    data = np.concatenate(samples) if samples else np.zeros(0)
    if data.size == 0:
        raise ValueError("no samples after burn-in")
    if bins == "discrete":
        support, counts = np.unique(data, return_counts=True)
        return Histogram(support, counts / data.size)
    counts, edges = np.histogram(data, bins=int(bins))
    return Histogram((edges[:-1] + edges[1:]) / 2, counts / data.size, edges)


def open_loop_system(agents: Sequence[Agent], pi_fixed: float):
    """Agents driven by a constant signal: a held controller state, identity filter.

    Returns ``(system, init)``; agent states in ``init`` are zero.
    """
    from .blocks import identity_block

    hold = LinearBlock.from_matrices([[1.0]], [0.0], [1.0], 0.0)
    system = ClosedLoopSystem(tuple(agents), identity_block(), hold, 0.0,
                              pi_prev_init=float(pi_fixed))
    return system, system.initial_state(controller=[float(pi_fixed)])
