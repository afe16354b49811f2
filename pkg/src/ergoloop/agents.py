"""Agent models and the product iterated function system they generate.

Every agent exposes the same batched interface used by the simulator:
``output_batch(X, pi, u)`` and ``transition_batch(X, pi, u)`` where ``X`` is a
``(P, dim)`` array of states, ``pi`` the ``(P,)`` broadcast signal and ``u`` a
``(P,)`` array of uniform draws. Each call makes one categorical choice per
row by inverse CDF, so one uniform per agent and phase suffices.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    SUM_TOL,
    as_fraction,
    InvalidWeightsError,
    ProbabilityFunction,
    categorical_sample_batch,
    check_normalized,
    induced_two_norm,
    prob_eval,
)

MATERIALIZE_CAP = 2 ** 20


class UnsupportedFlavorError(TypeError):
    pass


class CapExceededError(ValueError):
    pass


_IDENTITY_OUTPUT = (ProbabilityFunction.constant(1.0, lower_bound=1.0),)


def _stack_probs(funcs: Sequence[ProbabilityFunction], pi: np.ndarray) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    W = np.stack([np.broadcast_to(prob_eval(f, pi), pi.shape) for f in funcs], axis=-1)
    total = W.sum(axis=-1)
    if np.any(np.abs(total - 1.0) > SUM_TOL) or np.any(W < 0):
        raise InvalidWeightsError(f"probabilities do not sum to one (sum={total!r})")
    return W


def _check_family(name, funcs, interval):
    if not funcs:
        return [f"{name}: needs at least one probability function"]
    worst = check_normalized(funcs, interval)
    if worst > SUM_TOL:
        return [f"{name}: probabilities sum to 1 +- {worst:.3g} on the validation grid"]
    return []


class Agent:
    """Shared behaviour; subclasses define the maps and their probabilities."""

    def transition_weights(self, pi) -> np.ndarray:
        return _stack_probs(self.transition_probabilities, pi)

    def output_weights(self, pi) -> np.ndarray:
        return _stack_probs(self.output_probabilities, pi)

    def probability_functions(self) -> tuple:
        return tuple(self.transition_probabilities) + tuple(self.output_probabilities)

    @property
    def n_transition_maps(self) -> int:
        return len(self.transition_probabilities)

    @property
    def n_output_maps(self) -> int:
        return len(self.output_probabilities)

    def validate(self, interval=(-math.inf, math.inf)) -> list[str]:
        return (_check_family("transition", self.transition_probabilities, interval)
                + _check_family("output", self.output_probabilities, interval))


@dataclass(frozen=True, eq=False)
class FiniteActionAgent(Agent):
    """Agent whose state is one of finitely many rational actions.

    The next action is drawn from ``probabilities`` (one per action) at the
    current signal, independently of the current action; the output is the
    action itself.
    """

    actions: tuple
    probabilities: tuple
    name: str = ""

    dim = 1

    def __post_init__(self):
        acts = tuple(as_fraction(a) for a in self.actions)
        object.__setattr__(self, "actions", acts)
        object.__setattr__(self, "probabilities", tuple(self.probabilities))
        if not acts or len(set(acts)) != len(acts):
            raise ValueError("action set must be nonempty and duplicate-free")
        if len(self.probabilities) != len(acts):
            raise ValueError("need one probability function per action")
        problems = self.validate()
        if problems:
            raise ValueError("; ".join(problems))
        object.__setattr__(self, "_values", np.array([float(a) for a in acts]))

    @property
    def transition_probabilities(self):
        return self.probabilities

    @property
    def output_probabilities(self):
        return _IDENTITY_OUTPUT

    @property
    def finite_states(self) -> tuple:
        return self.actions

    def transition_batch(self, X, pi, u):
        idx = categorical_sample_batch(self.transition_weights(pi), u)
        return self._values[idx][:, None]

    def output_batch(self, X, pi, u):
        return X[:, 0].copy()

    def successors(self, state, interval=(-math.inf, math.inf)) -> list:
        """Actions reachable in one step (maps whose probability is not identically 0)."""
        return [a for a, f in zip(self.actions, self.probabilities) if f.supremum(interval) > 0]


@dataclass(frozen=True, eq=False)
class AffineAgent(Agent):
    """``x+ = A x + b_j`` with probability ``p_j(pi)``; ``y = c.x + d_l`` with ``p'_l(pi)``."""

    A: np.ndarray
    c: np.ndarray
    offsets: np.ndarray
    probabilities: tuple
    outputs: np.ndarray
    output_probabilities: tuple
    name: str = ""

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        offsets = np.asarray(self.offsets, dtype=float).reshape(-1, n)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float).reshape(n))
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "outputs", np.asarray(self.outputs, dtype=float).reshape(-1))
        object.__setattr__(self, "probabilities", tuple(self.probabilities))
        object.__setattr__(self, "output_probabilities", tuple(self.output_probabilities))
        if A.shape != (n, n):
            raise ValueError("A must be square")
        if len(offsets) != len(self.probabilities):
            raise ValueError("need one probability function per offset")
        if len(self.outputs) != len(self.output_probabilities):
            raise ValueError("need one probability function per output offset")
        problems = self.validate()
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def transition_probabilities(self):
        return self.probabilities

    def transition_batch(self, X, pi, u):
        idx = categorical_sample_batch(self.transition_weights(pi), u)
        out = np.zeros_like(X)
        for j in range(self.dim):
            out = out + X[:, j:j + 1] * self.A[None, :, j]
        return out + self.offsets[idx]

    def output_batch(self, X, pi, u):
        idx = categorical_sample_batch(self.output_weights(pi), u)
        out = np.zeros(X.shape[0])
        for j in range(self.dim):
            out = out + self.c[j] * X[:, j]
        return out + self.outputs[idx]


@dataclass(frozen=True, eq=False)
class LipschitzAgent(Agent):
    """Agent with opaque transition and output maps and declared Lipschitz constants.

    ``states`` optionally declares a finite state set closed under every
    transition map; such agents can be analysed through the transition graph.
    """

    transition_maps: tuple
    lipschitz: tuple
    probabilities: tuple
    output_maps: tuple
    output_lipschitz: tuple
    output_probabilities: tuple
    dim: int = 1
    states: Optional[tuple] = None
    name: str = ""

    def __post_init__(self):
        for attr in ("transition_maps", "lipschitz", "probabilities", "output_maps",
                     "output_lipschitz", "output_probabilities"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        if not (len(self.transition_maps) == len(self.lipschitz) == len(self.probabilities)):
            raise ValueError("transition maps, constants and probabilities must align")
        if not (len(self.output_maps) == len(self.output_lipschitz)
                == len(self.output_probabilities)):
            raise ValueError("output maps, constants and probabilities must align")
        if any(l < 0 for l in self.lipschitz + self.output_lipschitz):
            raise ValueError("Lipschitz constants must be nonnegative")
        if self.states is not None:
            states = tuple(self.states)
            object.__setattr__(self, "states", states)
            for W in self.transition_maps:
                for s in states:
                    if _as_state_key(W(s)) not in {_as_state_key(t) for t in states}:
                        raise ValueError(f"map sends state {s!r} outside the declared state set")
        problems = self.validate()
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def transition_probabilities(self):
        return self.probabilities

    @property
    def finite_states(self):
        return self.states

    def transition_batch(self, X, pi, u):
        idx = categorical_sample_batch(self.transition_weights(pi), u)
        rows = [np.atleast_1d(np.asarray(self.transition_maps[j](_unwrap(x)), dtype=float))
                for x, j in zip(X, idx)]
        return np.array(rows, dtype=float).reshape(X.shape[0], self.dim)

    def output_batch(self, X, pi, u):
        idx = categorical_sample_batch(self.output_weights(pi), u)
        return np.array([float(self.output_maps[j](_unwrap(x))) for x, j in zip(X, idx)])

    def successors(self, state, interval=(-math.inf, math.inf)) -> list:
        return [W(state) for W, f in zip(self.transition_maps, self.probabilities)
                if f.supremum(interval) > 0]


def _unwrap(x):
    return float(x[0]) if x.shape == (1,) else x


def _as_state_key(s):
    if isinstance(s, np.ndarray):
        return tuple(s.tolist())
    return s


# ---------------------------------------------------------------------------
# single-agent operations
# ---------------------------------------------------------------------------

def _as_batch(agent, state):
    return np.asarray(state, dtype=float).reshape(1, agent.dim)


def agent_transition(agent: Agent, state, pi: float, u: float) -> np.ndarray:
    """Sample the next state: choose a transition map by inverse CDF and apply it."""
    out = agent.transition_batch(_as_batch(agent, state), np.array([float(pi)]), np.array([u]))
    return out[0]


def agent_output(agent: Agent, state, pi: float, u: float) -> float:
    out = agent.output_batch(_as_batch(agent, state), np.array([float(pi)]), np.array([u]))
    return float(out[0])


def lipschitz_bound(agent: Agent) -> list[float]:
    """Lipschitz constant of every transition map, aligned with map indices."""
    if isinstance(agent, AffineAgent):
        return [induced_two_norm(agent.A)] * agent.n_transition_maps
    if isinstance(agent, LipschitzAgent):
        return list(agent.lipschitz)
    raise UnsupportedFlavorError(
        f"{type(agent).__name__} has no Lipschitz data; use the transition graph instead")


def _transition_map(agent: Agent, j: int) -> Callable:
    if isinstance(agent, FiniteActionAgent):
        value = float(agent.actions[j])
        return lambda x: np.array([value])
    if isinstance(agent, AffineAgent):
        return lambda x: agent.A @ np.asarray(x, dtype=float).reshape(agent.dim) + agent.offsets[j]
    W = agent.transition_maps[j]
    return lambda x: np.atleast_1d(np.asarray(W(_unwrap(np.atleast_1d(x))), dtype=float))


def _output_map(agent: Agent, l: int) -> Callable:
    if isinstance(agent, FiniteActionAgent):
        return lambda x: float(np.atleast_1d(x)[0])
    if isinstance(agent, AffineAgent):
        return lambda x: float(agent.c @ np.asarray(x, dtype=float).reshape(agent.dim)
                               + agent.outputs[l])
    H = agent.output_maps[l]
    return lambda x: float(H(_unwrap(np.atleast_1d(x))))


# ---------------------------------------------------------------------------
# product IFS
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProductIFS:
    """The joint IFS of independent agents.

    A multi-index is ``(j_1, ..., j_N, l_1, ..., l_N)``: one transition map
    and one output map per agent. The index set is never built unless
    :meth:`indices` is asked to materialize it.
    """

    agents: tuple
    cap: int = MATERIALIZE_CAP

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        if not self.agents:
            raise ValueError("product IFS needs at least one agent")

    @property
    def transition_ranges(self) -> list[int]:
        return [a.n_transition_maps for a in self.agents]

    @property
    def output_ranges(self) -> list[int]:
        return [a.n_output_maps for a in self.agents]

    @property
    def size(self) -> int:
        return math.prod(self.transition_ranges) * math.prod(self.output_ranges)

    def indices(self):
        if self.size > self.cap:
            raise CapExceededError(f"|M| = {self.size} exceeds the materialization cap {self.cap}")
        return itertools.product(*(range(w) for w in self.transition_ranges + self.output_ranges))

    def probability(self, m: Sequence[int], pi: float) -> float:
        """q_m(pi): product of the chosen transition and output probabilities."""
        n = len(self.agents)
        q = 1.0
        for agent, j in zip(self.agents, m[:n]):
            q *= float(prob_eval(agent.transition_probabilities[j], pi))
        for agent, l in zip(self.agents, m[n:]):
            q *= float(prob_eval(agent.output_probabilities[l], pi))
        return q

    def apply(self, m: Sequence[int], states: Sequence) -> tuple[list, float]:
        """F_m on the agent states: next states and the aggregate output sum."""
        n = len(self.agents)
        nxt = [_transition_map(a, j)(x) for a, j, x in zip(self.agents, m[:n], states)]
        y = 0.0
        for a, l, x in zip(self.agents, m[n:], states):
            y += _output_map(a, l)(x)
        return nxt, y

    def map_lipschitz(self, m: Sequence[int]) -> float:
        """Lipschitz bound of the state part of F_m under the max-of-components norm."""
        n = len(self.agents)
        return max(lipschitz_bound(a)[j] for a, j in zip(self.agents, m[:n]))


def product_ifs(agents: Sequence[Agent], cap: int = MATERIALIZE_CAP) -> ProductIFS:
    return ProductIFS(tuple(agents), cap)
