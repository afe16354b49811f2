"""Ergodicity certificates and empirical diagnostics for the closed loop.

The certificates are checkers: each verifies the hypotheses of one
sufficient condition and otherwise returns ``inconclusive`` naming what
failed. Only :func:`certify_thm3_negative` can return
``not_uniquely_ergodic``, and only with exact rational evidence.

Theorem tags used in verdicts:

``barnsley``        average contractivity of an IFS
``thm4_linear``     affine agents, Schur linear filter and controller
``thm5_lipschitz``  Lipschitz agent maps with constants below one
``thm6_finite``     finite agent state spaces, primitive transition graph
``thm3_unit_pole``  marginal controller pole plus a discrete error group
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from statistics import NormalDist
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve

from .agents import (
    AffineAgent,
    Agent,
    CapExceededError,
    FiniteActionAgent,
    LipschitzAgent,
    ProductIFS,
    UnsupportedFlavorError,
    lipschitz_bound,
)
from .blocks import (
    LinearBlock,
    build_augmented_matrix,
    classify_stability,
    exact_impulse_response,
    is_nilpotent_exact,
)
from .core import (
    DEFAULT_GRID_STEP,
    contraction_index,
    is_exact,
    path_draws,
    prob_eval,
    rational_group_gcd,
    spectral_radius,
    validate_lower_bound,
)
from .loop import ClosedLoopSystem, SimState, _Batch, _step, monte_carlo

GRAPH_VERTEX_CAP = 2 ** 20
GRAPH_ARC_CAP = 2 ** 26
INVARIANT_CAP = 2 ** 14
ALPHABET_CAP = 10 ** 6
EXPONENT_DENSE_CAP = 2048


class NonUniqueStationaryError(ValueError):
    """The finite chain has more than one closed communicating class."""


@dataclass
class ErgodicityVerdict:
    status: str  # uniquely_ergodic | not_uniquely_ergodic | inconclusive
    theorem: str  # barnsley | thm4_linear | thm5_lipschitz | thm6_finite | thm3_unit_pole | none
    evidence: dict = field(default_factory=dict)
    reasons: list = field(default_factory=list)

    def describe(self) -> str:
        ev = ", ".join(f"{k}={_fmt(v)}" for k, v in self.evidence.items())
        why = "; ".join(self.reasons)
        return f"{self.theorem}: {self.status}" + (f" [{ev}]" if ev else "") + (
            f" ({why})" if why else "")


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


# ---------------------------------------------------------------------------
# shared precondition checks
# ---------------------------------------------------------------------------

def _probability_margins(system: ClosedLoopSystem, step=DEFAULT_GRID_STEP):
    """Validated delta (transition) and delta' (output); None when any bound fails."""
    interval = system.signal_interval
    reasons = []
    deltas = {}
    for label, attr in (("delta", "transition_probabilities"),
                        ("delta_prime", "output_probabilities")):
        bounds = []
        for i, agent in enumerate(system.agents, start=1):
            for j, f in enumerate(getattr(agent, attr), start=1):
                if f.lower_bound is None:
                    reasons.append(f"agent {i}: {attr[:-14]} probability {j} has no declared "
                                   "lower bound")
                elif not validate_lower_bound(f, interval, step):
                    reasons.append(f"agent {i}: declared lower bound {f.lower_bound} of "
                                   f"{attr[:-14]} probability {j} exceeds its infimum")
                elif f.lower_bound <= 0:
                    reasons.append("p_{ij} not bounded below" if label == "delta"
                                   else "p'_{il} not bounded below")
                else:
                    bounds.append(f.lower_bound)
                    continue
                bounds.append(None)
        deltas[label] = None if any(b is None for b in bounds) else min(bounds)
    if not all(f.dini for a in system.agents for f in a.probability_functions()):
        reasons.append("a probability function is not flagged Dini continuous")
        deltas = {k: None for k in deltas}
    return deltas, reasons


def _blocks_schur(system: ClosedLoopSystem):
    reasons, evidence = [], {}
    for label, blk in (("filter", system.filter), ("controller", system.controller)):
        if not isinstance(blk, LinearBlock):
            reasons.append(f"{label} is not linear")
            continue
        rep = classify_stability(blk)
        evidence[f"{label}_radius"] = rep.spectral_radius
        if rep.classification != "schur":
            reasons.append(f"{label} not Schur ({rep.classification}, "
                           f"radius {rep.spectral_radius:.6g})")
    return reasons, evidence


# ---------------------------------------------------------------------------
# positive certificates
# ---------------------------------------------------------------------------

def certify_thm4_linear(system: ClosedLoopSystem) -> ErgodicityVerdict:
    """Affine agents with Schur ``A_i`` plus Schur linear filter and controller."""
    if not all(isinstance(a, AffineAgent) for a in system.agents):
        raise UnsupportedFlavorError("the linear certificate needs affine agents")
    reasons, evidence = _blocks_schur(system)
    for i, a in enumerate(system.agents, start=1):
        rep = classify_stability(a.A)
        if rep.classification != "schur":
            reasons.append(f"agent {i} matrix not Schur (radius {rep.spectral_radius:.6g})")
    deltas, prob_reasons = _probability_margins(system)
    reasons += prob_reasons
    evidence.update(deltas)
    if isinstance(system.filter, LinearBlock) and isinstance(system.controller, LinearBlock):
        M = build_augmented_matrix(system)
        evidence["augmented_radius"] = spectral_radius(M)
        evidence["contraction_index"] = contraction_index(M)
    if reasons:
        return ErgodicityVerdict("inconclusive", "thm4_linear", evidence, reasons)
    return ErgodicityVerdict("uniquely_ergodic", "thm4_linear", evidence)


def certify_thm5_lipschitz(system: ClosedLoopSystem) -> ErgodicityVerdict:
    """Lipschitz (or affine) agents whose transition maps all have constant < 1."""
    if not all(isinstance(a, (LipschitzAgent, AffineAgent)) for a in system.agents):
        raise UnsupportedFlavorError("the Lipschitz certificate needs Lipschitz or affine agents")
    reasons, evidence = _blocks_schur(system)
    consts = [l for a in system.agents for l in lipschitz_bound(a)]
    evidence["max_lipschitz"] = max(consts)
    bad = [l for l in consts if not l < 1.0]
    if bad:
        reasons.append(f"transition map Lipschitz constant {max(bad):.6g} is not < 1")
    deltas, prob_reasons = _probability_margins(system)
    reasons += prob_reasons
    evidence.update(deltas)
    if reasons:
        return ErgodicityVerdict("inconclusive", "thm5_lipschitz", evidence, reasons)
    return ErgodicityVerdict("uniquely_ergodic", "thm5_lipschitz", evidence)


# ---------------------------------------------------------------------------
# transition graphs
# ---------------------------------------------------------------------------

def _finite_states(agent: Agent):
    states = getattr(agent, "finite_states", None)
    if states is None:
        raise UnsupportedFlavorError(f"{type(agent).__name__} has no finite state set")
    return states


def _state_key(s):
    return tuple(np.ravel(s).tolist()) if isinstance(s, np.ndarray) else s


def agent_adjacency(agent: Agent, interval=(-math.inf, math.inf)) -> np.ndarray:
    """Boolean adjacency of one agent's state graph (maps with nonzero probability)."""
    states = _finite_states(agent)
    index = {_state_key(s): n for n, s in enumerate(states)}
    adj = np.zeros((len(states), len(states)), dtype=bool)
    for n, s in enumerate(states):
        for t in agent.successors(s, interval):
            adj[n, index[_state_key(t)]] = True
    return adj


@dataclass
class TransitionGraph:
    """Directed graph on joint agent states; vertex order is ``itertools.product``."""

    state_sets: tuple
    adjacency: sparse.csr_matrix
    factors: tuple

    @property
    def n_vertices(self) -> int:
        return self.adjacency.shape[0]

    def vertices(self):
        return itertools.product(*self.state_sets)

    def index(self, vertex) -> int:
        idx = 0
        for states, v in zip(self.state_sets, vertex):
            keys = [_state_key(s) for s in states]
            idx = idx * len(states) + keys.index(_state_key(v))
        return idx

    def has_arc(self, u, v) -> bool:
        return bool(self.adjacency[self.index(u), self.index(v)])


def transition_graph(agents: Sequence[Agent], interval=(-math.inf, math.inf),
                     vertex_cap: int = GRAPH_VERTEX_CAP,
                     arc_cap: int = GRAPH_ARC_CAP) -> TransitionGraph:
    """Joint graph: an arc ``u -> v`` iff every agent can move ``u_i -> v_i``."""
    state_sets = tuple(tuple(_finite_states(a)) for a in agents)
    n_vertices = math.prod(len(s) for s in state_sets)
    if n_vertices > vertex_cap:
        raise CapExceededError(f"{n_vertices} joint states exceed the cap {vertex_cap}")
    factors = tuple(agent_adjacency(a, interval) for a in agents)
    n_arcs = math.prod(int(f.sum()) for f in factors)
    if n_arcs > arc_cap:
        raise CapExceededError(f"{n_arcs} arcs exceed the cap {arc_cap}")
    adj = sparse.csr_matrix(np.ones((1, 1), dtype=np.int8))
    for f in factors:
        adj = sparse.kron(adj, sparse.csr_matrix(f.astype(np.int8)), format="csr")
    return TransitionGraph(state_sets, adj, factors)


class Primitivity(NamedTuple):
    strongly_connected: bool
    primitive: bool
    exponent: Optional[int] = None


def _bool_power_positive(A: np.ndarray) -> int:
    """Smallest k with A^k entrywise positive, for a primitive A (doubling + bisection)."""
    A = A.astype(np.float32)
    n = A.shape[0]
    if np.all(A > 0):
        return 1
    powers = [A]  # A^(2^b)
    while not np.all(powers[-1] > 0):
        P = powers[-1]
        powers.append(np.minimum(P @ P, 1.0))
        if len(powers) > 2 * (n.bit_length() + 2):
            raise RuntimeError("exponent search did not terminate")
    # A^(2^(b-1)) is not positive, A^(2^b) is; bisect with the lower powers
    lo, cur = 2 ** (len(powers) - 2), powers[-2]
    for b in range(len(powers) - 3, -1, -1):
        cand = np.minimum(cur @ powers[b], 1.0)
        if not np.all(cand > 0):
            cur, lo = cand, lo + 2 ** b
    return lo + 1


def is_primitive(graph) -> Primitivity:
    """Strong connectivity (SCC) and primitivity (gcd of cycle lengths is one).

    The period is the gcd of ``level(u) + 1 - level(v)`` over all arcs, with
    BFS levels from vertex 0. The exponent (smallest ``k`` with ``A^k > 0``)
    is computed for primitive graphs with at most 2048 vertices.
    """
    adj = graph.adjacency if isinstance(graph, TransitionGraph) else graph
    adj = sparse.csr_matrix(adj)
    n = adj.shape[0]
    if n == 0:
        raise ValueError("graph has no vertices")
    n_comp, _ = csgraph.connected_components(adj, directed=True, connection="strong")
    if n_comp != 1:
        return Primitivity(False, False, None)
    order, preds = csgraph.breadth_first_order(adj, 0, directed=True, return_predecessors=True)
    level = np.zeros(n, dtype=np.int64)
    for v in order[1:]:
        level[v] = level[preds[v]] + 1
    coo = adj.tocoo()
    diffs = level[coo.row] + 1 - level[coo.col]
    period = int(np.gcd.reduce(np.abs(diffs))) if diffs.size else 0
    if period != 1:
        return Primitivity(True, False, None)
    exponent = _bool_power_positive(adj.toarray() > 0) if n <= EXPONENT_DENSE_CAP else None
    return Primitivity(True, True, exponent)


def certify_thm6_finite(system: ClosedLoopSystem) -> ErgodicityVerdict:
    """Finite agent state spaces: strongly connected and primitive joint graph.

    When every agent's own graph is primitive the joint (tensor product)
    graph is primitive with exponent equal to the largest factor exponent, so
    the joint graph is only built when some factor is not primitive.
    """
    for a in system.agents:
        _finite_states(a)
    reasons, evidence = _blocks_schur(system)
    deltas, prob_reasons = _probability_margins(system)
    reasons += prob_reasons
    evidence.update(deltas)

    interval = system.signal_interval
    factor_results = [is_primitive(sparse.csr_matrix(agent_adjacency(a, interval)))
                      for a in system.agents]
    if all(r.primitive for r in factor_results):
        exps = [r.exponent for r in factor_results]
        result = Primitivity(True, True, None if None in exps else max(exps))
        evidence["graph"] = "product of primitive agent graphs"
    else:
        try:
            result = is_primitive(transition_graph(system.agents, interval))
        except CapExceededError as exc:
            reasons.append(str(exc))
            return ErgodicityVerdict("inconclusive", "thm6_finite", evidence, reasons)
        evidence["graph"] = "joint transition graph"
    evidence["strongly_connected"] = result.strongly_connected
    evidence["primitive"] = result.primitive
    evidence["primitivity_exponent"] = result.exponent

    if not result.strongly_connected:
        reasons.append("transition graph not strongly connected")
    elif not result.primitive:
        reasons.append("transition graph strongly connected but not primitive")
        if not reasons[:-1]:
            evidence["invariant_measure_exists"] = True
    if reasons:
        return ErgodicityVerdict("inconclusive", "thm6_finite", evidence, reasons)
    evidence["invariant_measure_exists"] = True
    return ErgodicityVerdict("uniquely_ergodic", "thm6_finite", evidence)


# ---------------------------------------------------------------------------
# negative certificate
# ---------------------------------------------------------------------------

def _require_fir(system: ClosedLoopSystem) -> LinearBlock:
    if not all(isinstance(a, FiniteActionAgent) for a in system.agents):
        raise UnsupportedFlavorError("filter alphabet needs finite-action agents")
    flt = system.filter
    if not isinstance(flt, LinearBlock):
        raise UnsupportedFlavorError("filter must be a linear FIR block")
    n = flt.order
    if n and np.any(np.abs(np.linalg.matrix_power(flt.A, n)) > 1e-12):
        raise UnsupportedFlavorError("filter is not FIR (state matrix not nilpotent)")
    return flt


def filter_output_alphabet(system: ClosedLoopSystem, cap: int = ALPHABET_CAP) -> set:
    """Every value ``C_f x_f + D_f y`` a rational FIR filter can output in steady state.

    The filter output is ``sum_j h_j y(k - j)`` over its impulse response
    ``h`` (length order + 1); every ``y`` ranges over the sums of the agents'
    action sets.
    """
    flt = _require_fir(system)
    if flt.exact is None:
        raise TypeError("filter coefficients are not rational")
    if not is_nilpotent_exact(flt):
        raise UnsupportedFlavorError("filter is not FIR (state matrix not nilpotent)")
    sums = {Fraction(0)}
    for a in system.agents:
        sums = {s + v for s in sums for v in a.actions}
        if len(sums) > cap:
            raise CapExceededError(f"aggregate output set exceeds {cap}")
    taps = exact_impulse_response(flt, flt.order + 1)
    alphabet = {Fraction(0)}
    for h in taps:
        alphabet = {s + h * y for s in alphabet for y in sums}
        if len(alphabet) > cap:
            raise CapExceededError(f"filter alphabet exceeds {cap}")
    return alphabet


def certify_thm3_negative(system: ClosedLoopSystem) -> ErgodicityVerdict:
    """Certify loss of unique ergodicity from a marginal controller pole.

    Needs a certified unit-circle pole of the (rational) controller and a
    nontrivial gcd for the group generated by ``r - yhat`` over the filter
    alphabet, computed exactly.
    """
    _require_fir(system)
    ctl = system.controller
    if not isinstance(ctl, LinearBlock):
        raise UnsupportedFlavorError("controller must be a linear block")
    reasons, evidence = [], {}
    if not is_exact(system.reference):
        reasons.append("reference is not rational; discreteness not certifiable")
    if system.filter.exact is None:
        reasons.append("filter coefficients are not rational; discreteness not certifiable")
    if ctl.exact is None:
        reasons.append("controller coefficients are not rational; pole not certifiable")
    if reasons:
        return ErgodicityVerdict("inconclusive", "thm3_unit_pole", evidence, reasons)

    rep = classify_stability(ctl)
    evidence["controller_class"] = rep.classification
    certified = rep.certified_unit_poles
    if rep.classification != "marginal":
        reasons.append(f"controller is {rep.classification}, not marginally stable")
    elif not certified:
        if rep.unit_poles:
            reasons.append("unit-circle pole found numerically but not certifiable")
        else:
            reasons.append("no unit-circle pole")
    if reasons:
        return ErgodicityVerdict("inconclusive", "thm3_unit_pole", evidence, reasons)
    pole = complex(certified[0].value)
    evidence["pole"] = pole.real if pole.imag == 0 else pole
    evidence["pole_flag"] = certified[0].flag

    alphabet = filter_output_alphabet(system)
    r = Fraction(system.reference)
    gcd = rational_group_gcd(r - v for v in alphabet)
    evidence["alphabet_size"] = len(alphabet)
    if gcd is None:
        reasons.append("error group is trivial")
        return ErgodicityVerdict("inconclusive", "thm3_unit_pole", evidence, reasons)
    evidence["gcd"] = gcd
    if gcd < Fraction(1, 10 ** 8):
        reasons.append("gcd of the error group is below 1e-8; floating-point effects may "
                       "blur the invariant classes")
    return ErgodicityVerdict("not_uniquely_ergodic", "thm3_unit_pole", evidence, reasons)


# ---------------------------------------------------------------------------
# average contractivity
# ---------------------------------------------------------------------------

def barnsley_margin(ifs, pi_grid: Sequence[float] = (0.0,)) -> float:
    """``max_pi sum_m q_m(pi) log L_m`` with uniform Lipschitz bounds ``L_m``.

    ``ifs`` is a :class:`ProductIFS` or a sequence of ``(L, p)`` pairs where
    ``p`` is a probability function or a constant. A negative value certifies
    average contractivity; using uniform bounds instead of pointwise ratios
    makes it conservative.
    """
    if isinstance(ifs, ProductIFS):
        try:
            terms = [(ifs.map_lipschitz(m), m) for m in ifs.indices()]
        except UnsupportedFlavorError as exc:
            raise ValueError(f"missing Lipschitz data: {exc}") from exc

        def weights(pi):
            return [ifs.probability(m, pi) for _, m in terms]
        consts = [L for L, _ in terms]
    else:
        pairs = list(ifs)
        if not pairs or any(L is None for L, _ in pairs):
            raise ValueError("missing Lipschitz data")
        consts = [float(L) for L, _ in pairs]

        def weights(pi):
            return [float(prob_eval(p, pi)) if hasattr(p, "kind") else float(p) for _, p in pairs]

    best = -math.inf
    for pi in pi_grid:
        total = 0.0
        for q, L in zip(weights(pi), consts):
            if q == 0.0:
                continue
            total += q * (math.log(L) if L > 0 else -math.inf)
        best = max(best, total)
    return best


# ---------------------------------------------------------------------------
# empirical probes
# ---------------------------------------------------------------------------

@dataclass
class CouplingResult:
    distance: np.ndarray  # distance[k] at time k, k = 0..horizon
    converged: bool


def coupling_probe(system: ClosedLoopSystem, init_a: SimState, init_b: SimState,
                   horizon: int, seed: int, path_id: int = 0,
                   tol: float = 1e-6) -> CouplingResult:
    """Run two copies on the same uniform draws and track their distance.

    The distance is the Euclidean norm of the difference of the augmented
    states (agents, filter, controller). ``converged`` means the distance
    stayed below ``tol`` over the last 10% of steps; it is a heuristic
    witness of asymptotic coupling, not a proof.
    """
    N = system.n_agents
    draws = path_draws(seed, path_id, horizon, N)
    a, b = _Batch.from_state(init_a, 1), _Batch.from_state(init_b, 1)
    batch = _Batch(
        X=[np.vstack([xa, xb]) for xa, xb in zip(a.X, b.X)],
        xf=np.vstack([a.xf, b.xf]), xc=np.vstack([a.xc, b.xc]),
        pi_prev=np.concatenate([a.pi_prev, b.pi_prev]),
    )
    dist = np.empty(horizon + 1)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(horizon + 1):
            aug = batch.augmented()
            dist[k] = float(np.linalg.norm(aug[0] - aug[1]))
            if k == horizon:
                break
            u_out = np.repeat(draws[k, 0][None, :], 2, axis=0)
            u_tr = np.repeat(draws[k, 1][None, :], 2, axis=0)
            batch, _ = _step(system, batch, u_out, u_tr)
    tail = dist[-max(1, (horizon + 1) // 10):]
    return CouplingResult(dist, bool(np.all(tail < tol)))


@dataclass
class ICSensitivity:
    means: list
    stds: list  # sample standard deviations at the final step
    n_paths: list
    gap: float
    pair: tuple
    half_width: float
    confidence: float

    @property
    def significant(self) -> bool:
        return self.gap > self.half_width


def ic_sensitivity(system: ClosedLoopSystem, ics: Sequence[SimState], horizon: int,
                   n_paths: int, observable: str, seed: int = 0,
                   confidence: float = 0.99, workers: int = 1) -> ICSensitivity:
    """Final-step mean of an observable for each initial condition, and the largest gap.

    The half-width is the normal-approximation CI for the difference of two
    independent means at the pair attaining the largest gap. All ICs share
    the seed (common random numbers), which makes this CI conservative.
    """
    if len(ics) < 2:
        raise ValueError("need at least two initial conditions")
    means, stds, ns = [], [], []
    for init in ics:
        s = monte_carlo(system, init, horizon, n_paths, seed, (observable,), workers)
        means.append(float(s.mean[observable][-1]))
        stds.append(float(s.sample_std(observable)[-1]))
        ns.append(s.n_paths)
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    gap, pair = -1.0, (0, 1)
    for i, j in itertools.combinations(range(len(ics)), 2):
        d = abs(means[i] - means[j])
        if d > gap:
            gap, pair = d, (i, j)
    i, j = pair
    hw = z * math.sqrt(stds[i] ** 2 / ns[i] + stds[j] ** 2 / ns[j])
    return ICSensitivity(means, stds, ns, gap, pair, hw, confidence)


# ---------------------------------------------------------------------------
# finite-chain oracle
# ---------------------------------------------------------------------------

@dataclass
class StationaryDistribution:
    states: list  # joint states in itertools.product order
    probs: np.ndarray

    def as_dict(self) -> dict:
        return {s: float(p) for s, p in zip(self.states, self.probs)}


def agent_transition_matrix(agent: Agent, pi: float) -> np.ndarray:
    states = _finite_states(agent)
    index = {_state_key(s): n for n, s in enumerate(states)}
    w = agent.transition_weights(np.array([float(pi)]))[0]
    P = np.zeros((len(states), len(states)))
    for n, s in enumerate(states):
        if isinstance(agent, FiniteActionAgent):
            P[n] = w
        else:
            for W, p in zip(agent.transition_maps, w):
                P[n, index[_state_key(W(s))]] += p
    return P


def open_loop_invariant(agents: Sequence[Agent], pi_fixed: float,
                        cap: int = INVARIANT_CAP) -> StationaryDistribution:
    """Exact stationary law of the joint agent chain at a frozen signal.

    State-independent agents give a rank-one chain whose stationary law is
    the product of the per-agent laws. Otherwise the joint chain is built as
    a sparse Kronecker product, checked for a single closed class, and
    solved linearly.
    """
    state_sets = [tuple(_finite_states(a)) for a in agents]
    n = math.prod(len(s) for s in state_sets)
    if n > cap:
        raise CapExceededError(f"{n} joint states exceed the cap {cap}")
    states = [tuple(_state_key(x) for x in v) for v in itertools.product(*state_sets)]
    mats = [agent_transition_matrix(a, pi_fixed) for a in agents]
    if all(isinstance(a, FiniteActionAgent) for a in agents):
        mu = np.ones(1)
        for P in mats:
            mu = np.kron(mu, P[0])
        return StationaryDistribution(states, mu)

    P = sparse.csr_matrix(np.ones((1, 1)))
    for M in mats:
        P = sparse.kron(P, sparse.csr_matrix(M), format="csr")
    P.eliminate_zeros()
    n_comp, labels = csgraph.connected_components(P, directed=True, connection="strong")
    coo = P.tocoo()
    leaving = labels[coo.row] != labels[coo.col]
    open_classes = set(labels[coo.row[leaving]].tolist())
    closed = [c for c in range(n_comp) if c not in open_classes]
    if len(closed) != 1:
        raise NonUniqueStationaryError(f"chain has {len(closed)} closed classes")
    A = (P.T - sparse.identity(n, format="csr")).tolil()
    A[n - 1, :] = np.ones(n)
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    mu = spsolve(A.tocsc(), rhs)
    mu = np.clip(mu, 0.0, None)
    return StationaryDistribution(states, mu / mu.sum())


def joint_state_distribution(trajectories, burn_in: int = 0) -> dict:
    """Empirical law of the joint agent state (first components) after burn-in."""
    if not isinstance(trajectories, (list, tuple)):
        trajectories = [trajectories]
    counts: dict = {}
    total = 0
    for t in trajectories:
        X = t.x[burn_in:]
        keys, c = np.unique(X, axis=0, return_counts=True)
        for key, cnt in zip(map(tuple, keys.tolist()), c.tolist()):
            counts[key] = counts.get(key, 0) + cnt
        total += len(X)
    return {k: v / total for k, v in counts.items()}


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * math.fsum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)
