import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ergoloop.agents import (
    AffineAgent,
    CapExceededError,
    FiniteActionAgent,
    LipschitzAgent,
    UnsupportedFlavorError,
    product_ifs,
)
from ergoloop.blocks import fir_filter, identity_block, lag_controller, pi_controller, tf_to_ss
from ergoloop.core import ProbabilityFunction as PF
from ergoloop.ergodicity import (
    NonUniqueStationaryError,
    agent_transition_matrix,
    barnsley_margin,
    certify_thm3_negative,
    certify_thm4_linear,
    certify_thm5_lipschitz,
    certify_thm6_finite,
    coupling_probe,
    filter_output_alphabet,
    ic_sensitivity,
    is_primitive,
    open_loop_invariant,
    total_variation,
    transition_graph,
)
from ergoloop.loop import ClosedLoopSystem, open_loop_system

from conftest import example_agents, example_init, example_system

FIR = fir_filter([Fraction(1, 2), Fraction(1, 2)])
LAG = lag_controller(Fraction(1, 10), Fraction("-4.01"), Fraction("0.99"))
PI = pi_controller(Fraction(1, 10), -4)
ONE = (PF.constant(1.0, lower_bound=1.0),)


def logistic_pair(lb=0.02):
    return (PF.logistic(0.98, -0.96, 100, 5, lower_bound=lb),
            PF.logistic(0.02, 0.96, 100, 5, lower_bound=lb))


def affine_agent(lb=0.02):
    return AffineAgent(np.zeros((1, 1)), np.ones(1), np.array([[0.0], [1.0]]),
                       logistic_pair(lb), np.zeros(1), ONE)


def lipschitz_agent(ls, lb=0.1):
    maps = tuple((lambda x, l=l: l * x) for l in ls)
    probs = tuple(PF.constant(1 / len(ls), lower_bound=lb) for _ in ls)
    return LipschitzAgent(maps, tuple(ls), probs, (lambda x: x,), (1.0,), ONE)


def alternating_agent():
    """Binary agent on {0, 1} that always flips its state."""
    return LipschitzAgent((lambda x: 1 - x,), (1.0,), (PF.constant(1.0, lower_bound=1.0),),
                          (lambda x: x,), (1.0,), ONE, states=(0.0, 1.0))


# certify_thm4_linear

def test_thm4_lag_certified():
    v = certify_thm4_linear(ClosedLoopSystem([affine_agent()], FIR, LAG, 5))
    assert v.status == "uniquely_ergodic" and v.theorem == "thm4_linear"
    assert v.evidence["delta"] == 0.02
    # the off-diagonal coupling blocks make ||A|| > 1, so m is not 1 here;
    # 42 comes from an independent power-and-SVD loop
    assert v.evidence["contraction_index"] == 42


def test_thm4_pi_not_schur():
    v = certify_thm4_linear(ClosedLoopSystem([affine_agent()], FIR, PI, 5))
    assert v.status == "inconclusive"
    assert any("controller not Schur" in r for r in v.reasons)


def test_thm4_zero_lower_bound():
    v = certify_thm4_linear(ClosedLoopSystem([affine_agent(lb=0.0)], FIR, LAG, 5))
    assert v.status == "inconclusive"
    assert "p_{ij} not bounded below" in v.reasons


def test_thm4_unsupported():
    with pytest.raises(UnsupportedFlavorError):
        certify_thm4_linear(example_system("lag"))


# certify_thm5_lipschitz

def test_thm5_certified():
    v = certify_thm5_lipschitz(ClosedLoopSystem([lipschitz_agent((0.5, 0.9))], FIR, LAG, 1))
    assert v.status == "uniquely_ergodic"
    assert v.evidence["max_lipschitz"] == 0.9


def test_thm5_constant_one():
    v = certify_thm5_lipschitz(ClosedLoopSystem([lipschitz_agent((0.5, 1.0))], FIR, LAG, 1))
    assert v.status == "inconclusive"


def test_thm5_delta_undeclared():
    a = lipschitz_agent((0.5, 0.9), lb=None)
    v = certify_thm5_lipschitz(ClosedLoopSystem([a], FIR, LAG, 1))
    assert v.status == "inconclusive"
    assert any("no declared lower bound" in r for r in v.reasons)


# transition graph and primitivity

def test_example_graph_complete():
    g = transition_graph(example_agents())
    assert g.n_vertices == 1024
    assert g.adjacency.nnz == 1024 * 1024


def test_alternating_graph_two_cycle():
    g = transition_graph([alternating_agent()])
    assert g.adjacency.toarray().tolist() == [[0, 1], [1, 0]]
    assert is_primitive(g) == (True, False, None)


def test_single_action_self_loop():
    a = FiniteActionAgent((3,), (PF.constant(1.0),))
    g = transition_graph([a])
    assert g.adjacency.toarray().tolist() == [[1]]
    assert is_primitive(g) == (True, True, 1)


def test_graph_cap():
    with pytest.raises(CapExceededError):
        transition_graph(example_agents(), vertex_cap=1000)


def test_is_primitive_examples():
    assert tuple(is_primitive(np.ones((4, 4)))) == (True, True, 1)
    assert tuple(is_primitive(np.array([[0, 1], [1, 0]]))) == (True, False, None)
    three_cycle_chord = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]])
    three_cycle_chord[1, 0] = 1  # adds the 2-cycle 0 -> 1 -> 0
    result = is_primitive(three_cycle_chord)
    assert result.primitive
    assert result.exponent == brute_exponent(three_cycle_chord)


def brute_exponent(A, cap=None):
    n = A.shape[0]
    cap = cap or (n - 1) ** 2 + 1
    P = np.eye(n, dtype=np.int64)
    for k in range(1, cap + 1):
        P = np.minimum(P @ A, 1)
        if np.all(P > 0):
            return k
    return None


def test_primitivity_exhaustive_three_vertices():
    # the full four-vertex enumeration runs in the acceptance suite
    for bits in range(2 ** 9):
        A = np.array([(bits >> i) & 1 for i in range(9)]).reshape(3, 3)
        res = is_primitive(A)
        assert res.primitive == (brute_exponent(A) is not None)
        if res.primitive:
            assert res.exponent == brute_exponent(A)


# certify_thm6_finite

def test_thm6_example_lag():
    v = certify_thm6_finite(example_system("lag"))
    assert v.status == "uniquely_ergodic"
    assert v.evidence["primitive"] and v.evidence["primitivity_exponent"] == 1


def test_thm6_example_pi():
    v = certify_thm6_finite(example_system("pi"))
    assert v.status == "inconclusive"
    assert any("controller not Schur" in r for r in v.reasons)


def test_thm6_bipartite_invariant_measure_only():
    v = certify_thm6_finite(ClosedLoopSystem([alternating_agent()] * 2, FIR, LAG, 1))
    assert v.status == "inconclusive"
    assert v.evidence["strongly_connected"] is False  # two alternating agents split into two orbits
    v1 = certify_thm6_finite(ClosedLoopSystem([alternating_agent()], FIR, LAG, 1))
    assert v1.status == "inconclusive"
    assert v1.evidence["strongly_connected"] and not v1.evidence["primitive"]
    assert v1.evidence["invariant_measure_exists"] is True


# certify_thm3_negative

def test_thm3_example_pi():
    v = certify_thm3_negative(example_system("pi"))
    assert v.status == "not_uniquely_ergodic" and v.theorem == "thm3_unit_pole"
    assert v.evidence["gcd"] == Fraction(1, 2)
    assert v.evidence["pole"] == 1 and v.evidence["pole_flag"] == "exact_one"


def test_thm3_example_lag():
    assert certify_thm3_negative(example_system("lag")).status == "inconclusive"


def test_thm3_irrational_reference():
    s = ClosedLoopSystem(example_agents(), FIR, PI, math.sqrt(2))
    v = certify_thm3_negative(s)
    assert v.status == "inconclusive"
    assert any("discreteness not certifiable" in r for r in v.reasons)


def test_thm3_needs_fir():
    s = ClosedLoopSystem(example_agents(), tf_to_ss([Fraction(1, 2)], [1, Fraction(-1, 2)]), PI, 5)
    with pytest.raises(UnsupportedFlavorError):
        certify_thm3_negative(s)


def test_thm3_tiny_gcd_note():
    s = ClosedLoopSystem(example_agents(), fir_filter([Fraction(1, 10 ** 9)]), PI, 5)
    v = certify_thm3_negative(s)
    assert v.status == "not_uniquely_ergodic"
    assert any("1e-8" in r for r in v.reasons)


@pytest.mark.parametrize("name", ["pi", "lag"])
def test_thm3_and_thm6_exclusive(name):
    s = example_system(name)
    definitive = [certify_thm3_negative(s).status == "not_uniquely_ergodic",
                  certify_thm6_finite(s).status == "uniquely_ergodic"]
    assert sum(definitive) == 1


# filter_output_alphabet

def test_alphabet_example():
    assert filter_output_alphabet(example_system("pi")) == {Fraction(j, 2) for j in range(21)}


def test_alphabet_identity_one_agent():
    s = ClosedLoopSystem(example_agents()[:1], identity_block(), PI, 5)
    assert filter_output_alphabet(s) == {0, 1}


def test_alphabet_depth_zero_is_sums():
    s = ClosedLoopSystem(example_agents()[:3], fir_filter([1]), PI, 5)
    assert filter_output_alphabet(s) == {0, 1, 2, 3}


def test_alphabet_cap():
    with pytest.raises(CapExceededError):
        filter_output_alphabet(ClosedLoopSystem(example_agents(), FIR, PI, 5), cap=10)


# barnsley_margin

def test_barnsley_half_maps():
    assert barnsley_margin([(0.5, 0.5), (0.5, 0.5)]) == pytest.approx(math.log(0.5), abs=1e-12)


def test_barnsley_mixed():
    assert barnsley_margin([(2.0, 0.5), (0.125, 0.5)]) == pytest.approx(-math.log(2), abs=1e-12)


def test_barnsley_unit():
    assert barnsley_margin([(1.0, 0.3), (1.0, 0.7)]) == 0.0


def test_barnsley_missing():
    with pytest.raises(ValueError):
        barnsley_margin([(None, 1.0)])


@settings(max_examples=25)
@given(st.lists(st.floats(-20, 20), min_size=1, max_size=10))
def test_barnsley_grid_refinement_monotone(grid):
    agent = AffineAgent(np.array([[0.5]]), np.ones(1), np.array([[0.0], [1.0]]),
                        (PF.logistic(0.1, 0.8, 1, 0), PF.logistic(0.9, -0.8, 1, 0)),
                        np.zeros(1), ONE)
    ifs = product_ifs([agent])
    coarse = barnsley_margin(ifs, grid)
    fine = barnsley_margin(ifs, grid + [g + 0.01 for g in grid])
    assert coarse <= fine + 1e-12


# coupling_probe

def half_maps_system():
    a = AffineAgent(np.array([[0.5]]), np.ones(1), np.array([[0.0], [1.0]]),
                    (PF.constant(0.5, 0.5), PF.constant(0.5, 0.5)), np.zeros(1), ONE)
    return open_loop_system([a], 0.0)


def test_coupling_exact_halving():
    s, init = half_maps_system()
    other = s.initial_state(agents=[[8.0]], controller=[0.0])
    r = coupling_probe(s, init, other, 60, 11)
    assert np.allclose(r.distance, 8.0 * 2.0 ** -np.arange(61), rtol=1e-12, atol=1e-15)
    assert r.converged


def test_coupling_identical_inits():
    s = example_system("lag")
    init = example_init(s)
    r = coupling_probe(s, init, init, 200, 1)
    assert np.all(r.distance == 0)


def test_coupling_example_pi_not_converged():
    s = example_system("pi")
    r = coupling_probe(s, example_init(s, 50.0), example_init(s, -50.0), 1000, 1)
    assert not r.converged


def test_coupling_geometric_decay_lag():
    # common draws: once agent choices coincide the block states contract by the Schur part
    s = example_system("lag")
    r = coupling_probe(s, example_init(s, 0.5), example_init(s, 0.0), 400, 2)
    assert r.distance[-1] < r.distance[0] * 0.99 ** 300


# ic_sensitivity

def test_ic_sensitivity_deterministic():
    stay = FiniteActionAgent((0, 1), (PF.constant(0.0), PF.constant(1.0)))
    s = ClosedLoopSystem([stay], identity_block(), LAG, 1)
    res = ic_sensitivity(s, [s.initial_state(agents=[1], controller=[c]) for c in (-5, 5)],
                         10, 20, "x1")
    assert res.gap == 0.0 and res.half_width == 0.0


def test_ic_sensitivity_needs_two():
    s = example_system("pi")
    with pytest.raises(ValueError):
        ic_sensitivity(s, [example_init(s)], 10, 5, "x1")


# open_loop_invariant

def test_invariant_coin():
    a = FiniteActionAgent((0, 1), (PF.constant(0.5), PF.constant(0.5)))
    assert open_loop_invariant([a], 0.0).probs.tolist() == [0.5, 0.5]


def test_invariant_example_agent_midpoint():
    mu = open_loop_invariant(example_agents()[:1], 5.0).probs
    assert mu == pytest.approx([0.505, 0.495], abs=1e-12)


def test_invariant_product():
    agents = example_agents()[:1] + example_agents()[-1:]
    joint = open_loop_invariant(agents, 3.0).probs.reshape(2, 2)
    a = open_loop_invariant(agents[:1], 3.0).probs
    b = open_loop_invariant(agents[1:], 3.0).probs
    assert np.allclose(joint, np.outer(a, b), atol=1e-15)


def sticky_agent(stay):
    maps = (lambda x: x, lambda x: 1 - x)
    return LipschitzAgent(maps, (1.0, 1.0), (PF.constant(stay), PF.constant(1 - stay)),
                          (lambda x: x,), (1.0,), ONE, states=(0.0, 1.0))


@pytest.mark.parametrize("pi", [0.0, 3.0])
def test_invariant_fixed_point(pi):
    agents = [sticky_agent(0.7), sticky_agent(0.2)] + example_agents()[:2]
    mu = open_loop_invariant(agents, pi)
    P = np.ones((1, 1))
    for a in agents:
        P = np.kron(P, agent_transition_matrix(a, pi))
    after = mu.probs @ P
    assert 0.5 * np.abs(after - mu.probs).sum() < 1e-10


def test_invariant_reducible():
    with pytest.raises(NonUniqueStationaryError):
        open_loop_invariant([sticky_agent(1.0)], 0.0)


def test_invariant_cap():
    with pytest.raises(CapExceededError):
        open_loop_invariant(example_agents(), 0.0, cap=100)


def test_total_variation():
    assert total_variation({0: 0.5, 1: 0.5}, {0: 1.0}) == 0.5
