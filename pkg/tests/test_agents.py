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
    agent_output,
    agent_transition,
    lipschitz_bound,
    product_ifs,
)
from ergoloop.core import ProbabilityFunction as PF

from conftest import example_agents

ONE = (PF.constant(1.0, lower_bound=1.0),)


def binary(p1):
    return FiniteActionAgent((0, 1), (PF.constant(1 - p1), PF.constant(p1)))


def scalar_affine(a, offsets, probs, c=1.0, outputs=(0.0,), oprobs=ONE):
    return AffineAgent(np.array([[a]]), np.array([c]), np.array(offsets, dtype=float).reshape(-1, 1),
                       probs, np.array(outputs), oprobs)


# agent_transition

def test_degenerate_law_forces_action():
    a = FiniteActionAgent((0, 1), (PF.constant(0.0), PF.constant(1.0)))
    for state in (0, 1):
        for u in (0.0, 0.5, 0.999):
            assert agent_transition(a, state, 3.0, u)[0] == 1.0


def test_example_agent_saturated_at_high_signal():
    high = example_agents()[0]
    w = high.transition_weights(np.array([10.0]))[0]
    assert w == pytest.approx([0.03, 0.97], abs=1e-15)
    assert agent_transition(high, 0, 10.0, 0.5)[0] == 1.0
    # cumulative order (0.03, 0.97): u below 0.03 picks action 0
    assert agent_transition(high, 1, 10.0, 0.02)[0] == 0.0


def test_memoryless_affine():
    a = scalar_affine(0.0, [3.0], (PF.constant(1.0),))
    for x in (-7.0, 0.0, 42.0):
        assert agent_transition(a, [x], 1.0, 0.3)[0] == 3.0


def test_finite_actions_refuse_floats():
    with pytest.raises(TypeError):
        FiniteActionAgent((0.5, 1), (PF.constant(0.5), PF.constant(0.5)))
    a = FiniteActionAgent(("1/2", 1), (PF.constant(0.5), PF.constant(0.5)))
    assert a.actions == (Fraction(1, 2), Fraction(1))


def test_finite_agent_validation():
    with pytest.raises(ValueError):
        FiniteActionAgent((0, 0), (PF.constant(0.5), PF.constant(0.5)))
    with pytest.raises(ValueError):
        FiniteActionAgent((0, 1), (PF.constant(0.5), PF.constant(0.6)))


# agent_output

def test_finite_output_is_state():
    a = example_agents()[0]
    assert agent_output(a, 1, 0.0, 0.7) == 1.0
    assert agent_output(a, 0, 9.0, 0.1) == 0.0


def test_affine_output():
    a = scalar_affine(0.5, [0.0], (PF.constant(1.0),), c=2.0, outputs=(0.5,))
    assert agent_output(a, [3.0], 0.0, 0.4) == 6.5


def test_lipschitz_output():
    a = LipschitzAgent((lambda x: x / 2,), (0.5,), (PF.constant(1.0),),
                       (lambda x: x / 2,), (0.5,), ONE)
    assert agent_output(a, 4.0, 0.0, 0.2) == 2.0


# product IFS

def test_product_size():
    ifs = product_ifs([binary(0.5), binary(0.5)])
    assert ifs.size == 4
    assert len(list(ifs.indices())) == 4


def test_product_probability():
    ifs = product_ifs([binary(0.97), binary(0.03)])
    assert ifs.probability((1, 1, 0, 0), 0.0) == pytest.approx(0.0291, rel=1e-12)


def test_single_agent_product_is_own_ifs():
    a = scalar_affine(0.5, [0.0, 1.0], (PF.constant(0.25), PF.constant(0.75)))
    ifs = product_ifs([a])
    assert ifs.size == 2
    assert [ifs.probability(m, 0.0) for m in ifs.indices()] == [0.25, 0.75]
    nxt, y = ifs.apply((1, 0), [np.array([2.0])])
    assert nxt[0][0] == 2.0 and y == 2.0


def test_cap_exceeded():
    with pytest.raises(CapExceededError):
        list(product_ifs(example_agents(), cap=100).indices())


@settings(max_examples=10)
@given(st.floats(-50, 50))
def test_product_probabilities_normalized(pi):
    ifs = product_ifs(example_agents())
    total = math.fsum(ifs.probability(m, pi) for m in ifs.indices())
    assert abs(total - 1) <= 1e-9
    assert min(ifs.probability(m, pi) for m in ifs.indices()) >= 0.02 ** 10 * (1 - 1e-9)


# lipschitz_bound

def test_lipschitz_bounds():
    a = AffineAgent(np.diag([0.5, 0.2]), np.ones(2), np.zeros((3, 2)),
                    (PF.constant(0.2), PF.constant(0.3), PF.constant(0.5)), np.zeros(1), ONE)
    assert lipschitz_bound(a) == pytest.approx([0.5] * 3)
    b = LipschitzAgent((lambda x: 0.3 * x, lambda x: 0.9 * x), (0.3, 0.9),
                       (PF.constant(0.5), PF.constant(0.5)), (lambda x: x,), (1.0,), ONE)
    assert lipschitz_bound(b) == [0.3, 0.9]
    c = AffineAgent(np.array([[0, 2], [0, 0]]), np.ones(2), np.zeros((1, 2)),
                    (PF.constant(1.0),), np.zeros(1), ONE)
    assert lipschitz_bound(c) == pytest.approx([2.0])
    with pytest.raises(UnsupportedFlavorError):
        lipschitz_bound(binary(0.5))


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_declared_constant_bounds_empirical_ratio(x, y):
    b = LipschitzAgent((lambda v: 0.9 * math.tanh(v),), (0.9,), (PF.constant(1.0),),
                       (lambda v: v,), (1.0,), ONE)
    W = b.transition_maps[0]
    assert abs(W(x) - W(y)) <= b.lipschitz[0] * abs(x - y) + 1e-15


def test_lipschitz_states_closed():
    with pytest.raises(ValueError):
        LipschitzAgent((lambda v: v + 1,), (1.0,), (PF.constant(1.0),), (lambda v: v,), (1.0,),
                       ONE, states=(0, 1))


# memoryless equivalence

@pytest.mark.parametrize("pi", [0.0, 3.0, 5.0, 8.0])
def test_memoryless_affine_matches_finite(pi):
    finite = example_agents()[0]
    affine = AffineAgent(np.zeros((1, 1)), np.ones(1), np.array([[0.0], [1.0]]),
                         finite.probabilities, np.zeros(1), ONE)
    grid = (np.arange(10000) + 0.5) / 10000
    for state in (0.0, 1.0):
        nxt_f = [agent_transition(finite, state, pi, u)[0] for u in grid]
        nxt_a = [agent_transition(affine, [state], pi, u)[0] for u in grid]
        assert nxt_f == nxt_a
        assert agent_output(finite, state, pi, 0.3) == agent_output(affine, [state], pi, 0.3)
