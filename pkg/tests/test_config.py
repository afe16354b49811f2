from fractions import Fraction

import numpy as np
import pytest

from ergoloop.agents import AffineAgent, FiniteActionAgent, LipschitzAgent
from ergoloop.config import (
    ConfigError,
    config_digest,
    get_param,
    load_config,
    loads_config,
    packaged_config,
    packaged_config_path,
    parse_number,
    parse_toml,
    set_param,
)
from ergoloop.ergodicity import certify_thm5_lipschitz

MINIMAL = """
[run]
seed = 3
horizon = 20
n_paths = 4

[system]
reference = 1

[controller]
kind = "lag"
kappa = "1/10"
alpha = 0
beta = "1/2"

[[agents]]
actions = [0, 1]
initial = 0
probabilities = [{ kind = "constant", p = 0.5 }, { kind = "constant", p = 0.5 }]
"""


def test_example_pi_config():
    cfg = load_config(packaged_config_path("example_pi"))
    s = cfg.system
    assert len(s.agents) == 10 and all(isinstance(a, FiniteActionAgent) for a in s.agents)
    assert s.reference == 5
    assert s.controller.exact.D == Fraction(1, 10) and s.controller.exact.C == (Fraction(1, 2),)
    assert s.controller.A.tolist() == [[1.0]]
    assert s.filter.exact.D == Fraction(1, 2)
    assert [float(x[0]) for x in cfg.init.agents] == [1] * 5 + [0] * 5
    assert cfg.init.controller.tolist() == [50.0]
    assert cfg.init.filter.tolist() == [0.0]
    assert cfg.seed == 1 and cfg.n_paths == 2000 and cfg.horizon == 1001


def test_example_lag_config():
    cfg = load_config(packaged_config_path("example_lag"))
    assert cfg.system.controller.exact.A == ((Fraction(99, 100),),)


def test_base_plus_scale_names_agent():
    text = MINIMAL.replace('{ kind = "constant", p = 0.5 }, { kind = "constant", p = 0.5 }',
                           '{ base = 0.5, scale = 0.7, rate = 1, center = 0 }, '
                           '{ kind = "constant", p = 0.5 }')
    with pytest.raises(ConfigError) as info:
        loads_config(text)
    assert any(e.startswith("agents[0].probabilities[0]") for e in info.value.errors)


def test_seed_required():
    with pytest.raises(ConfigError) as info:
        loads_config(MINIMAL.replace("seed = 3", ""))
    assert any("seed required" in e for e in info.value.errors)


def test_all_errors_collected():
    bad = MINIMAL.replace("seed = 3", "").replace('kappa = "1/10"', "").replace(
        "horizon = 20", "horizon = 0")
    with pytest.raises(ConfigError) as info:
        loads_config(bad)
    errs = info.value.errors
    assert len(errs) >= 3
    assert any(e.startswith("controller.kappa") for e in errs)
    assert any(e.startswith("run.horizon") for e in errs)


def test_parse_error_position():
    with pytest.raises(ConfigError) as info:
        loads_config("[run]\nseed = = 1\n")
    assert "line 2" in info.value.errors[0]


def test_unknown_observable():
    with pytest.raises(ConfigError) as info:
        loads_config(MINIMAL.replace("n_paths = 4", 'n_paths = 4\nobservables = ["x2"]'))
    assert any("x2" in e for e in info.value.errors)


def test_numbers():
    assert parse_number("1/10") == Fraction(1, 10)
    assert parse_number("0.99") == Fraction(99, 100)
    assert parse_number("-4.01") == Fraction(-401, 100)
    assert parse_number(0.5) == 0.5 and isinstance(parse_number(0.5), float)
    assert parse_number("1/10", exact=False) == 0.1
    assert parse_number("-inf") == float("-inf")
    with pytest.raises(TypeError):
        parse_number("abc")
    with pytest.raises(TypeError):
        parse_number(True)


def test_digest_ignores_key_order():
    a = parse_toml('x = 1\ny = "a"\n[t]\nz = [1, 2]\n')
    b = parse_toml('[t]\nz = [1, 2]\n', "b")
    b = {"y": "a", **b, "x": 1}
    assert config_digest(a) == config_digest(b)
    assert config_digest(a) != config_digest({**a, "x": 2})


def test_param_paths():
    raw = parse_toml(packaged_config("example_pi"))
    assert get_param(raw, "controller.initial") == [50]
    assert get_param(raw, "agents[1].initial") == 0
    changed = set_param(raw, "controller.initial", -50)
    assert changed["controller"]["initial"] == [-50]
    assert raw["controller"]["initial"] == [50]
    with pytest.raises(ValueError):
        set_param(raw, "agents", 1)
    with pytest.raises(KeyError):
        get_param(raw, "controller.nope")


def test_affine_and_lipschitz_groups():
    text = MINIMAL.replace("""[[agents]]
actions = [0, 1]
initial = 0
probabilities = [{ kind = "constant", p = 0.5 }, { kind = "constant", p = 0.5 }]""", """
[[agents]]
kind = "affine"
A = [[0.5]]
c = [1]
offsets = [[0], [1]]
initial = [0]
probabilities = [{ kind = "constant", p = 0.5, lower_bound = 0.5 },
                 { kind = "constant", p = 0.5, lower_bound = 0.5 }]

[[agents]]
kind = "lipschitz"
count = 2
initial = 0.3
maps = [{ kind = "tanh", gain = 0.9, lipschitz = 0.9 }, { kind = "affine", a = 0.5, b = 1, lipschitz = 0.5 }]
probabilities = [{ kind = "table", points = [[0, 0.2], [1, 0.8]], lower_bound = 0.2 },
                 { kind = "table", points = [[0, 0.8], [1, 0.2]], lower_bound = 0.2 }]
""")
    cfg = loads_config(text)
    kinds = [type(a) for a in cfg.system.agents]
    assert kinds == [AffineAgent, LipschitzAgent, LipschitzAgent]
    W = cfg.system.agents[1].transition_maps[0]
    assert W(1.0) == pytest.approx(0.9 * np.tanh(1.0))


def test_lipschitz_declaration_checked():
    text = MINIMAL.replace("""actions = [0, 1]
initial = 0
probabilities = [{ kind = "constant", p = 0.5 }, { kind = "constant", p = 0.5 }]""", """kind = "lipschitz"
initial = 0
maps = [{ kind = "affine", a = 2, lipschitz = 1 }]
probabilities = [{ kind = "constant", p = 1 }]""")
    with pytest.raises(ConfigError) as info:
        loads_config(text)
    assert any("maps[0].lipschitz" in e for e in info.value.errors)


def test_block_kinds():
    for ctl in ('kind = "tf"\nnum = ["1/10", "2/5"]\nden = [1, -1]\ninitial = [0]',
                'kind = "ss"\nA = [[1]]\nB = [1]\nC = ["1/2"]\nD = "1/10"\ninitial = [0]'):
        text = MINIMAL.replace('kind = "lag"\nkappa = "1/10"\nalpha = 0\nbeta = "1/2"', ctl)
        cfg = loads_config(text)
        assert cfg.system.controller.exact.C == (Fraction(1, 2),)
    with pytest.raises(ConfigError):
        loads_config(MINIMAL.replace('kind = "lag"', 'kind = "pid"'))


def test_initial_state_dimension_checked():
    with pytest.raises(ConfigError) as info:
        loads_config(MINIMAL.replace('beta = "1/2"', 'beta = "1/2"\ninitial = [1, 2]'))
    assert any(e.startswith("controller.initial") for e in info.value.errors)
