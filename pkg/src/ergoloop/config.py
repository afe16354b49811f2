"""TOML experiment configuration.

Grammar (every table is optional unless marked required)::

    [run]                       # required
    seed = 1                    # required, integer
    horizon = 1001              # number of recorded steps, k = 0 .. horizon - 1
    n_paths = 2000
    observables = ["y", "x1"]   # y, yhat, e, pi, x<i>, y<i>
    burn_in = 0
    workers = 1
    out = "out"

    [system]
    reference = "5"             # strings such as "1/10" or "0.99" are exact rationals
    pi_prev_init = 0.0
    signal_interval = ["-inf", "inf"]

    [controller]                # required
    kind = "pi"                 # pi (kappa, alpha) | lag (kappa, alpha, beta)
                                # | tf (num, den in z^-1) | ss (A, B, C, D)
    initial = [50]

    [filter]
    kind = "fir"                # fir (taps) | tf | ss | identity
    taps = ["1/2", "1/2"]
    initial = [0]

    [[agents]]                  # required, one table per group
    count = 5
    kind = "finite"             # finite | affine | lipschitz
    actions = [0, 1]
    initial = 1
    probabilities = [{ kind = "logistic", base = 0.98, scale = -0.95,
                       rate = 100, center = 5, lower_bound = 0.03 }, ...]

Affine groups give ``A``, ``c``, ``offsets`` (one vector per transition
map), ``probabilities``, ``outputs`` and ``output_probabilities``.
Lipschitz groups are scalar and give ``maps`` and optional ``output_maps``
as tables ``{kind = "affine", a, b, lipschitz}`` or
``{kind = "tanh", gain, shift, lipschitz}``, each with a declared constant.

Probability tables are ``{kind = "logistic", base, scale, rate, center}``,
``{kind = "constant", p}`` or ``{kind = "table", points = [[pi, p], ...]}``,
each with an optional ``lower_bound``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np
import tomli

from .agents import AffineAgent, FiniteActionAgent, LipschitzAgent
from .blocks import (
    LinearBlock,
    fir_filter,
    identity_block,
    lag_controller,
    pi_controller,
    tf_to_ss,
)
from .core import ProbabilityFunction
from .loop import ClosedLoopSystem, SimState

_FRACTION_RE = re.compile(r"^\s*[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?(\s*/\s*\d+)?\s*$")


class ConfigError(ValueError):
    """Configuration could not be parsed or validated.

    ``errors`` lists every problem found, each prefixed by its field path.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass
class ExperimentConfig:
    system: ClosedLoopSystem
    init: SimState
    horizon: int
    n_paths: int
    seed: int
    observables: tuple
    burn_in: int
    workers: int
    out: Optional[str]
    raw: dict
    digest: str
    source: Optional[str] = None


def config_digest(raw: dict) -> str:
    """SHA-256 of the canonical JSON form; key order in the file does not matter."""
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def parse_number(value, exact: bool = True):
    """TOML ints stay ints, floats stay floats, numeric strings become Fractions.

    ``"inf"`` and ``"-inf"`` give float infinities.
    """
    if isinstance(value, bool):
        raise TypeError("expected a number, got a boolean")
    if isinstance(value, (int, float, Fraction)):
        return value
    if isinstance(value, str):
        s = value.strip().lower()
        if s in ("inf", "+inf", "infinity"):
            return math.inf
        if s in ("-inf", "-infinity"):
            return -math.inf
        if _FRACTION_RE.match(value):
            frac = Fraction(value.replace(" ", ""))
            return frac if exact else float(frac)
    raise TypeError(f"expected a number, got {value!r}")


class _Collector:
    def __init__(self):
        self.errors: list[str] = []

    def add(self, path: str, msg: str) -> None:
        self.errors.append(f"{path}: {msg}")

    def get(self, table: dict, key: str, path: str, required=False, default=None):
        if key in table:
            return table[key]
        if required:
            self.add(f"{path}.{key}" if path else key, "required")
        return default

    def number(self, table, key, path, required=False, default=None, exact=True):
        raw = self.get(table, key, path, required, default)
        if raw is None:
            return None
        try:
            return parse_number(raw, exact)
        except TypeError as exc:
            self.add(f"{path}.{key}", str(exc))
            return None

    def integer(self, table, key, path, required=False, default=None, minimum=None):
        raw = self.get(table, key, path, required, default)
        if raw is None:
            return None
        if isinstance(raw, bool) or not isinstance(raw, int):
            self.add(f"{path}.{key}", f"expected an integer, got {raw!r}")
            return None
        if minimum is not None and raw < minimum:
            self.add(f"{path}.{key}", f"must be >= {minimum}")
            return None
        return raw

    def numbers(self, table, key, path, required=False, default=None, exact=True):
        raw = self.get(table, key, path, required, default)
        if raw is None:
            return None
        if not isinstance(raw, list):
            raw = [raw]
        out = []
        for n, v in enumerate(raw):
            try:
                out.append(parse_number(v, exact))
            except TypeError as exc:
                self.add(f"{path}.{key}[{n}]", str(exc))
                return None
        return out

    def matrix(self, table, key, path, required=False):
        raw = self.get(table, key, path, required)
        if raw is None:
            return None
        if not isinstance(raw, list) or not all(isinstance(r, list) for r in raw):
            self.add(f"{path}.{key}", "expected an array of arrays")
            return None
        try:
            return [[parse_number(v) for v in row] for row in raw]
        except TypeError as exc:
            self.add(f"{path}.{key}", str(exc))
            return None


# ---------------------------------------------------------------------------
# component builders
# ---------------------------------------------------------------------------

def _probability(c: _Collector, spec, path: str) -> Optional[ProbabilityFunction]:
    if not isinstance(spec, dict):
        c.add(path, "expected a table")
        return None
    kind = spec.get("kind", "logistic")
    lb = c.number(spec, "lower_bound", path, exact=False)
    lb = None if lb is None else float(lb)
    try:
        if kind == "logistic":
            vals = [c.number(spec, k, path, required=True, exact=False)
                    for k in ("base", "scale", "rate", "center")]
            if None in vals:
                return None
            return ProbabilityFunction.logistic(*(float(v) for v in vals), lower_bound=lb)
        if kind == "constant":
            p = c.number(spec, "p", path, required=True, exact=False)
            return None if p is None else ProbabilityFunction.constant(float(p), lower_bound=lb)
        if kind == "table":
            pts = c.matrix(spec, "points", path, required=True)
            if pts is None:
                return None
            return ProbabilityFunction.table([(float(a), float(b)) for a, b in pts],
                                             lower_bound=lb)
    except ValueError as exc:
        c.add(path, str(exc))
        return None
    c.add(f"{path}.kind", f"unknown probability kind {kind!r}")
    return None


def _probabilities(c: _Collector, table, key, path, required=True):
    raw = c.get(table, key, path, required)
    if raw is None:
        return None
    if not isinstance(raw, list) or not raw:
        c.add(f"{path}.{key}", "expected a nonempty array of tables")
        return None
    funcs = [_probability(c, spec, f"{path}.{key}[{n}]") for n, spec in enumerate(raw)]
    return None if None in funcs else tuple(funcs)


def _scalar_map(c: _Collector, spec, path):
    if not isinstance(spec, dict):
        c.add(path, "expected a table")
        return None
    kind = spec.get("kind", "affine")
    L = c.number(spec, "lipschitz", path, required=True, exact=False)
    if kind == "affine":
        a = c.number(spec, "a", path, required=True, exact=False)
        b = c.number(spec, "b", path, default=0, exact=False)
        if None in (a, b, L):
            return None
        a, b = float(a), float(b)
        true_l = abs(a)
        fn = _AffineMap(a, b)
    elif kind == "tanh":
        g = c.number(spec, "gain", path, required=True, exact=False)
        s = c.number(spec, "shift", path, default=0, exact=False)
        if None in (g, s, L):
            return None
        g, s = float(g), float(s)
        true_l = abs(g)
        fn = _TanhMap(g, s)
    else:
        c.add(f"{path}.kind", f"unknown map kind {kind!r}")
        return None
    if float(L) < true_l:
        c.add(f"{path}.lipschitz", f"declared {float(L)} is below the map's constant {true_l}")
        return None
    return fn, float(L)


@dataclass(frozen=True)
class _AffineMap:
    a: float
    b: float

    def __call__(self, x):
        return self.a * np.asarray(x, dtype=float) + self.b


@dataclass(frozen=True)
class _TanhMap:
    gain: float
    shift: float

    def __call__(self, x):
        return self.gain * np.tanh(np.asarray(x, dtype=float)) + self.shift


def _agent(c: _Collector, g: dict, path: str):
    """One agent model plus its initial state, or (None, None) after recording errors."""
    kind = g.get("kind", "finite")
    name = str(g.get("name", path))
    n_err = len(c.errors)
    if kind == "finite":
        actions = c.numbers(g, "actions", path, required=True)
        probs = _probabilities(c, g, "probabilities", path)
        init = c.number(g, "initial", path, required=True)
        if len(c.errors) > n_err:
            return None, None
        try:
            agent = FiniteActionAgent(tuple(actions), probs, name=name)
        except (TypeError, ValueError) as exc:
            c.add(path, str(exc))
            return None, None
        if not any(init == a for a in agent.actions):
            c.add(f"{path}.initial", f"{init} is not an action")
            return None, None
        return agent, float(init)
    if kind == "affine":
        A = c.matrix(g, "A", path, required=True)
        cv = c.numbers(g, "c", path, required=True, exact=False)
        offsets = c.matrix(g, "offsets", path, required=True)
        probs = _probabilities(c, g, "probabilities", path)
        outputs = c.numbers(g, "outputs", path, default=[0.0], exact=False)
        oprobs = (_probabilities(c, g, "output_probabilities", path)
                  if "output_probabilities" in g
                  else (ProbabilityFunction.constant(1.0, lower_bound=1.0),))
        init = c.numbers(g, "initial", path, required=True, exact=False)
        if len(c.errors) > n_err:
            return None, None
        try:
            agent = AffineAgent(np.array(A, dtype=float), np.array(cv, dtype=float),
                                np.array(offsets, dtype=float), probs,
                                np.array(outputs, dtype=float), oprobs, name=name)
        except (TypeError, ValueError) as exc:
            c.add(path, str(exc))
            return None, None
        if len(init) != agent.dim:
            c.add(f"{path}.initial", f"expected {agent.dim} components")
            return None, None
        return agent, np.array(init, dtype=float)
    if kind == "lipschitz":
        maps = [_scalar_map(c, m, f"{path}.maps[{n}]")
                for n, m in enumerate(c.get(g, "maps", path, required=True) or [])]
        probs = _probabilities(c, g, "probabilities", path)
        if "output_maps" in g:
            omaps = [_scalar_map(c, m, f"{path}.output_maps[{n}]")
                     for n, m in enumerate(g["output_maps"])]
            oprobs = _probabilities(c, g, "output_probabilities", path)
        else:
            omaps = [(_AffineMap(1.0, 0.0), 1.0)]
            oprobs = (ProbabilityFunction.constant(1.0, lower_bound=1.0),)
        init = c.number(g, "initial", path, required=True, exact=False)
        if len(c.errors) > n_err or None in maps or None in omaps:
            return None, None
        try:
            agent = LipschitzAgent(tuple(m for m, _ in maps), tuple(l for _, l in maps), probs,
                                   tuple(m for m, _ in omaps), tuple(l for _, l in omaps),
                                   oprobs, name=name)
        except (TypeError, ValueError) as exc:
            c.add(path, str(exc))
            return None, None
        return agent, float(init)
    c.add(f"{path}.kind", f"unknown agent kind {kind!r}")
    return None, None


def _block(c: _Collector, spec: dict, path: str, kinds: tuple):
    kind = spec.get("kind")
    if kind not in kinds:
        c.add(f"{path}.kind", f"expected one of {', '.join(kinds)}, got {kind!r}")
        return None
    n_err = len(c.errors)
    try:
        if kind == "pi":
            k, a = (c.number(spec, x, path, required=True) for x in ("kappa", "alpha"))
            return None if len(c.errors) > n_err else pi_controller(k, a)
        if kind == "lag":
            k, a, b = (c.number(spec, x, path, required=True) for x in ("kappa", "alpha", "beta"))
            return None if len(c.errors) > n_err else lag_controller(k, a, b)
        if kind == "fir":
            taps = c.numbers(spec, "taps", path, required=True)
            return None if taps is None else fir_filter(taps)
        if kind == "identity":
            return identity_block()
        if kind == "tf":
            num = c.numbers(spec, "num", path, required=True)
            den = c.numbers(spec, "den", path, required=True)
            return None if len(c.errors) > n_err else tf_to_ss(num, den)
        A = c.matrix(spec, "A", path, required=True)
        B = c.numbers(spec, "B", path, required=True)
        C = c.numbers(spec, "C", path, required=True)
        D = c.number(spec, "D", path, default=0)
        return None if len(c.errors) > n_err else LinearBlock.from_matrices(A, B, C, D)
    except (TypeError, ValueError) as exc:
        c.add(path, str(exc))
        return None


def _block_initial(c: _Collector, spec: dict, block, path: str):
    init = c.numbers(spec, "initial", path, exact=False)
    if init is None or block is None:
        return None
    if len(init) != block.order:
        c.add(f"{path}.initial", f"expected {block.order} components, got {len(init)}")
        return None
    return np.array(init, dtype=float)


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------

def build_config(raw: dict, source: Optional[str] = None) -> ExperimentConfig:
    """Validate a parsed TOML document and assemble the system; raises ConfigError."""
    c = _Collector()
    run = raw.get("run", {})
    if not isinstance(run, dict):
        c.add("run", "expected a table")
        run = {}
    seed = c.get(run, "seed", "run")
    if seed is None:
        c.errors.append("run.seed: seed required")
    elif isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        c.add("run.seed", "expected a nonnegative integer")
    horizon = c.integer(run, "horizon", "run", default=1001, minimum=1)
    n_paths = c.integer(run, "n_paths", "run", default=2000, minimum=1)
    burn_in = c.integer(run, "burn_in", "run", default=0, minimum=0)
    workers = c.integer(run, "workers", "run", default=1, minimum=1)
    observables = run.get("observables", ["y"])
    if not isinstance(observables, list) or not all(isinstance(o, str) for o in observables):
        c.add("run.observables", "expected an array of names")
        observables = ["y"]
    if horizon is not None and burn_in is not None and burn_in >= horizon:
        c.add("run.burn_in", "must be below the horizon")
    out = run.get("out")

    sysd = raw.get("system", {})
    reference = c.number(sysd, "reference", "system", required=True)
    pi_prev = c.number(sysd, "pi_prev_init", "system", default=0.0, exact=False)
    interval = c.numbers(sysd, "signal_interval", "system",
                         default=["-inf", "inf"], exact=False)
    if interval is not None and (len(interval) != 2 or not interval[0] < interval[1]):
        c.add("system.signal_interval", "expected [low, high] with low < high")
        interval = None

    ctl_spec = raw.get("controller")
    if not isinstance(ctl_spec, dict):
        c.add("controller", "required")
        controller = ctl_init = None
    else:
        controller = _block(c, ctl_spec, "controller", ("pi", "lag", "tf", "ss"))
        ctl_init = _block_initial(c, ctl_spec, controller, "controller")
    flt_spec = raw.get("filter", {"kind": "identity"})
    if not isinstance(flt_spec, dict):
        c.add("filter", "expected a table")
        flt = flt_init = None
    else:
        flt = _block(c, flt_spec, "filter", ("fir", "tf", "ss", "identity"))
        flt_init = _block_initial(c, flt_spec, flt, "filter")

    groups = raw.get("agents")
    agents, states = [], []
    if not isinstance(groups, list) or not groups:
        c.add("agents", "at least one agent group required")
    else:
        for n, g in enumerate(groups):
            path = f"agents[{n}]"
            if not isinstance(g, dict):
                c.add(path, "expected a table")
                continue
            count = c.integer(g, "count", path, default=1, minimum=1)
            agent, init = _agent(c, g, path)
            if agent is not None and count is not None:
                agents += [agent] * count
                states += [init] * count

    system = None
    if not c.errors:
        try:
            system = ClosedLoopSystem(tuple(agents), flt, controller, reference,
                                      float(pi_prev), tuple(interval))
        except (TypeError, ValueError) as exc:
            c.add("system", str(exc))
    if system is not None:
        for name in observables:
            try:
                system.check_observable(name)
            except KeyError:
                c.add("run.observables", f"unknown observable {name!r}")
    if c.errors:
        raise ConfigError(c.errors)
    init = system.initial_state(agents=states, filter=flt_init, controller=ctl_init)
    return ExperimentConfig(system, init, horizon, n_paths, seed, tuple(observables),
                            burn_in, workers, out, raw, config_digest(raw), source)


def parse_toml(text: str, source: str = "<string>") -> dict:
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        # tomli reports "(at line L, column C)" in the message
        raise ConfigError([f"{source}: parse error: {exc}"]) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror or exc}"]) from exc
    return build_config(parse_toml(text, str(path)), str(path))


def loads_config(text: str) -> ExperimentConfig:
    return build_config(parse_toml(text))


# ---------------------------------------------------------------------------
# parameter paths
# ---------------------------------------------------------------------------

def _split_path(path: str) -> list:
    parts = []
    for token in path.split("."):
        m = re.fullmatch(r"([A-Za-z_][\w-]*)((\[\d+\])*)", token)
        if m is None:
            if token.isdigit():
                parts.append(int(token))
                continue
            raise KeyError(f"bad parameter path component {token!r}")
        parts.append(m.group(1))
        parts += [int(i) for i in re.findall(r"\[(\d+)\]", m.group(2))]
    return parts


def get_param(raw: dict, path: str):
    node = raw
    for key in _split_path(path):
        try:
            node = node[key]
        except (KeyError, IndexError, TypeError):
            raise KeyError(f"parameter path {path!r} does not exist") from None
    return node


def set_param(raw: dict, path: str, value) -> dict:
    """Copy of ``raw`` with the scalar at ``path`` replaced.

    A one-element array (e.g. a first-order controller's ``initial``) counts
    as a scalar. Anything else non-scalar raises ``ValueError``.
    """
    out = copy.deepcopy(raw)
    parts = _split_path(path)
    current = get_param(out, path)
    if isinstance(current, list) and len(current) == 1 and not isinstance(current[0], (list, dict)):
        parts.append(0)
        current = current[0]
    if isinstance(current, (dict, list)) or isinstance(current, bool):
        raise ValueError(f"parameter path {path!r} is not a scalar field")
    node = out
    for key in parts[:-1]:
        node = node[key]
    node[parts[-1]] = value
    return out


def packaged_config(name: str) -> str:
    """Text of a config shipped with the package (``example_pi`` or ``example_lag``)."""
    from importlib.resources import files

    return files("ergoloop").joinpath("configs").joinpath(f"{name}.toml").read_text(encoding="utf-8")


def packaged_config_path(name: str):
    from importlib.resources import files

    return files("ergoloop").joinpath("configs").joinpath(f"{name}.toml")
