"""Numeric and probabilistic primitives shared by the rest of the package.

Probability laws, inverse-CDF sampling, the handful of matrix quantities the
certificates need, exact rational helpers and seeded random streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from numbers import Rational
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import expit

SUM_TOL = 1e-9
EIG_TOL = 1e-9
DEFAULT_GRID_STEP = 1e-2


class InvalidWeightsError(ValueError):
    """Raised when a probability vector is negative or does not sum to one."""


class NonSquareError(ValueError):
    pass


# ---------------------------------------------------------------------------
# exact rationals
# ---------------------------------------------------------------------------

def is_exact(value) -> bool:
    """True for ints and Fractions (bools excluded), False for floats."""
    return isinstance(value, Rational) and not isinstance(value, bool)


def as_fraction(value) -> Fraction:
    """Convert an exact number to a Fraction.

    Floats are refused: a float is never silently promoted to a rational.
    Strings are parsed as decimal or ``p/q`` literals.
    """
    if isinstance(value, str):
        return Fraction(value.strip())
    if is_exact(value):
        return Fraction(value)
    raise TypeError(f"exact rational required, got {type(value).__name__} {value!r}")


def rational_group_gcd(generators: Iterable) -> Optional[Fraction]:
    """Positive generator of the additive group spanned by rational numbers.

    Returns ``None`` when the group is trivial (every generator is zero).

    >>> rational_group_gcd([Fraction(1, 2), Fraction(1, 3)])
    Fraction(1, 6)
    """
    gens = [as_fraction(g) for g in generators]
    nonzero = [g for g in gens if g != 0]
    if not nonzero:
        return None
    common = reduce(math.lcm, (g.denominator for g in nonzero), 1)
    numerators = [abs(g.numerator) * (common // g.denominator) for g in nonzero]
    return Fraction(reduce(math.gcd, numerators), common)


# ---------------------------------------------------------------------------
# probability functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbabilityFunction:
    """A map from the broadcast signal to a probability in [0, 1].

    Three kinds are supported:

    ``logistic``  ``base + scale / (1 + exp(-rate * (pi - center)))``
    ``constant``  a fixed value ``p0``
    ``table``     piecewise linear through ``points`` (sorted by signal value),
                  held constant outside the first and last breakpoint

    ``lower_bound`` is a declared bound on the infimum over the admissible
    signal set; it is only trusted after :func:`validate_lower_bound`.
    ``dini`` records Dini continuity; all three kinds are Lipschitz.
    """

    kind: str
    base: float = 0.0
    scale: float = 0.0
    rate: float = 0.0
    center: float = 0.0
    p0: float = 0.0
    points: tuple = ()
    lower_bound: Optional[float] = None
    dini: bool = True

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    @classmethod
    def logistic(cls, base, scale, rate, center, lower_bound=None):
        return cls("logistic", base=float(base), scale=float(scale), rate=float(rate),
                   center=float(center), lower_bound=lower_bound)

    @classmethod
    def constant(cls, p0, lower_bound=None):
        return cls("constant", p0=float(p0), lower_bound=lower_bound)

    @classmethod
    def table(cls, points, lower_bound=None):
        pts = tuple(sorted((float(a), float(b)) for a, b in points))
        return cls("table", points=pts, lower_bound=lower_bound)

    def problems(self) -> list[str]:
        out = []
        if self.kind == "logistic":
            vals = (self.base, self.scale, self.rate, self.center)
            if not all(math.isfinite(v) for v in vals):
                out.append("logistic parameters must be finite")
            elif not (0.0 <= self.base <= 1.0 and 0.0 <= self.base + self.scale <= 1.0):
                out.append(f"logistic range [{self.base}, {self.base + self.scale}] "
                           "leaves [0, 1] (need 0 <= base <= 1 and 0 <= base + scale <= 1)")
        elif self.kind == "constant":
            if not 0.0 <= self.p0 <= 1.0:
                out.append(f"constant probability {self.p0} outside [0, 1]")
        elif self.kind == "table":
            if not self.points:
                out.append("table needs at least one breakpoint")
            xs = [p[0] for p in self.points]
            if len(set(xs)) != len(xs):
                out.append("table breakpoints must be distinct")
            if any(not 0.0 <= p[1] <= 1.0 for p in self.points):
                out.append("table values must lie in [0, 1]")
        else:
            out.append(f"unknown probability kind {self.kind!r}")
        if self.lower_bound is not None and self.lower_bound < 0:
            out.append("lower_bound must be nonnegative")
        return out

    def __call__(self, pi):
        return prob_eval(self, pi)

    def infimum(self, interval=(-math.inf, math.inf), step=DEFAULT_GRID_STEP) -> float:
        """Infimum over a closed signal interval (see :func:`value_range`)."""
        return value_range(self, interval, step)[0]

    def supremum(self, interval=(-math.inf, math.inf), step=DEFAULT_GRID_STEP) -> float:
        return value_range(self, interval, step)[1]


def _tail_limits(f: ProbabilityFunction, interval) -> list[float]:
    lo, hi = interval
    if f.kind == "constant":
        left = right = f.p0
    elif f.kind == "logistic":
        if f.rate > 0:
            left, right = f.base, f.base + f.scale
        elif f.rate < 0:
            left, right = f.base + f.scale, f.base
        else:
            left = right = f.base + f.scale / 2
    else:
        left, right = f.points[0][1], f.points[-1][1]
    return [v for v, end in ((left, lo), (right, hi)) if math.isinf(end)]


def value_range(f: ProbabilityFunction, interval=(-math.inf, math.inf),
                step=DEFAULT_GRID_STEP) -> tuple[float, float]:
    """(inf, sup) of ``f`` over a closed signal interval.

    Bounded intervals are scanned on a grid of spacing ``step`` that includes
    both endpoints. Unbounded ends contribute their limiting value; logistic
    laws are monotone and tables are linear between breakpoints, so limits,
    finite endpoints and interior breakpoints attain the extremes.
    """
    lo, hi = interval
    if math.isfinite(lo) and math.isfinite(hi):
        n = max(1, int(math.ceil((hi - lo) / step)))
        vals = np.asarray(prob_eval(f, np.linspace(lo, hi, n + 1)))
        return float(vals.min()), float(vals.max())
    samples = _tail_limits(f, interval)
    samples += [float(prob_eval(f, end)) for end in (lo, hi) if math.isfinite(end)]
    if f.kind == "table":
        xs = np.array([p[0] for p in f.points])
        samples += np.atleast_1d(prob_eval(f, xs[(xs >= lo) & (xs <= hi)])).tolist()
    return float(min(samples)), float(max(samples))


def prob_eval(f: ProbabilityFunction, pi):
    """Evaluate ``f`` at a scalar or array of signal values."""
    if f.kind == "logistic":
        val = f.base + f.scale * expit(f.rate * (np.asarray(pi, dtype=float) - f.center))
    elif f.kind == "constant":
        val = np.full(np.shape(pi), f.p0)
    else:
        xs = [p[0] for p in f.points]
        ys = [p[1] for p in f.points]
        val = np.interp(np.asarray(pi, dtype=float), xs, ys)
    val = np.clip(val, 0.0, 1.0)
    return float(val) if np.ndim(val) == 0 else val


def validate_lower_bound(f: ProbabilityFunction, interval=(-math.inf, math.inf),
                         step=DEFAULT_GRID_STEP) -> bool:
    """Check a declared lower bound: ``0 <= lb <= inf_{pi in interval} f(pi)``."""
    if f.lower_bound is None:
        return False
    return 0.0 <= f.lower_bound <= f.infimum(interval, step)


def check_normalized(funcs: Sequence[ProbabilityFunction], interval=(-math.inf, math.inf),
                     step=DEFAULT_GRID_STEP, span=100.0) -> Optional[float]:
    """Worst deviation of ``sum(funcs)`` from one on a validation grid.

    Unbounded interval ends are replaced by ``center +- span`` style limits,
    i.e. a grid over [-span, span] plus the tail limits.
    """
    lo, hi = interval
    glo = lo if math.isfinite(lo) else -span
    ghi = hi if math.isfinite(hi) else span
    n = max(1, int(math.ceil((ghi - glo) / step)))
    grid = np.linspace(glo, ghi, n + 1)
    total = sum(np.asarray(prob_eval(f, grid)) for f in funcs)
    worst = float(np.max(np.abs(total - 1.0)))
    for end, tail in ((lo, (lo, 0.0)), (hi, (0.0, hi))):
        if math.isinf(end):
            worst = max(worst, abs(sum(_tail_limits(f, tail)[0] for f in funcs) - 1.0))
    return worst


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def check_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidWeightsError(f"weights must be finite and nonnegative: {weights!r}")
    total = w.sum(axis=-1)
    if np.any(np.abs(total - 1.0) > SUM_TOL):
        raise InvalidWeightsError(f"weights sum to {total!r}, not 1")
    return w


def categorical_sample(weights, u: float) -> int:
    """Inverse-CDF choice: the first index whose cumulative weight exceeds ``u``."""
    w = check_weights(weights)
    return int(categorical_sample_batch(w[None, :], np.array([u]))[0])


def categorical_sample_batch(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise inverse-CDF sampling; ``weights`` is (P, w), ``u`` is (P,).

    Weights are assumed validated. Rounding in the cumulative sum can leave
    the final total a hair below one, so the result is clipped to the last
    index.
    """
    cdf = np.cumsum(weights, axis=1)
    idx = np.sum(u[:, None] >= cdf[:, :-1], axis=1)
    return np.minimum(idx, weights.shape[1] - 1)


# ---------------------------------------------------------------------------
# matrices
# ---------------------------------------------------------------------------

def _square(M) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NonSquareError(f"square matrix required, got shape {M.shape}")
    return M


def eigenvalues(M) -> np.ndarray:
    """Eigenvalues; closed form for n <= 2 so repeated roots come out exact."""
    M = _square(M)
    n = M.shape[0]
    if n == 0:
        return np.zeros(0, dtype=complex)
    if n == 1:
        return np.array([complex(M[0, 0])])
    if n == 2:
        half_tr = (M[0, 0] + M[1, 1]) / 2
        det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
        disc = half_tr * half_tr - det
        root = np.sqrt(complex(disc))
        return np.array([half_tr + root, half_tr - root])
    return np.linalg.eigvals(M)


def spectral_radius(M) -> float:
    ev = eigenvalues(M)
    return float(np.max(np.abs(ev))) if ev.size else 0.0


def induced_two_norm(M) -> float:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def contraction_index(M, m_max: int = 1000) -> Optional[int]:
    """Smallest ``m <= m_max`` with ``||M^m||_2 < 1``, or None."""
    M = _square(M)
    if M.shape[0] == 0:
        return 1
    power = M.copy()
    for m in range(1, m_max + 1):
        if induced_two_norm(power) < 1.0:
            return m
        with np.errstate(over="ignore", invalid="ignore"):
            power = power @ M
        if not np.all(np.isfinite(power)):
            return None
    return None


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------

@dataclass
class RngStream:
    """Uniform draws that are a pure function of ``(seed, stream_id)``.

    ``counter`` counts the draws consumed so far; two streams with the same
    seed and id produce the same sequence bit for bit.
    """

    seed: int
    stream_id: int = 0
    counter: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self._gen = _generator(self.seed, self.stream_id)
        if self.counter:
            self._gen.random(self.counter)

    def uniforms(self, n: int) -> np.ndarray:
        out = self._gen.random(n)
        self.counter += n
        return out

    def uniform(self) -> float:
        return float(self.uniforms(1)[0])


def _generator(seed: int, stream_id: int) -> np.random.Generator:
    mask = (1 << 64) - 1
    ss = np.random.SeedSequence(entropy=int(seed) & mask, spawn_key=(int(stream_id) & mask,))
    return np.random.Generator(np.random.PCG64(ss))


def path_draws(seed: int, path_id: int, horizon: int, n_agents: int) -> np.ndarray:
    """Uniform draws for one sample path, shaped (horizon, 2, n_agents).

    Entry ``[k, phase, i]`` is the draw agent ``i`` uses at step ``k``;
    phase 0 chooses the output map and phase 1 the transition map. The
    layout is row-major, so a longer horizon extends a shorter one.
    """
    return RngStream(seed, path_id).uniforms(horizon * 2 * n_agents).reshape(
        horizon, 2, n_agents)
