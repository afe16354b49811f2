"""Discrete-time SISO blocks used as controller and filter.

A :class:`LinearBlock` is ``x+ = A x + B u``, ``out = C x + D u``. Blocks built
from ints/Fractions keep an exact copy of their coefficients, which the
unit-pole certificate works on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .core import EIG_TOL, as_fraction, eigenvalues, is_exact

Poly = list  # coefficients, highest degree first


class ImproperTransferError(ValueError):
    pass


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class ExactRealization:
    A: tuple
    B: tuple
    C: tuple
    D: Fraction


@dataclass(frozen=True, eq=False)
class LinearBlock:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: float
    exact: Optional[ExactRealization] = None

    def __post_init__(self):
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.B.shape != (n,) or self.C.shape != (n,):
            raise DimensionError(
                f"inconsistent shapes A{self.A.shape} B{self.B.shape} C{self.C.shape}")

    @classmethod
    def from_matrices(cls, A, B, C, D) -> "LinearBlock":
        """Build a block; all-exact coefficients yield a rational-tagged block."""
        A = [list(row) for row in A]
        n = len(A)
        B = list(np.ravel(np.asarray(B, dtype=object))) if n else []
        C = list(np.ravel(np.asarray(C, dtype=object))) if n else []
        if any(len(row) != n for row in A) or len(B) != n or len(C) != n:
            raise DimensionError("A must be n x n with B, C of length n")
        entries = [v for row in A for v in row] + B + C + [D]
        exact = None
        if all(is_exact(v) for v in entries):
            exact = ExactRealization(
                A=tuple(tuple(Fraction(v) for v in row) for row in A),
                B=tuple(Fraction(v) for v in B),
                C=tuple(Fraction(v) for v in C),
                D=Fraction(D),
            )
        return cls(
            A=np.array([[float(v) for v in row] for row in A], dtype=float).reshape(n, n),
            B=np.array([float(v) for v in B], dtype=float),
            C=np.array([float(v) for v in C], dtype=float),
            D=float(D),
            exact=exact,
        )

    @property
    def order(self) -> int:
        return self.A.shape[0]

    @property
    def rational(self) -> bool:
        return self.exact is not None

    def zero_state(self) -> np.ndarray:
        return np.zeros(self.order)

    # batched evaluation: X is (P, n), U is (P,). Sums run in a fixed order so
    # every row is computed identically whatever the batch size.
    def output_batch(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        out = self.D * U
        for j in range(self.order):
            out = out + self.C[j] * X[:, j]
        return out

    def next_batch(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        return _rows_times(X, self.A) + U[:, None] * self.B[None, :]


def _rows_times(X: np.ndarray, M: np.ndarray) -> np.ndarray:
    # X @ M.T with an explicit, batch-independent summation order
    out = np.zeros((X.shape[0], M.shape[0]))
    for j in range(M.shape[1]):
        out = out + X[:, j:j + 1] * M[None, :, j]
    return out


@dataclass(frozen=True, eq=False)
class NonlinearBlock:
    """Block with opaque maps ``x+ = transition(x, u)``, ``out = output(x, u)``.

    ``lipschitz`` is declared metadata; the positive certificates only accept
    linear blocks, so nonlinear ones always make them inconclusive.
    """

    transition: Callable
    output: Callable
    order: int = 0
    lipschitz: Optional[float] = None

    @property
    def rational(self) -> bool:
        return False

    def zero_state(self) -> np.ndarray:
        return np.zeros(self.order)

    def output_batch(self, X, U):
        return np.array([float(self.output(x, u)) for x, u in zip(X, U)])

    def next_batch(self, X, U):
        rows = [np.atleast_1d(np.asarray(self.transition(x, u), dtype=float)) for x, u in zip(X, U)]
        return np.array(rows).reshape(len(rows), self.order)


def block_step(block, state, u) -> tuple[np.ndarray, float]:
    """One step from ``state`` with input ``u``; returns ``(next_state, output)``."""
    x = np.asarray(state, dtype=float).reshape(-1)
    if x.shape[0] != block.order:
        raise DimensionError(f"state has dimension {x.shape[0]}, block order is {block.order}")
    X = x[None, :]
    U = np.array([float(u)])
    return block.next_batch(X, U)[0], float(block.output_batch(X, U)[0])


# ---------------------------------------------------------------------------
# realizations
# ---------------------------------------------------------------------------

def tf_to_ss(num: Sequence, den: Sequence) -> LinearBlock:
    """Controllable canonical realization of a transfer function in ``z^-1``.

    ``num = [b0, b1, ...]`` and ``den = [1, a1, ...]`` encode
    ``(b0 + b1 z^-1 + ...) / (1 + a1 z^-1 + ...)``. Exact coefficients give a
    rational-tagged block.

    >>> blk = tf_to_ss([Fraction(1, 10), Fraction(4, 10)], [1, -1])   # PI
    >>> blk.A, blk.C, blk.D
    (array([[1.]]), array([0.5]), 0.1)
    """
    num, den = list(num), list(den)
    if not den or den[0] == 0:
        raise ImproperTransferError("denominator must have a nonzero z^0 coefficient")
    if not num:
        num = [0]
    exact = all(is_exact(v) for v in num + den)
    conv = Fraction if exact else float
    lead = conv(den[0])
    num = [conv(v) / lead for v in num]
    den = [conv(v) / lead for v in den]
    n = max(len(num), len(den)) - 1
    num += [conv(0)] * (n + 1 - len(num))
    den += [conv(0)] * (n + 1 - len(den))
    while n > 0 and num[n] == 0 and den[n] == 0:
        n -= 1
    b0 = num[0]
    zero, one = conv(0), conv(1)
    A = [[-den[j + 1] for j in range(n)]] if n else []
    for i in range(1, n):
        A.append([one if j == i - 1 else zero for j in range(n)])
    B = [one] + [zero] * (n - 1) if n else []
    C = [num[j + 1] - den[j + 1] * b0 for j in range(n)]
    return LinearBlock.from_matrices(A, B, C, b0)


def pi_controller(kappa, alpha) -> LinearBlock:
    """``kappa (1 - alpha z^-1) / (1 - z^-1)``, i.e.
    ``pi(k) = pi(k-1) + kappa (e(k) - alpha e(k-1))``."""
    return tf_to_ss([kappa, -kappa * alpha], [1, -1])


def lag_controller(kappa, alpha, beta) -> LinearBlock:
    """``kappa (1 - alpha z^-1) / (1 - beta z^-1)``."""
    return tf_to_ss([kappa, -kappa * alpha], [1, -beta])


def fir_filter(taps: Sequence) -> LinearBlock:
    """Moving-average filter ``yhat(k) = sum_j taps[j] y(k - j)``."""
    return tf_to_ss(list(taps), [1])


def identity_block() -> LinearBlock:
    return LinearBlock.from_matrices([], [], [], 1)


def impulse_response(block: LinearBlock, steps: int) -> np.ndarray:
    x = block.zero_state()
    out = []
    for k in range(steps):
        x, y = block_step(block, x, 1.0 if k == 0 else 0.0)
        out.append(y)
    return np.array(out)


# ---------------------------------------------------------------------------
# exact polynomial helpers
# ---------------------------------------------------------------------------

def charpoly_exact(A: Sequence[Sequence[Fraction]]) -> Poly:
    """Characteristic polynomial det(zI - A) by Faddeev-LeVerrier, exactly."""
    n = len(A)
    coeffs = [Fraction(1)]
    M = [[Fraction(0)] * n for _ in range(n)]
    c = Fraction(1)
    for k in range(1, n + 1):
        # M <- A M + c I
        AM = [[sum((A[i][t] * M[t][j] for t in range(n)), Fraction(0)) for j in range(n)]
              for i in range(n)]
        M = [[AM[i][j] + (c if i == j else 0) for j in range(n)] for i in range(n)]
        AM = [[sum((A[i][t] * M[t][j] for t in range(n)), Fraction(0)) for j in range(n)]
              for i in range(n)]
        c = -sum((AM[i][i] for i in range(n)), Fraction(0)) / k
        coeffs.append(c)
    return coeffs


def poly_divmod(p: Poly, d: Poly) -> tuple[Poly, Poly]:
    p = list(p)
    if len(p) < len(d):
        return [Fraction(0)], p
    q = []
    for i in range(len(p) - len(d) + 1):
        coef = p[i] / d[0]
        q.append(coef)
        for j in range(len(d)):
            p[i + j] -= coef * d[j]
    rem = p[len(p) - len(d) + 1:]
    return q, rem


def poly_eval(p: Poly, z):
    acc = 0
    for c in p:
        acc = acc * z + c
    return acc


# factor, flag, its roots on the unit circle
_CYCLOTOMIC = (
    ([1, -1], "exact_one", (1 + 0j,)),
    ([1, 1], "exact_minus_one", (-1 + 0j,)),
    ([1, 0, 1], "cyclotomic_quadratic", (1j, -1j)),
    ([1, 1, 1], "cyclotomic_quadratic",
     (complex(-0.5, math.sqrt(3) / 2), complex(-0.5, -math.sqrt(3) / 2))),
    ([1, -1, 1], "cyclotomic_quadratic",
     (complex(0.5, math.sqrt(3) / 2), complex(0.5, -math.sqrt(3) / 2))),
)


@dataclass(frozen=True)
class UnitPole:
    value: complex
    flag: str  # exact_one | exact_minus_one | cyclotomic_quadratic | numeric_only

    @property
    def certified(self) -> bool:
        return self.flag != "numeric_only"


@dataclass(frozen=True)
class StabilityReport:
    classification: str  # schur | marginal | unstable
    spectral_radius: float
    unit_poles: tuple = ()
    eigenvalues: tuple = field(default=(), repr=False)

    @property
    def certified_unit_poles(self) -> tuple:
        return tuple(p for p in self.unit_poles if p.certified)


def _deflate_cyclotomic(poly: Poly):
    found = []
    for factor, flag, roots in _CYCLOTOMIC:
        divisor = [Fraction(c) for c in factor]
        while len(poly) >= len(divisor):
            q, rem = poly_divmod(poly, divisor)
            if any(r != 0 for r in rem):
                break
            poly = q
            found.extend(UnitPole(r, flag) for r in roots)
    return poly, found


def classify_stability(block) -> StabilityReport:
    """Schur / marginal / unstable classification with unit-pole flags.

    For rational-tagged blocks the characteristic polynomial is formed
    exactly and the factors ``z - 1``, ``z + 1``, ``z^2 + 1`` and
    ``z^2 +- z + 1`` are divided out exactly (with multiplicity); the rest is
    solved numerically. Any remaining root within ``1e-9`` of the unit circle
    is reported as ``numeric_only``.
    """
    if isinstance(block, NonlinearBlock):
        raise TypeError("stability classification needs a linear block")
    A = block.A if isinstance(block, LinearBlock) else np.atleast_2d(np.asarray(block, float))
    exact = block.exact if isinstance(block, LinearBlock) else None
    if exact is not None and len(exact.A):
        rest, poles = _deflate_cyclotomic(charpoly_exact(exact.A))
        numeric = np.roots([float(c) for c in rest]) if len(rest) > 1 else np.zeros(0)
        eig = np.concatenate([np.array([p.value for p in poles], dtype=complex),
                              numeric.astype(complex)])
    else:
        poles = []
        numeric = eigenvalues(A)
        eig = numeric
    poles = list(poles) + [UnitPole(complex(v), "numeric_only") for v in numeric
                           if abs(abs(v) - 1.0) < EIG_TOL]
    rho = float(np.max(np.abs(eig))) if eig.size else 0.0
    if rho < 1.0 - EIG_TOL:
        cls = "schur"
    elif rho <= 1.0 + EIG_TOL:
        cls = "marginal"
    else:
        cls = "unstable"
    return StabilityReport(cls, rho, tuple(poles), tuple(eig.tolist()))


def is_nilpotent_exact(block: LinearBlock) -> bool:
    if block.exact is None:
        return False
    A = block.exact.A
    n = len(A)
    if n == 0:
        return True
    P = [list(row) for row in A]
    for _ in range(n - 1):
        P = [[sum((P[i][t] * A[t][j] for t in range(n)), Fraction(0)) for j in range(n)]
             for i in range(n)]
    return all(v == 0 for row in P for v in row)


def exact_impulse_response(block: LinearBlock, steps: int) -> list[Fraction]:
    """``[D, C B, C A B, ...]`` in exact arithmetic (rational blocks only)."""
    ex = block.exact
    if ex is None:
        raise TypeError("exact impulse response needs a rational-tagged block")
    n = len(ex.A)
    out = [ex.D]
    v = list(ex.B)
    for _ in range(1, steps):
        out.append(sum((ex.C[i] * v[i] for i in range(n)), Fraction(0)))
        v = [sum((ex.A[i][j] * v[j] for j in range(n)), Fraction(0)) for i in range(n)]
    return out


# ---------------------------------------------------------------------------
# augmented closed-loop matrix
# ---------------------------------------------------------------------------

def build_augmented_matrix(system) -> np.ndarray:
    """Closed-loop linear part for affine agents, a linear filter and controller.

    State order is (agents, filter, controller). Row blocks::

        [ Ahat              0          0   ]
        [ B_f 1'Chat        A_f        0   ]
        [ -B_c D_f 1'Chat   -B_c C_f   A_c ]

    With ``D_f = 0`` this is the usual lower block-triangular form.
    """
    from .agents import AffineAgent, UnsupportedFlavorError

    if not all(isinstance(a, AffineAgent) for a in system.agents):
        raise UnsupportedFlavorError("augmented matrix needs affine agents")
    flt, ctl = system.filter, system.controller
    if not (isinstance(flt, LinearBlock) and isinstance(ctl, LinearBlock)):
        raise UnsupportedFlavorError("augmented matrix needs linear filter and controller")
    dims = [a.dim for a in system.agents]
    nx, nf, nc = sum(dims), flt.order, ctl.order
    M = np.zeros((nx + nf + nc, nx + nf + nc))
    row_c = np.concatenate([a.c for a in system.agents]) if nx else np.zeros(0)
    o = 0
    for a in system.agents:
        M[o:o + a.dim, o:o + a.dim] = a.A
        o += a.dim
    M[nx:nx + nf, :nx] = np.outer(flt.B, row_c)
    M[nx:nx + nf, nx:nx + nf] = flt.A
    M[nx + nf:, :nx] = -flt.D * np.outer(ctl.B, row_c)
    M[nx + nf:, nx:nx + nf] = -np.outer(ctl.B, flt.C)
    M[nx + nf:, nx + nf:] = ctl.A
    return M
