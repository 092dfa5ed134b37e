"""Quadratic ReLU replacement and the least-squares machinery behind it.

The activation used throughout the package is the fixed quadratic

    p(x) = 4/(3*pi*a) * x**2 + x/2 + a/(2*pi)

with a single positive scale parameter ``a`` chosen from the data so that
the fitting interval [-a, a] covers the observed pre-activation range. The
module also provides the general tooling (Legendre recurrence, Simpson
inner products, orthogonal-basis least squares) needed to reproduce and
scrutinise that construction: note that the unweighted L2 projection of
ReLU on [-1, 1] is (3/32, 1/2, 15/32), which is *not* the quadratic above;
both are exposed and neither is silently substituted for the other.
"""

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

MAX_DEGREE = 10
DEFAULT_PANELS = 2048
MIN_SCALE = 1e-3


@dataclass(frozen=True)
class Interval:
    """A finite integration interval [lo, hi] with lo < hi."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError("interval endpoints must be finite")
        if not self.lo < self.hi:
            raise ValueError(f"need lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class PolyCoeffs:
    """Monomial coefficients, index = degree. Trailing zeros allowed."""

    coeffs: tuple

    def __post_init__(self):
        if len(self.coeffs) == 0:
            raise ValueError("coefficient list must be non-empty")
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))

    def __call__(self, x):
        acc = np.zeros_like(np.asarray(x, dtype=float))
        for c in reversed(self.coeffs):
            acc = acc * x + c
        return acc if acc.ndim else float(acc)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1


@dataclass(frozen=True)
class QuadActivation:
    """Scale parameter for the quadratic activation; valid on [-a, a]."""

    a: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and self.a > 0):
            raise ValueError(f"scale parameter must be positive and finite, got {self.a}")

    def coeffs(self) -> PolyCoeffs:
        return PolyCoeffs((self.a / (2 * math.pi), 0.5, 4 / (3 * math.pi * self.a)))


def legendre(k: int, x):
    """Evaluate the Legendre polynomial P_k at x (scalar or array).

    Three-term recurrence: P_0 = 1, P_1 = x,
    (i+1) P_{i+1} = (2i+1) x P_i - i P_{i-1}. Degrees above MAX_DEGREE are
    rejected; nothing in the package needs them and the monomial expansion
    used by the fitter loses accuracy far beyond that.
    """
    if not isinstance(k, (int, np.integer)) or k < 0:
        raise ValueError(f"degree must be a non-negative integer, got {k!r}")
    if k > MAX_DEGREE:
        raise ValueError(f"degree {k} exceeds supported maximum {MAX_DEGREE}")
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    prev = np.ones_like(x)
    if k == 0:
        return float(prev) if prev.ndim == 0 else prev
    cur = x.copy()
    for i in range(1, k):
        prev, cur = cur, ((2 * i + 1) * x * cur - i * prev) / (i + 1)
    return float(cur) if cur.ndim == 0 else cur


def _simpson(f: Callable, lo: float, hi: float, panels: int) -> float:
    xs = np.linspace(lo, hi, panels + 1)
    ys = np.asarray([float(f(x)) for x in xs], dtype=float)
    h = (hi - lo) / panels
    return h / 3 * (ys[0] + ys[-1] + 4 * ys[1:-1:2].sum() + 2 * ys[2:-1:2].sum())


def _integrate(f: Callable, iv: Interval, panels: int) -> float:
    # Split at 0 so piecewise-smooth integrands (ReLU products) never put a
    # kink inside a Simpson panel pair.
    if iv.lo < 0 < iv.hi:
        half = max(2, panels // 2 + panels // 2 % 2)
        return _simpson(f, iv.lo, 0.0, half) + _simpson(f, 0.0, iv.hi, half)
    return _simpson(f, iv.lo, iv.hi, panels)


def inner_product(f: Callable, g: Callable, iv: Interval, n_quad: int = DEFAULT_PANELS) -> float:
    """Composite-Simpson approximation of the unweighted L2 inner product
    of f and g over iv, using n_quad (even) panels."""
    if n_quad <= 0 or n_quad % 2 != 0:
        raise ValueError(f"n_quad must be a positive even integer, got {n_quad}")
    return _simpson(lambda x: f(x) * g(x), iv.lo, iv.hi, n_quad)


def _legendre_monomials(k: int) -> np.ndarray:
    """Monomial coefficients of P_0..P_k as rows of a (k+1, k+1) matrix."""
    table = np.zeros((k + 1, k + 1))
    table[0, 0] = 1.0
    if k >= 1:
        table[1, 1] = 1.0
    for i in range(1, k):
        table[i + 1, 1:] += (2 * i + 1) * table[i, :-1]
        table[i + 1] -= i * table[i - 1]
        table[i + 1] /= i + 1
    return table


def _affine_powers(degree: int, scale: float, shift: float) -> np.ndarray:
    """Monomial coefficients of (scale*x + shift)**j for j = 0..degree."""
    rows = np.zeros((degree + 1, degree + 1))
    rows[0, 0] = 1.0
    for j in range(1, degree + 1):
        rows[j, 1:] += scale * rows[j - 1, :-1]
        rows[j] += shift * rows[j - 1]
    return rows


def least_squares_fit(f: Callable, degree: int, iv: Interval) -> PolyCoeffs:
    """L2(w=1) projection of f onto polynomials of degree <= degree over iv.

    Computed through the orthogonal route: coefficients against shifted
    Legendre polynomials are b_i = <f, Psi_i> / <Psi_i, Psi_i>, with the
    denominators known in closed form; the result is then expanded back to
    monomials.
    """
    if not isinstance(degree, (int, np.integer)) or degree < 0:
        raise ValueError(f"degree must be a non-negative integer, got {degree!r}")
    if degree > MAX_DEGREE:
        raise ValueError(f"degree {degree} exceeds supported maximum {MAX_DEGREE}")
    scale = 2.0 / iv.width
    shift = -(iv.lo + iv.hi) / iv.width

    def to_ref(x):
        return scale * x + shift

    b = np.zeros(degree + 1)
    for i in range(degree + 1):
        num = _integrate(lambda x, i=i: f(x) * legendre(i, to_ref(x)), iv, DEFAULT_PANELS)
        if not math.isfinite(num):
            raise ValueError(f"projection integral for degree {i} is not finite")
        b[i] = num * (2 * i + 1) / iv.width

    # Sum b_i * P_i(scale*x + shift) as monomials in x.
    leg = _legendre_monomials(degree)
    powers = _affine_powers(degree, scale, shift)
    mono = np.zeros(degree + 1)
    for i in range(degree + 1):
        for j in range(i + 1):
            mono += b[i] * leg[i, j] * powers[j]
    return PolyCoeffs(tuple(mono))


def act(q: QuadActivation, x):
    """The quadratic activation p(x) = 4/(3*pi*a) x^2 + x/2 + a/(2*pi)."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    out = 4 / (3 * math.pi * q.a) * x * x + 0.5 * x + q.a / (2 * math.pi)
    return float(out) if out.ndim == 0 else out


def act_deriv(q: QuadActivation, x):
    """Exact derivative of act: 8/(3*pi*a) x + 1/2."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    out = 8 / (3 * math.pi * q.a) * x + 0.5
    return float(out) if out.ndim == 0 else out


def fit_scale_param(samples: Sequence[float]) -> QuadActivation:
    """Pick the activation scale from observed pre-activation values.

    a = max(|min|, |max|) over the samples so that [-a, a] covers the range
    seen on the plaintext warm-up pass, clamped below at MIN_SCALE.
    """
    arr = np.asarray(list(samples), dtype=float)
    if arr.size == 0:
        raise ValueError("cannot fit scale parameter from an empty sample set")
    if not np.all(np.isfinite(arr)):
        raise ValueError("samples must be finite")
    a = max(abs(float(arr.min())), abs(float(arr.max())), MIN_SCALE)
    return QuadActivation(a)


def relu(x):
    return np.maximum(np.asarray(x, dtype=float), 0.0)
