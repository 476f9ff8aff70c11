"""Coefficient rings with derivations.

Scalar fields on a chart come in three interchangeable realizations:

* :class:`Jet` -- truncated bivariate polynomials in (z, zbar), exact up to
  roundoff, used for symbolic identity checks,
* :class:`GridField` -- sampled fields on a rectangle (periodic or Dirichlet),
  used for PDE work,
* :class:`DiffPoly` -- free differential polynomials in formal field symbols
  with exact rational coefficients, used for operator-level identities where
  "number of derivatives applied" and "degree in t" must be visible.

All three expose ``+``, ``-``, ``*``, ``d()`` (del), ``dbar()`` and ``conj()``
and mix with python complex scalars, so matrix and operator code is generic.

The chart convention is fixed once and for all: z = x + i y,
del = (d/dx - i d/dy)/2 and dbar = (d/dx + i d/dy)/2, hence del dbar equals a
quarter of the flat Laplacian.
"""

from __future__ import annotations

import cmath
import math
from fractions import Fraction

import numpy as np

from .errors import NonZeroMean, PoleAtPoint, ShapeMismatch

TOL = 1e-12


# ---------------------------------------------------------------------------
# Jets
# ---------------------------------------------------------------------------

class Jet:
    """Bivariate polynomial jet sum_{i+j<=D} c[i,j] z^i zbar^j.

    Arithmetic truncates at total degree D.  ``d`` differentiates in z,
    ``dbar`` in zbar, ``conj`` swaps the two variables and conjugates the
    coefficients.

    Truncation makes the top coefficients of a derivative unreliable (the
    derivative of the dropped degree D+1 part would land at degree D), so
    every jet carries ``valid``: the largest total degree whose coefficients
    are trustworthy.  Derivatives decrement it, products and sums take the
    minimum, and norms and comparisons only look at degrees <= valid.
    """

    __slots__ = ("D", "c", "valid")

    _OVERFLOW_MASKS: dict = {}

    @classmethod
    def _overflow_mask(cls, D):
        m = cls._OVERFLOW_MASKS.get(D)
        if m is None:
            ii, jj = np.indices((D + 1, D + 1))
            m = ii + jj > D
            cls._OVERFLOW_MASKS[D] = m
        return m

    def __init__(self, D: int, c=None, valid=None):
        self.D = int(D)
        if c is None:
            self.c = np.zeros((D + 1, D + 1), dtype=complex)
        else:
            self.c = np.asarray(c, dtype=complex).copy()
            if self.c.shape != (D + 1, D + 1):
                raise ShapeMismatch(f"jet array must be {(D+1, D+1)}, got {self.c.shape}")
            self._truncate()
        self.valid = self.D if valid is None else min(int(valid), self.D)

    @classmethod
    def _make(cls, D, c, valid):
        """Internal fast path: takes ownership of c, masks overflow in place."""
        out = cls.__new__(cls)
        out.D = D
        c[cls._overflow_mask(D)] = 0.0
        out.c = c
        out.valid = min(valid, D)
        return out

    def _truncate(self):
        self.c[self._overflow_mask(self.D)] = 0.0

    # -- constructors ------------------------------------------------------

    @classmethod
    def const(cls, value, D: int = 6) -> "Jet":
        j = cls(D)
        j.c[0, 0] = complex(value)
        return j

    def exp(self) -> "Jet":
        """exp of the jet (series around the constant term)."""
        c0 = self.c[0, 0]
        rest = self - c0
        out = Jet.const(1.0, self.D)
        term = Jet.const(1.0, self.D)
        for k in range(1, self.D + 1):
            term = term * rest * (1.0 / k)
            out = out + term
        out = out * cmath.exp(c0)
        out.valid = self.valid
        return out

    @classmethod
    def variable(cls, D: int = 6) -> "Jet":
        """The coordinate z."""
        j = cls(D)
        j.c[1, 0] = 1.0
        return j

    @classmethod
    def covariable(cls, D: int = 6) -> "Jet":
        """The coordinate zbar."""
        j = cls(D)
        j.c[0, 1] = 1.0
        return j

    @classmethod
    def monomial(cls, i: int, j: int, coeff=1.0, D: int = 6) -> "Jet":
        out = cls(D)
        out.c[i, j] = complex(coeff)
        return out

    @classmethod
    def random(cls, rng, D: int = 6, scale: float = 1.0, decay: float = 2.0,
               holomorphic: bool = False) -> "Jet":
        """Random jet with coefficients shrinking like decay**-(i+j)."""
        out = cls(D)
        for i in range(D + 1):
            for j in range(D + 1 - i):
                if holomorphic and j > 0:
                    continue
                mag = scale / decay ** (i + j)
                out.c[i, j] = mag * complex(rng.uniform(-1, 1), rng.uniform(-1, 1))
        return out

    def copy(self) -> "Jet":
        return Jet(self.D, self.c, self.valid)

    # -- ring structure ----------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Jet):
            if other.D != self.D:
                raise ShapeMismatch("jet truncation degrees differ")
            return other
        if isinstance(other, Fraction):
            return Jet.const(complex(other), self.D)
        if isinstance(other, (int, float, complex)):
            return Jet.const(other, self.D)
        return None

    def __add__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return Jet._make(self.D, self.c + o.c, min(self.valid, o.valid))

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return Jet._make(self.D, self.c - o.c, min(self.valid, o.valid))

    def __rsub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return Jet._make(self.D, o.c - self.c, min(self.valid, o.valid))

    def __neg__(self):
        return Jet._make(self.D, -self.c, self.valid)

    def __mul__(self, other):
        if isinstance(other, (int, float, complex, Fraction)):
            return Jet._make(self.D, self.c * complex(other), self.valid)
        if not isinstance(other, Jet):
            return NotImplemented
        if other.D != self.D:
            raise ShapeMismatch("jet truncation degrees differ")
        D = self.D
        # 2-D convolution as 1-D with padded row stride (rows cannot overlap)
        W = 2 * D + 2
        a = np.zeros((D + 1) * W, dtype=complex)
        b = np.zeros((D + 1) * W, dtype=complex)
        a.reshape(D + 1, W)[:, : D + 1] = self.c
        b.reshape(D + 1, W)[:, : D + 1] = other.c
        full = np.convolve(a, b)
        out = full[: (D + 1) * W].reshape(D + 1, W)[:, : D + 1].copy()
        return Jet._make(D, out, min(self.valid, other.valid))

    def __rmul__(self, other):
        if isinstance(other, (int, float, complex, Fraction)):
            return Jet._make(self.D, self.c * complex(other), self.valid)
        return NotImplemented

    def __pow__(self, k: int):
        if k < 0:
            return self.inv() ** (-k)
        out = Jet.const(1.0, self.D)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def inv(self) -> "Jet":
        """Multiplicative inverse; requires an invertible constant term."""
        c0 = self.c[0, 0]
        if abs(c0) < TOL:
            raise ZeroDivisionError("jet has no invertible constant term")
        # Newton iteration x -> x (2 - a x) doubles correct degree each step.
        x = Jet.const(1.0 / c0, self.D)
        steps = max(1, math.ceil(math.log2(self.D + 1)) + 1)
        for _ in range(steps):
            x = x * (2.0 - self * x)
        x.valid = self.valid
        return x

    def __truediv__(self, other):
        if isinstance(other, (int, float, complex, Fraction)):
            return Jet(self.D, self.c / complex(other), self.valid)
        if isinstance(other, Jet):
            return self * other.inv()
        return NotImplemented

    def nth_root(self, n: int) -> "Jet":
        """Principal n-th root; requires an invertible constant term."""
        c0 = self.c[0, 0]
        if abs(c0) < TOL:
            raise ZeroDivisionError("jet has no invertible constant term")
        r0 = c0 ** (1.0 / n)
        x = Jet.const(r0, self.D)
        for _ in range(self.D + 2):
            # Newton for x^n = self
            x = x - (x ** n - self) / (float(n) * x ** (n - 1))
        x.valid = self.valid
        return x

    # -- derivations and conjugation ----------------------------------------

    def d(self) -> "Jet":
        c = np.zeros((self.D + 1, self.D + 1), dtype=complex)
        c[:-1, :] = self.c[1:, :] * np.arange(1, self.D + 1)[:, None]
        return Jet._make(self.D, c, self.valid - 1)

    def dbar(self) -> "Jet":
        c = np.zeros((self.D + 1, self.D + 1), dtype=complex)
        c[:, :-1] = self.c[:, 1:] * np.arange(1, self.D + 1)[None, :]
        return Jet._make(self.D, c, self.valid - 1)

    def conj(self) -> "Jet":
        return Jet._make(self.D, np.conj(self.c).T.copy(), self.valid)

    # -- queries -------------------------------------------------------------

    def __call__(self, z, zbar=None):
        if zbar is None:
            zbar = np.conj(z)
        val = 0.0 + 0.0j
        for i in range(self.D + 1):
            for j in range(self.D + 1 - i):
                if self.c[i, j] != 0:
                    val += self.c[i, j] * z ** i * zbar ** j
        return val

    def _mask(self, valid):
        ii, jj = np.indices(self.c.shape)
        return ii + jj <= valid

    def norm_inf(self) -> float:
        if self.valid < 0:
            raise ValueError("jet fully degraded: increase the truncation degree D")
        return float(np.max(np.abs(self.c[self._mask(self.valid)])))

    def is_zero(self, tol: float = 1e-10) -> bool:
        return self.norm_inf() <= tol

    def __eq__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        v = min(self.valid, o.valid)
        if v < 0:
            raise ValueError("jet fully degraded: increase the truncation degree D")
        m = self._mask(v)
        return bool(np.max(np.abs(self.c[m] - o.c[m])) <= 1e-10)

    def __repr__(self):
        terms = []
        for i in range(self.D + 1):
            for j in range(self.D + 1 - i):
                if abs(self.c[i, j]) > TOL:
                    terms.append(f"({self.c[i,j]:.3g})z^{i}zb^{j}")
        return "Jet[" + " + ".join(terms[:8]) + ("..." if len(terms) > 8 else "") + "]"


# ---------------------------------------------------------------------------
# Grid fields
# ---------------------------------------------------------------------------

PERIODIC = "periodic"
DIRICHLET = "dirichlet"


class GridField:
    """Complex field sampled on an nx-by-ny rectangle.

    ``v[i, j]`` is the value at (x_i, y_j).  Periodic grids exclude the right
    and top edges (x_i = i Lx/nx), Dirichlet grids include both boundaries
    (x_i = i Lx/(nx-1)).

    Derivatives are spectral in periodic mode.  In Dirichlet mode first
    derivatives use 4th-order centered differences with one-sided closure at
    the edges; ``lap_quarter`` provides the 5-point Laplacian divided by 4 as
    the 2nd-order realization of del dbar.
    """

    __slots__ = ("v", "Lx", "Ly", "bc")

    def __init__(self, values, Lx: float, Ly: float, bc: str = PERIODIC):
        self.v = np.asarray(values, dtype=complex)
        if self.v.ndim != 2:
            raise ShapeMismatch("grid values must be 2-D")
        self.Lx = float(Lx)
        self.Ly = float(Ly)
        if bc not in (PERIODIC, DIRICHLET):
            raise ValueError(f"unknown boundary mode {bc!r}")
        self.bc = bc

    # -- constructors --------------------------------------------------------

    @classmethod
    def zeros(cls, nx, ny, Lx, Ly, bc=PERIODIC):
        return cls(np.zeros((nx, ny), dtype=complex), Lx, Ly, bc)

    @classmethod
    def const(cls, value, nx, ny, Lx, Ly, bc=PERIODIC):
        return cls(np.full((nx, ny), complex(value)), Lx, Ly, bc)

    @classmethod
    def from_function(cls, f, nx, ny, Lx, Ly, bc=PERIODIC):
        x, y = cls.mesh(nx, ny, Lx, Ly, bc)
        return cls(np.asarray(f(x, y), dtype=complex), Lx, Ly, bc)

    @staticmethod
    def mesh(nx, ny, Lx, Ly, bc=PERIODIC):
        if bc == PERIODIC:
            x = np.arange(nx) * (Lx / nx)
            y = np.arange(ny) * (Ly / ny)
        else:
            x = np.linspace(0.0, Lx, nx)
            y = np.linspace(0.0, Ly, ny)
        return np.meshgrid(x, y, indexing="ij")

    @classmethod
    def random_bandlimited(cls, rng, nx, ny, Lx, Ly, kmax=3, scale=1.0, real=False):
        """Random smooth periodic field with modes |k| <= kmax."""
        x, y = cls.mesh(nx, ny, Lx, Ly, PERIODIC)
        v = np.zeros((nx, ny), dtype=complex)
        for kx in range(-kmax, kmax + 1):
            for ky in range(-kmax, kmax + 1):
                amp = scale * complex(rng.uniform(-1, 1), rng.uniform(-1, 1))
                amp /= (1 + kx * kx + ky * ky)
                v += amp * np.exp(2j * np.pi * (kx * x / Lx + ky * y / Ly))
        if real:
            v = v.real.astype(complex)
        return cls(v, Lx, Ly, PERIODIC)

    def copy(self):
        return GridField(self.v, self.Lx, self.Ly, self.bc)

    # -- ring structure ------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, GridField):
            if other.v.shape != self.v.shape or other.bc != self.bc:
                raise ShapeMismatch("grid shapes or boundary modes differ")
            return other.v
        if isinstance(other, Fraction):
            return complex(other)
        if isinstance(other, (int, float, complex)):
            return complex(other)
        return None

    def __add__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return GridField(self.v + o, self.Lx, self.Ly, self.bc)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return GridField(self.v - o, self.Lx, self.Ly, self.bc)

    def __rsub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return GridField(o - self.v, self.Lx, self.Ly, self.bc)

    def __neg__(self):
        return GridField(-self.v, self.Lx, self.Ly, self.bc)

    def __mul__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return GridField(self.v * o, self.Lx, self.Ly, self.bc)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return GridField(self.v / o, self.Lx, self.Ly, self.bc)

    def __pow__(self, k):
        if k < 0:
            return GridField(self.v ** float(k), self.Lx, self.Ly, self.bc)
        return GridField(self.v ** k, self.Lx, self.Ly, self.bc)

    def inv(self):
        if np.min(np.abs(self.v)) < TOL:
            raise ZeroDivisionError("grid field vanishes somewhere")
        return GridField(1.0 / self.v, self.Lx, self.Ly, self.bc)

    def nth_root(self, n: int):
        """Principal pointwise n-th root; callers must track branch continuity."""
        return GridField(self.v ** (1.0 / n), self.Lx, self.Ly, self.bc)

    def exp(self):
        return GridField(np.exp(self.v), self.Lx, self.Ly, self.bc)

    def log(self):
        """Principal logarithm, entrywise."""
        return GridField(np.log(self.v), self.Lx, self.Ly, self.bc)

    # -- derivatives ---------------------------------------------------------

    def _wavenumbers(self):
        nx, ny = self.v.shape
        kx = 2.0 * np.pi * np.fft.fftfreq(nx, d=self.Lx / nx)
        ky = 2.0 * np.pi * np.fft.fftfreq(ny, d=self.Ly / ny)
        return np.meshgrid(kx, ky, indexing="ij")

    def _dx_dirichlet(self, axis):
        n = self.v.shape[axis]
        L = self.Lx if axis == 0 else self.Ly
        h = L / (n - 1)
        a = np.moveaxis(self.v, axis, 0)
        out = np.zeros_like(a)
        # 4th-order centered in the interior
        out[2:-2] = (a[:-4] - 8 * a[1:-3] + 8 * a[3:-1] - a[4:]) / (12 * h)
        # 4th-order one-sided / skewed closures
        out[0] = (-25 * a[0] + 48 * a[1] - 36 * a[2] + 16 * a[3] - 3 * a[4]) / (12 * h)
        out[1] = (-3 * a[0] - 10 * a[1] + 18 * a[2] - 6 * a[3] + a[4]) / (12 * h)
        out[-2] = (3 * a[-1] + 10 * a[-2] - 18 * a[-3] + 6 * a[-4] - a[-5]) / (12 * h)
        out[-1] = (25 * a[-1] - 48 * a[-2] + 36 * a[-3] - 16 * a[-4] + 3 * a[-5]) / (12 * h)
        return np.moveaxis(out, 0, axis)

    def dx(self):
        if self.bc == PERIODIC:
            kx, _ = self._wavenumbers()
            return GridField(np.fft.ifft2(1j * kx * np.fft.fft2(self.v)),
                             self.Lx, self.Ly, self.bc)
        return GridField(self._dx_dirichlet(0), self.Lx, self.Ly, self.bc)

    def dy(self):
        if self.bc == PERIODIC:
            _, ky = self._wavenumbers()
            return GridField(np.fft.ifft2(1j * ky * np.fft.fft2(self.v)),
                             self.Lx, self.Ly, self.bc)
        return GridField(self._dx_dirichlet(1), self.Lx, self.Ly, self.bc)

    def d(self):
        """del = (d/dx - i d/dy)/2."""
        if self.bc == PERIODIC:
            kx, ky = self._wavenumbers()
            sym = 0.5 * (1j * kx + ky)
            return GridField(np.fft.ifft2(sym * np.fft.fft2(self.v)),
                             self.Lx, self.Ly, self.bc)
        return 0.5 * (self.dx() - 1j * self.dy())

    def dbar(self):
        """dbar = (d/dx + i d/dy)/2."""
        if self.bc == PERIODIC:
            kx, ky = self._wavenumbers()
            sym = 0.5 * (1j * kx - ky)
            return GridField(np.fft.ifft2(sym * np.fft.fft2(self.v)),
                             self.Lx, self.Ly, self.bc)
        return 0.5 * (self.dx() + 1j * self.dy())

    def lap_quarter(self):
        """del dbar: spectral in periodic mode, 5-point Laplacian / 4 in Dirichlet mode."""
        if self.bc == PERIODIC:
            kx, ky = self._wavenumbers()
            sym = -0.25 * (kx * kx + ky * ky)
            return GridField(np.fft.ifft2(sym * np.fft.fft2(self.v)),
                             self.Lx, self.Ly, self.bc)
        nx, ny = self.v.shape
        hx = self.Lx / (nx - 1)
        hy = self.Ly / (ny - 1)
        out = np.zeros_like(self.v)
        out[1:-1, 1:-1] = (
            (self.v[2:, 1:-1] - 2 * self.v[1:-1, 1:-1] + self.v[:-2, 1:-1]) / hx ** 2
            + (self.v[1:-1, 2:] - 2 * self.v[1:-1, 1:-1] + self.v[1:-1, :-2]) / hy ** 2
        ) * 0.25
        return GridField(out, self.Lx, self.Ly, self.bc)

    def conj(self):
        return GridField(np.conj(self.v), self.Lx, self.Ly, self.bc)

    # -- reductions ----------------------------------------------------------

    def mean(self) -> complex:
        return complex(np.mean(self.v))

    def integral(self) -> complex:
        """Integral over the rectangle: exact trapezoid (periodic) or Simpson."""
        if self.bc == PERIODIC:
            nx, ny = self.v.shape
            return complex(np.sum(self.v) * (self.Lx / nx) * (self.Ly / ny))
        from scipy.integrate import simpson
        x = np.linspace(0.0, self.Lx, self.v.shape[0])
        y = np.linspace(0.0, self.Ly, self.v.shape[1])
        inner = simpson(self.v, x=y, axis=1)
        return complex(simpson(inner, x=x))

    def norm_inf(self) -> float:
        return float(np.max(np.abs(self.v)))

    def is_zero(self, tol: float = 1e-10) -> bool:
        return self.norm_inf() <= tol

    def __repr__(self):
        return (f"GridField({self.v.shape[0]}x{self.v.shape[1]}, {self.bc}, "
                f"|f|={self.norm_inf():.3g})")


def dbar_solve(f: GridField, tol: float = 1e-9) -> GridField:
    """Unique zero-mean u with dbar u = f on a periodic grid (Fourier division)."""
    if f.bc != PERIODIC:
        raise ShapeMismatch("dbar_solve requires a periodic grid")
    m = abs(f.mean())
    scale = max(1.0, f.norm_inf())
    if m > tol * scale:
        raise NonZeroMean(f"mean {m:.3e} exceeds tolerance")
    fh = np.fft.fft2(f.v)
    kx, ky = f._wavenumbers()
    sym = 0.5 * (1j * kx - ky)
    sym[0, 0] = 1.0
    uh = fh / sym
    uh[0, 0] = 0.0
    return GridField(np.fft.ifft2(uh), f.Lx, f.Ly, f.bc)


# ---------------------------------------------------------------------------
# Formal differential polynomials
# ---------------------------------------------------------------------------

class DiffPoly:
    """Polynomial in formal derivatives of named field symbols.

    A monomial is a multiset of factors (name, a, b), where a and b count
    applied del and dbar derivatives, times an integer power of a formal
    grading variable lam.  Coefficients are exact Fractions, so identity
    checks are exact.  Conjugation flips the bar-flag encoded as a trailing
    '~' on the name and swaps (a, b).
    """

    __slots__ = ("terms",)

    def __init__(self, terms=None):
        # terms: dict[(lam:int, mono:tuple[(name,a,b),...] sorted)] -> Fraction
        self.terms = {}
        if terms:
            for key, coeff in terms.items():
                if coeff != 0:
                    self.terms[key] = self.terms.get(key, Fraction(0)) + coeff
            self.terms = {k: v for k, v in self.terms.items() if v != 0}

    # -- constructors --------------------------------------------------------

    @classmethod
    def sym(cls, name: str, lam: int = 0) -> "DiffPoly":
        return cls({(lam, ((name, 0, 0),)): Fraction(1)})

    @classmethod
    def const(cls, value, lam: int = 0) -> "DiffPoly":
        value = Fraction(value)
        if value == 0:
            return cls()
        return cls({(lam, ()): value})

    @classmethod
    def lam_power(cls, k: int) -> "DiffPoly":
        return cls({(k, ()): Fraction(1)})

    def copy(self):
        return DiffPoly(dict(self.terms))

    # -- ring structure ------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, DiffPoly):
            return other
        if isinstance(other, (int, Fraction)):
            return DiffPoly.const(other)
        if isinstance(other, float) and float(other).is_integer():
            return DiffPoly.const(int(other))
        if isinstance(other, float):
            frac = Fraction(other).limit_denominator(1 << 30)
            if abs(float(frac) - other) < 1e-15:
                return DiffPoly.const(frac)
        return None

    def __add__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        out = dict(self.terms)
        for k, v in o.terms.items():
            out[k] = out.get(k, Fraction(0)) + v
        return DiffPoly(out)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return self + (-o)

    def __rsub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return o + (-self)

    def __neg__(self):
        return DiffPoly({k: -v for k, v in self.terms.items()})

    def __mul__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        out = {}
        for (l1, m1), c1 in self.terms.items():
            for (l2, m2), c2 in o.terms.items():
                key = (l1 + l2, tuple(sorted(m1 + m2)))
                out[key] = out.get(key, Fraction(0)) + c1 * c2
        return DiffPoly(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, Fraction)):
            return DiffPoly({k: v / Fraction(other) for k, v in self.terms.items()})
        return NotImplemented

    # -- derivations and conjugation ------------------------------------------

    def d(self) -> "DiffPoly":
        out = {}
        for (lam, mono), coeff in self.terms.items():
            for idx, (name, a, b) in enumerate(mono):
                new = list(mono)
                new[idx] = (name, a + 1, b)
                key = (lam, tuple(sorted(new)))
                out[key] = out.get(key, Fraction(0)) + coeff
        return DiffPoly(out)

    def dbar(self) -> "DiffPoly":
        out = {}
        for (lam, mono), coeff in self.terms.items():
            for idx, (name, a, b) in enumerate(mono):
                new = list(mono)
                new[idx] = (name, a, b + 1)
                key = (lam, tuple(sorted(new)))
                out[key] = out.get(key, Fraction(0)) + coeff
        return DiffPoly(out)

    def conj(self) -> "DiffPoly":
        out = {}
        for (lam, mono), coeff in self.terms.items():
            new = []
            for name, a, b in mono:
                flipped = name[:-1] if name.endswith("~") else name + "~"
                new.append((flipped, b, a))
            key = (-lam, tuple(sorted(new)))
            out[key] = out.get(key, Fraction(0)) + coeff
        return DiffPoly(out)

    # -- projections -----------------------------------------------------------

    def drop_quadratic(self, names) -> "DiffPoly":
        """Drop monomials containing two or more factors from ``names`` (mod t^2)."""
        names = set(names)
        out = {}
        for (lam, mono), coeff in self.terms.items():
            count = sum(1 for (name, _, _) in mono if name.rstrip("~") in names)
            if count < 2:
                out[(lam, mono)] = coeff
        return DiffPoly(out)

    def drop_dz2(self) -> "DiffPoly":
        """Drop monomials with two or more z-derivatives applied in total (mod del^2)."""
        out = {}
        for (lam, mono), coeff in self.terms.items():
            if sum(a for (_, a, _) in mono) < 2:
                out[(lam, mono)] = coeff
        return DiffPoly(out)

    def lam_coefficient(self, k: int) -> "DiffPoly":
        return DiffPoly({(0, mono): c for (lam, mono), c in self.terms.items() if lam == k})

    def lam_degrees(self):
        return sorted({lam for (lam, _) in self.terms})

    # -- queries -----------------------------------------------------------------

    def is_zero(self, tol: float = 0.0) -> bool:
        return not self.terms

    def norm_inf(self) -> float:
        if not self.terms:
            return 0.0
        return float(max(abs(v) for v in self.terms.values()))

    def __eq__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return (self - o).is_zero()

    def subs(self, values: dict):
        """Numerically evaluate by substituting jets/complex for symbols.

        ``values[name]`` is the value of the unbarred symbol; derivative
        factors apply d()/dbar() of that value, bars apply conj().
        """
        total = None
        for (lam, mono), coeff in self.terms.items():
            if lam != 0:
                raise ValueError("cannot substitute with pending lam grading")
            term = None
            for name, a, b in mono:
                base = values[name.rstrip("~")]
                if name.endswith("~"):
                    base = base.conj() if hasattr(base, "conj") else np.conj(base)
                for _ in range(a):
                    base = base.d()
                for _ in range(b):
                    base = base.dbar()
                term = base if term is None else term * base
            piece = float(coeff) if term is None else term * float(coeff)
            total = piece if total is None else total + piece
        return 0.0 if total is None else total

    def __repr__(self):
        if not self.terms:
            return "DiffPoly(0)"
        bits = []
        for (lam, mono), coeff in sorted(self.terms.items()):
            factors = [f"{'d' * a}{'b' * b}{name}" for name, a, b in mono]
            s = str(coeff)
            if lam:
                s += f"*L^{lam}"
            bits.append(s + ("*" + "*".join(factors) if factors else ""))
        return "DiffPoly[" + " + ".join(bits[:10]) + ("..." if len(bits) > 10 else "") + "]"


# ---------------------------------------------------------------------------
# Dual numbers (first-order nilpotent tag for mod-t^2 work over any ring)
# ---------------------------------------------------------------------------

class NilEps:
    """a + eps b with eps^2 = 0; derivations and conjugation act componentwise."""

    __slots__ = ("a", "b")

    def __init__(self, a, b):
        self.a = a
        self.b = b

    @classmethod
    def lift(cls, value):
        return value if isinstance(value, NilEps) else cls(value, _zero_like(value))

    def _bin(self, other, f):
        o = NilEps.lift(other) if not isinstance(other, NilEps) else other
        return f(self, o)

    def __add__(self, other):
        return self._bin(other, lambda s, o: NilEps(s.a + o.a, s.b + o.b))

    __radd__ = __add__

    def __sub__(self, other):
        return self._bin(other, lambda s, o: NilEps(s.a - o.a, s.b - o.b))

    def __rsub__(self, other):
        return self._bin(other, lambda s, o: NilEps(o.a - s.a, o.b - s.b))

    def __neg__(self):
        return NilEps(-self.a, -self.b)

    def __mul__(self, other):
        if not isinstance(other, NilEps):
            return NilEps(self.a * other, self.b * other)
        return NilEps(self.a * other.a, self.a * other.b + self.b * other.a)

    def __rmul__(self, other):
        return NilEps(other * self.a, other * self.b)

    def d(self):
        return NilEps(_apply(self.a, "d"), _apply(self.b, "d"))

    def dbar(self):
        return NilEps(_apply(self.a, "dbar"), _apply(self.b, "dbar"))

    def conj(self):
        return NilEps(_conj(self.a), _conj(self.b))

    def is_zero(self, tol=1e-10):
        return _is_zero(self.a, tol) and _is_zero(self.b, tol)

    def __repr__(self):
        return f"NilEps({self.a!r}, eps*{self.b!r})"


# ---------------------------------------------------------------------------
# Laurent polynomials and rational functions in lam
# ---------------------------------------------------------------------------

class Laurent:
    """Laurent polynomial in lam with complex or Coefficient entries."""

    __slots__ = ("c",)

    def __init__(self, coeffs=None):
        self.c = {}
        if coeffs:
            for k, v in coeffs.items():
                if not _is_zero(v, 0.0 if not isinstance(v, (int, float, complex)) else TOL):
                    self.c[int(k)] = v

    @classmethod
    def const(cls, value):
        return cls({0: value})

    @classmethod
    def lam(cls, k: int = 1, coeff=1.0):
        return cls({k: coeff})

    def _coerce(self, other):
        if isinstance(other, Laurent):
            return other
        if isinstance(other, LambdaRational):
            return None
        return Laurent({0: other})

    def __add__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        out = dict(self.c)
        for k, v in o.c.items():
            out[k] = out[k] + v if k in out else v
        return Laurent(out)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return self + (-o)

    def __rsub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return o + (-self)

    def __neg__(self):
        return Laurent({k: -v for k, v in self.c.items()})

    def __mul__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        out = {}
        for k1, v1 in self.c.items():
            for k2, v2 in o.c.items():
                k = k1 + k2
                p = v1 * v2
                out[k] = out[k] + p if k in out else p
        return Laurent(out)

    __rmul__ = __mul__

    def d(self):
        return Laurent({k: _apply(v, "d") for k, v in self.c.items()})

    def dbar(self):
        return Laurent({k: _apply(v, "dbar") for k, v in self.c.items()})

    def conj(self):
        """Coefficientwise conjugate combined with lam -> 1/lam-bar on the circle.

        For reality checks the convention lam |-> -1/lam-bar is handled at the
        connection level; here conj only conjugates coefficients and negates
        the exponent so that (sum c_k lam^k)-bar at lam on the unit circle is
        sum conj(c_k) lam^-k.
        """
        return Laurent({-k: _conj(v) for k, v in self.c.items()})

    def degree(self):
        return max(self.c) if self.c else None

    def valuation(self):
        return min(self.c) if self.c else None

    def coeff(self, k: int):
        return self.c.get(k, 0.0)

    def shift(self, s: int):
        return Laurent({k + s: v for k, v in self.c.items()})

    def __call__(self, lam):
        val = None
        for k, v in self.c.items():
            term = v * (lam ** k)
            val = term if val is None else val + term
        return 0.0 if val is None else val

    def is_zero(self, tol=1e-10):
        return all(_is_zero(v, tol) for v in self.c.values())

    def norm_inf(self):
        if not self.c:
            return 0.0
        return max(_norm(v) for v in self.c.values())

    def clean(self, tol=1e-12):
        scale = max(self.norm_inf(), 1.0)
        return Laurent({k: v for k, v in self.c.items() if _norm(v) > tol * scale})

    def __repr__(self):
        return "Laurent{" + ", ".join(f"L^{k}: {v!r}" for k, v in sorted(self.c.items())) + "}"


class LambdaRational:
    """Ratio of Laurent polynomials in lam.

    Arithmetic is by cross multiplication; ``normalize`` strips common lam
    powers, cancels a scalar polynomial gcd when the coefficients are plain
    numbers, and rescales so the denominator's leading coefficient is one.
    """

    __slots__ = ("num", "den")

    def __init__(self, num: Laurent, den: Laurent = None):
        if not isinstance(num, Laurent):
            num = Laurent({0: num})
        if den is None:
            den = Laurent({0: 1.0})
        if not isinstance(den, Laurent):
            den = Laurent({0: den})
        if den.is_zero(0.0):
            raise ZeroDivisionError("denominator is identically zero")
        self.num = num
        self.den = den

    @classmethod
    def const(cls, value):
        return cls(Laurent({0: value}))

    @classmethod
    def lam(cls, k=1):
        return cls(Laurent({k: 1.0}))

    def _coerce(self, other):
        if isinstance(other, LambdaRational):
            return other
        if isinstance(other, Laurent):
            return LambdaRational(other)
        return LambdaRational(Laurent({0: other}))

    def __add__(self, other):
        o = self._coerce(other)
        return LambdaRational(self.num * o.den + o.num * self.den, self.den * o.den)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        return LambdaRational(self.num * o.den - o.num * self.den, self.den * o.den)

    def __rsub__(self, other):
        o = self._coerce(other)
        return o - self

    def __neg__(self):
        return LambdaRational(-self.num, self.den)

    def __mul__(self, other):
        o = self._coerce(other)
        return LambdaRational(self.num * o.num, self.den * o.den)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        if o.num.is_zero(0.0):
            raise ZeroDivisionError("division by zero rational")
        return LambdaRational(self.num * o.den, self.den * o.num)

    def __rtruediv__(self, other):
        o = self._coerce(other)
        return o / self

    def inv(self):
        return LambdaRational(self.den, self.num)

    def d(self):
        return LambdaRational(self.num.d() * self.den - self.num * self.den.d(),
                              self.den * self.den)

    def dbar(self):
        return LambdaRational(self.num.dbar() * self.den - self.num * self.den.dbar(),
                              self.den * self.den)

    def conj(self):
        return LambdaRational(self.num.conj(), self.den.conj())

    def __call__(self, lam):
        return self.num(lam) / self.den(lam)

    def is_zero(self, tol=1e-10):
        return self.num.clean(tol).is_zero(tol)

    def norm_inf(self):
        r = self.normalize()
        dn = r.den.norm_inf()
        return r.num.norm_inf() / (dn if dn > 0 else 1.0)

    def __eq__(self, other):
        o = self._coerce(other)
        diff = self.num * o.den - o.num * self.den
        scale = max(self.num.norm_inf() * o.den.norm_inf(),
                    o.num.norm_inf() * self.den.norm_inf(), 1.0)
        return all(_norm(v) <= 1e-10 * scale for v in diff.c.values())

    def normalize(self):
        """Coprime/monic normal form for scalar-coefficient rationals."""
        num, den = self.num.clean(), self.den.clean()
        if num.is_zero():
            return LambdaRational(Laurent(), Laurent({0: 1.0}))
        scalars = all(isinstance(v, (int, float, complex)) for v in
                      list(num.c.values()) + list(den.c.values()))
        vn, vd = num.valuation(), den.valuation()
        num, den = num.shift(-vn), den.shift(-vd)
        shift = vn - vd
        if scalars:
            pn = _laurent_to_poly(num)
            pd = _laurent_to_poly(den)
            g = _poly_gcd(pn, pd)
            if len(g) > 1:
                pn = _poly_div(pn, g)
                pd = _poly_div(pd, g)
            lead = pd[-1]
            pn = [c / lead for c in pn]
            pd = [c / lead for c in pd]
            num = Laurent({k: v for k, v in enumerate(pn)}).clean()
            den = Laurent({k: v for k, v in enumerate(pd)}).clean()
        out = LambdaRational(num.shift(shift), den)
        return out

    def __repr__(self):
        return f"({self.num!r})/({self.den!r})"


def _laurent_to_poly(l: Laurent):
    deg = l.degree()
    return [l.coeff(k) for k in range(deg + 1)]


def _poly_gcd(a, b, tol=1e-9):
    a, b = list(a), list(b)

    def trim(p):
        scale = max((abs(c) for c in p), default=0.0)
        while p and abs(p[-1]) <= tol * max(scale, 1.0):
            p.pop()
        return p

    a, b = trim(a), trim(b)
    while b:
        _, r = _poly_divmod(a, b)
        a, b = b, trim(r)
    if not a:
        return [1.0]
    return [c / a[-1] for c in a]


def _poly_divmod(a, b):
    a = list(a)
    q = [0.0] * max(len(a) - len(b) + 1, 1)
    while len(a) >= len(b) and any(abs(c) > 0 for c in a):
        k = len(a) - len(b)
        f = a[-1] / b[-1]
        q[k] = f
        for i, c in enumerate(b):
            a[i + k] -= f * c
        a.pop()
    return q, a


def _poly_div(a, b):
    q, _ = _poly_divmod(a, b)
    return q


def series_expand(r: LambdaRational, at, order: int) -> dict:
    """Laurent coefficients of r at lam = 0 or infinity.

    Returns {exponent: coefficient} covering all exponents from the leading
    one up to (at 0) or down to (at infinity) the requested order, exact in
    the coefficient ring.
    """
    if at in ("inf", "oo", float("inf")):
        flipped = LambdaRational(Laurent({-k: v for k, v in r.num.c.items()}),
                                 Laurent({-k: v for k, v in r.den.c.items()}))
        coeffs = series_expand(flipped, 0, order)
        return {-k: v for k, v in coeffs.items()}
    if at != 0:
        raise ValueError("expansion point must be 0 or 'inf'")
    num, den = r.num.clean(), r.den.clean()
    if den.is_zero():
        raise PoleAtPoint("denominator is identically zero")
    if num.is_zero():
        return {}
    vd = den.valuation()
    vn = num.valuation()
    b = [den.coeff(vd + i) for i in range(order + 1 + max(0, num.degree() - vn))]
    if _is_zero(b[0], TOL) if isinstance(b[0], (int, float, complex)) else _is_zero(b[0], 1e-300):
        raise PoleAtPoint("denominator leading data vanishes")
    nterms = order - (vn - vd) + 1
    if nterms <= 0:
        return {}
    b0 = b[0]
    inv = [_invert(b0)]
    for i in range(1, nterms):
        acc = None
        for j in range(i):
            piece = inv[j] * (b[i - j] if i - j < len(b) else 0.0)
            acc = piece if acc is None else acc + piece
        inv.append(-(acc * _invert(b0)) if acc is not None else _zero_like_any(b0))
    out = {}
    for k in range(vn - vd, order + 1):
        acc = None
        for j in range(nterms):
            e = k - (vn - vd) - j
            if e < 0:
                continue
            a = num.coeff(vn + e)
            if _maybe_zero(a):
                continue
            piece = a * inv[j]
            acc = piece if acc is None else acc + piece
        if acc is not None and not _maybe_zero(acc):
            out[k] = acc
    return out


# ---------------------------------------------------------------------------
# Formal n-th root scale used by the parabolic gauge
# ---------------------------------------------------------------------------

class NthRoot:
    """Formal base**(power/n) kept unevaluated so gauge code stays rational.

    The logarithmic derivatives d(f)/f = (power/n) d(base)/base are rational
    and are what the gauge action uses.  ``value`` materializes the principal
    root when the ring supports it (jets, grids, numbers).
    """

    __slots__ = ("base", "n", "power")

    def __init__(self, base, n: int, power: int = 1):
        self.base = base
        self.n = int(n)
        self.power = int(power)

    def inverse(self):
        return NthRoot(self.base, self.n, -self.power)

    def _ratio(self):
        q = Fraction(self.power, self.n)
        return q if isinstance(self.base, DiffPoly) else float(q)

    def dlog(self):
        """d(f)/f."""
        return _apply(self.base, "d") * _invert(self.base) * self._ratio()

    def dbarlog(self):
        """dbar(f)/f."""
        return _apply(self.base, "dbar") * _invert(self.base) * self._ratio()

    def pow_n(self):
        """f**n, always available in the base ring."""
        out = None
        b = self.base if self.power > 0 else _invert(self.base)
        for _ in range(abs(self.power)):
            out = b if out is None else out * b
        return out

    def value(self):
        b = self.base
        if isinstance(b, (int, float, complex)):
            root = complex(b) ** (1.0 / self.n)
        elif isinstance(b, Jet):
            root = b.nth_root(self.n)
        elif isinstance(b, GridField):
            root = b.nth_root(self.n)
        elif isinstance(b, Laurent) or isinstance(b, LambdaRational):
            raise TypeError("materializing a formal lam-root is not supported; "
                            "use pow_n() for exact checks")
        else:
            raise TypeError(f"no principal root for {type(b)}")
        if self.power == 1:
            return root
        if isinstance(root, (int, float, complex)):
            return root ** self.power
        out = root
        for _ in range(abs(self.power) - 1):
            out = out * root
        return out if self.power > 0 else _invert(out)


# ---------------------------------------------------------------------------
# Generic helpers (duck-typed scalar operations)
# ---------------------------------------------------------------------------

def _apply(v, op):
    if isinstance(v, (int, float, complex, Fraction)):
        return 0.0
    return getattr(v, op)()


def _conj(v):
    if isinstance(v, (int, float, Fraction)):
        return v
    if isinstance(v, complex):
        return v.conjugate()
    return v.conj()


def _invert(v):
    if isinstance(v, (int, float, complex)):
        return 1.0 / v
    if isinstance(v, Fraction):
        return Fraction(1) / v
    return v.inv()


def _zero_like(v):
    if isinstance(v, (int, float, complex, Fraction)):
        return 0.0
    if isinstance(v, Jet):
        return Jet(v.D)
    if isinstance(v, GridField):
        return GridField.zeros(*v.v.shape, v.Lx, v.Ly, v.bc)
    if isinstance(v, DiffPoly):
        return DiffPoly()
    if isinstance(v, Laurent):
        return Laurent()
    if isinstance(v, LambdaRational):
        return LambdaRational(Laurent(), Laurent({0: 1.0}))
    if isinstance(v, NilEps):
        return NilEps(_zero_like(v.a), _zero_like(v.b))
    raise TypeError(f"no zero for {type(v)}")


def _zero_like_any(v):
    z = _zero_like(v)
    return z


def _one_like(v):
    if isinstance(v, (int, float, complex, Fraction)):
        return 1.0
    if isinstance(v, Jet):
        return Jet.const(1.0, v.D)
    if isinstance(v, GridField):
        return GridField.const(1.0, *v.v.shape, v.Lx, v.Ly, v.bc)
    if isinstance(v, DiffPoly):
        return DiffPoly.const(1)
    if isinstance(v, Laurent):
        return Laurent({0: 1.0})
    if isinstance(v, LambdaRational):
        return LambdaRational.const(1.0)
    if isinstance(v, NilEps):
        return NilEps(_one_like(v.a), _zero_like(v.b))
    raise TypeError(f"no one for {type(v)}")


def _is_zero(v, tol=1e-10):
    if isinstance(v, (int, float, Fraction)):
        return abs(v) <= tol
    if isinstance(v, complex):
        return abs(v) <= tol
    return v.is_zero(tol)


def _maybe_zero(v):
    try:
        return _is_zero(v, 0.0 if isinstance(v, (DiffPoly,)) else TOL)
    except TypeError:
        return False


def _norm(v):
    if isinstance(v, (int, float, Fraction)):
        return abs(float(v))
    if isinstance(v, complex):
        return abs(v)
    return v.norm_inf()


def norm_inf(v):
    return _norm(v)


def conj(v):
    return _conj(v)


def derive(c, direction: str):
    """Derivation dispatch: direction 'd' (del) or 'dbar'."""
    if direction not in ("d", "dbar"):
        raise ValueError("direction must be 'd' or 'dbar'")
    return _apply(c, direction)
