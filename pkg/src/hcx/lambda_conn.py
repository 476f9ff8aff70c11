"""Families of connections C(lam) = lam Phi + A + 1/lam Psi.

Phi is carried by a structure tuple (mu_2..mu_n): Phi_1 is the principal
nilpotent lower shift (optionally with prescribed subdiagonal entries) and
Phi_2 = mu_2 Phi_1 + ... + mu_n Phi_1^(n-1).  The star of a matrix is
M* = H M^dagger H^(-1) for a positive hermitian H, and the reality
constraint -C(-1/conj(lam))* = C(lam) amounts to Psi = Phi*, A = -A*.

The (1,0)/(0,1) parts are

    C1(lam) = lam Phi_1 + A_1 + 1/lam (Phi_2)*
    C2(lam) = lam Phi_2 + A_2 + 1/lam (Phi_1)*.

Running the parabolic reduction over the lam-rational scalar field yields
coordinates t_k(lam), mu_k(lam) that are rational in lam with leading terms
lam^(k-1) tr(A_1 Phi_1^(k-1)) and lam^(2-k) mu_k at infinity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg as la
from .coeff import (Laurent, LambdaRational, _apply, _conj, _invert, _is_zero,
                    _norm, _one_like, _zero_like, series_expand)
from .errors import (DegreeMismatch, NonGeneric, NotPositiveDefinite,
                     ShapeMismatch, WidthExceeded)
from .gauge import GaugeMatrix, LocalConnection, parabolic_gauge
from .parabolic import CotangentPoint


@dataclass
class LambdaConnection:
    """Parts of C(lam); each is an n x n nested list over one coefficient ring."""

    n: int
    phi1: list
    phi2: list
    a1: list
    a2: list
    psi1: list   # appears in C2 at 1/lam; equals (phi1)* under reality
    psi2: list   # appears in C1 at 1/lam; equals (phi2)* under reality
    hermitian: list | None = None  # None means the identity metric

    def c1_at(self, lam):
        return _lam_combine(self.phi1, self.a1, self.psi2, lam)

    def c2_at(self, lam):
        return _lam_combine(self.phi2, self.a2, self.psi1, lam)

    def c1_laurent(self):
        return _lam_matrix(self.phi1, self.a1, self.psi2)

    def c2_laurent(self):
        return _lam_matrix(self.phi2, self.a2, self.psi1)

    def connection_at(self, lam) -> LocalConnection:
        return LocalConnection(self.n, self.c1_at(lam), self.c2_at(lam))

    def star(self, M):
        """M* = H M^dagger H^(-1)."""
        Md = la.dagger(M)
        if self.hermitian is None:
            return Md
        H = self.hermitian
        return la.mul(la.mul(H, Md), la.inv(H))

    def reality_residual(self, samples=((1+0j), (0.5 + 0.8j), np.exp(0.7j))):
        """max over sample lam of |C(lam) + C(-1/conj(lam))*|."""
        worst = 0.0
        for lam in samples:
            lam = complex(lam)
            lam2 = -1.0 / np.conj(lam)
            c1 = self.c1_at(lam)
            c2 = self.c2_at(lam)
            # star exchanges (1,0) and (0,1) parts
            s1 = self.star(self.c2_at(lam2))
            s2 = self.star(self.c1_at(lam2))
            worst = max(worst, la.norm_inf(la.add(c1, s1)), la.norm_inf(la.add(c2, s2)))
        return worst


def _lam_combine(phi, a, psi, lam):
    n = len(a)
    out = []
    for i in range(n):
        row = []
        for j in range(n):
            row.append(phi[i][j] * lam + a[i][j] + psi[i][j] * (1.0 / lam))
        out.append(row)
    return out


def _lam_matrix(phi, a, psi):
    n = len(a)
    out = []
    for i in range(n):
        row = []
        for j in range(n):
            row.append(LambdaRational(Laurent({1: phi[i][j], 0: a[i][j], -1: psi[i][j]})))
        out.append(row)
    return out


def principal_nilpotent(n, proto, subdiag=None):
    m = la.zeros(n, n, proto)
    one = _one_like(proto)
    for i in range(n - 1):
        m[i + 1][i] = one if subdiag is None else subdiag[i]
    return m


def build(mu: dict, a1: list, hermitian=None, subdiag=None) -> LambdaConnection:
    """Reality-constrained family from a structure tuple and a (1,0)-part.

    mu maps k in 2..n to coefficients; phi2 = sum mu_k phi1^(k-1);
    a2 = -(a1)* and psi = phi* are forced, so the reality identity holds by
    construction.  ``hermitian`` must be positive definite when given.
    """
    n = len(a1)
    proto = a1[0][0]
    phi1 = principal_nilpotent(n, proto, subdiag)
    phi2 = la.zeros(n, n, proto)
    power = la.eye(n, proto)
    for k in range(2, n + 1):
        power = la.mul(power, phi1)
        if k in mu:
            phi2 = la.add(phi2, la.scale(power, mu[k]))
    if hermitian is not None:
        _check_positive(hermitian)
    conn = LambdaConnection(n, phi1, phi2, a1, None, None, None, hermitian)
    conn.a2 = la.neg(conn.star(a1))
    conn.psi1 = conn.star(phi1)
    conn.psi2 = conn.star(phi2)
    return conn


def _check_positive(H):
    n = len(H)
    try:
        arr = np.array([[complex(H[i][j]) for j in range(n)] for i in range(n)])
    except TypeError:
        return  # field-valued metric: positivity checked by the caller
    w = np.linalg.eigvalsh((arr + arr.conj().T) / 2)
    if np.min(w) <= 0:
        raise NotPositiveDefinite("hermitian metric is not positive definite")


@dataclass
class RationalCoordinates:
    """t and mu as rational functions of lam (k = 2..n), plus mu_1."""

    n: int
    t: dict = field(default_factory=dict)
    mu: dict = field(default_factory=dict)


def rational_coordinates(conn: LambdaConnection) -> RationalCoordinates:
    """Exact parabolic coordinates over the lam-rational field.

    Requires scalar (complex) entries so the field arithmetic is exact; the
    sampled path ``coordinates_at`` serves field-valued entries.
    """
    c1 = conn.c1_laurent()
    c2 = conn.c2_laurent()
    lc = LocalConnection(conn.n, c1, c2)
    try:
        gauge, form = parabolic_gauge(lc)
    except ZeroDivisionError as exc:
        raise NonGeneric(str(exc)) from exc
    t = {k: v.normalize() if isinstance(v, LambdaRational) else v
         for k, v in form.t.items()}
    mu = {k: v.normalize() if isinstance(v, LambdaRational) else v
          for k, v in form.mu.items()}
    return RationalCoordinates(conn.n, t, mu)


def coordinates_at(conn: LambdaConnection, lam) -> tuple:
    """Companion coordinates of C(lam) at a numeric lam (any coefficient ring)."""
    gauge, form = parabolic_gauge(conn.connection_at(lam))
    return form.t, form.mu


def leading_terms(conn: LambdaConnection, order_slack: int = 3) -> CotangentPoint:
    """Highest coefficients at lam = infinity: mu_k at lam^(2-k), t_k at lam^(k-1).

    Raises DegreeMismatch when any coordinate carries powers above its
    expected top degree.  The t_k are cross-checked against the traces
    tr(A_1 Phi_1^(k-1)) read directly off the connection.
    """
    coords = rational_coordinates(conn)
    n = conn.n
    mu = {}
    t = {}
    for k in range(2, n + 1):
        exp_mu = series_expand(coords.mu[k], "inf", order_slack)
        top = max(exp_mu, default=None)
        if top is not None and top > 2 - k and not _is_zero(exp_mu[top], 1e-9):
            raise DegreeMismatch(f"mu_{k} has a lam^{top} coefficient above lam^{2-k}")
        mu[k] = exp_mu.get(2 - k, 0.0)
        exp_t = series_expand(coords.t[k], "inf", order_slack)
        top = max(exp_t, default=None)
        if top is not None and top > k - 1 and not _is_zero(exp_t[top], 1e-9):
            raise DegreeMismatch(f"t_{k} has a lam^{top} coefficient above lam^{k-1}")
        t[k] = exp_t.get(k - 1, 0.0)
    # independent recomputation of t_k from the raw connection
    power = la.eye(n, conn.a1[0][0])
    checks = {}
    for k in range(2, n + 1):
        power = la.mul(power, conn.phi1)
        checks[k] = la.trace(la.mul(power, conn.a1))
    point = CotangentPoint(n, mu, t)
    point.trace_t = checks
    return point


# ---------------------------------------------------------------------------
# Leading term of the curvature versus the holomorphicity residual
# ---------------------------------------------------------------------------

def xi_lambda_samples(that_fn, mu_fn, n, lams):
    """Curvature coefficients at sample lam values from coordinate callables."""
    from .diffop import LeftIdealNF, parabolic_curvature
    out = []
    for lam in lams:
        t = {k: that_fn(k, lam) for k in range(2, n + 1)}
        mu = {k: mu_fn(k, lam) for k in range(1, n + 1)}
        out.append(parabolic_curvature(LeftIdealNF(n, t, mu)))
    return out


def laurent_fit(values, lams, kmin, kmax):
    """Least squares Laurent coefficients {k: c_k} from samples on a circle."""
    lams = np.asarray(lams, dtype=complex)
    powers = np.arange(kmin, kmax + 1)
    V = lams[:, None] ** powers[None, :]
    if isinstance(values[0], (int, float, complex)):
        rhs = np.asarray(values, dtype=complex)[:, None]
        sol, *_ = np.linalg.lstsq(V, rhs, rcond=None)
        return {int(k): complex(c) for k, c in zip(powers, sol[:, 0])}
    # field values: fit each array entry
    stack = np.stack([v.v for v in values], axis=0)
    flat = stack.reshape(len(values), -1)
    sol, *_ = np.linalg.lstsq(V, flat, rcond=None)
    proto = values[0]
    out = {}
    for idx, k in enumerate(powers):
        arr = sol[idx].reshape(proto.v.shape)
        out[int(k)] = type(proto)(arr, proto.Lx, proto.Ly, proto.bc)
    return out


def xi_leading_check(n, mu: dict, t: dict, nsamples=None) -> dict:
    """Numeric check that the lam^(k-1) coefficient of xi_k(lam) is -r_k.

    The pure leading representative t_k(lam) = lam^(k-1) t_k,
    mu_k(lam) = lam^(2-k) mu_k is evaluated at unit-circle samples; the
    fitted lam^(k-1) coefficient of the curvature must equal the negated
    holomorphicity residual of (mu, t).  Returns a report with the residual
    magnitudes per k.
    """
    from .diffop import LeftIdealNF, parabolic_curvature, traceless_mu1
    from .parabolic import condition_c_residual_parts

    band = 2 * n + 2
    m = nsamples or (2 * band + 3)
    lams = np.exp(2j * np.pi * np.arange(m) / m) * 1.0

    def that_fn(k, lam):
        return t[k] * (lam ** (k - 1))

    def mu_fn(k, lam):
        if k == 1:
            up = {kk: mu[kk] * (lam ** (2 - kk)) for kk in range(2, n + 1)}
            tt = {kk: t[kk] * (lam ** (kk - 1)) for kk in range(2, n + 1)}
            return traceless_mu1(n, tt, up)
        return mu[k] * (lam ** (2 - k))

    xi_list = xi_lambda_samples(that_fn, mu_fn, n, lams)
    resid = condition_c_residual_parts(n, t, mu)
    report = {"n": n, "per_k": {}, "max_residual": 0.0}
    for k in range(2, n + 1):
        vals = [xi[k] for xi in xi_list]
        fit = laurent_fit(vals, lams, -(band // 2), band // 2)
        lead = fit.get(k - 1, _zero_like(t[k]) if not isinstance(t[k], (int, float, complex)) else 0.0)
        diff = _norm(lead + resid[k])
        scale = max(_norm(resid[k]), 1.0)
        report["per_k"][k] = diff / scale
        report["max_residual"] = max(report["max_residual"], diff / scale)
    report["passed"] = report["max_residual"] < 1e-8
    return report


# ---------------------------------------------------------------------------
# Loop-algebra band matrices
# ---------------------------------------------------------------------------

@dataclass
class BandMatrix:
    """Window of an infinite periodic matrix M[i, j] = M[i+n, j+n].

    Entries are generated from a Laurent matrix polynomial by
    M[i, j] = (N_{k_j - k_i})[r_i, r_j] with i = k_i n + r_i (0 <= r < n).
    """

    n: int
    coeffs: dict  # lam power -> numeric n x n array
    window: int

    def entry(self, i, j):
        ki, ri = divmod(i, self.n)
        kj, rj = divmod(j, self.n)
        N = self.coeffs.get(kj - ki)
        if N is None:
            return 0.0
        return N[ri][rj]

    def dense(self, rows=None):
        rows = rows if rows is not None else range(-self.window, self.window + self.n)
        rows = list(rows)
        return np.array([[complex(self.entry(i, j)) for j in rows] for i in rows])

    def width(self):
        w = 0
        for p, N in self.coeffs.items():
            for ri in range(self.n):
                for rj in range(self.n):
                    if not _is_zero(N[ri][rj], 1e-12):
                        w = max(w, abs(p * self.n + rj - ri))
        return w

    def periodicity_residual(self, span=2):
        worst = 0.0
        for i in range(-span * self.n, span * self.n):
            for j in range(-span * self.n, span * self.n):
                worst = max(worst, abs(complex(self.entry(i, j))
                                       - complex(self.entry(i + self.n, j + self.n))))
        return worst


def band_matrix(laurent_parts: dict, n: int, max_width: int | None = None) -> BandMatrix:
    """Infinite-matrix view of a Laurent matrix polynomial.

    ``laurent_parts`` maps lam powers to n x n matrices.  Raises
    WidthExceeded when the resulting band is wider than max_width
    (default n, the standard-form bound).
    """
    bm = BandMatrix(n, laurent_parts, window=2 * n)
    bound = max_width if max_width is not None else n
    if bm.width() > bound:
        raise WidthExceeded(f"band width {bm.width()} exceeds {bound}")
    return bm


def band_to_laurent(bm: BandMatrix) -> dict:
    """Inverse of ``band_matrix`` on windows (index bijection)."""
    out = {}
    for p in bm.coeffs:
        N = [[bm.entry(ri, p * bm.n + rj) for rj in range(bm.n)] for ri in range(bm.n)]
        out[p] = N
    return out
