"""Cotangent-bundle residuals, matrix curvature and the moment pairing.

A point of the cotangent bundle is a tuple (mu_2..mu_n, t_2..t_n) with mu_k
of bidegree (1-k, 1) and t_k of bidegree (k, 0).  The generalized
holomorphicity condition cutting out the bundle reads, for each k,

    (-dbar + mu_2 del + k del(mu_2)) t_k
        + sum_{l=1}^{n-k} ((l+k) del(mu_{l+2}) + (l+1) mu_{l+2} del) t_{k+l} = 0.

The sign convention linking these residuals to the operator curvature is
fixed by the n = 2 identity: xi_2 = -r_2 + del^3(mu_2)/2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import linalg as la
from .coeff import _apply, _is_zero, _norm, _zero_like
from .errors import ShapeMismatch
from .gauge import CompanionForm, LocalConnection, assemble_A2


@dataclass
class CotangentPoint:
    """mu maps 2..n, t maps 2..n; entries share one coefficient ring."""

    n: int
    mu: dict = field(default_factory=dict)
    t: dict = field(default_factory=dict)

    def proto(self):
        for v in list(self.mu.values()) + list(self.t.values()):
            return v
        raise ValueError("empty cotangent point")


@dataclass(frozen=True)
class Bidegreed:
    """Coefficient with an enforced bidegree tag (p, q).

    Multiplication adds tags, addition requires equal tags, del adds (1, 0)
    and dbar adds (0, 1).  Used by property tests to certify that the
    residual r_k is a section of bidegree (k, 1).
    """

    value: object
    p: int
    q: int

    def __add__(self, other):
        if not isinstance(other, Bidegreed):
            return NotImplemented
        if (self.p, self.q) != (other.p, other.q):
            raise ShapeMismatch(f"bidegree mismatch: {(self.p, self.q)} vs {(other.p, other.q)}")
        return Bidegreed(self.value + other.value, self.p, self.q)

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return Bidegreed(-self.value, self.p, self.q)

    def __mul__(self, other):
        if isinstance(other, Bidegreed):
            return Bidegreed(self.value * other.value, self.p + other.p, self.q + other.q)
        if isinstance(other, (int, float)):
            return Bidegreed(self.value * other, self.p, self.q)
        return NotImplemented

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return Bidegreed(self.value * other, self.p, self.q)
        return NotImplemented

    def d(self):
        return Bidegreed(_apply(self.value, "d"), self.p + 1, self.q)

    def dbar(self):
        return Bidegreed(_apply(self.value, "dbar"), self.p, self.q + 1)


def condition_c_residual_parts(n, t, mu):
    """Residual dict {k: r_k} from raw coefficient dicts (mu may omit 2..n)."""
    proto = None
    for v in list(t.values()) + list(mu.values()):
        proto = v
        break
    zero = _zero_like(proto)

    def get(d, k):
        return d.get(k, zero)

    out = {}
    for k in range(2, n + 1):
        tk = get(t, k)
        m2 = get(mu, 2)
        r = -_apply(tk, "dbar") + m2 * _apply(tk, "d") + float(k) * _apply(m2, "d") * tk
        for l in range(1, n - k + 1):
            ml = get(mu, l + 2)
            tkl = get(t, k + l)
            r = r + float(l + k) * _apply(ml, "d") * tkl + float(l + 1) * ml * _apply(tkl, "d")
        out[k] = r
    return out


def condition_c_residual(x: CotangentPoint):
    """Residuals (r_2..r_n); identically zero exactly on the cotangent bundle."""
    return condition_c_residual_parts(x.n, x.t, x.mu)


def curvature_matrix(conn: LocalConnection):
    """F = del A2 - dbar A1 + [A1, A2]."""
    return conn.curvature()


def curvature_last_column(F):
    """Column entries (xi_2..xi_n) read off a parabolic curvature matrix.

    With the curvature convention above these are the negatives of the
    operator-ideal coefficients: F[i][n-1] = -xi_{n-i} in the operator sign.
    The returned dict maps k to F[n-k][n-1].
    """
    n = len(F)
    return {k: F[n - k][n - 1] for k in range(2, n + 1)}


def off_pattern_residual(F):
    """Norm of the curvature outside the allowed last-column pattern."""
    n = len(F)
    worst = 0.0
    for i in range(n):
        for j in range(n):
            if j == n - 1 and i <= n - 2:
                continue
            worst = max(worst, _norm(F[i][j]))
    return worst


def variation_gauge(v: dict, form: CompanionForm):
    """Gauge generator X built like the (0,1)-part with mu_k replaced by v_k.

    v maps 2..n; v_1 is fixed by tracelessness exactly as mu_1 is.
    """
    vform = CompanionForm(form.n, dict(form.t), {k: val for k, val in v.items()})
    return assemble_A2(vform)


def moment_pairing(xi: dict, X, domain=None):
    """Quadrature of sum_i X[n-1][n-i] * xi_i over the sample domain.

    xi maps k in 2..n to fields; X is the gauge matrix from
    ``variation_gauge``.  For a parabolic curvature F this equals the
    integral of tr(F X) when xi is read off the last column of F.
    """
    n = len(X)
    acc = None
    for k, xik in xi.items():
        term = X[n - 1][n - k] * xik
        acc = term if acc is None else acc + term
    if acc is None:
        return 0.0
    if hasattr(acc, "integral"):
        return acc.integral()
    return acc


def trace_pairing(F, X):
    """Integral of tr(F X); oracle for ``moment_pairing`` on parabolic F."""
    tr = la.trace(la.mul(F, X))
    if hasattr(tr, "integral"):
        return tr.integral()
    return tr
