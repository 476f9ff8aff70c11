"""Constructive gauge algorithms.

``parabolic_gauge`` reduces the (1,0)-part of a connection to companion form
with a gauge whose last row vanishes except for the corner entry.  The
construction eliminates along the rows: with w the last row of the gauge,
the gauge equation forces every other row to be a covariant iterate of w,
and closing the recursion determines both the companion coefficients and
the corner normalization.  The corner is an n-th root of the transversality
determinant, which is kept as a formal scale so every derived quantity stays
rational in the input entries.

``assemble_A2`` builds the (0,1)-part matrix from its first column by
repeated covariant application, fixing the first coefficient by
tracelessness.  ``standard_form`` conjugates a principal nilpotent field to
strictly lower triangular shape with positive subdiagonal by a unitary
gauge, and ``higgs_gauge`` moves a trivial-structure connection to the form
with vanishing (0,1)-part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import linalg as la
from .coeff import (GridField, Jet, NthRoot, _apply, _conj, _invert, _is_zero,
                    _norm, _one_like, _zero_like, dbar_solve)
from .errors import (NoHiggsGauge, NonGeneric, NotPrincipalNilpotent,
                     ShapeMismatch, SingularGauge)


@dataclass
class LocalConnection:
    """Matrix-valued connection data A = A1 dz + A2 dzbar on a chart."""

    n: int
    A1: list
    A2: list
    traceless: bool = True

    def curvature(self):
        """F = del A2 - dbar A1 + [A1, A2]."""
        return la.add(la.sub(la.dmat(self.A2), la.dbarmat(self.A1)),
                      la.commutator(self.A1, self.A2))


@dataclass
class GaugeMatrix:
    """Gauge P = scale * mat; scale is a formal n-th root or None."""

    mat: list
    scale: NthRoot | None = None
    shape: str = "general"

    def n(self):
        return len(self.mat)

    def materialized(self):
        """Entries of scale * mat with the root evaluated."""
        if self.scale is None:
            return [list(r) for r in self.mat]
        s = self.scale.value()
        return [[s * x for x in r] for r in self.mat]

    def inverse(self):
        return GaugeMatrix(la.inv(self.mat),
                           None if self.scale is None else self.scale.inverse(),
                           "general")

    def det_residual(self):
        """Norm of det(P) - 1, evaluated rationally through the scale."""
        d = la.det(self.mat)
        if self.scale is None:
            return _norm(d - _one_like(d))
        target = self.scale.inverse().pow_n()
        return _norm(d - target)


@dataclass
class CompanionForm:
    """Companion coordinates: t maps 2..n, mu maps 1..n."""

    n: int
    t: dict = field(default_factory=dict)
    mu: dict = field(default_factory=dict)

    def companion_matrix(self):
        proto = self.proto()
        m = la.zeros(self.n, self.n, proto)
        one = _one_like(proto)
        for i in range(1, self.n):
            m[i][i - 1] = one
        for k in range(2, self.n + 1):
            m[self.n - k][self.n - 1] = self.t[k]
        return m

    def proto(self):
        for v in list(self.t.values()) + list(self.mu.values()):
            return v
        raise ValueError("empty companion form")

    def ideal(self):
        from .diffop import LeftIdealNF
        return LeftIdealNF(self.n, dict(self.t), dict(self.mu))


# ---------------------------------------------------------------------------
# A2 assembly
# ---------------------------------------------------------------------------

def assemble_A2_from_parts(n, t, mu):
    """Matrix with first column (mu_1..mu_n); column j+1 applies the covariant
    step col[i] -> d(col[i]) + col[i-1] + col[n] * t_{n+1-i} to column j."""
    proto = None
    for v in list(t.values()) + list(mu.values()):
        proto = v
        break
    zero = _zero_like(proto)
    col = [mu.get(i, zero) for i in range(1, n + 1)]
    cols = [col]
    for _ in range(n - 1):
        prev = cols[-1]
        nxt = []
        for i in range(1, n + 1):
            entry = _apply(prev[i - 1], "d") if not isinstance(prev[i - 1], float) else 0.0
            if isinstance(entry, float):
                entry = zero
            if i >= 2:
                entry = entry + prev[i - 2]
            k = n + 1 - i
            if 2 <= k <= n:
                entry = entry + prev[n - 1] * t[k]
            nxt.append(entry)
        cols.append(nxt)
    return [[cols[j][i] for j in range(n)] for i in range(n)]


def assemble_A2(form: CompanionForm):
    """Full (0,1)-part matrix; mu_1 is recomputed from tracelessness."""
    n = form.n
    proto = form.proto()
    mu0 = {k: v for k, v in form.mu.items() if k != 1}
    mu0[1] = _zero_like(proto)
    a2 = assemble_A2_from_parts(n, form.t, mu0)
    tr = la.trace(a2)
    mu1 = tr * Fraction(-1, n) if _wants_exact(tr) else tr * (-1.0 / n)
    form.mu[1] = mu1
    mu0[1] = mu1
    return assemble_A2_from_parts(n, form.t, mu0)


def _wants_exact(v):
    from .coeff import DiffPoly
    return isinstance(v, DiffPoly)


# ---------------------------------------------------------------------------
# Parabolic gauge
# ---------------------------------------------------------------------------

def _transversality_det(n, A1):
    """det of the stacked reduced covariant iterates of the last row."""
    a = [A1[n - 1][j] for j in range(n - 1)]
    Atop = [[A1[i][j] for j in range(n - 1)] for i in range(n - 1)]
    rows = [a]
    for _ in range(n - 2):
        r = rows[-1]
        rA = [la.sum_ring(r[k] * Atop[k][j] for k in range(n - 1)) for j in range(n - 1)]
        rows.append([rA[j] - _d(r[j]) for j in range(n - 1)])
    rows = rows[::-1]
    return la.det(rows) if n > 1 else _one_like(A1[0][0])


def _d(x):
    out = _apply(x, "d")
    return out


def _dbar(x):
    return _apply(x, "dbar")


def _generic_enough(det, rows_scale=1.0, tol=1e-10):
    if isinstance(det, (int, float, complex)):
        return abs(det) > tol * max(rows_scale, 1.0)
    if isinstance(det, Jet):
        return abs(det.c[0, 0]) > tol * max(rows_scale, 1.0)
    if isinstance(det, GridField):
        return float(np.min(np.abs(det.v))) > tol * max(rows_scale, 1.0)
    return not _is_zero(det, 1e-14)


def parabolic_gauge(conn: LocalConnection):
    """Reduce to companion form; returns (GaugeMatrix, CompanionForm).

    Raises NonGeneric when the transversality determinant is below
    tolerance relative to the product of iterate row norms.
    """
    n = conn.n
    A1, A2 = conn.A1, conn.A2
    proto = A1[0][0]
    one = _one_like(proto)
    zero = _zero_like(proto)

    det = _transversality_det(n, A1)
    try:
        scale = 1.0
        for row in A1:
            scale *= max(max(_norm(x) for x in row), 1e-30)
    except TypeError:
        scale = 1.0
    if not _generic_enough(det, scale):
        raise NonGeneric("transversality determinant below tolerance")

    dinv = _invert(det)
    g = _d(det) * dinv * (-1.0 / n)
    gbar = _dbar(det) * dinv * (-1.0 / n)

    def covt(row):
        rA = [la.sum_ring(row[k] * A1[k][j] for k in range(n)) for j in range(n)]
        return [rA[j] - _d(row[j]) - g * row[j] for j in range(n)]

    w = [[zero] * (n - 1) + [one]]
    for _ in range(n):
        w.append(covt(w[-1]))

    W = [w[m] for m in range(n)]
    c = la.solve_row(W, w[n])

    # consistency of the corner normalization: no w_{n-1} component remains
    cons = _norm(c[n - 1])
    ref = max(_norm(c[k]) for k in range(n)) if n > 1 else 1.0
    if n > 1 and cons > 1e-8 * max(ref, 1.0):
        raise NonGeneric(f"corner normalization inconsistent: |c_(n-1)| = {cons:.2e}")

    # triangular extraction of the companion coefficients
    that = {}
    for j in range(n - 2, -1, -1):
        val = c[j]
        for k in range(2, n - j):
            sgn = (-1) ** (n - k - j)
            binom = math.comb(n - k, j)
            term = that[k]
            for _ in range(n - k - j):
                term = _d(term)
            val = val - term * (sgn * binom)
        that[n - j] = val

    # rows of the unscaled gauge
    sigma = [None] * (n + 1)
    sigma[n] = w[0]
    for k in range(n, 1, -1):
        nxt = covt(sigma[k])
        kk = n + 1 - k
        if 2 <= kk <= n:
            nxt = [x - that[kk] * y for x, y in zip(nxt, w[0])]
        sigma[k - 1] = nxt
    Phat = [sigma[i] for i in range(1, n + 1)]

    gauge = GaugeMatrix(Phat, NthRoot(det, n, -1), "parabolic")

    # transformed (0,1)-part gives the mu coordinates from its first column
    Pinv = la.inv(Phat)
    A2p = la.sub(la.mul(la.mul(Phat, A2), Pinv), la.mul(la.dbarmat(Phat), Pinv))
    A2p = [[A2p[i][j] - (gbar if i == j else zero) for j in range(n)] for i in range(n)]
    mu = {i + 1: A2p[i][0] for i in range(n)}

    return gauge, CompanionForm(n, that, mu)


def companion_residual(gauge: GaugeMatrix, form: CompanionForm, conn: LocalConnection):
    """Off-pattern norm of the transformed (1,0)-part against the companion matrix."""
    A1p = transform_A1(gauge, conn.A1)
    return la.residual(A1p, form.companion_matrix())


def transform_A1(gauge: GaugeMatrix, A1):
    n = len(A1)
    P = gauge.mat
    Pinv = la.inv(P)
    out = la.sub(la.mul(la.mul(P, A1), Pinv), la.mul(la.dmat(P), Pinv))
    if gauge.scale is not None:
        g = gauge.scale.dlog()
        out = [[out[i][j] - (g if i == j else _zero_like(out[0][0]))
                for j in range(n)] for i in range(n)]
    return out


def transform_A2(gauge: GaugeMatrix, A2):
    n = len(A2)
    P = gauge.mat
    Pinv = la.inv(P)
    out = la.sub(la.mul(la.mul(P, A2), Pinv), la.mul(la.dbarmat(P), Pinv))
    if gauge.scale is not None:
        g = gauge.scale.dbarlog()
        out = [[out[i][j] - (g if i == j else _zero_like(out[0][0]))
                for j in range(n)] for i in range(n)]
    return out


def apply_gauge(gauge: GaugeMatrix, conn: LocalConnection) -> LocalConnection:
    """A1 -> P A1 P^-1 - (dP) P^-1 and A2 -> P A2 P^-1 - (dbar P) P^-1."""
    return LocalConnection(conn.n, transform_A1(gauge, conn.A1),
                           transform_A2(gauge, conn.A2), conn.traceless)


# ---------------------------------------------------------------------------
# Standard (unitary) form for principal nilpotent fields
# ---------------------------------------------------------------------------

def standard_form(phi1, tol: float = 1e-10):
    """Unitary gauge making a principal nilpotent field strictly lower
    triangular with positive real subdiagonal.

    ``phi1`` is an n x n nested list of complex numbers or GridFields.
    Returns (GaugeMatrix(unitary), [phi_1..phi_(n-1)]) with the subdiagonal
    entries equal to exp(phi_i).
    """
    n = len(phi1)
    grids = [x for row in phi1 for x in row if isinstance(x, GridField)]
    if grids:
        ref = grids[0]
        stack = np.zeros(ref.v.shape + (n, n), dtype=complex)
        for i in range(n):
            for j in range(n):
                x = phi1[i][j]
                stack[..., i, j] = x.v if isinstance(x, GridField) else complex(x)
        U, phis = _standard_form_array(stack.reshape(-1, n, n), tol)
        shp = ref.v.shape
        Umat = [[GridField(U[:, i, j].reshape(shp), ref.Lx, ref.Ly, ref.bc)
                 for j in range(n)] for i in range(n)]
        phi_fields = [GridField(p.reshape(shp), ref.Lx, ref.Ly, ref.bc) for p in phis]
        return GaugeMatrix(Umat, None, "unitary"), phi_fields
    arr = np.array([[complex(x) for x in row] for row in phi1])[None, :, :]
    U, phis = _standard_form_array(arr, tol)
    Umat = [[U[0, i, j] for j in range(n)] for i in range(n)]
    return GaugeMatrix(Umat, None, "unitary"), [complex(p[0]) for p in phis]


def _standard_form_array(ms, tol):
    """Batched construction; ms has shape (batch, n, n)."""
    b, n, _ = ms.shape
    scale = np.maximum(np.linalg.norm(ms, axis=(1, 2)), 1e-30)
    power = np.broadcast_to(np.eye(n), ms.shape).copy()
    for _ in range(n):
        power = power @ ms
    if np.max(np.linalg.norm(power, axis=(1, 2)) / scale ** n) > 1e-6:
        raise NotPrincipalNilpotent("field is not nilpotent of order n")
    rng = np.random.default_rng(12345)
    for _ in range(8):
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        cols = []
        cur = np.broadcast_to(v, (b, n)).copy()
        cols.append(cur)
        for _ in range(n - 1):
            cur = np.einsum("bij,bj->bi", ms, cur)
            cols.append(cur)
        K = np.stack(cols[::-1], axis=-1)  # highest power first
        sv = np.linalg.svd(K, compute_uv=False)
        if np.min(sv[:, -1] / np.maximum(sv[:, 0], 1e-300)) > 1e-8:
            break
    else:
        raise NotPrincipalNilpotent("no cyclic vector found; rank deficient")
    Q, _ = np.linalg.qr(K)
    U = np.conj(np.transpose(Q, (0, 2, 1)))[:, ::-1, :]  # reversed rows
    T = U @ ms @ np.conj(np.transpose(U, (0, 2, 1)))
    sub = np.stack([T[:, i + 1, i] for i in range(n - 1)], axis=0)
    if np.min(np.abs(sub)) < tol:
        raise NotPrincipalNilpotent("subdiagonal entry vanishes")
    # diagonal phase gauge making the subdiagonal positive
    d = np.ones((n, b), dtype=complex)
    for i in range(n - 1):
        d[i + 1] = d[i] * np.conj(sub[i]) / np.abs(sub[i])
    D = np.zeros((b, n, n), dtype=complex)
    for i in range(n):
        D[:, i, i] = d[i]
    U = D @ U
    T = U @ ms @ np.conj(np.transpose(U, (0, 2, 1)))
    # validate strict lower triangularity
    upper = np.triu(np.ones((n, n)))
    resid = np.max(np.abs(T * upper), axis=(1, 2)) / scale
    if np.max(resid) > 1e-8:
        raise NotPrincipalNilpotent("triangularization failed")
    phis = [np.log(np.abs(T[:, i + 1, i])) for i in range(n - 1)]
    return U, phis


# ---------------------------------------------------------------------------
# Higgs gauge
# ---------------------------------------------------------------------------

def higgs_gauge(n, phi1, a2, phi2=None, tol: float = 1e-8):
    """Lower triangular P with P phi1 = E_- P and dbar P = P a2.

    Requires a trivial structure: a nonzero phi2 raises NoHiggsGauge, which
    matches the obstruction for mu != 0.  phi1 must be exactly subdiagonal
    (standard form).  Coefficients are jets or periodic grid fields; the
    inhomogeneous rows need a dbar inversion, so on grids each right side
    must have zero mean.
    """
    if phi2 is not None:
        if any(not _is_zero(x, tol) for row in phi2 for x in row):
            raise NoHiggsGauge("nontrivial structure: no gauge with vanishing "
                               "(0,1)-part exists for mu != 0")
    proto = phi1[1][0]
    zero = _zero_like(proto)
    for i in range(n):
        for j in range(n):
            if i != j + 1 and not _is_zero(phi1[i][j], tol):
                raise ShapeMismatch("phi1 must be exactly subdiagonal (standard form)")
    E = [phi1[i + 1][i] for i in range(n - 1)]  # e^{phi_i}

    # corner entry from the determinant normalization: x_n = (prod E_k^k)^(-1/n)
    prod = None
    for k, e in enumerate(E, start=1):
        p = e
        for _ in range(k - 1):
            p = p * e
        prod = p if prod is None else prod * p
    if prod is None:
        prod = _one_like(proto)
    x = [None] * (n + 1)
    x[n] = _invert(prod.nth_root(n)) if not isinstance(prod, float) else 1.0

    for j in range(n - 1, 0, -1):
        fj = None
        for k in range(j + 1, n + 1):
            term = x[k] * a2[k - 1][j - 1]
            fj = term if fj is None else fj + term
        if fj is None or _is_zero(fj, 1e-14):
            x[j] = zero
            continue
        if not isinstance(fj, GridField):
            raise ShapeMismatch("inhomogeneous rows need periodic grid coefficients")
        diag = a2[j - 1][j - 1]
        G = dbar_solve(diag - diag.mean()) if _norm(diag) > 0 else None
        if G is not None and abs(diag.mean()) > 1e-9 * max(1.0, diag.norm_inf()):
            raise NonGeneric("diagonal of a2 has nonzero mean; no periodic factor")
        ef = G.exp() if G is not None else None
        rhs = fj * ef.inv() if ef is not None else fj
        q = dbar_solve(rhs - rhs.mean()) if abs(rhs.mean()) <= 1e-9 * max(1.0, rhs.norm_inf()) \
            else None
        if q is None:
            from .errors import NonZeroMean
            raise NonZeroMean("dbar problem for the gauge row is obstructed on the torus")
        x[j] = (q * ef) if ef is not None else q

    # fill P along diagonals: P[n-m, j] = E_j ... E_{j+m-1} x_{j+m}
    P = la.zeros(n, n, proto)
    for j in range(1, n + 1):
        P[n - 1][j - 1] = x[j]
    for m in range(1, n):
        for j in range(1, n - m + 1):
            prod = None
            for l in range(j, j + m):
                prod = E[l - 1] if prod is None else prod * E[l - 1]
            P[n - m - 1][j - 1] = prod * x[j + m]

    # residual checks
    Em = la.zeros(n, n, proto)
    one = _one_like(proto)
    for i in range(n - 1):
        Em[i + 1][i] = one
    r1 = la.residual(la.mul(P, phi1), la.mul(Em, P))
    r2 = la.residual(la.dbarmat(P), la.mul(P, a2))
    pscale = max(la.norm_inf(P), 1e-30)
    if r1 > 1e-6 * pscale or r2 > 1e-6 * pscale:
        raise NonGeneric(f"gauge equations not satisfied: |P phi - E P| = {r1:.2e}, "
                         f"|dbar P - P a2| = {r2:.2e} (flatness violated?)")
    return GaugeMatrix(P, None, "lower_triangular")
