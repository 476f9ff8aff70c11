"""Newton solvers for the Toda-type flatness systems and connection assembly.

With the chart convention del dbar = Laplacian/4, the scalar systems solved
here are (phi real, sources holomorphic):

* cosh-Gordon:   del dbar phi = e^(2 phi) + |t2|^2 e^(-2 phi)
* Titeica:     2 del dbar phi = e^(2 phi) + |t3|^2 e^(-4 phi)
* sl_n Toda:   2 del dbar phi_i = 2 e^(2 phi_i) - e^(2 phi_(i+1)) - e^(2 phi_(i-1))

all on Dirichlet rectangles; the torus variants are obstructed (the right
side has a positive integral while the left integrates to zero).

The assembled family for a cosh-Gordon solution is

    C1 = [[-del(phi)/2, t2 e^(-phi)], [lam e^phi, del(phi)/2]]
    C2 = [[dbar(phi)/2, e^phi / lam], [-conj(t2) e^(-phi), -dbar(phi)/2]]

and for the Toda case the standard form with diagonal
a_(0,i) = sum_(k<i) (k/n) del(phi_k) - sum_(k>=i) ((n-k)/n) del(phi_k); the
printed alternative weighting (n-k)/k fails both tracelessness and the
n = 2 value -del(phi)/2 and is rejected by ``diagonal_weight_report``.

The Miura expansion uses the gauge with vanishing (0,1)-part, whose diagonal
is 2 a_(0,i); the descending operator product prod_(i=n..1) (del - 2 a_(0,i))
equals del^n - w_2 del^(n-2) - ... - w_n with w_k the companion coordinates
of the assembled family.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import linalg as la
from .coeff import DIRICHLET, PERIODIC, GridField, _apply, _conj, _norm
from .errors import NoConvergence, ShapeMismatch, TorusObstruction
from .gauge import LocalConnection


@dataclass
class TodaProblem:
    """Grid geometry, boundary data and solver knobs for one elliptic solve."""

    nx: int
    ny: int
    Lx: float
    Ly: float
    bc: str = DIRICHLET
    boundary: object = None     # array broadcastable to the grid, or list per field
    tol: float = 1e-9
    max_iter: int = 40
    order: int = 2              # Laplacian discretization order (2 or 4)
    initial: object = None

    def grid(self):
        return GridField.mesh(self.nx, self.ny, self.Lx, self.Ly, self.bc)


@dataclass
class FieldSolution:
    """Solved fields with the Newton trace."""

    phi: list                   # list of real GridFields
    residual: float
    trace: list = field(default_factory=list)
    converged: bool = True


# ---------------------------------------------------------------------------
# Discrete Laplacians on Dirichlet rectangles
# ---------------------------------------------------------------------------

def _lap_operator(nx, ny, hx, hy, order):
    """Sparse interior Laplacian; unknowns are the (nx-2)(ny-2) interior values.

    order 2 is the 5-point stencil; order 4 is the compact 9-point stencil
    whose consistency requires the right side correction
    f + (hx^2/12) (f_xx + f_yy), applied by the caller (uniform spacing).
    """
    mx, my = nx - 2, ny - 2
    ex = np.ones(mx)
    ey = np.ones(my)
    if order == 2:
        Tx = sp.diags([ex[:-1], -2 * ex, ex[:-1]], [-1, 0, 1]) / hx ** 2
        Ty = sp.diags([ey[:-1], -2 * ey, ey[:-1]], [-1, 0, 1]) / hy ** 2
        return sp.kronsum(Ty, Tx, format="csr")
    if order == 4:
        if abs(hx - hy) > 1e-12 * max(hx, hy):
            raise ShapeMismatch("compact 4th-order stencil needs square spacing")
        h2 = hx * hx
        Ix = sp.eye(mx)
        Iy = sp.eye(my)
        Sx = sp.diags([ex[:-1], np.zeros(mx), ex[:-1]], [-1, 0, 1])
        Sy = sp.diags([ey[:-1], np.zeros(my), ey[:-1]], [-1, 0, 1])
        A = (sp.kron(Sx, Iy) + sp.kron(Ix, Sy)) * 4.0 + sp.kron(Sx, Sy) - 20.0 * sp.kron(Ix, Iy)
        return (A / (6.0 * h2)).tocsr()
    raise ValueError("order must be 2 or 4")


def _rhs_mass(order):
    """Mass stencil applied to the nonlinearity for the compact scheme."""
    if order == 2:
        return None
    m = np.zeros((3, 3))
    m[1, 1] = 8.0 / 12.0
    m[0, 1] = m[2, 1] = m[1, 0] = m[1, 2] = 1.0 / 12.0
    return m


def _apply_mass(mask_stencil, f):
    if mask_stencil is None:
        return f[1:-1, 1:-1]
    out = np.zeros_like(f[1:-1, 1:-1])
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            w = mask_stencil[di + 1, dj + 1]
            if w:
                out += w * f[1 + di: f.shape[0] - 1 + di, 1 + dj: f.shape[1] - 1 + dj]
    return out


def _boundary_contribution(L_like, phi_full, nx, ny, hx, hy, order):
    """Laplacian stencil applied to the full grid, restricted to the interior."""
    p = phi_full
    if order == 2:
        return ((p[2:, 1:-1] - 2 * p[1:-1, 1:-1] + p[:-2, 1:-1]) / hx ** 2
                + (p[1:-1, 2:] - 2 * p[1:-1, 1:-1] + p[1:-1, :-2]) / hy ** 2)
    h2 = hx * hx
    return (4.0 * (p[2:, 1:-1] + p[:-2, 1:-1] + p[1:-1, 2:] + p[1:-1, :-2])
            + p[2:, 2:] + p[2:, :-2] + p[:-2, 2:] + p[:-2, :-2]
            - 20.0 * p[1:-1, 1:-1]) / (6.0 * h2)


def _newton_elliptic(problem: TodaProblem, nfields, lap_coeff, nonlin, jac_nonlin,
                     label: str):
    """Damped Newton for lap_coeff * Lap(phi_i) = F_i(phi) on the interior.

    ``nonlin(phis)`` returns [F_i] on the full grid, ``jac_nonlin(phis)``
    returns the dense diagonal blocks dF_i/dphi_j.  Scalar problems use a
    preconditioned conjugate gradient step (the linearization is symmetric);
    coupled systems fall back to a sparse direct solve.
    """
    nx, ny = problem.nx, problem.ny
    if problem.bc != DIRICHLET:
        raise TorusObstruction(
            "periodic problem rejected a priori: integrating the equation "
            "gives zero on the left and a positive right side")
    hx = problem.Lx / (nx - 1)
    hy = problem.Ly / (ny - 1)
    order = problem.order
    Lap = _lap_operator(nx, ny, hx, hy, order)
    mass = _rhs_mass(order)

    boundary = problem.boundary
    if boundary is None:
        boundary = [np.zeros((nx, ny))] * nfields
    elif not isinstance(boundary, (list, tuple)):
        boundary = [np.asarray(boundary, dtype=float)] * nfields

    phis = []
    for i in range(nfields):
        full = np.array(boundary[i], dtype=float)
        if problem.initial is not None:
            init = problem.initial[i] if isinstance(problem.initial, (list, tuple)) \
                else problem.initial
            full[1:-1, 1:-1] = np.asarray(init, dtype=float)[1:-1, 1:-1]
        phis.append(full)

    mx, my = nx - 2, ny - 2
    nint = mx * my
    trace = []

    def residual_vec(ps):
        Fs = nonlin(ps)
        out = []
        for i in range(nfields):
            lap = _boundary_contribution(None, ps[i], nx, ny, hx, hy, order)
            out.append(lap_coeff * lap - _apply_mass(mass, Fs[i]))
        return out

    for it in range(problem.max_iter):
        res = residual_vec(phis)
        rnorm = max(float(np.max(np.abs(r))) for r in res)
        trace.append(rnorm)
        if rnorm < problem.tol:
            sol = [GridField(p.astype(complex), problem.Lx, problem.Ly, DIRICHLET)
                   for p in phis]
            return FieldSolution(sol, rnorm, trace, True)
        J = jac_nonlin(phis)
        if nfields == 1:
            diag = _apply_mass(mass, J[0][0]).reshape(-1)
            A = (lap_coeff * Lap - sp.diags(diag)).tocsr()
            rhs = -res[0].reshape(-1)
            # symmetric negative definite for admissible states; solve -A x = -rhs
            M = sp.diags(1.0 / np.maximum(np.abs(A.diagonal()), 1e-12))
            step, info = spla.cg(-A, rhs, rtol=1e-10, atol=0.0, maxiter=4000, M=M)
            if info != 0:
                step = spla.spsolve(A.tocsc(), -rhs)
            else:
                step = -step
            steps = [step]
        else:
            blocks = []
            for i in range(nfields):
                row = []
                for j in range(nfields):
                    d = _apply_mass(mass, J[i][j]).reshape(-1)
                    row.append(lap_coeff * Lap - sp.diags(d) if i == j else -sp.diags(d))
                blocks.append(row)
            A = sp.bmat(blocks, format="csc")
            rhs = -np.concatenate([r.reshape(-1) for r in res])
            full = spla.spsolve(A, rhs)
            steps = [full[i * nint:(i + 1) * nint] for i in range(nfields)]
        # damped line search on the residual norm
        lamb = 1.0
        for _ in range(12):
            trial = [p.copy() for p in phis]
            for i in range(nfields):
                trial[i][1:-1, 1:-1] += lamb * steps[i].reshape(mx, my)
            tres = residual_vec(trial)
            tnorm = max(float(np.max(np.abs(r))) for r in tres)
            if tnorm < rnorm or tnorm < problem.tol:
                phis = trial
                break
            lamb *= 0.5
        else:
            break
    res = residual_vec(phis)
    rnorm = max(float(np.max(np.abs(r))) for r in res)
    trace.append(rnorm)
    sol = [GridField(p.astype(complex), problem.Lx, problem.Ly, DIRICHLET) for p in phis]
    if rnorm < problem.tol:
        return FieldSolution(sol, rnorm, trace, True)
    raise NoConvergence(f"{label}: residual {rnorm:.3e} after {problem.max_iter} "
                        f"iterations", trace)


def _as_abs2(field, nx, ny):
    if field is None:
        return np.zeros((nx, ny))
    if isinstance(field, GridField):
        return np.abs(field.v) ** 2
    return np.full((nx, ny), abs(complex(field)) ** 2)


def solve_cosh_gordon(t2, problem: TodaProblem, source=None) -> FieldSolution:
    """del dbar phi = e^(2 phi) + |t2|^2 e^(-2 phi) (+ source) on a rectangle."""
    q = _as_abs2(t2, problem.nx, problem.ny)
    S = np.zeros((problem.nx, problem.ny)) if source is None else np.asarray(source)

    def F(ps):
        p = ps[0]
        return [np.exp(2 * p) + q * np.exp(-2 * p) + S]

    def J(ps):
        p = ps[0]
        return [[2 * np.exp(2 * p) - 2 * q * np.exp(-2 * p)]]

    return _newton_elliptic(problem, 1, 0.25, F, J, "cosh-Gordon")


def solve_titeica(t3, problem: TodaProblem, source=None) -> FieldSolution:
    """2 del dbar phi = e^(2 phi) + |t3|^2 e^(-4 phi) (+ source)."""
    q = _as_abs2(t3, problem.nx, problem.ny)
    S = np.zeros((problem.nx, problem.ny)) if source is None else np.asarray(source)

    def F(ps):
        p = ps[0]
        return [np.exp(2 * p) + q * np.exp(-4 * p) + S]

    def J(ps):
        p = ps[0]
        return [[2 * np.exp(2 * p) - 4 * q * np.exp(-4 * p)]]

    return _newton_elliptic(problem, 1, 0.5, F, J, "Titeica")


def solve_toda(n, problem: TodaProblem) -> FieldSolution:
    """sl_n system 2 del dbar phi_i = 2 e^(2 phi_i) - e^(2 phi_(i+1)) - e^(2 phi_(i-1)).

    Sources are zero; n = 2 is Liouville's equation.
    """
    m = n - 1

    def F(ps):
        es = [np.exp(2 * p) for p in ps]
        out = []
        for i in range(m):
            f = 2 * es[i]
            if i + 1 < m:
                f = f - es[i + 1]
            if i - 1 >= 0:
                f = f - es[i - 1]
            out.append(f)
        return out

    def J(ps):
        es = [np.exp(2 * p) for p in ps]
        out = []
        for i in range(m):
            row = []
            for j in range(m):
                if i == j:
                    row.append(4 * es[i])
                elif abs(i - j) == 1:
                    row.append(-2 * es[j])
                else:
                    row.append(np.zeros_like(es[i]))
            out.append(row)
        return out

    return _newton_elliptic(problem, m, 0.5, F, J, f"sl_{n} Toda")


# ---------------------------------------------------------------------------
# Diagonal coefficients and connection assembly
# ---------------------------------------------------------------------------

def toda_diagonal(n, phis):
    """a_(0,i) = sum_(k<i) (k/n) del(phi_k) - sum_(k>=i) ((n-k)/n) del(phi_k)."""
    dphis = [p.d() for p in phis]
    out = []
    for i in range(1, n + 1):
        acc = None
        for k in range(1, n):
            w = k / n if k < i else -(n - k) / n
            term = dphis[k - 1] * w
            acc = term if acc is None else acc + term
        out.append(acc)
    return out


def diagonal_weight_report(n, phis):
    """Compare the implemented weight (n-k)/n with the alternative (n-k)/k.

    Both are scored on tracelessness and on the subdiagonal flatness relation
    dbar(e^(phi_i)) = e^(phi_i) (conj(a_(0,i+1)) - conj(a_(0,i))).
    """
    def build(weight):
        dphis = [p.d() for p in phis]
        diag = []
        for i in range(1, n + 1):
            acc = None
            for k in range(1, n):
                w = k / n if k < i else -weight(k)
                term = dphis[k - 1] * w
                acc = term if acc is None else acc + term
            diag.append(acc)
        return diag

    report = {}
    for name, weight in (("(n-k)/n", lambda k: (n - k) / n),
                         ("(n-k)/k", lambda k: (n - k) / k)):
        diag = build(weight)
        tr = la.sum_ring(diag)
        sub = 0.0
        for i in range(n - 1):
            e = phis[i].exp()
            lhs = e.dbar()
            rhs = e * (diag[i + 1].conj() - diag[i].conj())
            sub = max(sub, (lhs - rhs).norm_inf())
        report[name] = {"trace": _norm(tr), "subdiag_relation": sub}
    return report


def assemble_connection(sol: FieldSolution, t: dict, lam, n=None) -> LocalConnection:
    """Standard-form family at a numeric lam from solved fields.

    n = 2 uses the explicit cosh-Gordon matrices with a1 = t2 e^(-phi);
    general n assembles diag(a_0) + lam subdiag(e^(phi_i)) and its mirrored
    (0,1)-part (sources only supported at n = 2).
    """
    phis = sol.phi
    n = n if n is not None else len(phis) + 1
    lam = complex(lam)
    if n == 2:
        phi = phis[0]
        e = phi.exp()
        a0 = phi.d() * (-0.5)
        t2 = t.get(2)
        if t2 is None:
            t2 = GridField.zeros(*phi.v.shape, phi.Lx, phi.Ly, phi.bc)
        elif not isinstance(t2, GridField):
            t2 = GridField.const(t2, *phi.v.shape, phi.Lx, phi.Ly, phi.bc)
        a1 = t2 * e.inv()
        C1 = [[a0, a1], [e * lam, -a0]]
        C2 = [[phi.dbar() * 0.5, e * (1.0 / lam)],
              [-t2.conj() * e.inv(), phi.dbar() * (-0.5)]]
        return LocalConnection(2, C1, C2)
    if any(not _norm(v) < 1e-14 for v in t.values()):
        raise ShapeMismatch("general-n assembly supports zero sources only")
    diag = toda_diagonal(n, phis)
    proto = phis[0]
    C1 = la.zeros(n, n, proto)
    C2 = la.zeros(n, n, proto)
    for i in range(n):
        C1[i][i] = diag[i]
        C2[i][i] = -diag[i].conj()
    for i in range(n - 1):
        e = phis[i].exp()
        C1[i + 1][i] = e * lam
        C2[i][i + 1] = e * (1.0 / lam)
    return LocalConnection(n, C1, C2)


def flatness_residual(conn: LocalConnection) -> float:
    return la.norm_inf(conn.curvature())


def profile_1d(kind, L, npts, left, right, coupling=0.0, tol=1e-12):
    """High-order 1-D solution profile phi(x) used as genuine boundary data.

    Solves phi'' = g(phi) with the Numerov scheme and Newton iteration:
    cosh-Gordon g = 4 e^(2 phi) + 4 c e^(-2 phi), Titeica
    g = 2 e^(2 phi) + 2 c e^(-4 phi), Liouville is cosh-Gordon with c = 0.
    A y-independent profile solves the 2-D equation exactly.
    """
    if kind == "cosh-gordon":
        def g(p):
            return 4 * np.exp(2 * p) + 4 * coupling * np.exp(-2 * p)

        def dg(p):
            return 8 * np.exp(2 * p) - 8 * coupling * np.exp(-2 * p)
    elif kind == "titeica":
        def g(p):
            return 2 * np.exp(2 * p) + 2 * coupling * np.exp(-4 * p)

        def dg(p):
            return 4 * np.exp(2 * p) - 8 * coupling * np.exp(-4 * p)
    else:
        raise ValueError(kind)
    x = np.linspace(0.0, L, npts)
    h = x[1] - x[0]
    phi = left + (right - left) * x / L
    m = npts - 2
    main = np.full(m, -2.0) / h ** 2
    off = np.ones(m - 1) / h ** 2
    D2 = sp.diags([off, main, off], [-1, 0, 1], format="csr")
    for _ in range(60):
        gv = g(phi)
        lap = (phi[:-2] - 2 * phi[1:-1] + phi[2:]) / h ** 2
        res = lap - (gv[:-2] + 10 * gv[1:-1] + gv[2:]) / 12.0
        if np.max(np.abs(res)) < tol:
            break
        dgv = dg(phi)
        W = sp.diags([dgv[2:-1] / 12.0, 10 * dgv[1:-1] / 12.0, dgv[1:-2] / 12.0],
                     [-1, 0, 1], shape=(m, m), format="csr")
        step = spla.spsolve((D2 - W).tocsc(), -res)
        phi[1:-1] += step
    else:
        raise NoConvergence("1-D profile failed to converge")
    return x, phi


def miura(phis, n=None):
    """Companion coefficients w_k from the gauge-diagonal operator product.

    The product runs over the doubled diagonal entries beta_i = 2 a_(0,i) in
    descending order; the result is normalized as
    prod (del - beta_i) = del^n - w_2 del^(n-2) - ... - w_n, so w_k agrees
    with the companion coordinate t_k(lam) of the assembled family.
    """
    from .diffop import DiffOp, compose
    n = n if n is not None else len(phis) + 1
    diag = toda_diagonal(n, phis)
    proto = phis[0]
    from .coeff import _one_like
    one = _one_like(proto)
    prod = None
    for i in range(n, 0, -1):
        factor = DiffOp({(1, 0, 0): one, (0, 0, 0): diag[i - 1] * (-2.0)})
        prod = factor if prod is None else compose(prod, factor)
    coeffs = prod.collect_del(proto)
    out = {}
    for k in range(2, n + 1):
        out[k] = -coeffs[n - k]
    return out
