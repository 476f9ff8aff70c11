"""Noncommutative algebra of differential operators in del and dbar.

An operator is a finite sum of terms c * del^k dbar^j h^m with coefficient c
in any coefficient ring, k the del-power, j the dbar-power and m the power of
a formal scale parameter h (used by the semiclassical checks; m = 0
otherwise).  Composition implements the Leibniz rule exactly; del and dbar
commute as symbols.

A pair of generators

    G1 = del^n - (t2 del^(n-2) + ... + tn)
    G2 = -dbar + (m1 + m2 del + ... + mn del^(n-1))

spans a left ideal.  ``reduce_mod`` rewrites any operator to the unique
normal form of del-degree < n and dbar-degree 0, eliminating dbar first and
then lowering del powers.  The remaining curvature of the pair is read off
the normal form of the commutator of the generators in the order
[G2, G1]; at n = 2 with the traceless value m1 = -d(m2)/2 this reproduces

    xi_2 = (dbar - m2 del - 2 del(m2)) t2 + del^3(m2) / 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .coeff import DiffPoly, _is_zero, _norm, _zero_like, _apply
from .errors import ShapeMismatch


class DiffOp:
    """Finite sum of c * del^k dbar^j h^m terms with ring coefficients."""

    __slots__ = ("terms",)

    def __init__(self, terms=None):
        self.terms = {}
        if terms:
            for key, c in terms.items():
                self._accum(key, c)

    def _accum(self, key, c):
        if key in self.terms:
            self.terms[key] = self.terms[key] + c
        else:
            self.terms[key] = c

    def cleaned(self, tol=0.0):
        out = {}
        for key, c in self.terms.items():
            if not _is_zero(c, tol):
                out[key] = c
        return DiffOp(out)

    # -- constructors ---------------------------------------------------------

    @classmethod
    def coeff(cls, c, k=0, j=0, m=0):
        return cls({(k, j, m): c})

    @classmethod
    def del_op(cls, k=1, proto=1.0):
        from .coeff import _one_like
        return cls({(k, 0, 0): _one_like(proto)})

    @classmethod
    def dbar_op(cls, proto=1.0):
        from .coeff import _one_like
        return cls({(0, 1, 0): _one_like(proto)})

    @classmethod
    def zero(cls):
        return cls()

    # -- linear structure -------------------------------------------------------

    def __add__(self, other):
        if not isinstance(other, DiffOp):
            return NotImplemented
        out = DiffOp(dict(self.terms))
        for key, c in other.terms.items():
            out._accum(key, c)
        return out

    def __sub__(self, other):
        if not isinstance(other, DiffOp):
            return NotImplemented
        return self + (-other)

    def __neg__(self):
        return DiffOp({k: -c for k, c in self.terms.items()})

    def __rmul__(self, scalar):
        return DiffOp({k: scalar * c for k, c in self.terms.items()})

    def scale(self, s):
        return DiffOp({k: c * s for k, c in self.terms.items()})

    # -- structure queries --------------------------------------------------------

    def del_degree(self):
        return max((k for (k, _, _) in self.terms), default=-1)

    def dbar_degree(self):
        return max((j for (_, j, _) in self.terms), default=0)

    def coefficient(self, k, j=0, m=0):
        return self.terms.get((k, j, m))

    def collect_del(self, proto):
        """Coefficients [c_0, ..., c_K] of del powers; requires dbar-degree 0."""
        if self.dbar_degree() > 0:
            raise ShapeMismatch("operator still contains dbar")
        K = max(self.del_degree(), 0)
        out = [_zero_like(proto) for _ in range(K + 1)]
        for (k, _, m), c in self.terms.items():
            if m != 0:
                raise ShapeMismatch("operator still carries h powers")
            out[k] = out[k] + c
        return out

    def norm_inf(self):
        return max((_norm(c) for c in self.terms.values()), default=0.0)

    def is_zero(self, tol=0.0):
        return all(_is_zero(c, tol) for c in self.terms.values())

    def __repr__(self):
        bits = []
        for (k, j, m), c in sorted(self.terms.items()):
            op = "d" * 0 + (f"del^{k}" if k else "") + (f"dbar^{j}" if j else "")
            if m:
                op += f"h^{m}"
            bits.append(f"[{c!r}]{op or '1'}")
        return "DiffOp(" + " + ".join(bits[:8]) + ("..." if len(bits) > 8 else "") + ")"


def compose(a: DiffOp, b: DiffOp) -> DiffOp:
    """Operator product a . b with the Leibniz rule.

    del^k dbar^j moved across a coefficient c produces the binomial sum of
    derivative transfers; each transfer lowers the operator degree by one and
    differentiates c once.
    """
    out = DiffOp()
    for (k1, j1, m1), c1 in a.terms.items():
        for (k2, j2, m2), c2 in b.terms.items():
            for alpha in range(k1 + 1):
                ca = math.comb(k1, alpha)
                dc = c2
                for _ in range(alpha):
                    dc = _apply(dc, "d")
                    if isinstance(dc, float) and dc == 0.0:
                        break
                if isinstance(dc, float) and dc == 0.0 and alpha > 0:
                    continue
                for beta in range(j1 + 1):
                    cb = math.comb(j1, beta)
                    dcb = dc
                    for _ in range(beta):
                        dcb = _apply(dcb, "dbar")
                        if isinstance(dcb, float) and dcb == 0.0:
                            break
                    if isinstance(dcb, float) and dcb == 0.0 and beta > 0:
                        continue
                    coeff = c1 * dcb if not isinstance(dcb, float) or dcb != 1.0 else c1
                    coeff = coeff * (ca * cb) if ca * cb != 1 else coeff
                    key = (k1 - alpha + k2, j1 - beta + j2, m1 + m2)
                    out._accum(key, coeff)
    return out.cleaned()


def commutator_op(a: DiffOp, b: DiffOp) -> DiffOp:
    return (compose(a, b) - compose(b, a)).cleaned()


@dataclass
class LeftIdealNF:
    """Left ideal generated by del^n - P and -dbar + Q.

    ``t`` maps k in 2..n to the coefficient of del^(n-k) in P; ``mu`` maps
    k in 1..n to the coefficient of del^(k-1) in Q.
    """

    n: int
    t: dict = field(default_factory=dict)
    mu: dict = field(default_factory=dict)

    def proto(self):
        for v in list(self.t.values()) + list(self.mu.values()):
            return v
        raise ValueError("empty ideal data")

    def p_poly(self) -> DiffOp:
        """P = t2 del^(n-2) + ... + tn."""
        return DiffOp({(self.n - k, 0, 0): v for k, v in self.t.items()})

    def q_poly(self) -> DiffOp:
        """Q = m1 + m2 del + ... + mn del^(n-1)."""
        return DiffOp({(k - 1, 0, 0): v for k, v in self.mu.items()})

    def gen1(self) -> DiffOp:
        from .coeff import _one_like
        g = DiffOp({(self.n, 0, 0): _one_like(self.proto())})
        return g - self.p_poly()

    def gen2(self) -> DiffOp:
        from .coeff import _one_like
        g = DiffOp({(0, 1, 0): _one_like(self.proto())})
        return self.q_poly() - g


def reduce_mod(a: DiffOp, ideal: LeftIdealNF) -> DiffOp:
    """Unique normal form with del-degree < n and no dbar.

    dbar is eliminated first by substituting Q (with Leibniz corrections),
    then del powers are lowered through P.  Both rewrites strictly decrease a
    well-founded degree, so this terminates, and re-reduction is the identity.
    """
    n = ideal.n
    p = ideal.p_poly()
    q = ideal.q_poly()
    cur = a
    changed = True
    while changed:
        changed = False
        keep = DiffOp()
        todo = []
        for (k, j, m), c in cur.terms.items():
            if j > 0:
                todo.append(((k, j, m), c, "dbar"))
                changed = True
            else:
                keep._accum((k, j, m), c)
        for (k, j, m), c, _ in todo:
            head = DiffOp({(k, j - 1, m): c})
            keep = keep + compose(head, q)
        cur = keep.cleaned()
        keep = DiffOp()
        todo = []
        for (k, j, m), c in cur.terms.items():
            if j == 0 and k >= n:
                todo.append(((k, j, m), c))
                changed = True
            else:
                keep._accum((k, j, m), c)
        for (k, j, m), c in todo:
            head = DiffOp({(k - n, 0, m): c})
            keep = keep + compose(head, p)
        cur = keep.cleaned()
    return cur


def parabolic_curvature(ideal: LeftIdealNF):
    """Curvature coefficients (xi_2, ..., xi_n) in the basis del^(n-k).

    Defined as the normal form of the generator commutator [G2, G1]; for all
    mu = 0 this reduces to xi_k = dbar(t_k).
    """
    n = ideal.n
    comm = commutator_op(ideal.gen2(), ideal.gen1())
    nf = reduce_mod(comm, ideal)
    coeffs = nf.collect_del(ideal.proto())
    proto = ideal.proto()
    out = {}
    for k in range(2, n + 1):
        idx = n - k
        out[k] = coeffs[idx] if idx < len(coeffs) else _zero_like(proto)
    # degree n-1 must be empty for traceless data; callers may assert
    return out


def infinitesimal_action(h_op: DiffOp, ideal: LeftIdealNF):
    """Variations (dP, dQ) induced by the degree <= n-1 operator H.

    dP = [H, -del^n + P] mod the ideal, dQ = [H, -dbar + Q] mod the ideal;
    both are returned as del-coefficient lists of length n (degrees 0..n-1).
    """
    if h_op.dbar_degree() > 0:
        raise ShapeMismatch("H must not contain dbar")
    g1 = ideal.gen1()
    g2 = ideal.gen2()
    dP = reduce_mod(commutator_op(h_op, -g1), ideal)
    dQ = reduce_mod(commutator_op(h_op, g2), ideal)
    proto = ideal.proto()
    padd = dP.collect_del(proto)
    qadd = dQ.collect_del(proto)
    padd += [_zero_like(proto)] * (ideal.n - len(padd))
    qadd += [_zero_like(proto)] * (ideal.n - len(qadd))
    return padd, qadd


def traceless_mu1(n, t, mu_upper):
    """The value of m1 forced by tracelessness of the dbar matrix.

    The matrix built column-by-column from (m1, ..., mn) has trace
    n*m1 + S(m_{>=2}, t); solving the trace to zero gives m1.  For n = 2 this
    is -d(m2)/2.
    """
    from .gauge import assemble_A2_from_parts
    from .linalg import trace
    proto = None
    for v in list(t.values()) + list(mu_upper.values()):
        proto = v
        break
    mu = {1: _zero_like(proto)}
    mu.update(mu_upper)
    a2 = assemble_A2_from_parts(n, t, mu)
    tr = trace(a2)
    return tr * (-1.0 / n) if not isinstance(tr, DiffPoly) else tr / (-n)


# ---------------------------------------------------------------------------
# Semiclassical scaling checks
# ---------------------------------------------------------------------------

def _poisson_bracket_poly(f, g, proto):
    """Poisson bracket of two polynomials in (p, pbar) with field coefficients.

    f, g are dicts {(i, j): coeff} for p^i pbar^j.  The convention is
    {f, g} = f_p g_z - f_z g_p + f_pbar g_zbar - f_zbar g_pbar,
    pinned by the variation d(m2) = (dbar - m2 del + del(m2)) v2.
    """
    def d_p(poly):
        return {(i - 1, j): c * float(i) for (i, j), c in poly.items() if i > 0}

    def d_pb(poly):
        return {(i, j - 1): c * float(j) for (i, j), c in poly.items() if j > 0}

    def d_z(poly):
        return {(i, j): _apply(c, "d") for (i, j), c in poly.items()}

    def d_zb(poly):
        return {(i, j): _apply(c, "dbar") for (i, j), c in poly.items()}

    def pmul(a, b):
        out = {}
        for (i1, j1), c1 in a.items():
            for (i2, j2), c2 in b.items():
                key = (i1 + i2, j1 + j2)
                p = c1 * c2
                out[key] = out[key] + p if key in out else p
        return out

    def padd(a, b, sign=1.0):
        out = dict(a)
        for key, c in b.items():
            add = c * sign
            out[key] = out[key] + add if key in out else add
        return out

    acc = pmul(d_p(f), d_z(g))
    acc = padd(acc, pmul(d_z(f), d_p(g)), -1.0)
    acc = padd(acc, pmul(d_pb(f), d_zb(g)))
    acc = padd(acc, pmul(d_zb(f), d_pb(g)), -1.0)
    return {k: v for k, v in acc.items() if not _is_zero(v, 0.0)}


def semiclassical_check(n: int, t: dict, mu: dict, tol: float = 0.0) -> dict:
    """Verify the h-scaling identities linking commutators to Poisson brackets.

    Builds D1(h) = h^n del^n - sum t_k h^(n-k) del^(n-k) and
    D2(h) = -h dbar + sum mu_k h^(k-1) del^(k-1), then checks

    1. every term of [D1, D2] carries at least one net power of h, and the
       terms with exactly one (after the 1/h division those with h-power
       equal to derivative order) reproduce the Poisson bracket of the
       symbols p^n - P and -pbar + Q;
    2. the curvature coefficients xi_k of the corresponding operator ideal,
       taken mod t^2 and mod del^2, equal the negated holomorphicity
       residuals, which is the condition cutting out the cotangent bundle;
    3. the Poisson bracket itself, reduced mod the commutative ideal and mod
       t^2, matches those same negated residuals.

    Returns a report dict; never raises on mismatch.
    """
    from .parabolic import condition_c_residual_parts

    proto = next(iter(t.values())) if t else next(iter(mu.values()))
    report = {"n": n, "checks": {}, "max_discrepancy": 0.0}

    # --- build D1, D2 with h powers
    d1 = DiffOp({(n, 0, n): _one_like_of(proto)})
    for k, v in t.items():
        d1 = d1 - DiffOp({(n - k, 0, n - k): v})
    d2 = DiffOp({(0, 1, 1): -_one_like_of(proto)})
    for k, v in mu.items():
        d2 = d2 + DiffOp({(k - 1, 0, k - 1): v})

    comm = commutator_op(d1, d2)

    # classify terms by excess = h-power - derivative order
    min_excess = None
    leading = {}
    for (k, j, m), c in comm.terms.items():
        if _is_zero(c, 0.0):
            continue
        excess = m - (k + j)
        min_excess = excess if min_excess is None else min(min_excess, excess)
        if excess == 1:
            key = (k, j)
            leading[key] = leading[key] + c if key in leading else c
    ok_positive = (min_excess is None) or (min_excess >= 1)
    report["checks"]["h_division"] = ok_positive

    # --- Poisson bracket of the symbols
    f = {(n, 0): _one_like_of(proto)}
    for k, v in t.items():
        f[(n - k, 0)] = -v
    g = {(0, 1): -_one_like_of(proto)}
    for k, v in mu.items():
        g[(k - 1, 0)] = g.get((k - 1, 0), _zero_like(proto)) + v
    pb = _poisson_bracket_poly(f, g, proto)

    diff_max = 0.0
    keys = set(leading) | set(pb)
    for key in keys:
        lhs = leading.get(key, _zero_like(proto))
        rhs = pb.get(key, _zero_like(proto))
        diff_max = max(diff_max, _norm(lhs - rhs))
    report["checks"]["symbol_bracket_equals_poisson"] = diff_max <= tol
    report["max_discrepancy"] = max(report["max_discrepancy"], diff_max)

    # --- curvature mod t^2, del^2 against the holomorphicity residuals
    ideal = LeftIdealNF(n, dict(t), dict(mu))
    xi = parabolic_curvature(ideal)
    tnames = _symbol_names(t)
    resid = condition_c_residual_parts(n, t, mu)
    xi_diff = 0.0
    for k in range(2, n + 1):
        lhs = _project_mods(xi[k], tnames)
        rhs = _project_mods(-resid[k], tnames)
        xi_diff = max(xi_diff, _norm(lhs - rhs))
    report["checks"]["curvature_mod_t2_dz2_is_condition"] = xi_diff <= tol
    report["max_discrepancy"] = max(report["max_discrepancy"], xi_diff)

    # --- Poisson bracket mod commutative ideal: mod t^2 and del^2 it carries
    # exactly the holomorphicity residuals (positive sign in this bracket
    # convention, the commutator order flip accounts for the -1 above)
    reduced = _reduce_poisson_mod_ideal(pb, n, t, mu)
    pb_diff = 0.0
    for k in range(1, n + 1):
        lhs = _project_mods(reduced.get(n - k, _zero_like(proto)), tnames)
        rhs = _project_mods(resid[k], tnames) if k >= 2 else _zero_like(proto)
        pb_diff = max(pb_diff, _norm(lhs - rhs))
    report["checks"]["poisson_mod_ideal_is_condition"] = pb_diff <= tol
    report["max_discrepancy"] = max(report["max_discrepancy"], pb_diff)

    report["passed"] = all(report["checks"].values())
    return report


def _one_like_of(proto):
    from .coeff import _one_like
    return _one_like(proto)


def _symbol_names(t):
    names = set()
    for v in t.values():
        if isinstance(v, DiffPoly):
            for (_, mono) in v.terms:
                for (name, _, _) in mono:
                    names.add(name.rstrip("~"))
    return names


def _project_mods(x, tnames):
    if isinstance(x, DiffPoly):
        return x.drop_quadratic(tnames).drop_dz2()
    return x


def _project_t2(x, tnames):
    if isinstance(x, DiffPoly):
        return x.drop_quadratic(tnames)
    return x


def _reduce_poisson_mod_ideal(pb, n, t, mu):
    """Reduce a (p, pbar)-polynomial mod the commutative ideal.

    pbar is replaced by m1 + m2 p + ... + mn p^(n-1) and p^n by
    t2 p^(n-2) + ... + tn, repeatedly; the result maps del-power -> coeff.
    """
    proto = next(iter(t.values())) if t else next(iter(mu.values()))
    work = dict(pb)
    out = {}
    while work:
        (i, j), c = work.popitem()
        if _is_zero(c, 0.0):
            continue
        if j > 0:
            for k, v in mu.items():
                key = (i + k - 1, j - 1)
                add = c * v
                work[key] = work[key] + add if key in work else add
            continue
        if i >= n:
            for k, v in t.items():
                key = (i - n + n - k, 0)
                add = c * v
                work[key] = work[key] + add if key in work else add
            continue
        out[i] = out[i] + c if i in out else c
    return out
