"""Small dense matrices over any coefficient ring.

Matrices are plain nested lists.  Everything is sized n <= 6, so Leibniz
determinants and Gauss elimination with ring division are fine.
"""

from __future__ import annotations

from itertools import permutations

from .coeff import _invert, _is_zero, _norm, _one_like, _zero_like, _apply, _conj
from .errors import ShapeMismatch, SingularGauge


def mat(rows):
    return [list(r) for r in rows]


def shape(m):
    return len(m), len(m[0])


def zeros(n, m, proto):
    return [[_zero_like(proto) for _ in range(m)] for _ in range(n)]


def eye(n, proto):
    out = zeros(n, n, proto)
    one = _one_like(proto)
    for i in range(n):
        out[i][i] = one
    return out


def add(a, b):
    return [[x + y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]


def sub(a, b):
    return [[x - y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]


def neg(a):
    return [[-x for x in r] for r in a]


def scale(a, s):
    return [[x * s for x in r] for r in a]


def mul(a, b):
    n, k = shape(a)
    k2, m = shape(b)
    if k != k2:
        raise ShapeMismatch(f"cannot multiply {n}x{k} by {k2}x{m}")
    out = []
    for i in range(n):
        row = []
        for j in range(m):
            acc = None
            for l in range(k):
                p = a[i][l] * b[l][j]
                acc = p if acc is None else acc + p
            row.append(acc)
        out.append(row)
    return out


def commutator(a, b):
    return sub(mul(a, b), mul(b, a))


def transpose(a):
    return [list(r) for r in zip(*a)]


def dagger(a):
    return [[_conj(x) for x in r] for r in transpose(a)]


def dmat(a):
    return [[_apply(x, "d") for x in r] for r in a]


def dbarmat(a):
    return [[_apply(x, "dbar") for x in r] for r in a]


def trace(a):
    acc = a[0][0]
    for i in range(1, len(a)):
        acc = acc + a[i][i]
    return acc


def det(a):
    """Leibniz determinant (n <= 6)."""
    n = len(a)
    acc = None
    for perm in permutations(range(n)):
        sign = _perm_sign(perm)
        term = None
        for i in range(n):
            term = a[i][perm[i]] if term is None else term * a[i][perm[i]]
        term = term if sign > 0 else -term
        acc = term if acc is None else acc + term
    return acc


def _perm_sign(perm):
    sign = 1
    seen = [False] * len(perm)
    for i in range(len(perm)):
        if seen[i]:
            continue
        j, cycle = i, 0
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            cycle += 1
        if cycle % 2 == 0:
            sign = -sign
    return sign


def inv(a):
    """Gauss-Jordan inverse with ring division; pivots must be invertible."""
    n = len(a)
    work = [list(r) for r in a]
    out = eye(n, a[0][0])
    for col in range(n):
        piv = None
        best = -1.0
        for r in range(col, n):
            try:
                nrm = _norm(work[r][col])
            except TypeError:
                nrm = 0.0 if _is_zero(work[r][col], 0.0) else 1.0
            if nrm > best:
                best = nrm
                piv = r
        if piv is None or _is_zero(work[piv][col], 1e-14):
            raise SingularGauge("matrix is not invertible over its coefficient ring")
        work[col], work[piv] = work[piv], work[col]
        out[col], out[piv] = out[piv], out[col]
        pinv = _invert(work[col][col])
        work[col] = [x * pinv for x in work[col]]
        out[col] = [x * pinv for x in out[col]]
        for r in range(n):
            if r == col:
                continue
            f = work[r][col]
            if _is_zero(f, 0.0):
                continue
            work[r] = [x - f * y for x, y in zip(work[r], work[col])]
            out[r] = [x - f * y for x, y in zip(out[r], out[col])]
    return out


def solve_row(matrix, rhs):
    """Solve x . matrix = rhs for a row vector x over the ring."""
    minv = inv(matrix)
    return [sum_ring(rhs[k] * minv[k][j] for k in range(len(rhs))) for j in range(len(rhs))]


def sum_ring(items):
    acc = None
    for x in items:
        acc = x if acc is None else acc + x
    return acc


def apply_entrywise(a, f):
    return [[f(x) for x in r] for r in a]


def norm_inf(a):
    return max(_norm(x) for r in a for x in r)


def residual(a, b):
    return norm_inf(sub(a, b))
