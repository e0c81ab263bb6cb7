"""Exact linear algebra over the rationals.

Matrices are lists of rows of Fractions.  Everything here is dense and
unoptimized on purpose: the complexes built by the other modules are small
(hundreds of rows at most) and exactness is the whole point.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Sequence

Matrix = list[list[Fraction]]
Vector = list[Fraction]

ZERO = Fraction(0)
ONE = Fraction(1)


def zeros(rows: int, cols: int) -> Matrix:
    return [[ZERO] * cols for _ in range(rows)]


def identity(n: int) -> Matrix:
    m = zeros(n, n)
    for i in range(n):
        m[i][i] = ONE
    return m


def mat_mul(a: Matrix, b: Matrix) -> Matrix:
    if a and b and len(a[0]) != len(b):
        raise ValueError("matrix shape mismatch")
    rows, inner, cols = len(a), len(b), len(b[0]) if b else 0
    out = zeros(rows, cols)
    for i in range(rows):
        ai = a[i]
        oi = out[i]
        for k in range(inner):
            aik = ai[k]
            if aik:
                bk = b[k]
                for j in range(cols):
                    if bk[j]:
                        oi[j] += aik * bk[j]
    return out


def mat_vec(a: Matrix, v: Vector) -> Vector:
    return [sum((row[j] * v[j] for j in range(len(v)) if v[j]), ZERO) for row in a]


def rref(mat: Matrix) -> tuple[Matrix, list[int]]:
    """Reduced row echelon form; returns (R, pivot column indices)."""
    m = [row[:] for row in mat]
    rows = len(m)
    cols = len(m[0]) if rows else 0
    pivots: list[int] = []
    r = 0
    for c in range(cols):
        if r == rows:
            break
        pivot = None
        for i in range(r, rows):
            if m[i][c]:
                pivot = i
                break
        if pivot is None:
            continue
        m[r], m[pivot] = m[pivot], m[r]
        inv = ONE / m[r][c]
        m[r] = [x * inv for x in m[r]]
        for i in range(rows):
            if i != r and m[i][c]:
                f = m[i][c]
                m[i] = [a - f * b for a, b in zip(m[i], m[r])]
        pivots.append(c)
        r += 1
    return m, pivots


def rank(mat: Matrix) -> int:
    if not mat or not mat[0]:
        return 0
    return len(rref(mat)[1])


def nullspace(mat: Matrix, cols: int | None = None) -> list[Vector]:
    """Basis of the right kernel {v : mat @ v = 0}."""
    if not mat:
        n = cols or 0
        return [e_i for e_i in identity(n)]
    n = len(mat[0])
    red, pivots = rref(mat)
    pivset = set(pivots)
    free = [j for j in range(n) if j not in pivset]
    basis = []
    for j in free:
        v = [ZERO] * n
        v[j] = ONE
        for r, c in enumerate(pivots):
            v[c] = -red[r][j]
        basis.append(v)
    return basis


def solve(mat: Matrix, rhs: Vector) -> Vector | None:
    """One solution of mat @ x = rhs, or None if inconsistent."""
    if not mat:
        return None if any(rhs) else []
    n = len(mat[0])
    aug = [row[:] + [rhs[i]] for i, row in enumerate(mat)]
    red, pivots = rref(aug)
    if n in pivots:
        return None
    x = [ZERO] * n
    for r, c in enumerate(pivots):
        x[c] = red[r][n]
    return x


def invert(mat: Matrix) -> Matrix:
    """Inverse of a square matrix; raises on singular input."""
    n = len(mat)
    aug = [mat[i][:] + identity(n)[i] for i in range(n)]
    red, pivots = rref(aug)
    if pivots[:n] != list(range(n)):
        raise ValueError("matrix is singular")
    return [row[n:] for row in red[:n]]


def column_space_rank(columns: Iterable[Vector]) -> int:
    rows = [list(c) for c in columns]
    return rank(rows) if rows else 0


def stack_columns(columns: Sequence[Vector], dim: int) -> Matrix:
    """Matrix whose columns are the given vectors (each of length dim)."""
    out = zeros(dim, len(columns))
    for j, col in enumerate(columns):
        for i in range(dim):
            out[i][j] = col[i]
    return out


def in_span(columns: Sequence[Vector], v: Vector) -> bool:
    if not columns:
        return not any(v)
    return solve(stack_columns(columns, len(v)), v) is not None


def subspace_sum_rank(a: Sequence[Vector], b: Sequence[Vector]) -> int:
    return column_space_rank(list(a) + list(b))


def intersection_dim(a: Sequence[Vector], b: Sequence[Vector]) -> int:
    ra = column_space_rank(a)
    rb = column_space_rank(b)
    return ra + rb - subspace_sum_rank(a, b)


class Echelon:
    """Incrementally maintained reduced row set for online rank/membership."""

    def __init__(self, vectors: Iterable[Vector] = ()):
        self.rows: list[Vector] = []
        self.pivots: list[int] = []
        for v in vectors:
            self.add(v)

    def reduce(self, vec: Vector) -> Vector:
        v = list(vec)
        for row, p in zip(self.rows, self.pivots):
            if v[p]:
                f = v[p]
                for j in range(len(v)):
                    if row[j]:
                        v[j] -= f * row[j]
        return v

    def add(self, vec: Vector) -> bool:
        """Insert a vector; returns True when it enlarged the span."""
        v = self.reduce(vec)
        for p, x in enumerate(v):
            if x:
                inv = ONE / x
                v = [y * inv for y in v]
                self.rows.append(v)
                self.pivots.append(p)
                return True
        return False

    def contains(self, vec: Vector) -> bool:
        return not any(self.reduce(vec))

    @property
    def rank(self) -> int:
        return len(self.rows)


def solve_many(mat: Matrix, rhs_list: list[Vector]) -> list[Vector | None]:
    """Solve mat @ x = rhs for several right-hand sides with one elimination."""
    if not mat:
        return [([] if not any(r) else None) for r in rhs_list]
    n = len(mat[0])
    k = len(rhs_list)
    aug = [row[:] + [rhs_list[j][i] for j in range(k)]
           for i, row in enumerate(mat)]
    red, pivots = rref(aug)
    piv_main = [c for c in pivots if c < n]
    out: list[Vector | None] = []
    for j in range(k):
        col = n + j
        # inconsistent iff some row is zero on the main block but not at col
        bad = False
        for r in range(len(red)):
            if red[r][col] and not any(red[r][c] for c in range(n)):
                bad = True
                break
        if bad:
            out.append(None)
            continue
        x = [ZERO] * n
        for r, c in enumerate(piv_main):
            x[c] = red[r][col]
        out.append(x)
    return out


def nilpotent_block_sizes(n_mat: Matrix) -> list[int]:
    """Jordan block sizes of a nilpotent matrix, largest first.

    Number of blocks of size >= k equals rank(N^{k-1}) - rank(N^k).
    """
    dim = len(n_mat)
    if dim == 0:
        return []
    ranks = [dim]
    power = identity(dim)
    while ranks[-1] > 0:
        power = mat_mul(power, n_mat)
        ranks.append(rank(power))
    sizes: list[int] = []
    for k in range(1, len(ranks)):
        count_ge_k = ranks[k - 1] - ranks[k]
        # count_ge_k = number of blocks of size >= k
        while len(sizes) < count_ge_k:
            sizes.append(0)
        for i in range(count_ge_k):
            sizes[i] += 1
    sizes.sort(reverse=True)
    return sizes
