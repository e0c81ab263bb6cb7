"""Graded linear algebra substrate: graded spaces, Koszul-signed monomials,
truncated functionals, and contraction operators.

Conventions fixed by this module (all tests are written against these):

* A ``DgSpace`` stores the degrees of the underlying basis vectors e_i and a
  differential matrix ``diff`` with Q(e_j) = sum_i diff[i][j] e_i.  Q raises
  degree by one and squares to zero.
* The coordinate ring O(V) is generated by dual variables x^i, one per basis
  vector, with deg(x^i) = -deg(e_i).  A variable is odd iff its degree is odd;
  odd variables square to zero.
* Monomials are tuples of variable indices in ascending order.  Reordering a
  word into canonical order contributes the Koszul sign of the permutation.
* Q acts on variables through the same matrix, Q(x^j) = sum_k diff[j][k] x^k,
  and extends as an odd derivation.
* Contraction with a kernel S in Sym^2(V) acts on a monomial as the sum over
  unordered slot pairs (s < t): remove the two slots, picking up the Koszul
  sign of moving them to the front, and multiply by the kernel entry
  S[v_s][v_t].  With these choices [Q, contract_S] = -contract_{Q(S)}, i.e.
  contraction with K + Q(P) equals conjugating contraction with K by the flow
  of P.
* Scalars are exact rationals; no floats enter this module.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Mapping

Word = tuple[int, ...]
TermKey = tuple[Word, int]

ZERO = Fraction(0)
ONE = Fraction(1)


class SpaceMismatch(ValueError):
    """Operands built over different spaces or truncations."""


def koszul_sign(perm: Iterable[int], degrees: Iterable[int]) -> int:
    """Sign relating f_0 ... f_{n-1} to f_{perm[0]} ... f_{perm[n-1]}.

    Each inversion of two odd factors contributes -1; pairs involving an even
    factor commute freely.  Multiplicative under composition of permutations.
    """
    p = list(perm)
    degs = list(degrees)
    if len(p) != len(degs):
        raise ValueError("permutation and degree list have different lengths")
    if sorted(p) != list(range(len(p))):
        raise ValueError("not a permutation of 0..n-1")
    sign = 1
    for i in range(len(p)):
        for j in range(i + 1, len(p)):
            if p[i] > p[j] and degs[p[i]] % 2 and degs[p[j]] % 2:
                sign = -sign
    return sign


@dataclass(frozen=True)
class DgSpace:
    """Finite graded basis with degrees and a degree +1 differential Q."""

    names: tuple[str, ...]
    degrees: tuple[int, ...]
    diff: tuple[tuple[Fraction, ...], ...]

    def __post_init__(self):
        n = len(self.names)
        if len(self.degrees) != n or len(self.diff) != n:
            raise ValueError("basis, degrees and diff must have equal size")
        if len(set(self.names)) != n:
            raise ValueError("duplicate basis names")
        for i in range(n):
            if len(self.diff[i]) != n:
                raise ValueError("diff is not square")
            for j in range(n):
                if self.diff[i][j] and self.degrees[i] != self.degrees[j] + 1:
                    raise ValueError(
                        f"diff[{i}][{j}] nonzero but degrees are not shifted by 1"
                    )
        # Q^2 = 0 as a matrix identity
        for i in range(n):
            for j in range(n):
                acc = ZERO
                for k in range(n):
                    acc += self.diff[i][k] * self.diff[k][j]
                if acc:
                    raise ValueError("differential does not square to zero")

    @staticmethod
    def build(basis: Iterable[tuple[str, int]],
              diff: Mapping[tuple[str, str], Fraction] | None = None) -> "DgSpace":
        """Construct from (name, degree) pairs and a sparse {(target, source): c} map."""
        items = list(basis)
        names = tuple(n for n, _ in items)
        degrees = tuple(d for _, d in items)
        index = {n: i for i, n in enumerate(names)}
        n = len(names)
        mat = [[ZERO] * n for _ in range(n)]
        for (tgt, src), c in (diff or {}).items():
            mat[index[tgt]][index[src]] = Fraction(c)
        return DgSpace(names, degrees, tuple(tuple(row) for row in mat))

    @property
    def dim(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def var_degree(self, i: int) -> int:
        """Degree of the dual variable x^i."""
        return -self.degrees[i]

    def parity(self, i: int) -> int:
        return self.degrees[i] % 2

    def word_degree(self, word: Word) -> int:
        return sum(self.var_degree(i) for i in word)

    def normalize_word(self, word: Iterable[int]) -> tuple[Word | None, int]:
        """Sort a word into canonical order, accumulating the Koszul sign.

        Returns (None, 0) when an odd variable repeats.
        """
        w = list(word)
        sign = 1
        # insertion sort; each adjacent swap of two odd variables flips the sign
        for i in range(1, len(w)):
            j = i
            while j > 0 and w[j - 1] > w[j]:
                if self.parity(w[j - 1]) and self.parity(w[j]):
                    sign = -sign
                w[j - 1], w[j] = w[j], w[j - 1]
                j -= 1
        for a, b in zip(w, w[1:]):
            if a == b and self.parity(a):
                return None, 0
        return tuple(w), sign


@dataclass(frozen=True)
class Kernel2:
    """Graded-symmetric two-tensor over the basis of V.

    ``degree`` is the total degree of every nonzero entry's basis pair: 1 for
    BV kernels, 0 for propagators.
    """

    space: DgSpace
    degree: int
    entries: tuple[tuple[Fraction, ...], ...]

    def __post_init__(self):
        n = self.space.dim
        d = self.space.degrees
        if len(self.entries) != n or any(len(r) != n for r in self.entries):
            raise ValueError("kernel entries must be dim x dim")
        for i in range(n):
            for j in range(n):
                v = self.entries[i][j]
                if not v:
                    continue
                if d[i] + d[j] != self.degree:
                    raise ValueError(
                        f"entry ({i},{j}) violates degree homogeneity")
                sym = self.entries[j][i]
                if (d[i] * d[j]) % 2:
                    sym = -sym
                if v != sym:
                    raise ValueError("kernel is not graded-symmetric")

    @staticmethod
    def build(space: DgSpace, degree: int,
              entries: Mapping[tuple[str, str], Fraction]) -> "Kernel2":
        """Sparse constructor; symmetric partners are filled in automatically."""
        n = space.dim
        mat = [[ZERO] * n for _ in range(n)]
        for (a, b), c in entries.items():
            i, j = space.index(a), space.index(b)
            c = Fraction(c)
            mat[i][j] = c
            sym = -c if (space.degrees[i] * space.degrees[j]) % 2 else c
            mat[j][i] = sym
        return Kernel2(space, degree, tuple(tuple(r) for r in mat))

    @staticmethod
    def zero(space: DgSpace, degree: int) -> "Kernel2":
        n = space.dim
        return Kernel2(space, degree, tuple(tuple([ZERO] * n) for _ in range(n)))

    def is_zero(self) -> bool:
        return all(not v for row in self.entries for v in row)

    def add(self, other: "Kernel2") -> "Kernel2":
        if other.space is not self.space and other.space != self.space:
            raise SpaceMismatch("kernels over different spaces")
        if other.degree != self.degree:
            raise ValueError("kernel degrees differ")
        n = self.space.dim
        return Kernel2(self.space, self.degree, tuple(
            tuple(self.entries[i][j] + other.entries[i][j] for j in range(n))
            for i in range(n)))

    def scale(self, c: Fraction) -> "Kernel2":
        c = Fraction(c)
        return Kernel2(self.space, self.degree, tuple(
            tuple(c * v for v in row) for row in self.entries))

    def q_image(self) -> "Kernel2":
        """Q applied to the tensor: Q(S) = (Q x 1 + 1 x Q) S with Koszul signs."""
        sp = self.space
        n = sp.dim
        out = [[ZERO] * n for _ in range(n)]
        for a in range(n):
            for b in range(n):
                acc = ZERO
                for i in range(n):
                    if sp.diff[a][i] and self.entries[i][b]:
                        acc += sp.diff[a][i] * self.entries[i][b]
                for j in range(n):
                    if self.entries[a][j] and sp.diff[b][j]:
                        term = self.entries[a][j] * sp.diff[b][j]
                        if sp.degrees[a] % 2:
                            term = -term
                        acc += term
                out[a][b] = acc
        return Kernel2(sp, self.degree + 1, tuple(tuple(r) for r in out))


@dataclass
class Functional:
    """Truncated formal power series in the dual variables and hbar.

    Monomials of polynomial degree > D and hbar powers > H are dropped by
    every operation; zero coefficients are never stored.  Instances are
    treated as immutable.
    """

    space: DgSpace
    D: int
    H: int
    terms: dict[TermKey, Fraction] = field(default_factory=dict)

    @staticmethod
    def make(space: DgSpace, D: int, H: int,
             raw: Iterable[tuple[Iterable[int], int, Fraction]] = ()) -> "Functional":
        """Build from (word, hbar_power, coeff) triples, normalizing words."""
        terms: dict[TermKey, Fraction] = {}
        for word, h, coeff in raw:
            coeff = Fraction(coeff)
            mono, sign = space.normalize_word(word)
            if mono is None or not coeff or h < 0:
                continue
            if len(mono) > D or h > H:
                continue
            key = (mono, h)
            val = terms.get(key, ZERO) + sign * coeff
            if val:
                terms[key] = val
            else:
                terms.pop(key, None)
        return Functional(space, D, H, terms)

    @staticmethod
    def zero(space: DgSpace, D: int, H: int) -> "Functional":
        return Functional(space, D, H, {})

    @staticmethod
    def constant(space: DgSpace, D: int, H: int, c: Fraction) -> "Functional":
        return Functional.make(space, D, H, [((), 0, Fraction(c))])

    @staticmethod
    def variable(space: DgSpace, D: int, H: int, name: str) -> "Functional":
        return Functional.make(space, D, H, [((space.index(name),), 0, ONE)])

    def _check_compatible(self, other: "Functional") -> None:
        if self.space != other.space:
            raise SpaceMismatch("functionals over different spaces")
        if (self.D, self.H) != (other.D, other.H):
            raise SpaceMismatch(
                f"cutoff mismatch: ({self.D},{self.H}) vs ({other.D},{other.H})")

    def is_zero(self) -> bool:
        return not self.terms

    def __eq__(self, other) -> bool:
        return (isinstance(other, Functional) and self.space == other.space
                and self.D == other.D and self.H == other.H
                and self.terms == other.terms)

    def __add__(self, other: "Functional") -> "Functional":
        self._check_compatible(other)
        terms = dict(self.terms)
        for key, c in other.terms.items():
            val = terms.get(key, ZERO) + c
            if val:
                terms[key] = val
            else:
                terms.pop(key, None)
        return Functional(self.space, self.D, self.H, terms)

    def __neg__(self) -> "Functional":
        return Functional(self.space, self.D, self.H,
                          {k: -c for k, c in self.terms.items()})

    def __sub__(self, other: "Functional") -> "Functional":
        return self + (-other)

    def scale(self, c: Fraction) -> "Functional":
        c = Fraction(c)
        if not c:
            return Functional.zero(self.space, self.D, self.H)
        return Functional(self.space, self.D, self.H,
                          {k: c * v for k, v in self.terms.items()})

    def hbar_shift(self, k: int) -> "Functional":
        """Multiply by hbar^k, truncating at H."""
        terms = {}
        for (mono, h), c in self.terms.items():
            if h + k <= self.H and h + k >= 0:
                terms[(mono, h + k)] = c
        return Functional(self.space, self.D, self.H, terms)

    def __mul__(self, other: "Functional") -> "Functional":
        self._check_compatible(other)
        sp = self.space
        out: dict[TermKey, Fraction] = {}
        for (ma, ha), ca in self.terms.items():
            for (mb, hb), cb in other.terms.items():
                h = ha + hb
                if h > self.H or len(ma) + len(mb) > self.D:
                    continue
                mono, sign = sp.normalize_word(ma + mb)
                if mono is None:
                    continue
                key = (mono, h)
                val = out.get(key, ZERO) + sign * ca * cb
                if val:
                    out[key] = val
                else:
                    out.pop(key, None)
        return Functional(sp, self.D, self.H, out)

    def graded_components(self) -> dict[int, "Functional"]:
        """Split by total internal degree of the monomials."""
        buckets: dict[int, dict[TermKey, Fraction]] = {}
        for (mono, h), c in self.terms.items():
            g = self.space.word_degree(mono)
            buckets.setdefault(g, {})[(mono, h)] = c
        return {g: Functional(self.space, self.D, self.H, t)
                for g, t in sorted(buckets.items())}

    def hbar_coefficient(self, k: int) -> "Functional":
        """The hbar^k layer, returned at hbar power 0."""
        terms = {(mono, 0): c for (mono, h), c in self.terms.items() if h == k}
        return Functional(self.space, self.D, self.H, terms)

    def max_poly_degree(self) -> int:
        return max((len(m) for (m, _h) in self.terms), default=0)

    def iter_terms(self) -> Iterator[tuple[Word, int, Fraction]]:
        for (mono, h) in sorted(self.terms):
            yield mono, h, self.terms[(mono, h)]

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for mono, h, c in self.iter_terms():
            factors = [str(c)] if c != 1 or (not mono and h == 0) else []
            if h:
                factors.append("hbar" + (f"^{h}" if h > 1 else ""))
            names = [self.space.names[i] for i in mono]
            for n in sorted(set(names)):
                k = names.count(n)
                factors.append(n + (f"^{k}" if k > 1 else ""))
            parts.append("*".join(factors) or "1")
        return " + ".join(parts)


def pair_sign(space: DgSpace, mono: Word, s: int, t: int) -> int:
    """Koszul sign of moving slots s < t of a monomial to the front."""
    sign = 1
    if space.parity(mono[s]):
        odd_before = sum(1 for u in range(s) if space.parity(mono[u]))
        if odd_before % 2:
            sign = -sign
    if space.parity(mono[t]):
        odd_before = sum(1 for u in range(t) if u != s and space.parity(mono[u]))
        if odd_before % 2:
            sign = -sign
    return sign


def contract(kernel: Kernel2, f: Functional) -> Functional:
    """Second-order contraction operator associated to a Sym^2(V) kernel.

    Acts on each monomial as the sum over unordered slot pairs, replacing the
    pair by the kernel entry with move-to-front Koszul signs.  Lowers the
    polynomial degree by two and is linear in f.
    """
    if kernel.space != f.space:
        raise SpaceMismatch("kernel and functional over different spaces")
    sp = f.space
    ent = kernel.entries
    out: dict[TermKey, Fraction] = {}
    for (mono, h), c in f.terms.items():
        n = len(mono)
        for s in range(n):
            for t in range(s + 1, n):
                val = ent[mono[s]][mono[t]]
                if not val:
                    continue
                sign = pair_sign(sp, mono, s, t)
                new = mono[:s] + mono[s + 1:t] + mono[t + 1:]
                key = (new, h)
                acc = out.get(key, ZERO) + sign * val * c
                if acc:
                    out[key] = acc
                else:
                    out.pop(key, None)
    return Functional(sp, f.D, f.H, out)


def apply_Q(f: Functional) -> Functional:
    """The degree +1 derivation on O(V) induced by the differential of V."""
    sp = f.space
    out: dict[TermKey, Fraction] = {}
    for (mono, h), c in f.terms.items():
        sign = 1
        for i, v in enumerate(mono):
            row = sp.diff[v]
            for k in range(sp.dim):
                if not row[k]:
                    continue
                word = mono[:i] + (k,) + mono[i + 1:]
                new, s2 = sp.normalize_word(word)
                if new is None:
                    continue
                key = (new, h)
                acc = out.get(key, ZERO) + sign * s2 * row[k] * c
                if acc:
                    out[key] = acc
                else:
                    out.pop(key, None)
            if sp.parity(v):
                sign = -sign
    return Functional(sp, f.D, f.H, out)


def mul(a: Functional, b: Functional) -> Functional:
    """Graded-commutative product, truncated to the shared cutoffs."""
    return a * b


def is_plus(f: Functional) -> bool:
    """True iff every hbar^0 term is at least cubic."""
    return all(h >= 1 or len(mono) >= 3 for (mono, h) in f.terms)


def partial(f: Functional, var: int) -> Functional:
    """Partial derivative with respect to an even variable."""
    if f.space.parity(var):
        raise ValueError("partial derivative implemented for even variables only")
    out: dict[TermKey, Fraction] = {}
    for (mono, h), c in f.terms.items():
        count = mono.count(var)
        if not count:
            continue
        i = mono.index(var)
        new = mono[:i] + mono[i + 1:]
        key = (new, h)
        acc = out.get(key, ZERO) + count * c
        if acc:
            out[key] = acc
        else:
            out.pop(key, None)
    return Functional(f.space, f.D, f.H, out)
