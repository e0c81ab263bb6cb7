"""Shipped fixtures and randomized instance generators.

Everything here is deterministic given a ``random.Random`` instance, so the
acceptance suite is reproducible from a seed.
"""

from __future__ import annotations

import itertools
from fractions import Fraction
from random import Random

from bvflow import linalg
from bvflow.bv import BvModel
from bvflow.graded import DgSpace, Functional, Kernel2

ZERO = Fraction(0)
ONE = Fraction(1)


# ---------------------------------------------------------------------------
# named fixtures


def superpotential_space(n: int) -> DgSpace:
    """The polynomial model Q[z_i, theta_i] with Q = 0.

    Variables z_i are even of degree 0; theta_i are odd of degree -1 (their
    underlying basis vectors sit in degree +1).
    """
    basis = [(f"z{i+1}", 0) for i in range(n)] + \
            [(f"th{i+1}", 1) for i in range(n)]
    return DgSpace.build(basis)


def superpotential_kernel(space: DgSpace, n: int) -> Kernel2:
    """Kernel realizing Delta = sum_i d/dtheta_i d/dz_i."""
    return Kernel2.build(space, 1,
                         {(f"z{i+1}", f"th{i+1}"): ONE for i in range(n)})


def superpotential_model(n: int) -> BvModel:
    sp = superpotential_space(n)
    return BvModel(space=sp, kernel=superpotential_kernel(sp, n))


def nilpotent_dgla_model() -> tuple[BvModel, dict]:
    """Field-antifield BV model of a 3-dimensional nilpotent dg Lie algebra.

    The algebra has basis X (degree 0), Y, Z (degree 1) with dX = Y and
    [X, Y] = Z; it is nilpotent and the differential is a derivation of the
    bracket.  Since no 3-dimensional nilpotent Lie algebra carries a
    nondegenerate invariant pairing, the model doubles the algebra with its
    antifields, where the evaluation pairing is canonical.  Returns the model
    together with the raw data used to build it.
    """
    # fields a_i = g[1], antifields b_i with pairing degree 1
    g_names = ["X", "Y", "Z"]
    g_degrees = [0, 1, 1]
    d_map = {("Y", "X"): ONE}  # dX = Y
    brackets = {("X", "Y"): {"Z": ONE}}  # [X, Y] = Z

    basis = []
    for name, deg in zip(g_names, g_degrees):
        basis.append((f"a_{name}", deg - 1))
    for name, deg in zip(g_names, g_degrees):
        basis.append((f"b_{name}", 2 - deg))

    # Q on fields follows d; on antifields it is the transpose, with the sign
    # chosen below so that the evaluation kernel is Q-closed.
    for sign in (ONE, -ONE):
        diff = {}
        for (tgt, src), c in d_map.items():
            diff[(f"a_{tgt}", f"a_{src}")] = c
            diff[(f"b_{src}", f"b_{tgt}")] = sign * c
        space = DgSpace.build(basis, diff)
        kernel = Kernel2.build(
            space, 1, {(f"a_{n}", f"b_{n}"): ONE for n in g_names})
        if kernel.q_image().is_zero():
            break
    else:
        raise RuntimeError("no Q-closed evaluation kernel found")

    model = BvModel(space=space, kernel=kernel)
    data = {"g_names": g_names, "g_degrees": g_degrees,
            "d_map": d_map, "brackets": brackets}
    return model, data


def dgla_interaction(model: BvModel, data: dict, D: int, H: int) -> Functional:
    """Cubic interaction sum f^c_{xy} a^x a^y b_c of a dg Lie fixture.

    One term per unordered bracket pair; the shifted variables already carry
    the symmetry that the bracket's antisymmetry would otherwise supply.
    """
    sp = model.space
    raw = []
    for (x, y), out in data["brackets"].items():
        for z, c in out.items():
            ia, ib = sp.index(f"a_{x}"), sp.index(f"a_{y}")
            ic = sp.index(f"b_{z}")
            raw.append(((ia, ib, ic), 0, Fraction(c)))
    return Functional.make(sp, D, H, raw)


def sl2_dgla_model() -> tuple[BvModel, dict]:
    """Field-antifield BV model of sl2 (zero differential, Killing-type data).

    Unlike the nilpotent fixture, the classical master equation here vanishes
    only through genuine Jacobi cancellations among the bracket terms.
    """
    g_names = ["H", "E", "F"]
    g_degrees = [0, 0, 0]
    brackets = {("H", "E"): {"E": Fraction(2)},
                ("H", "F"): {"F": Fraction(-2)},
                ("E", "F"): {"H": ONE}}
    basis = [(f"a_{n}", -1) for n in g_names] + [(f"b_{n}", 2) for n in g_names]
    space = DgSpace.build(basis)
    kernel = Kernel2.build(space, 1,
                           {(f"a_{n}", f"b_{n}"): ONE for n in g_names})
    model = BvModel(space=space, kernel=kernel)
    data = {"g_names": g_names, "g_degrees": g_degrees,
            "d_map": {}, "brackets": brackets}
    return model, data


# ---------------------------------------------------------------------------
# random instances


def _random_fraction(rng: Random, small: bool = False) -> Fraction:
    num = rng.randint(-4, 4) if small else rng.randint(-6, 6)
    den = rng.choice([1, 1, 1, 2, 3])
    return Fraction(num if num else 1, den)


def random_space(rng: Random, dim: int | None = None) -> DgSpace:
    """Random graded space with a degree-homogeneous Q, Q^2 = 0.

    The differential pairs disjoint source/target slots, which forces Q^2 = 0
    structurally while exercising a mix of degrees.
    """
    n = dim if dim is not None else rng.randint(4, 6)
    degrees = sorted(rng.choice([-1, 0, 0, 0, 1, 1, 2]) for _ in range(n))
    names = tuple(f"v{i}" for i in range(n))
    diff = {}
    used: set[int] = set()
    candidates = [(i, j) for i in range(n) for j in range(n)
                  if i != j and degrees[i] == degrees[j] + 1]
    rng.shuffle(candidates)
    for i, j in candidates:
        if i in used or j in used:
            continue
        if rng.random() < 0.6:
            diff[(names[i], names[j])] = _random_fraction(rng, small=True)
            used.update((i, j))
    return DgSpace.build(list(zip(names, degrees)), diff)


def symmetric_pair_basis(space: DgSpace, degree: int) -> list[tuple[int, int]]:
    """Index pairs (i <= j) that can carry a graded-symmetric tensor entry."""
    out = []
    for i in range(space.dim):
        for j in range(i, space.dim):
            if space.degrees[i] + space.degrees[j] != degree:
                continue
            if i == j and space.degrees[i] % 2:
                continue
            out.append((i, j))
    return out


def _kernel_from_pairs(space: DgSpace, degree: int,
                       pairs: list[tuple[int, int]],
                       coeffs: list[Fraction]) -> Kernel2:
    n = space.dim
    mat = [[ZERO] * n for _ in range(n)]
    for (i, j), c in zip(pairs, coeffs):
        mat[i][j] += c
        if i != j:
            sym = -c if (space.degrees[i] * space.degrees[j]) % 2 else c
            mat[j][i] += sym
    return Kernel2(space, degree, tuple(tuple(r) for r in mat))


def random_q_closed_kernel(space: DgSpace, rng: Random) -> Kernel2 | None:
    """Random Q-closed degree-1 graded-symmetric kernel, or None if none exist.

    Solves Q(K) = 0 exactly on the space of symmetric tensors and draws a
    random rational combination of the solution basis.
    """
    pairs = symmetric_pair_basis(space, 1)
    if not pairs:
        return None
    rows: list[list[Fraction]] = []
    images = []
    for k, (i, j) in enumerate(pairs):
        coeffs = [ZERO] * len(pairs)
        coeffs[k] = ONE
        images.append(_kernel_from_pairs(space, 1, pairs, coeffs).q_image())
    out_pairs = [(i, j) for i in range(space.dim) for j in range(space.dim)]
    for i, j in out_pairs:
        rows.append([img.entries[i][j] for img in images])
    null = linalg.nullspace(rows, cols=len(pairs))
    if not null:
        return None
    combo = [ZERO] * len(pairs)
    for vec in null:
        c = _random_fraction(rng, small=True)
        combo = [a + c * b for a, b in zip(combo, vec)]
    kernel = _kernel_from_pairs(space, 1, pairs, combo)
    if kernel.is_zero():
        kernel = _kernel_from_pairs(space, 1, pairs, null[0])
    return None if kernel.is_zero() else kernel


def random_propagator(space: DgSpace, rng: Random,
                      sparsity: float = 0.7) -> Kernel2:
    """Random degree-0 graded-symmetric tensor."""
    pairs = symmetric_pair_basis(space, 0)
    coeffs = [_random_fraction(rng, small=True) if rng.random() < sparsity
              else ZERO for _ in pairs]
    return _kernel_from_pairs(space, 0, pairs, coeffs)


def random_bv_model(rng: Random, dim: int | None = None,
                    max_tries: int = 50) -> BvModel:
    """Random (V, Q, K) with Q(K) = 0 and K nonzero."""
    for _ in range(max_tries):
        space = random_space(rng, dim)
        kernel = random_q_closed_kernel(space, rng)
        if kernel is not None:
            return BvModel(space=space, kernel=kernel)
    raise RuntimeError("failed to draw a BV model")


def random_word(space: DgSpace, rng: Random, max_len: int) -> tuple[int, ...]:
    length = rng.randint(0, max_len)
    word = []
    for _ in range(length):
        word.append(rng.randrange(space.dim))
    return tuple(word)


def random_functional(space: DgSpace, rng: Random, D: int, H: int,
                      n_terms: int = 5) -> Functional:
    raw = []
    for _ in range(n_terms):
        raw.append((random_word(space, rng, D), rng.randint(0, H),
                    _random_fraction(rng)))
    return Functional.make(space, D, H, raw)


def random_plus_functional(space: DgSpace, rng: Random, D: int, H: int,
                           n_terms: int = 3,
                           variables: list[int] | None = None,
                           even_terms: bool = False,
                           min_degree: int = 3) -> Functional:
    """Random element of O^+(V): at least cubic modulo hbar.

    ``even_terms`` keeps every monomial at even internal degree (the graph
    expansion needs this); ``min_degree`` raises the floor on hbar^0 terms.
    """
    pool = variables if variables is not None else list(range(space.dim))
    raw = []
    attempts = 0
    while len(raw) < n_terms and attempts < 50 * n_terms:
        attempts += 1
        h = rng.choice([0, 0, 1, min(2, H)]) if H else 0
        lo = min_degree if h == 0 else 1
        hi = max(lo, min(D, lo + 2))
        length = rng.randint(lo, hi)
        word = tuple(rng.choice(pool) for _ in range(length))
        if even_terms and space.word_degree(word) % 2:
            continue
        raw.append((word, h, _random_fraction(rng, small=True)))
    f = Functional.make(space, D, H, raw)
    if f.is_zero():
        evens = [v for v in pool if not space.parity(v)] or pool
        word = tuple(rng.choice(evens) for _ in range(max(3, min_degree)))
        f = Functional.make(space, D, H, [(word, 0, ONE)])
    return f


def qme_solution_instance(rng: Random, D: int = 5, H: int = 2
                          ) -> tuple[BvModel, Functional]:
    """A BV model together with an exact solution of the quantum master
    equation.

    The space is assembled from contraction pairs (z, theta), Q-pairs
    (u -> w), and spectators; the interaction depends only on variables that
    Q kills and that the kernel never pairs among themselves, so each term of
    the residual vanishes identically.
    """
    n_pairs = rng.randint(1, 2)
    n_qpairs = rng.randint(0, 1)
    n_free = rng.randint(0, 1)
    basis = []
    diff = {}
    kernel_entries = {}
    iso_vars = []
    for i in range(n_pairs):
        basis.append((f"z{i}", 0))
        basis.append((f"th{i}", 1))
        kernel_entries[(f"z{i}", f"th{i}")] = ONE
        iso_vars.append(f"z{i}")
    for i in range(n_qpairs):
        basis.append((f"u{i}", 0))
        basis.append((f"w{i}", 1))
        diff[(f"w{i}", f"u{i}")] = _random_fraction(rng, small=True)
    for i in range(n_free):
        basis.append((f"s{i}", rng.choice([0, 2])))
    space = DgSpace.build(basis, diff)
    kernel = Kernel2.build(space, 1, kernel_entries)

    # add a random Q-exact piece; it keeps Q(K) = 0 and, because Q annihilates
    # the isolated variables, leaves the interaction a QME solution
    t_pairs = symmetric_pair_basis(space, 0)
    if t_pairs and rng.random() < 0.7:
        coeffs = [_random_fraction(rng, small=True) if rng.random() < 0.5
                  else ZERO for _ in t_pairs]
        extra = _kernel_from_pairs(space, 0, t_pairs, coeffs).q_image()
        iso_idx = [space.index(v) for v in iso_vars]
        ok = all(not extra.entries[i][j]
                 for i in iso_idx for j in iso_idx)
        if ok:
            kernel = kernel.add(extra)

    model = BvModel(space=space, kernel=kernel)
    pool = [space.index(v) for v in iso_vars]
    interaction = random_plus_functional(space, rng, D, H, variables=pool)
    return model, interaction
