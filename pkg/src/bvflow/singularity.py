"""Isolated-singularity workbench: Jacobian rings, Milnor numbers, and the
hbar-deformed observable complexes of a superpotential.

The ambient model is Q[z_1..z_n, theta_1..theta_n] with zero differential and
the second-order operator pairing each z with its theta.  The polynomial f
plays the interaction; its classical observables reproduce the Jacobian ring
and the hbar-deformed complex gives the truncated quantum observables.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations_with_replacement

from bvflow import linalg
from bvflow.bv import observables
from bvflow.graded import Functional
from bvflow.instances import superpotential_model

ZERO = Fraction(0)
ONE = Fraction(1)

Expo = tuple[int, ...]
Poly = dict[Expo, Fraction]


class IsolationError(ValueError):
    """The truncated Jacobian quotient keeps growing: no isolated singularity."""


@dataclass(frozen=True)
class Superpotential:
    """Polynomial with an isolated critical point at the origin."""

    n: int
    poly: tuple[tuple[Expo, Fraction], ...]
    degree_bound: int

    @staticmethod
    def make(n: int, terms: dict[Expo, Fraction] | list[tuple[Expo, Fraction]],
             degree_bound: int) -> "Superpotential":
        items = terms.items() if isinstance(terms, dict) else terms
        clean: Poly = {}
        for expo, c in items:
            if len(expo) != n:
                raise ValueError("exponent tuple arity mismatch")
            c = Fraction(c)
            if c:
                clean[expo] = clean.get(expo, ZERO) + c
        return Superpotential(n, tuple(sorted(clean.items())), degree_bound)

    def as_dict(self) -> Poly:
        return dict(self.poly)

    def max_degree(self) -> int:
        return max((sum(e) for e, _ in self.poly), default=0)


def parse_polynomial(text: str, n: int | None = None) -> Superpotential:
    """Parse '2*z1^3 + z2^2' style input with rational coefficients."""
    cleaned = text.replace("-", "+-").replace(" ", "")
    pieces = [p for p in cleaned.split("+") if p]
    terms: list[tuple[dict[int, int], Fraction]] = []
    max_var = 0
    for piece in pieces:
        coeff = ONE
        expos: dict[int, int] = {}
        for factor in piece.split("*"):
            if not factor:
                raise ValueError(f"empty factor in {piece!r}")
            if factor.startswith("-"):
                coeff = -coeff
                factor = factor[1:]
            if factor.startswith("z"):
                body = factor[1:]
                if "^" in body:
                    var_s, pow_s = body.split("^")
                    power = int(pow_s)
                else:
                    var_s, power = body, 1
                idx = int(var_s)
                if idx < 1:
                    raise ValueError("variables are z1, z2, ...")
                expos[idx - 1] = expos.get(idx - 1, 0) + power
                max_var = max(max_var, idx)
            else:
                coeff *= Fraction(factor)
        terms.append((expos, coeff))
    nvars = n if n is not None else max_var
    if nvars == 0:
        raise ValueError("no variables found")
    poly: Poly = {}
    for expos, coeff in terms:
        e = tuple(expos.get(i, 0) for i in range(nvars))
        poly[e] = poly.get(e, ZERO) + coeff
    bound = max((sum(e) for e in poly), default=0) + 5
    return Superpotential.make(nvars, poly, bound)


def _monomials_upto(n: int, d: int) -> list[Expo]:
    out: list[Expo] = []
    for total in range(d + 1):
        for combo in combinations_with_replacement(range(n), total):
            e = [0] * n
            for v in combo:
                e[v] += 1
            out.append(tuple(e))
    return sorted(set(out))


def _poly_partial(poly: Poly, var: int) -> Poly:
    out: Poly = {}
    for expo, c in poly.items():
        if expo[var]:
            e = list(expo)
            k = e[var]
            e[var] -= 1
            key = tuple(e)
            out[key] = out.get(key, ZERO) + k * c
    return {k: v for k, v in out.items() if v}


def _poly_shift(poly: Poly, shift: Expo) -> Poly:
    return {tuple(a + b for a, b in zip(expo, shift)): c
            for expo, c in poly.items()}


def _quotient_basis(n: int, partials: list[Poly], d: int
                    ) -> tuple[list[Expo], int]:
    """Monomial basis of Q[z]_{<=d} modulo degree-truncated partial multiples."""
    monos = _monomials_upto(n, d)
    index = {m: i for i, m in enumerate(monos)}
    rows: list[list[Fraction]] = []
    for p in partials:
        if not p:
            continue
        low = min(sum(e) for e in p)
        for shift in _monomials_upto(n, d - low):
            shifted = _poly_shift(p, shift)
            row = [ZERO] * len(monos)
            keep = False
            for expo, c in shifted.items():
                if sum(expo) <= d:
                    row[index[expo]] = c
                    keep = True
            if keep:
                rows.append(row)
    if not rows:
        return monos, len(monos)
    red, pivots = linalg.rref(rows)
    pivset = set(pivots)
    basis = [m for i, m in enumerate(monos) if i not in pivset]
    return basis, len(basis)


@dataclass
class JacobianReport:
    basis: list[Expo]
    milnor: int
    truncation: int

    def report(self) -> dict:
        return {"milnor": self.milnor, "truncation": self.truncation,
                "basis": [list(b) for b in self.basis]}


def jacobian_ring(f: Superpotential) -> JacobianReport:
    """Monomial basis and dimension of Q[z]/(partials of f) at stabilized
    truncation; the dimension is the Milnor number.

    Raises IsolationError when the quotient dimension has not stabilized
    between the degree bound and the bound plus one.
    """
    poly = f.as_dict()
    partials = [_poly_partial(poly, v) for v in range(f.n)]
    if any(not p for p in partials):
        raise IsolationError("a partial derivative vanishes identically")
    d = f.degree_bound
    basis, dim = _quotient_basis(f.n, partials, d)
    _, dim_next = _quotient_basis(f.n, partials, d + 1)
    if dim != dim_next:
        raise IsolationError(
            f"Jacobian quotient has not stabilized: dim {dim} at degree {d}, "
            f"{dim_next} at degree {d + 1}")
    return JacobianReport(basis=basis, milnor=dim, truncation=d)


def interaction_functional(f: Superpotential, D: int, H: int) -> Functional:
    """The superpotential as a functional on the (z, theta) model."""
    model = superpotential_model(f.n)
    raw = []
    for expo, c in f.poly:
        word = []
        for v, k in enumerate(expo):
            word.extend([v] * k)  # z-variables come first in the basis
        raw.append((tuple(word), 0, c))
    return Functional.make(model.space, D, H, raw)


def classical_observables_match(f: Superpotential) -> dict:
    """Cohomology of {f, -} on the (z, theta) model versus the Jacobian ring.

    Asserts concentration in degree 0 with dimension equal to the Milnor
    number and returns a comparison report (with a witness on mismatch).
    """
    jac = jacobian_ring(f)
    model = superpotential_model(f.n)
    D = f.degree_bound + f.n  # room for theta factors
    interaction = interaction_functional(f, D, 0)
    rep = observables(model, interaction, quantum=False)
    dims = rep.dims()
    matches = dims == {0: jac.milnor}
    return {
        "milnor": jac.milnor,
        "cohomology_dims": dims,
        "concentrated_degree_zero": set(dims) <= {0},
        "matches": matches,
        "witness": None if matches else rep.report(),
    }


def brieskorn_rank(f: Superpotential, H: int) -> dict:
    """Free rank over the truncated hbar-ring of the hbar-deformed complex.

    The differential is hbar*Delta + {f,-}; the free rank at degree zero is
    the truncated stand-in for the rank of the lattice of quantum
    observables, and equals the Milnor number.
    """
    jac = jacobian_ring(f)
    model = superpotential_model(f.n)
    D = f.degree_bound + f.n
    interaction = interaction_functional(f, D, H)
    rep = observables(model, interaction, quantum=True)
    free = rep.free_ranks()
    torsion = {r.degree: r.torsion for r in rep.per_degree if r.torsion}
    return {
        "milnor": jac.milnor,
        "H": H,
        "free_ranks": free,
        "torsion": torsion,
        "matches": free == {0: jac.milnor},
        "per_degree": rep.report()["per_degree"],
    }
