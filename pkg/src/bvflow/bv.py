"""BV operators, brackets, master-equation residuals, and observable complexes
on finite-dimensional models.

A model is a graded space with a Q-closed degree-1 kernel K; the BV operator
is contraction with K.  The bracket is the failure of the BV operator to be a
derivation, and master equations are checked as exact identities in the
truncated ring.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from bvflow import linalg
from bvflow.graded import (
    DgSpace,
    Functional,
    Kernel2,
    SpaceMismatch,
    apply_Q,
    contract,
    is_plus,
)

ZERO = Fraction(0)
ONE = Fraction(1)
HALF = Fraction(1, 2)


class MasterEquationFailure(Exception):
    """Raised when an operation requires a master equation that does not hold."""

    def __init__(self, message: str, residual: Functional):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class BvModel:
    """A differential BV algebra presented by (space, kernel, interaction)."""

    space: DgSpace
    kernel: Kernel2
    interaction: Optional[Functional] = None

    def __post_init__(self):
        if self.kernel.space != self.space:
            raise SpaceMismatch("kernel over a different space")
        if self.kernel.degree != 1:
            raise ValueError("BV kernel must have degree 1")
        if not self.kernel.q_image().is_zero():
            raise ValueError("BV kernel is not Q-closed")


@dataclass
class MasterResidual:
    """Classical and quantum master-equation residuals of an interaction."""

    classical_part: Functional
    quantum_part: Functional

    @property
    def classical_zero(self) -> bool:
        return self.classical_part.is_zero()

    @property
    def quantum_zero(self) -> bool:
        return self.quantum_part.is_zero()

    def report(self) -> dict:
        return {
            "classical_zero": self.classical_zero,
            "quantum_zero": self.quantum_zero,
            "classical_terms": str(self.classical_part),
            "quantum_terms": str(self.quantum_part),
        }


def bv_delta(model: BvModel, f: Functional) -> Functional:
    """The BV operator: contraction with the model kernel.  Degree +1."""
    return contract(model.kernel, f)


def retruncate(f: Functional, D: int, H: int) -> Functional:
    """The same functional carried at different cutoffs (terms beyond drop)."""
    return Functional.make(f.space, D, H,
                           ((mono, h, c) for mono, h, c in f.iter_terms()))


def bv_bracket(model: BvModel, a: Functional, b: Functional) -> Functional:
    """{a,b} = Delta(ab) - (Delta a) b - (-1)^|a| a (Delta b).

    Computed without intermediate truncation (the inputs are polynomials),
    then truncated to the shared cutoffs of the inputs.
    """
    a._check_compatible(b)
    D, H = a.D, a.H
    lift = a.max_poly_degree() + b.max_poly_degree()
    b_l = retruncate(b, lift, H)
    db_l = contract(model.kernel, b_l)
    out = Functional.zero(a.space, lift, H)
    for deg, a_g in retruncate(a, lift, H).graded_components().items():
        prod = a_g * b_l
        term = contract(model.kernel, prod) - contract(model.kernel, a_g) * b_l
        cross = a_g * db_l
        if deg % 2:
            cross = -cross
        out = out + term - cross
    return retruncate(out, D, H)


def cme_residual(model: BvModel, i0: Functional) -> Functional:
    """Classical master equation residual Q(I0) + (1/2){I0, I0}.

    The input must be hbar-independent.
    """
    if any(h != 0 for (_m, h) in i0.terms):
        raise ValueError("classical interaction must not depend on hbar")
    return apply_Q(i0) + bv_bracket(model, i0, i0).scale(HALF)


def _qme_residual_raw(model: BvModel, i: Functional) -> MasterResidual:
    residual = (apply_Q(i)
                + bv_delta(model, i).hbar_shift(1)
                + bv_bracket(model, i, i).scale(HALF))
    return MasterResidual(classical_part=residual.hbar_coefficient(0),
                          quantum_part=residual)


def qme_residual(model: BvModel, i: Functional) -> MasterResidual:
    """Quantum master equation residual Q(I) + hbar Delta(I) + (1/2){I, I}.

    The interaction must be at least cubic modulo hbar: that condition makes
    the exponential form of the equation (and the flows downstream) well
    posed.
    """
    if not is_plus(i):
        raise ValueError("interaction must be at least cubic modulo hbar")
    return _qme_residual_raw(model, i)


def check_axioms(model: BvModel, samples: int, rng) -> dict:
    """Verify Delta^2 = 0 and [Q, Delta] = 0 on random functionals, exactly."""
    from bvflow.instances import random_functional

    delta_sq_ok = True
    commutator_ok = True
    for _ in range(samples):
        f = random_functional(model.space, rng, D=5, H=2)
        d1 = bv_delta(model, f)
        if not bv_delta(model, d1).is_zero():
            delta_sq_ok = False
        # Q and Delta are both odd, so the graded commutator anticommutes
        comm = apply_Q(d1) + bv_delta(model, apply_Q(f))
        if not comm.is_zero():
            commutator_ok = False
    return {
        "kernel_q_closed": model.kernel.q_image().is_zero(),
        "delta_squared_zero": delta_sq_ok,
        "q_delta_commute": commutator_ok,
        "samples": samples,
    }


# ---------------------------------------------------------------------------
# observable complexes


@dataclass
class DegreeReport:
    degree: int
    dim_domain: int
    rank_d: int
    cohomology_dim: int
    free_rank: Optional[int] = None
    torsion: Optional[list[int]] = None


@dataclass
class ObservablesReport:
    quantum: bool
    D: int
    H: int
    per_degree: list[DegreeReport] = field(default_factory=list)

    def dims(self) -> dict[int, int]:
        return {r.degree: r.cohomology_dim for r in self.per_degree
                if r.cohomology_dim}

    def free_ranks(self) -> dict[int, int]:
        return {r.degree: r.free_rank for r in self.per_degree if r.free_rank}

    def total_dim(self) -> int:
        return sum(r.cohomology_dim for r in self.per_degree)

    def report(self) -> dict:
        out = {"quantum": self.quantum, "D": self.D, "H": self.H,
               "per_degree": []}
        for r in self.per_degree:
            entry = {"degree": r.degree, "dim_domain": r.dim_domain,
                     "rank": r.rank_d, "cohomology_dim": r.cohomology_dim}
            if self.quantum:
                entry["free_rank"] = r.free_rank
                entry["torsion"] = r.torsion
            out["per_degree"].append(entry)
        return out


def monomial_basis(space: DgSpace, max_deg: int) -> list[tuple[int, ...]]:
    """All canonical monomials of polynomial degree <= max_deg."""
    out: list[tuple[int, ...]] = [()]
    frontier: list[tuple[int, ...]] = [()]
    for _ in range(max_deg):
        nxt = []
        for mono in frontier:
            start = mono[-1] if mono else 0
            for v in range(start, space.dim):
                if mono and v == mono[-1] and space.parity(v):
                    continue
                nxt.append(mono + (v,))
        out.extend(nxt)
        frontier = nxt
    return out


def observables(model: BvModel, interaction: Functional,
                quantum: bool) -> ObservablesReport:
    """Cohomology of Q + {I0,-} (classical) or Q + hbar Delta + {I,-} (quantum)
    on the truncated monomial basis.

    Kernel vectors are computed against a larger codomain window so that
    truncation never creates spurious cycles at the top of the degree range;
    boundaries are intersected with the kernel inside that window.  Quantum
    cohomology is reported as an hbar-module (free rank, torsion exponents)
    read off from the Jordan structure of the nilpotent hbar action.
    """
    D, H = interaction.D, interaction.H
    if quantum:
        res = _qme_residual_raw(model, interaction)
        if not res.quantum_zero:
            raise MasterEquationFailure("quantum master equation fails",
                                        res.quantum_part)
    else:
        i0 = interaction.hbar_coefficient(0)
        res_c = cme_residual(model, i0)
        if not res_c.is_zero():
            raise MasterEquationFailure("classical master equation fails", res_c)
        interaction = i0

    sp = model.space
    grow = max(0, interaction.max_poly_degree() - 2)
    d_win = D + grow
    h_top = H if quantum else 0
    i_lift = retruncate(interaction, d_win, h_top)

    def differential(mono: tuple[int, ...], h: int) -> Functional:
        f = Functional.make(sp, d_win, h_top, [(mono, h, ONE)])
        out = apply_Q(f) + bv_bracket(model, i_lift, f)
        if quantum:
            out = out + bv_delta(model, f).hbar_shift(1)
        return out

    # basis keys per internal degree, for the domain (<= D) and window (<= d_win)
    dom_keys: dict[int, list[tuple[tuple[int, ...], int]]] = {}
    win_index: dict[int, dict[tuple[tuple[int, ...], int], int]] = {}
    for m in monomial_basis(sp, d_win):
        g = sp.word_degree(m)
        for h in range(h_top + 1):
            idx = win_index.setdefault(g, {})
            idx[(m, h)] = len(idx)
            if len(m) <= D:
                dom_keys.setdefault(g, []).append((m, h))

    image_cache: dict[tuple, Functional] = {}

    def image_of(key: tuple[tuple[int, ...], int]) -> Functional:
        if key not in image_cache:
            image_cache[key] = differential(*key)
        return image_cache[key]

    def window_vector(f: Functional, g: int) -> list[Fraction]:
        idx = win_index.get(g, {})
        vec = [ZERO] * len(idx)
        for m2, h2, c in f.iter_terms():
            vec[idx[(m2, h2)]] = c
        return vec

    reports: list[DegreeReport] = []
    for g in sorted(dom_keys):
        dom = dom_keys[g]
        n_dom = len(dom)
        cod_idx = win_index.get(g + 1, {})
        mat = [[ZERO] * n_dom for _ in range(len(cod_idx))]
        for col, key in enumerate(dom):
            for m2, h2, c in image_of(key).iter_terms():
                mat[cod_idx[(m2, h2)]][col] = c
        kernel_dom = linalg.nullspace(mat, cols=n_dom)
        rank_d = n_dom - len(kernel_dom)

        # embed kernel vectors into window coordinates at degree g
        g_idx = win_index.get(g, {})
        dim_win = len(g_idx)
        embed = [g_idx[key] for key in dom]
        kernel_win: list[list[Fraction]] = []
        for v in kernel_dom:
            w = [ZERO] * dim_win
            for j, c in enumerate(v):
                if c:
                    w[embed[j]] = c
            kernel_win.append(w)

        boundaries = [window_vector(image_of(key), g)
                      for key in dom_keys.get(g - 1, [])]
        ker_cap_im = _intersection_basis(kernel_win, boundaries, dim_win)
        coh_dim = len(kernel_win) - len(ker_cap_im)

        rep = DegreeReport(degree=g, dim_domain=n_dom, rank_d=rank_d,
                           cohomology_dim=coh_dim)
        if quantum:
            if coh_dim:
                rep.free_rank, rep.torsion = _hbar_module_structure(
                    win_index[g], kernel_win, ker_cap_im, H)
            else:
                rep.free_rank, rep.torsion = 0, []
        reports.append(rep)

    return ObservablesReport(quantum=quantum, D=D, H=H, per_degree=reports)


def _intersection_basis(a: list[list[Fraction]], b: list[list[Fraction]],
                        dim: int) -> list[list[Fraction]]:
    """Basis of span(a) cap span(b)."""
    if not a or not b:
        return []
    joint = [[(a[j][i]) for j in range(len(a))] +
             [-(b[j][i]) for j in range(len(b))] for i in range(dim)]
    ech = linalg.Echelon()
    out: list[list[Fraction]] = []
    for comb in linalg.nullspace(joint, cols=len(a) + len(b)):
        vec = [ZERO] * dim
        for j in range(len(a)):
            if comb[j]:
                for i in range(dim):
                    vec[i] += comb[j] * a[j][i]
        if any(vec) and ech.add(vec):
            out.append(vec)
    return out


def _hbar_module_structure(g_idx: dict[tuple, int],
                           kernel: list[list[Fraction]],
                           ker_cap_im: list[list[Fraction]],
                           H: int) -> tuple[int, list[int]]:
    """Free rank and torsion exponents of the hbar action on ker/(ker cap im).

    Multiplication by hbar is nilpotent on the truncated ring; a Jordan block
    of size H+1 on the cohomology corresponds to a free summand, smaller
    blocks to torsion hbar^a summands.
    """
    n = len(g_idx)
    keys = [None] * n
    for key, i in g_idx.items():
        keys[i] = key

    def hbar_action(vec: list[Fraction]) -> list[Fraction]:
        out = [ZERO] * n
        for i, c in enumerate(vec):
            if not c:
                continue
            mono, h = keys[i]
            j = g_idx.get((mono, h + 1))
            if j is not None:
                out[j] += c
        return out

    ech = linalg.Echelon(ker_cap_im)
    reps: list[list[Fraction]] = []
    for v in kernel:
        if ech.add(v):
            reps.append(v)
    if not reps:
        return 0, []

    basis = reps + ker_cap_im
    basis_mat = linalg.stack_columns(basis, n)
    all_coords = linalg.solve_many(basis_mat, [hbar_action(r) for r in reps])
    nil = [[ZERO] * len(reps) for _ in range(len(reps))]
    for j, coords in enumerate(all_coords):
        if coords is None:
            raise RuntimeError("hbar action does not preserve the cycle space")
        for i in range(len(reps)):
            nil[i][j] = coords[i]
    sizes = linalg.nilpotent_block_sizes(nil)
    free = sum(1 for s in sizes if s == H + 1)
    torsion = [s for s in sizes if s < H + 1]
    return free, torsion
