"""Homotopic renormalization-group flow.

Three independent evaluations of the flow W(P, I), defined by
exp(W(P,I)/hbar) = exp(hbar d_P) exp(I/hbar):

* ``exp_contract`` expands the operator exponential literally, with hbar
  temporarily allowed negative powers, and takes hbar*log at the end.
* ``graph_sum`` sums hbar^{g} W_Gamma / |Aut(Gamma)| over isomorphism classes
  of connected multigraphs whose vertices are the monomial terms of I.
* ``flow_ode`` integrates dI/dt = hbar d_P I + (1/2) Gamma_P(I, I) from t=0
  to 1; it never leaves nonnegative hbar powers and is the fast path for
  large spaces.

Their exact agreement on random instances is the module's central test: it
pins every symmetry factor.

Truncation windows use the weight chi = (polynomial degree) + 2*(hbar power),
which hbar*d_P preserves and products add.  Interactions that are at least
cubic modulo hbar satisfy 3*hbar + degree >= 0 termwise, and both bounds are
stable along the computation, which makes the windows loss-free for the
requested output cutoffs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from math import factorial
from typing import Iterable, Iterator

from bvflow.bv import BvModel, MasterEquationFailure, MasterResidual, \
    qme_residual, retruncate
from bvflow.graded import (
    DgSpace,
    Functional,
    Kernel2,
    SpaceMismatch,
    apply_Q,
    contract,
    is_plus,
    pair_sign,
)

ZERO = Fraction(0)
ONE = Fraction(1)
HALF = Fraction(1, 2)

Word = tuple[int, ...]
XTerms = dict[tuple[Word, int], Fraction]  # hbar power may be negative


class InternalConsistencyError(RuntimeError):
    """A cancellation guaranteed by theory failed; signals a bug."""


# ---------------------------------------------------------------------------
# raw-dictionary series helpers (internal; hbar powers may be negative)


def _xadd(acc: XTerms, key, c: Fraction) -> None:
    val = acc.get(key, ZERO) + c
    if val:
        acc[key] = val
    else:
        acc.pop(key, None)


def _window_ok(mono: Word, h: int, chi_cap: int) -> bool:
    d = len(mono)
    return d + 2 * h <= chi_cap and 3 * h + d >= 0


def _xmul(sp: DgSpace, a: XTerms, b: XTerms, chi_cap: int,
          d_cap: int | None = None) -> XTerms:
    out: XTerms = {}
    for (ma, ha), ca in a.items():
        for (mb, hb), cb in b.items():
            h = ha + hb
            d = len(ma) + len(mb)
            if d + 2 * h > chi_cap or (d_cap is not None and d > d_cap):
                continue
            mono, sign = sp.normalize_word(ma + mb)
            if mono is None:
                continue
            _xadd(out, (mono, h), sign * ca * cb)
    return out


def _xcontract(sp: DgSpace, kernel: Kernel2, a: XTerms) -> XTerms:
    """hbar * d_P applied to a raw series: contract and shift hbar by one."""
    ent = kernel.entries
    out: XTerms = {}
    for (mono, h), c in a.items():
        n = len(mono)
        for s in range(n):
            for t in range(s + 1, n):
                val = ent[mono[s]][mono[t]]
                if not val:
                    continue
                sign = pair_sign(sp, mono, s, t)
                new = mono[:s] + mono[s + 1:t] + mono[t + 1:]
                _xadd(out, (new, h + 1), sign * val * c)
    return out


def _strip_constants(i: Functional) -> tuple[list[tuple[int, Fraction]], XTerms]:
    """Split off variable-free terms; they ride through the flow unchanged."""
    consts = []
    rest: XTerms = {}
    for mono, h, c in i.iter_terms():
        if mono:
            rest[(mono, h)] = c
        else:
            consts.append((h, c))
    return consts, rest


# ---------------------------------------------------------------------------
# operator-exponential route


def exp_contract(kernel: Kernel2, interaction: Functional,
                 D: int, H: int) -> Functional:
    """W(P, I) by expanding exp(hbar d_P) exp(I/hbar) and taking hbar*log.

    The input must be at least cubic modulo hbar; this guarantees that every
    negative hbar power cancels, which is asserted at runtime.  The result is
    exact on the requested (D, H) window given the stored terms of I.
    """
    if kernel.space != interaction.space:
        raise SpaceMismatch("kernel and interaction over different spaces")
    if kernel.degree != 0:
        raise ValueError("flow kernel must have degree 0")
    if not is_plus(interaction):
        raise ValueError("interaction must be at least cubic modulo hbar")
    sp = interaction.space
    consts, core = _strip_constants(interaction)
    chi_log = D + 2 * H - 2  # window for everything before the final hbar

    # exp(I/hbar): iterate multiplication by I/hbar
    i_over_h: XTerms = {(m, h - 1): c for (m, h), c in core.items()}
    unit: XTerms = {((), 0): ONE}
    expo = dict(unit)
    power = dict(unit)
    k = 0
    while power:
        k += 1
        power = _xmul(sp, power, i_over_h, chi_log)
        scaled = {key: c / factorial(k) for key, c in power.items()}
        for key, c in scaled.items():
            _xadd(expo, key, c)
        if k > 4 * (chi_log + 2) + 8:
            raise InternalConsistencyError("exponential series did not terminate")

    # exp(hbar d_P)
    flowed = dict(expo)
    layer = expo
    j = 0
    while layer:
        j += 1
        nxt = _xcontract(sp, kernel, layer)
        layer = {key: c / j for key, c in nxt.items()
                 if _window_ok(key[0], key[1], chi_log)}
        for key, c in layer.items():
            _xadd(flowed, key, c)
        if j > 4 * (chi_log + 2) + 8:
            raise InternalConsistencyError("contraction series did not terminate")

    # hbar * log(F): restrict to degree <= D first (factors add degrees)
    x_terms: XTerms = {key: c for key, c in flowed.items()
                       if key != ((), 0) and len(key[0]) <= D}
    if flowed.get(((), 0), ZERO) != ONE:
        raise InternalConsistencyError("flowed series has no unit leading term")
    log_acc: XTerms = {}
    power = dict(x_terms)
    m = 1
    while power:
        sign = ONE if m % 2 else -ONE
        for key, c in power.items():
            _xadd(log_acc, key, sign * c / m)
        power = _xmul(sp, power, x_terms, chi_log, d_cap=D)
        m += 1
        if m > chi_log + 2:
            raise InternalConsistencyError("log series did not terminate")

    raw = []
    for (mono, h), c in log_acc.items():
        hh = h + 1
        if hh < 0 and len(mono) <= D:
            raise InternalConsistencyError(
                f"negative hbar power hbar^{hh} survived truncation")
        if 0 <= hh <= H and len(mono) <= D:
            raw.append((mono, hh, c))
    for h, c in consts:
        if h <= H:
            raw.append(((), h, c))
    out = Functional.make(sp, D, H, raw)
    if not is_plus(out):
        raise InternalConsistencyError("flow left the at-least-cubic subspace")
    return out


# ---------------------------------------------------------------------------
# flow ODE route (fast path; stays in nonnegative hbar powers)


def gamma_bracket(kernel: Kernel2, a: Functional, b: Functional) -> Functional:
    """Failure of the degree-0 contraction to be a derivation on a*b."""
    prod = a * b
    return contract(kernel, prod) - contract(kernel, a) * b \
        - a * contract(kernel, b)


def flow_ode(kernel: Kernel2, interaction: Functional,
             D: int, H: int) -> Functional:
    """W(P, I) by integrating dI/dt = hbar d_P I + (1/2) Gamma_P(I, I).

    Equivalent to exp_contract; preferred for large spaces because every
    intermediate is a genuine functional with nonnegative hbar powers.
    """
    if kernel.space != interaction.space:
        raise SpaceMismatch("kernel and interaction over different spaces")
    if kernel.degree != 0:
        raise ValueError("flow kernel must have degree 0")
    if not is_plus(interaction):
        raise ValueError("interaction must be at least cubic modulo hbar")
    sp = interaction.space
    chi_cap = D + 2 * H
    d_int = chi_cap + 2  # headroom for products before contraction

    def prune(f: Functional) -> Functional:
        terms = {(m, h): c for (m, h), c in f.terms.items()
                 if len(m) + 2 * h <= chi_cap}
        return Functional(sp, d_int, H, terms)

    orders = [prune(retruncate(interaction, d_int, H))]
    total = orders[0]
    m = 0
    while not orders[m].is_zero():
        rhs = contract(kernel, orders[m]).hbar_shift(1)
        for a in range(m + 1):
            b = m - a
            rhs = rhs + gamma_bracket(kernel, orders[a], orders[b]).scale(HALF)
        nxt = prune(rhs.scale(Fraction(1, m + 1)))
        orders.append(nxt)
        total = total + nxt
        m += 1
        if m > 2 * chi_cap + 8:
            raise InternalConsistencyError("flow expansion did not terminate")
    return retruncate(total, D, H)


# ---------------------------------------------------------------------------
# graph enumeration


@dataclass(frozen=True)
class FeynGraph:
    """Connected multigraph with tagged vertices.

    ``edges`` maps index pairs (i <= j) to multiplicities; self-loops allowed.
    Tags distinguish vertex species: interaction terms for the flow, bare
    valences for standalone enumeration.
    """

    tags: tuple
    edges: tuple[tuple[tuple[int, int], int], ...]

    @property
    def n_vertices(self) -> int:
        return len(self.tags)

    @property
    def n_edges(self) -> int:
        return sum(m for _, m in self.edges)

    @property
    def genus(self) -> int:
        return self.n_edges - self.n_vertices + 1

    def valence(self, v: int) -> int:
        out = 0
        for (i, j), m in self.edges:
            if i == v:
                out += m
            if j == v:
                out += m
        return out

    def is_connected(self) -> bool:
        n = self.n_vertices
        if n == 1:
            return True
        adj = {i: set() for i in range(n)}
        for (i, j), _m in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        seen = {0}
        stack = [0]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == n


@dataclass
class GraphWeight:
    graph: FeynGraph
    aut: int
    value: Functional


def _edge_dict(graph: FeynGraph) -> dict[tuple[int, int], int]:
    return {pair: m for pair, m in graph.edges}


def _refined_classes(tags: tuple, edges: dict[tuple[int, int], int]
                     ) -> list[list[int]]:
    """Vertex classes stable under color refinement; automorphisms preserve
    them, so canonical forms and stabilizer counts may search within them."""
    n = len(tags)
    tag_rank = {t: r for r, t in enumerate(sorted(set(tags)))}
    colors = {v: tag_rank[tags[v]] for v in range(n)}
    for _ in range(n):
        sigs = {}
        for v in range(n):
            inc = []
            for (i, j), m in edges.items():
                if i == j == v:
                    inc.append((-1, m))  # self-loop marker
                elif i == v:
                    inc.append((colors[j], m))
                elif j == v:
                    inc.append((colors[i], m))
            sigs[v] = (colors[v], tuple(sorted(inc)))
        ranking = {s: r for r, s in enumerate(sorted(set(sigs.values())))}
        new_colors = {v: ranking[sigs[v]] for v in range(n)}
        if len(set(new_colors.values())) == len(set(colors.values())):
            colors = new_colors
            break
        colors = new_colors
    classes: dict[int, list[int]] = {}
    for v in range(n):
        classes.setdefault(colors[v], []).append(v)
    return [classes[c] for c in sorted(classes)]


def _canonical_and_vaut(tags: tuple, edges: dict[tuple[int, int], int]
                        ) -> tuple[tuple, int]:
    """Canonical edge key under tag-preserving relabelings, and the number of
    vertex permutations fixing the graph.

    Vertices are relabeled into consecutive slots ordered by refined color
    class (refinement respects tags, so the tag sequence is preserved); the
    key is the minimum over all within-class orderings.  Every ordering
    attaining the minimum corresponds to one automorphism.
    """
    n = len(tags)
    classes = _refined_classes(tags, edges)
    offsets = []
    off = 0
    for c in classes:
        offsets.append(off)
        off += len(c)
    best = None
    count_best = 0
    for combo in itertools.product(*[itertools.permutations(c)
                                     for c in classes]):
        perm = [0] * n
        for members, offset in zip(combo, offsets):
            for k, v in enumerate(members):
                perm[v] = offset + k
        relabeled = []
        for (i, j), m in edges.items():
            a, b = perm[i], perm[j]
            if a > b:
                a, b = b, a
            relabeled.append(((a, b), m))
        key = tuple(sorted(relabeled))
        if best is None or key < best:
            best = key
            count_best = 1
        elif key == best:
            count_best += 1
    return best, count_best


def automorphism_count(graph: FeynGraph) -> int:
    """|Aut| = (tag-preserving vertex symmetries) x (edge permutations).

    Parallel edges contribute m!, each self-loop class m! * 2^m for the end
    swaps.
    """
    edges = _edge_dict(graph)
    _key, vaut = _canonical_and_vaut(graph.tags, edges)
    count = vaut
    for (i, j), m in edges.items():
        count *= factorial(m)
        if i == j:
            count *= 2 ** m
    return count


def _edge_multisets(tags: tuple, capacities: list[int], e_total: int,
                    pairs: list[tuple[int, int]]
                    ) -> Iterator[dict[tuple[int, int], int]]:
    """Edge-multiplicity assignments over the allowed pairs with the given
    total and per-vertex valences bounded by the capacities.

    Generates vertex by vertex with symmetry breaking: within a tag class the
    per-vertex (valence, loops) sequences are non-increasing, no vertex is
    left isolated, and capacity lookahead prunes branches that cannot reach
    the requested edge count.  Every isomorphism class keeps at least one
    representative.
    """
    n = len(capacities)
    cols = [[j for (i, j) in pairs if i == v] for v in range(n)]
    suffix_cap = [0] * (n + 1)
    for v in range(n - 1, -1, -1):
        suffix_cap[v] = suffix_cap[v + 1] + capacities[v]

    used = [0] * n
    deg = [0] * n
    loops = [0] * n
    chosen: dict[tuple[int, int], int] = {}

    def vertex_done_ok(v: int) -> bool:
        if n > 1 and deg[v] == 0:
            return False
        if v and tags[v] == tags[v - 1] and \
                (deg[v], loops[v]) > (deg[v - 1], loops[v - 1]):
            return False
        return True

    def rec_vertex(v: int, e_left: int):
        if v == n:
            if e_left == 0:
                yield dict(chosen)
            return
        future = (suffix_cap[v + 1] - sum(used[u] for u in range(v + 1, n))) // 2

        def rec_cols(ci: int, e_rem: int):
            if ci == len(cols[v]):
                if e_rem <= future and vertex_done_ok(v):
                    yield from rec_vertex(v + 1, e_rem)
                return
            j = cols[v][ci]
            if j == v:
                m_max = min((capacities[v] - used[v]) // 2, e_rem)
            else:
                m_max = min(capacities[v] - used[v],
                            capacities[j] - used[j], e_rem)
            for m in range(m_max, -1, -1):
                if m:
                    chosen[(v, j)] = m
                    if j == v:
                        used[v] += 2 * m
                        deg[v] += 2 * m
                        loops[v] += m
                    else:
                        used[v] += m
                        used[j] += m
                        deg[v] += m
                        deg[j] += m
                yield from rec_cols(ci + 1, e_rem - m)
                if m:
                    del chosen[(v, j)]
                    if j == v:
                        used[v] -= 2 * m
                        deg[v] -= 2 * m
                        loops[v] -= m
                    else:
                        used[v] -= m
                        used[j] -= m
                        deg[v] -= m
                        deg[j] -= m

        yield from rec_cols(0, e_left)

    yield from rec_vertex(0, e_total)


_GRAPH_CACHE: dict[tuple, list["FeynGraph"]] = {}


def connected_multigraphs(tags: tuple, capacities: list[int], e_total: int,
                          feasible: frozenset[tuple[int, int]] | None = None
                          ) -> list[FeynGraph]:
    """Isomorphism classes of connected multigraphs with e_total edges.

    ``feasible`` restricts which vertex pairs may carry edges (pairs whose
    kernel block vanishes can be excluded up front).  Results are cached.
    """
    n = len(tags)
    all_pairs = [(i, j) for i in range(n) for j in range(i, n)]
    pairs = [p for p in all_pairs if feasible is None or p in feasible]
    key = (tags, tuple(capacities), e_total, tuple(pairs))
    cached = _GRAPH_CACHE.get(key)
    if cached is not None:
        return cached
    seen = {}
    for edges in _edge_multisets(tags, capacities, e_total, pairs):
        g = FeynGraph(tags, tuple(sorted(edges.items())))
        if not g.is_connected():
            continue
        canon, _vaut = _canonical_and_vaut(tags, edges)
        if canon not in seen:
            seen[canon] = FeynGraph(tags, canon)
    out = [seen[k] for k in sorted(seen)]
    _GRAPH_CACHE[key] = out
    return out


def enumerate_graphs(vertex_budget: int, genus_max: int,
                     valences: Iterable[int]) -> list[GraphWeight]:
    """Connected multigraphs with at least one edge, at most vertex_budget
    vertices drawn from the allowed valences, and genus <= genus_max.

    Unused vertex slots are external legs; the lone edgeless vertex is not
    listed.  Returns one representative per isomorphism class with its exact
    automorphism count (value is left empty).
    """
    allowed = sorted(set(valences))
    out: list[GraphWeight] = []
    for k in range(1, vertex_budget + 1):
        for tags in itertools.combinations_with_replacement(allowed, k):
            caps = list(tags)
            e_min = max(1, k - 1)
            e_max = k - 1 + genus_max
            for e_total in range(e_min, e_max + 1):
                for g in connected_multigraphs(tags, caps, e_total):
                    if g.genus <= genus_max:
                        out.append(GraphWeight(
                            graph=g, aut=automorphism_count(g), value=None))
    return out


# ---------------------------------------------------------------------------
# graph-sum route


def _distinct_slots(word: Word, owners: tuple[int, ...], vertex: int
                    ) -> list[tuple[int, int, int]]:
    """(variable, first position, multiplicity) for one vertex's slots.

    Repeated slots of an even variable are interchangeable: moving an even
    factor to the front costs no sign, so one representative position with a
    multiplicity factor is exact.  Odd variables never repeat in a nonzero
    word.
    """
    by_var: dict[int, tuple[int, int]] = {}
    for pos, (v, o) in enumerate(zip(word, owners)):
        if o != vertex:
            continue
        if v in by_var:
            first, cnt = by_var[v]
            by_var[v] = (first, cnt + 1)
        else:
            by_var[v] = (pos, 1)
    return [(v, first, cnt) for v, (first, cnt) in sorted(by_var.items())]


def _graph_value(sp: DgSpace, kernel: Kernel2, graph: FeynGraph,
                 vertex_words: list[Word]) -> XTerms:
    """Sum over all attachments of edge ends to vertex slots.

    Edges are processed as distinguishable and self-loop ends as ordered;
    the corresponding overcount is exactly |Aut|'s edge factor.  Vertices are
    tensor factors: a configuration may survive even when the plain product
    of the vertex monomials vanishes by an odd square, because the leftover
    slots are only multiplied out after all contractions.
    """
    ent = kernel.entries
    edge_list: list[tuple[int, int]] = []
    for (i, j), m in graph.edges:
        edge_list.extend([(i, j)] * m)

    word0 = tuple(v for w in vertex_words for v in w)
    owners0 = tuple(k for k, w in enumerate(vertex_words) for _ in w)

    memo: dict[tuple, XTerms] = {}

    def rec(word: Word, owners: tuple[int, ...], e_idx: int) -> XTerms:
        key = (word, owners, e_idx)
        hit = memo.get(key)
        if hit is not None:
            return hit
        out: XTerms = {}
        if e_idx == len(edge_list):
            mono, sign = sp.normalize_word(word)
            if mono is not None:
                out[(mono, 0)] = Fraction(sign)
            memo[key] = out
            return out
        vi, vj = edge_list[e_idx]
        choices: list[tuple[int, int, Fraction]] = []
        if vi != vj:
            for a, s, cnt_a in _distinct_slots(word, owners, vi):
                for b, t, cnt_b in _distinct_slots(word, owners, vj):
                    val = ent[a][b]
                    if val:
                        choices.append((s, t, val * cnt_a * cnt_b))
        else:
            slots = _distinct_slots(word, owners, vi)
            for x in range(len(slots)):
                a, s, cnt_a = slots[x]
                for y in range(x, len(slots)):
                    b, t, cnt_b = slots[y]
                    val = ent[a][b]
                    if not val:
                        continue
                    if x == y:
                        ways = cnt_a * (cnt_a - 1)  # ordered ends, same variable
                        if not ways:
                            continue
                        # second occurrence of the variable at this vertex
                        t = next(p for p in range(s + 1, len(word))
                                 if word[p] == a and owners[p] == vi)
                    else:
                        ways = 2 * cnt_a * cnt_b  # ordered ends
                    choices.append((s, t, val * ways))
        for s, t, factor in choices:
            sign = pair_sign(sp, word, s, t)
            new_word = word[:s] + word[s + 1:t] + word[t + 1:]
            new_owners = owners[:s] + owners[s + 1:t] + owners[t + 1:]
            sub = rec(new_word, new_owners, e_idx + 1)
            f = factor * sign
            for k2, c2 in sub.items():
                _xadd(out, k2, f * c2)
        memo[key] = out
        return out

    return rec(word0, owners0, 0)


def graph_sum(kernel: Kernel2, interaction: Functional, D: int, H: int,
              collect: list[GraphWeight] | None = None) -> Functional:
    """W(P, I) as the connected-graph sum hbar^{g} W_Gamma / |Aut Gamma|.

    Vertices are tagged by the individual monomial terms of I; the hbar
    power of a graph is its genus plus the explicit hbar carried by its
    vertices.  Byte-equal to exp_contract on the shared window.

    Every term of I must have even internal degree: odd terms anticommute,
    so distinct odd vertex species cancel out of the operator exponential in
    a way the unordered-multiset combinatorics cannot represent.  (Master
    equations concern degree-0 interactions, which always qualify.)
    """
    if kernel.space != interaction.space:
        raise SpaceMismatch("kernel and interaction over different spaces")
    if kernel.degree != 0:
        raise ValueError("flow kernel must have degree 0")
    if not is_plus(interaction):
        raise ValueError("interaction must be at least cubic modulo hbar")
    for mono, _h, _c in interaction.iter_terms():
        if interaction.space.word_degree(mono) % 2:
            raise ValueError(
                "graph expansion requires termwise-even interactions")
    sp = interaction.space
    consts, core = _strip_constants(interaction)
    types = sorted(core.items())  # [((mono, h), coeff)]
    budget = D + 2 * H - 2  # sum over vertices of (deg + 2h - 2)

    # vertex-type pairs whose kernel block vanishes can never carry an edge
    ent = kernel.entries
    n_types = len(types)
    type_feasible = [[False] * n_types for _ in range(n_types)]
    for a in range(n_types):
        for b in range(a, n_types):
            ma, mb = types[a][0][0], types[b][0][0]
            ok = any(ent[u][v] for u in set(ma) for v in set(mb))
            if a == b:
                within = any(ent[u][v] for u in set(ma) for v in set(ma))
                type_feasible[a][a] = within
            else:
                type_feasible[a][b] = type_feasible[b][a] = ok

    acc: XTerms = {}

    def handle_multiset(counts: list[int]):
        words: list[Word] = []
        tags: list = []
        coeff = ONE
        hbar_v = 0
        for t_idx, mult in enumerate(counts):
            (mono, h), c = types[t_idx]
            for _ in range(mult):
                words.append(mono)
                tags.append(t_idx)
                coeff *= c
                hbar_v += h
        k = len(words)
        total_slots = sum(len(w) for w in words)
        e_lo = max(0 if k == 1 else k - 1, -(-max(total_slots - D, 0) // 2))
        e_hi = min(total_slots // 2, H - hbar_v + k - 1)
        if e_lo > e_hi:
            return
        feasible = frozenset(
            (i, j) for i in range(k) for j in range(i, k)
            if type_feasible[tags[i]][tags[j]])
        for e_total in range(e_lo, e_hi + 1):
            h_total = hbar_v + e_total - k + 1
            if h_total > H or h_total < 0:
                continue
            for g in connected_multigraphs(tuple(tags),
                                           [len(w) for w in words], e_total,
                                           feasible):
                aut = automorphism_count(g)
                value = _graph_value(sp, kernel, g, words)
                if collect is not None:
                    gw_terms = [(m, h_total, c * coeff / aut)
                                for (m, _z), c in value.items()]
                    collect.append(GraphWeight(
                        graph=g, aut=aut,
                        value=Functional.make(sp, D, H, gw_terms)))
                for (m, _zero), c in value.items():
                    if len(m) <= D:
                        _xadd(acc, (m, h_total), c * coeff / aut)

    def rec_multiset(t_idx: int, counts: list[int], chi_used: int):
        if t_idx == len(types):
            if any(counts):
                handle_multiset(counts)
            return
        (mono, h), _c = types[t_idx]
        chi_v = len(mono) + 2 * h - 2
        m = 0
        while chi_used + m * chi_v <= budget:
            rec_multiset(t_idx + 1, counts + [m], chi_used + m * chi_v)
            m += 1
            if chi_v == 0:
                # degree+2h == 2 cannot occur for O^+ terms with variables:
                # h=0 needs deg>=3, h>=1 gives chi_v >= 1
                raise InternalConsistencyError("zero-weight vertex type")

    rec_multiset(0, [], 0)

    raw = [(m, h, c) for (m, h), c in acc.items()]
    for h, c in consts:
        if h <= H:
            raw.append(((), h, c))
    return Functional.make(sp, D, H, raw)


# ---------------------------------------------------------------------------
# intertwining and transport


def shifted_kernel(model: BvModel, propagator: Kernel2) -> Kernel2:
    """K_P = K + Q(P), the kernel homologous to K along P."""
    return model.kernel.add(propagator.q_image())


def exp_dP(kernel: Kernel2, f: Functional) -> Functional:
    """exp(hbar d_P) as a truncated operator on functionals."""
    total = f
    layer = f
    j = 0
    while not layer.is_zero():
        j += 1
        layer = contract(kernel, layer).hbar_shift(1).scale(Fraction(1, j))
        total = total + layer
        if j > f.D + 2 * f.H + 8:
            raise InternalConsistencyError("exp(hbar d_P) did not terminate")
    return total


def check_intertwine(model: BvModel, propagator: Kernel2, samples: int,
                     rng, D: int = 5, H: int = 2) -> dict:
    """Exact check of (Q + hbar Delta_{K_P}) e^{hbar d_P} = e^{hbar d_P}
    (Q + hbar Delta_K) on random functionals."""
    from bvflow.instances import random_functional

    k_p = shifted_kernel(model, propagator)
    deviations = 0
    witness = None
    for _ in range(samples):
        f = random_functional(model.space, rng, D, H)
        ef = exp_dP(propagator, f)
        lhs = apply_Q(ef) + contract(k_p, ef).hbar_shift(1)
        qf = apply_Q(f) + contract(model.kernel, f).hbar_shift(1)
        rhs = exp_dP(propagator, qf)
        diff = lhs - rhs
        if not diff.is_zero():
            deviations += 1
            if witness is None:
                witness = str(diff)
    return {"samples": samples, "deviations": deviations, "witness": witness}


def transport_qme(model: BvModel, propagator: Kernel2, interaction: Functional,
                  method: str = "exp") -> tuple[Functional, MasterResidual]:
    """Flow a QME solution to the homologous kernel K + Q(P) and re-check.

    The flow is evaluated on a degree window two larger than the
    interaction's, so the returned residual is exact on the stated (D, H)
    window.  Refuses interactions that fail the QME.
    """
    res_in = qme_residual(model, interaction)
    if not res_in.quantum_zero:
        raise MasterEquationFailure("input does not solve the QME",
                                    res_in.quantum_part)
    D, H = interaction.D, interaction.H
    runner = {"exp": exp_contract, "ode": flow_ode, "graph": graph_sum}[method]
    flowed_big = runner(propagator, retruncate(interaction, D + 2, H),
                        D + 2, H)
    shifted = BvModel(space=model.space, kernel=shifted_kernel(model, propagator))
    res_big = qme_residual(shifted, flowed_big)
    flowed = retruncate(flowed_big, D, H)
    residual = MasterResidual(
        classical_part=retruncate(res_big.classical_part, D, H),
        quantum_part=retruncate(res_big.quantum_part, D, H))
    return flowed, residual
