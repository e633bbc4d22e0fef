"""Permutation crossover and mutation operators.

The raw functions (``ox``, ``pmx``, ``cx``, ``swap``, ``insertion``,
``inversion``) work on plain sequences of any hashable labels. The
``*_crossover`` / ``mutate`` wrappers take :class:`Individual` parents bound to
an instance, validate, and return a new individual with its length cached.
"""

from __future__ import annotations

from typing import Sequence

from .errors import ValidationError
from .tsp_core import Individual, TspInstance, check_permutation

CROSSOVERS = ("OX", "PMX", "CX")
MUTATIONS = ("swap", "insertion", "inversion")


def canonical_operator(name: str) -> str | None:
    """Map a case-insensitive operator name to its catalog spelling."""
    key = name.strip().lower()
    for op in CROSSOVERS + MUTATIONS:
        if op.lower() == key:
            return op
    return None


# -- raw sequence operators --------------------------------------------------

def ox(p1: Sequence, p2: Sequence, lo: int, hi: int) -> list:
    """Order crossover: keep ``p1[lo:hi]``, fill from ``p2`` cyclically from ``hi``."""
    n = len(p1)
    child = [None] * n
    child[lo:hi] = p1[lo:hi]
    used = set(p1[lo:hi])
    pos = hi % n
    for k in range(n):
        v = p2[(hi + k) % n]
        if v in used:
            continue
        child[pos] = v
        used.add(v)
        pos = (pos + 1) % n
    return child


def pmx(p1: Sequence, p2: Sequence, lo: int, hi: int) -> list:
    """Partially mapped crossover with ``p1``'s segment kept in place."""
    seg = p1[lo:hi]
    # value in p1's segment -> value p2 holds at the same position
    mapping = dict(zip(seg, p2[lo:hi]))
    child = list(p2)
    child[lo:hi] = seg
    for i in list(range(lo)) + list(range(hi, len(p1))):
        v = p2[i]
        while v in mapping:
            v = mapping[v]
        child[i] = v
    return child


def cx(p1: Sequence, p2: Sequence) -> list:
    """Cycle crossover: cycles alternate between ``p1`` (first) and ``p2``."""
    n = len(p1)
    where = {v: i for i, v in enumerate(p1)}
    child = [None] * n
    from_p1 = True
    for start in range(n):
        if child[start] is not None:
            continue
        i = start
        src = p1 if from_p1 else p2
        while child[i] is None:
            child[i] = src[i]
            i = where[p2[i]]
        from_p1 = not from_p1
    return child


def swap(t: Sequence, i: int, j: int) -> list:
    out = list(t)
    out[i], out[j] = out[j], out[i]
    return out


def insertion(t: Sequence, i: int, j: int) -> list:
    """Remove the element at ``i`` and reinsert it just before the element originally at ``j``."""
    out = list(t)
    v = out.pop(i)
    out.insert(j - 1 if j > i else j, v)
    return out


def inversion(t: Sequence, i: int, j: int) -> list:
    """Reverse the inclusive segment between ``i`` and ``j``."""
    if i > j:
        i, j = j, i
    out = list(t)
    out[i:j + 1] = out[i:j + 1][::-1]
    return out


_MUTATION_FUNCS = {"swap": swap, "insertion": insertion, "inversion": inversion}


# -- individual-level wrappers ----------------------------------------------

def _check_parents(p1: Individual, p2: Individual, instance: TspInstance) -> None:
    for p in (p1, p2):
        if p.instance_id != instance.id:
            raise ValidationError(
                f"parent belongs to instance {p.instance_id!r}, not {instance.id!r}")
        check_permutation(p.tour, instance.n)


def _check_cut(cut, n: int) -> tuple[int, int]:
    lo, hi = cut
    if not 0 <= lo < hi <= n:
        raise ValidationError(f"invalid cut {cut!r} for n={n}; need 0 <= lo < hi <= n")
    return lo, hi


def order_crossover(p1: Individual, p2: Individual, cut, instance: TspInstance) -> Individual:
    _check_parents(p1, p2, instance)
    lo, hi = _check_cut(cut, instance.n)
    return Individual.from_tour(instance, ox(p1.tour, p2.tour, lo, hi))


def pmx_crossover(p1: Individual, p2: Individual, cut, instance: TspInstance) -> Individual:
    _check_parents(p1, p2, instance)
    lo, hi = _check_cut(cut, instance.n)
    return Individual.from_tour(instance, pmx(p1.tour, p2.tour, lo, hi))


def cycle_crossover(p1: Individual, p2: Individual, instance: TspInstance) -> Individual:
    _check_parents(p1, p2, instance)
    return Individual.from_tour(instance, cx(p1.tour, p2.tour))


def crossover(name: str, p1: Individual, p2: Individual, cut, instance: TspInstance) -> Individual:
    """Dispatch on a catalog name; ``cut`` is ignored by CX."""
    if name == "OX":
        return order_crossover(p1, p2, cut, instance)
    if name == "PMX":
        return pmx_crossover(p1, p2, cut, instance)
    if name == "CX":
        return cycle_crossover(p1, p2, instance)
    raise ValidationError(f"unknown crossover {name!r}")


def mutate(child: Individual, kind: str, loci, instance: TspInstance) -> Individual:
    if kind not in _MUTATION_FUNCS:
        raise ValidationError(f"unknown mutation {kind!r}")
    check_permutation(child.tour, instance.n)
    i, j = loci
    n = instance.n
    for v in (i, j):
        if not 0 <= v < n:
            raise ValidationError(f"mutation locus {v} out of range 0..{n - 1}")
    return Individual.from_tour(instance, _MUTATION_FUNCS[kind](child.tour, i, j))


def edge_set(tour: Sequence[int]) -> frozenset:
    """Undirected edges of the closed tour as ``(min, max)`` pairs."""
    n = len(tour)
    return frozenset(
        (a, b) if a < b else (b, a) for a, b in ((tour[k], tour[(k + 1) % n]) for k in range(n))
    )


def edge_distance(t1: Individual, t2: Individual) -> int:
    """Number of undirected edges of ``t1``'s tour that ``t2``'s tour lacks."""
    if t1.instance_id != t2.instance_id or len(t1.tour) != len(t2.tour):
        raise ValidationError("edge_distance needs two tours over the same instance")
    return len(edge_set(t1.tour) - edge_set(t2.tour))
