"""Parent-pairing strategies.

All three strategies take a :class:`SelectionRequest` and return a
:class:`~pairea.plan.PairingPlan` with exactly ``offspring_needed`` pairs:

- :func:`select_random`: uniform pairs and operators, with replacement (LMEA baseline).
- :func:`select_pair_mock`: deterministic preference scoring with monogamy and
  offspring re-injection; stands in for the model offline.
- :func:`select_pair_llm`: asks a chat model, then validates, repairs or re-queries.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidChild, ParseError, SelectionError, ValidationError
from .llm_bridge import LlmSession, build_prompt, parse_response
from .operators import CROSSOVERS, MUTATIONS, edge_set, ox
from .plan import Pair, PairingPlan, plan_violations
from .tsp_core import Individual, TspInstance

log = logging.getLogger(__name__)

STRATEGIES = ("pair_llm", "pair_mock", "random_lmea")
DEFAULT_WEIGHTS = (1.0, 1.0)


@dataclass
class SelectionRequest:
    pool: Sequence[Individual]
    offspring_needed: int
    instance: TspInstance
    rng: np.random.Generator | int | None = None
    temperature: float = 1.0

    def __post_init__(self):
        if self.offspring_needed < 1:
            raise ValidationError("offspring_needed must be >= 1")
        if len(self.pool) < 2:
            raise ValidationError(f"selection pool needs at least 2 individuals, got {len(self.pool)}")


def select_random(req: SelectionRequest) -> PairingPlan:
    rng = req.rng if isinstance(req.rng, np.random.Generator) else np.random.default_rng(req.rng)
    size = len(req.pool)
    pairs = []
    for _ in range(req.offspring_needed):
        a = int(rng.integers(size))
        b = int(rng.integers(size - 1))
        if b >= a:
            b += 1
        xo = CROSSOVERS[int(rng.integers(len(CROSSOVERS)))]
        mu = MUTATIONS[int(rng.integers(len(MUTATIONS)))]
        pairs.append(Pair(a, b, xo, mu))
    return PairingPlan(tuple(pairs), "random", size)


def proxy_child(p1: Individual, p2: Individual, instance: TspInstance) -> Individual:
    """OX of the two tours with cuts at n//4 and 3n//4, no mutation."""
    n = len(p1.tour)
    return Individual.from_tour(instance, ox(p1.tour, p2.tour, n // 4, (3 * n) // 4))


class _Pool:
    """Eligibility bookkeeping for monogamous pairing with re-injection."""

    def __init__(self, pool: Sequence[Individual], instance: TspInstance):
        self.instance = instance
        self.size = len(pool)
        self.members: list[Individual] = list(pool)
        self._edges: dict[int, frozenset] = {}
        self.available: list[int] = list(range(self.size))
        self.used_original: set[int] = set()

    def edges(self, ident: int) -> frozenset:
        if ident not in self._edges:
            self._edges[ident] = edge_set(self.members[ident].tour)
        return self._edges[ident]

    def is_usable(self, ident: int) -> bool:
        if ident >= self.size:
            return ident < len(self.members)
        return ident not in self.used_original

    def take(self, *idents: int) -> None:
        for i in idents:
            if i < self.size:
                self.used_original.add(i)
            if i in self.available:
                self.available.remove(i)

    def add_child(self, child: Individual) -> int:
        ident = len(self.members)
        self.members.append(child)
        self.available.append(ident)
        return ident

    def replenish(self) -> None:
        # Once fewer than two candidates remain, every child made so far becomes
        # eligible again; pool originals never come back.
        if len(self.available) < 2:
            back = [i for i in range(self.size, len(self.members)) if i not in self.available]
            self.available = sorted(self.available + back)

    def best_mate(self, chooser: int, candidates, weights) -> int:
        w_fit, w_div = weights
        ref = self.members[chooser]
        ref_edges = self.edges(chooser)
        n = len(ref.tour)
        best, best_score = None, -np.inf
        for c in sorted(candidates):
            if c == chooser:
                continue
            cand = self.members[c]
            div = len(ref_edges - self.edges(c)) / n
            score = w_div * div - w_fit * (cand.length / ref.length - 1.0)
            if score > best_score:
                best, best_score = c, score
        return best


def select_pair_mock(req: SelectionRequest, weights: tuple[float, float] = DEFAULT_WEIGHTS) -> PairingPlan:
    """Deterministic stand-in for model-driven PAIR selection.

    Repeatedly: the available individual with the shortest tour chooses the
    mate maximizing ``w_div * edge_distance / n - w_fit * (len_mate / len_chooser - 1)``;
    both leave the pool and their OX child (cuts n//4, 3n//4) joins it. Ties
    go to the lower id. Operators are always (OX, inversion).
    """
    if min(weights) < 0:
        raise ValidationError("mock weights must be nonnegative")
    pool = _Pool(req.pool, req.instance)
    pairs = []
    for k in range(req.offspring_needed):
        pool.replenish()
        if len(pool.available) < 2:
            raise SelectionError(
                f"a pool of {pool.size} can only supply {k} monogamous pair(s), {req.offspring_needed} requested")
        chooser = min(pool.available, key=lambda i: (pool.members[i].length, i))
        mate = pool.best_mate(chooser, pool.available, weights)
        pool.take(chooser, mate)
        pool.add_child(proxy_child(pool.members[chooser], pool.members[mate], req.instance))
        pairs.append(Pair(chooser, mate, "OX", "inversion"))
    return PairingPlan(tuple(pairs), "mock", pool.size)


# -- model-driven selection --------------------------------------------------

def _repair(records: Sequence[Pair], req: SelectionRequest, weights=DEFAULT_WEIGHTS) -> tuple[list[Pair], int]:
    """Fix self-pairs and reused pool members locally.

    A bad partner is replaced by the best-scoring eligible mate of the other
    (valid) member; a record with no valid member is dropped, and child ids of
    later records are renumbered to match. Surplus records are cut. Returns
    the cleaned pairs and the number of fixes made.
    """
    size = len(req.pool)
    pool = _Pool(req.pool, req.instance)
    renumber: dict[int, int] = {}
    fixed: list[Pair] = []
    fixes = 0
    for r, rec in enumerate(records):
        if len(fixed) == req.offspring_needed:
            fixes += len(records) - r
            break
        a = rec.a if rec.a < size else renumber.get(rec.a, -1)
        b = rec.b if rec.b < size else renumber.get(rec.b, -1)
        a_ok = a >= 0 and pool.is_usable(a)
        b_ok = b >= 0 and pool.is_usable(b) and b != a
        child = rec.child
        if not (a_ok and b_ok):
            fixes += 1
            keep = a if a_ok else (b if b >= 0 and pool.is_usable(b) else None)
            eligible = [i for i in range(len(pool.members)) if i != keep and pool.is_usable(i)]
            if keep is None or not eligible:
                log.info("dropping unusable record %s", rec.to_line())
                continue
            mate = pool.best_mate(keep, eligible, weights)
            log.info("repaired %s -> partner %d", rec.to_line(), mate)
            a, b, child = keep, mate, None
        pool.take(a, b)
        if child is not None:
            pool.add_child(Individual.from_tour(req.instance, child))
        else:
            pool.add_child(proxy_child(pool.members[a], pool.members[b], req.instance))
        renumber[size + r] = size + len(fixed)
        fixed.append(Pair(a, b, rec.crossover, rec.mutation, child))
    return fixed, fixes


def _ask_for_pairs(req: SelectionRequest, session: LlmSession, pool, ids, needed,
                   first_child_id) -> tuple[list[Pair], str]:
    size = len(req.pool)
    correction = None
    raw = None
    for attempt in range(session.cfg.max_requeries_per_generation + 1):
        if attempt:
            session.requeries += 1
        bundle = build_prompt(pool, needed, mode=session.mode, instance=req.instance, ids=ids,
                              first_child_id=first_child_id, correction=correction,
                              budget=session.budget, template_dir=session.template_dir)
        raw = session.ask(bundle, req.temperature)
        try:
            records = parse_response(raw, session.mode, ids, req.instance.n, first_child_id)
        except InvalidChild as e:
            log.info("repairing: %s", e)
            session.repairs += 1
            records = e.records
        except ParseError as e:
            log.info("re-querying (%s): %s", type(e).__name__, e)
            correction = str(e)
            continue
        if len(records) < needed:
            correction = f"it contained {len(records)} PAIR lines but {needed} are required."
            log.info("re-querying: %s", correction)
            continue
        return records, raw
    raise SelectionError(
        f"no usable answer after {session.cfg.max_requeries_per_generation} re-queries "
        f"(pool of {size})", raw_output=raw)


def select_pair_llm(req: SelectionRequest, bridge: LlmSession, weights=DEFAULT_WEIGHTS) -> PairingPlan:
    """PAIR selection by a chat model.

    The returned plan always satisfies the plan invariants: invalid partners
    are repaired locally, missing or unparsable answers trigger a re-query with
    a corrective note, and exhausting the re-queries raises SelectionError.
    """
    if bridge.per_pair:
        return _select_llm_per_pair(req, bridge, weights)
    size = len(req.pool)
    records, raw = _ask_for_pairs(req, bridge, list(req.pool), list(range(size)),
                                  req.offspring_needed, size)
    pairs, fixes = _repair(records, req, weights)
    bridge.repairs += fixes
    if len(pairs) < req.offspring_needed:
        raise SelectionError(
            f"answer left {req.offspring_needed - len(pairs)} pair(s) unfilled after repair", raw_output=raw)
    problems = plan_violations(pairs, size, req.offspring_needed)
    if problems:
        raise SelectionError("; ".join(problems), raw_output=raw)
    return PairingPlan(tuple(pairs), "llm", size)


def _select_llm_per_pair(req: SelectionRequest, bridge: LlmSession, weights) -> PairingPlan:
    # one request per pair, each offering only the currently eligible individuals
    pool = _Pool(req.pool, req.instance)
    pairs: list[Pair] = []
    for _ in range(req.offspring_needed):
        pool.replenish()
        ids = sorted(i for i in pool.available)
        if len(ids) < 2:
            raise SelectionError(f"pool of {pool.size} cannot supply another monogamous pair")
        records, raw = _ask_for_pairs(req, bridge, [pool.members[i] for i in ids], ids, 1, None)
        rec = records[0]
        if rec.a == rec.b:
            bridge.repairs += 1
            mate = pool.best_mate(rec.a, ids, weights)
            rec = Pair(rec.a, mate, rec.crossover, rec.mutation, None)
        pool.take(rec.a, rec.b)
        child = (Individual.from_tour(req.instance, rec.child) if rec.child is not None
                 else proxy_child(pool.members[rec.a], pool.members[rec.b], req.instance))
        pool.add_child(child)
        pairs.append(rec)
    problems = plan_violations(pairs, pool.size, req.offspring_needed)
    if problems:
        raise SelectionError("; ".join(problems))
    return PairingPlan(tuple(pairs), "llm", pool.size)


def select(strategy: str, req: SelectionRequest, bridge: LlmSession | None = None,
           weights=DEFAULT_WEIGHTS) -> PairingPlan:
    if strategy == "random_lmea":
        return select_random(req)
    if strategy == "pair_mock":
        return select_pair_mock(req, weights)
    if strategy == "pair_llm":
        if bridge is None:
            raise ValidationError("pair_llm needs a model session")
        return select_pair_llm(req, bridge, weights)
    raise ValidationError(f"unknown strategy {strategy!r}")
