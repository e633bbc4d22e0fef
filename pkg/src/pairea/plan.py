"""Pairing plans shared by the selection strategies and the answer parser.

Parents are referenced by integer id. Ids ``0..P-1`` are the pool members in
order; id ``P + k`` is the child of the plan's ``k``-th pair, which re-enters
the selection pool and may parent any later pair.
"""

from __future__ import annotations

from dataclasses import dataclass

from .operators import CROSSOVERS, MUTATIONS

PROVENANCES = ("llm", "random", "mock")


@dataclass(frozen=True)
class Pair:
    a: int
    b: int
    crossover: str = "OX"
    mutation: str = "inversion"
    # only filled in llm_executes mode
    child: tuple[int, ...] | None = None

    def to_line(self) -> str:
        """Render in the answer grammar."""
        line = f"PAIR {self.a} {self.b} CROSSOVER={self.crossover} MUTATION={self.mutation}"
        if self.child is not None:
            line += " CHILD=" + ",".join(str(v) for v in self.child)
        return line


@dataclass(frozen=True)
class PairingPlan:
    pairs: tuple[Pair, ...]
    provenance: str
    pool_size: int

    def __len__(self):
        return len(self.pairs)

    def to_text(self) -> str:
        return "\n".join(p.to_line() for p in self.pairs)


def plan_violations(pairs, pool_size: int, offspring_needed: int | None = None,
                    monogamous: bool = True) -> list[str]:
    """Every broken plan invariant, as readable strings (empty when valid)."""
    problems = []
    if offspring_needed is not None and len(pairs) != offspring_needed:
        problems.append(f"plan has {len(pairs)} pairs, {offspring_needed} requested")
    used = set()
    for k, p in enumerate(pairs):
        if p.a == p.b:
            problems.append(f"pair {k} uses id {p.a} twice")
        for ref in (p.a, p.b):
            if not 0 <= ref < pool_size + k:
                problems.append(f"pair {k} references unknown id {ref}")
            elif monogamous and ref < pool_size:
                if ref in used:
                    problems.append(f"pair {k} reuses pool member {ref}")
                used.add(ref)
        if p.crossover not in CROSSOVERS:
            problems.append(f"pair {k} has unknown crossover {p.crossover!r}")
        if p.mutation not in MUTATIONS:
            problems.append(f"pair {k} has unknown mutation {p.mutation!r}")
    return problems
