"""Reading pairing plans out of free-form model replies.

Answer grammar, one record per line::

    PAIR <id> <id> CROSSOVER=<name> MUTATION=<name> [CHILD=<i,j,k,...>]

Any line that does not start with ``PAIR <digit>`` is prose and ignored. A line
that does must match the grammar exactly. Operator names are case-insensitive.
"""

from __future__ import annotations

import re
from typing import Collection

from ..errors import InvalidChild, MalformedRecord, ParseEmpty, UnknownIndividual, UnknownOperator
from ..operators import CROSSOVERS, MUTATIONS, canonical_operator
from ..plan import Pair
from ..tsp_core import is_permutation

_CANDIDATE = re.compile(r"^\s*PAIR\s+\d")
_RECORD = re.compile(
    r"^\s*PAIR\s+(?P<a>\d+)\s+(?P<b>\d+)"
    r"\s+CROSSOVER=(?P<x>[A-Za-z]+)"
    r"\s+MUTATION=(?P<m>[A-Za-z]+)"
    r"(?:\s+CHILD=\[?(?P<child>\d+(?:\s*,\s*\d+)*)\]?)?\s*$"
)


def parse_response(
    text: str,
    mode: str,
    pool_ids: Collection[int],
    n: int,
    first_child_id: int | None = None,
) -> list[Pair]:
    """Parse every record in ``text``.

    ``pool_ids`` are the ids offered in the prompt. When ``first_child_id`` is
    given, record ``k`` may also reference ids ``first_child_id .. first_child_id+k-1``
    (children of earlier records). In ``llm_executes`` mode every record needs
    a CHILD that is a permutation of ``0..n-1``; bad children are reported
    together through :class:`InvalidChild` after the whole reply is read.
    """
    known = set(pool_ids)
    records: list[Pair] = []
    bad_children: list[int] = []
    for lineno, line in enumerate((text or "").splitlines(), 1):
        if not _CANDIDATE.match(line):
            continue
        m = _RECORD.match(line)
        if m is None:
            raise MalformedRecord(f"line {lineno} does not follow the PAIR grammar: {line.strip()!r}")
        k = len(records)
        a, b = int(m["a"]), int(m["b"])
        for ref in (a, b):
            if ref in known:
                continue
            if first_child_id is not None and first_child_id <= ref < first_child_id + k:
                continue
            raise UnknownIndividual(f"record {k} names id {ref}, which is not available")
        xo = canonical_operator(m["x"])
        mu = canonical_operator(m["m"])
        if xo not in CROSSOVERS:
            raise UnknownOperator(f"record {k}: {m['x']!r} is not a crossover operator")
        if mu not in MUTATIONS:
            raise UnknownOperator(f"record {k}: {m['m']!r} is not a mutation operator")
        child = None
        if m["child"] is not None:
            child = tuple(int(v) for v in m["child"].split(","))
        if mode == "llm_executes":
            if child is None or not is_permutation(child, n):
                bad_children.append(k)
                child = None
        else:
            child = None
        records.append(Pair(a, b, xo, mu, child))
    if not records:
        raise ParseEmpty("no PAIR records found in the reply")
    if bad_children:
        raise InvalidChild(
            f"child route of pair(s) {bad_children} is not a permutation of 0..{n - 1}",
            pair_index=bad_children[0],
            records=records,
        )
    return records
