"""Prompt assembly from the text templates in ``templates/``.

Templates use ``{placeholder}`` substitution:

- ``problem.txt``: ``{n}``, ``{coordinates}``
- ``system_*.txt``: ``{problem}``, ``{operators}``
- ``user.txt``: ``{population}``, ``{offspring_needed}``, ``{first_child_id}``
- ``requery.txt``: ``{reason}``, ``{offspring_needed}``
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from ..errors import ValidationError
from ..operators import CROSSOVERS, MUTATIONS
from ..tsp_core import Individual, TspInstance

TEMPLATE_DIR = Path(__file__).parent / "templates"
MODES = ("llm_executes", "engine_executes")
DEFAULT_BUDGET = 24_000

OPERATOR_HELP = {
    "OX": "order crossover: keep a slice of the first parent in place, fill the "
          "remaining positions with the second parent's nodes in their order",
    "PMX": "partially mapped crossover: keep a slice of the first parent, place the "
           "second parent's other nodes by following the slice's position mapping",
    "CX": "cycle crossover: split positions into cycles, take alternate cycles "
          "from each parent",
    "swap": "exchange the nodes at two positions",
    "insertion": "move one node to another position",
    "inversion": "reverse the order of a contiguous segment",
}


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str

    def __len__(self):
        return len(self.system_text) + len(self.user_text)


def load_template(name: str, template_dir: Path = TEMPLATE_DIR) -> str:
    return (Path(template_dir) / name).read_text(encoding="utf-8")


def template_checksum(template_dir: Path = TEMPLATE_DIR) -> str:
    """sha256 over every template file (name and bytes), in name order."""
    h = hashlib.sha256()
    for path in sorted(Path(template_dir).glob("*.txt")):
        h.update(path.name.encode())
        h.update(b"\0")
        h.update(path.read_bytes())
        h.update(b"\0")
    return h.hexdigest()


def format_operators(catalog: Sequence[str] = CROSSOVERS + MUTATIONS) -> str:
    lines = []
    for name in catalog:
        kind = "crossover" if name in CROSSOVERS else "mutation"
        lines.append(f"- {name} ({kind}): {OPERATOR_HELP[name]}")
    return "\n".join(lines)


def format_individual(ident: int, ind: Individual) -> str:
    route = ",".join(str(v) for v in ind.tour)
    return f"id {ident}: length {ind.length:.4f} route {route}"


def render_problem(instance: TspInstance, template_dir: Path = TEMPLATE_DIR) -> str:
    coords = "\n".join(f"{i}: {x:.4f}, {y:.4f}" for i, (x, y) in enumerate(instance.nodes))
    return load_template("problem.txt", template_dir).format(n=instance.n, coordinates=coords).rstrip("\n")


def build_prompt(
    pool: Sequence[Individual],
    offspring_needed: int,
    catalog: Sequence[str] = CROSSOVERS + MUTATIONS,
    mode: str = "llm_executes",
    instance: TspInstance | None = None,
    *,
    ids: Sequence[int] | None = None,
    first_child_id: int | None = None,
    correction: str | None = None,
    budget: int = DEFAULT_BUDGET,
    template_dir: Path = TEMPLATE_DIR,
) -> PromptBundle:
    """Render the system/user prompt pair for one selection request.

    ``ids`` relabels the pool (default ``0..len(pool)-1``); ``correction``
    appends the re-query note for a previous unusable answer.
    """
    if not pool:
        raise ValidationError("cannot build a prompt for an empty pool")
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}")
    if ids is None:
        ids = range(len(pool))
    if len(ids) != len(pool):
        raise ValidationError("ids and pool differ in length")
    if first_child_id is None:
        first_child_id = len(pool)

    problem = render_problem(instance, template_dir) if instance is not None else ""
    system = load_template(f"system_{mode}.txt", template_dir).format(
        problem=problem, operators=format_operators(catalog))
    population = "\n".join(format_individual(i, ind) for i, ind in zip(ids, pool))
    user = load_template("user.txt", template_dir).format(
        population=population, offspring_needed=offspring_needed, first_child_id=first_child_id)
    if correction:
        user += load_template("requery.txt", template_dir).format(
            reason=correction, offspring_needed=offspring_needed)

    bundle = PromptBundle(system.strip("\n") + "\n", user.strip("\n") + "\n")
    if len(bundle) > budget:
        raise ValidationError(
            f"prompt is {len(bundle)} characters, over the budget of {budget}; "
            "use a smaller population or raise the budget")
    return bundle
