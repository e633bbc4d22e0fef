"""The generational loop: initialize, pair, reproduce, keep the best N.

Generation 0 is the random initial population; every later generation is one
selection/crossover/mutation/survivor step, so ``max_generations`` counts the
initial population too.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, EngineError, PairError, SelectionError
from .llm_bridge import LlmSession, TemperatureState, advance_temperature, template_checksum
from .llm_bridge.prompts import MODES
from .metrics import is_optimal, population_variance
from .operators import crossover, mutate
from .selection import DEFAULT_WEIGHTS, STRATEGIES, SelectionRequest, select, select_pair_mock
from .tsp_core import Individual, TspInstance

log = logging.getLogger(__name__)


@dataclass
class EngineConfig:
    population_size: int = 16
    max_generations: int = 250
    strategy: str = "pair_mock"
    mode: str = "engine_executes"
    seed: int = 0
    early_stop_on_optimal: bool = True
    # defaults to population_size
    offspring_needed: int | None = None
    mock_weights: tuple[float, float] = DEFAULT_WEIGHTS
    temperature_base: float = 1.0

    def validate(self) -> None:
        if self.population_size < 2:
            raise ConfigError("population_size must be >= 2")
        if self.max_generations < 1:
            raise ConfigError("max_generations must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.offspring_needed is not None and self.offspring_needed < 1:
            raise ConfigError("offspring_needed must be >= 1")
        if min(self.mock_weights) < 0:
            raise ConfigError("mock weights must be nonnegative")

    @property
    def offspring(self) -> int:
        return self.offspring_needed or self.population_size

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mock_weights"] = list(self.mock_weights)
        return d


@dataclass(frozen=True)
class GenerationEntry:
    generation: int
    best_length: float
    mean_length: float
    variance: float
    temperature: float
    fallback: bool
    lengths: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "type": "generation",
            "generation": self.generation,
            "best_length": self.best_length,
            "mean_length": self.mean_length,
            "variance": self.variance,
            "temperature": self.temperature,
            "fallback": self.fallback,
            "lengths": list(self.lengths),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationEntry":
        return cls(d["generation"], d["best_length"], d["mean_length"], d["variance"],
                   d["temperature"], d["fallback"], tuple(d["lengths"]))


@dataclass
class RunRecord:
    run_id: str
    instance_id: str
    family: str
    n: int
    strategy: str
    mode: str
    model_label: str
    seed: int
    optimal_length: float | None
    config: dict
    prompt_checksum: str
    generations: list[GenerationEntry] = field(default_factory=list)
    best: Individual | None = None
    success_step: int | None = None
    status: str = "running"
    error: str | None = None
    # wall clock is kept off the serialized record so record files stay reproducible
    duration_s: float = 0.0

    @property
    def fallbacks(self) -> int:
        return sum(g.fallback for g in self.generations)

    def summary_dict(self) -> dict:
        return {
            "type": "summary",
            "run_id": self.run_id,
            "instance_id": self.instance_id,
            "family": self.family,
            "n": self.n,
            "strategy": self.strategy,
            "mode": self.mode,
            "model_label": self.model_label,
            "seed": self.seed,
            "optimal_length": self.optimal_length,
            "config": self.config,
            "prompt_checksum": self.prompt_checksum,
            "generations_run": len(self.generations),
            "best_length": self.best.length if self.best else None,
            "best_tour": list(self.best.tour) if self.best else None,
            "success_step": self.success_step,
            "fallbacks": self.fallbacks,
            "status": self.status,
            "error": self.error,
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps(g.to_dict(), sort_keys=True) for g in self.generations]
        lines.append(json.dumps(self.summary_dict(), sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "RunRecord":
        gens, summary = [], None
        for line in text.splitlines():
            if not line.strip():
                continue
            d = json.loads(line)
            if d["type"] == "generation":
                gens.append(GenerationEntry.from_dict(d))
            elif d["type"] == "summary":
                summary = d
        if summary is None:
            raise ValueError("record has no summary line (incomplete run)")
        best = None
        if summary["best_tour"] is not None:
            best = Individual(tuple(summary["best_tour"]), summary["best_length"], summary["instance_id"])
        return cls(
            run_id=summary["run_id"], instance_id=summary["instance_id"], family=summary["family"],
            n=summary["n"], strategy=summary["strategy"], mode=summary["mode"],
            model_label=summary["model_label"], seed=summary["seed"],
            optimal_length=summary["optimal_length"], config=summary["config"],
            prompt_checksum=summary["prompt_checksum"], generations=gens, best=best,
            success_step=summary["success_step"], status=summary["status"], error=summary["error"],
        )


class JsonlSink:
    """Appends record lines to a file as they are produced."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", encoding="utf-8")

    def __call__(self, obj: dict) -> None:
        self._fh.write(json.dumps(obj, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


@dataclass
class EngineState:
    instance: TspInstance
    config: EngineConfig
    population: list[Individual]
    rng: np.random.Generator
    generation: int = 0
    temperature: TemperatureState = field(default_factory=TemperatureState)

    @property
    def best(self) -> Individual:
        return min(self.population, key=lambda ind: ind.length)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def init_population(instance: TspInstance, size: int, seed) -> list[Individual]:
    """``size`` independent uniform random tours. ``seed`` may be an int or a Generator."""
    if size < 2:
        raise ConfigError("population size must be >= 2")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    return [Individual.from_tour(instance, rng.permutation(instance.n).tolist()) for _ in range(size)]


def init_state(instance: TspInstance, config: EngineConfig) -> EngineState:
    config.validate()
    rng = make_rng(config.seed)
    pop = init_population(instance, config.population_size, rng)
    return EngineState(instance, config, pop, rng,
                       temperature=TemperatureState(base=config.temperature_base))


def _entry(state: EngineState, fallback: bool) -> GenerationEntry:
    lengths = tuple(ind.length for ind in state.population)
    return GenerationEntry(
        generation=state.generation,
        best_length=min(lengths),
        mean_length=math.fsum(lengths) / len(lengths),
        variance=population_variance(lengths),
        temperature=state.temperature.current,
        fallback=fallback,
        lengths=lengths,
    )


def make_offspring(state: EngineState, plan, rng: np.random.Generator) -> list[Individual]:
    """Children for every pair, in plan order; later pairs may use earlier children."""
    inst = state.instance
    n = inst.n
    k = len(plan.pairs)
    # draw every cut and locus up front so the stream does not depend on the plan
    lo = rng.integers(0, n + 1, size=k)
    hi = rng.integers(0, n, size=k)
    loci = rng.integers(0, n, size=(k, 2))
    members = list(state.population)
    children = []
    for idx, pair in enumerate(plan.pairs):
        if state.config.mode == "llm_executes" and pair.child is not None:
            child = Individual.from_tour(inst, pair.child)
        else:
            a, b = int(lo[idx]), int(hi[idx])
            if b >= a:
                b += 1
            cut = (min(a, b), max(a, b))
            child = crossover(pair.crossover, members[pair.a], members[pair.b], cut, inst)
            child = mutate(child, pair.mutation, (int(loci[idx, 0]), int(loci[idx, 1])), inst)
        members.append(child)
        children.append(child)
    return children


def survivors(parents: list[Individual], offspring: list[Individual], size: int) -> list[Individual]:
    """The ``size`` shortest of parents + offspring; ties keep the earlier one."""
    return sorted(parents + offspring, key=lambda ind: ind.length)[:size]


def step_generation(state: EngineState, bridge: LlmSession | None = None) -> tuple[EngineState, GenerationEntry]:
    cfg = state.config
    req = SelectionRequest(state.population, cfg.offspring, state.instance, state.rng,
                           state.temperature.current)
    fallback = False
    try:
        plan = select(cfg.strategy, req, bridge, cfg.mock_weights)
    except SelectionError as e:
        if cfg.strategy != "pair_llm":
            raise
        log.warning("generation %d: model selection failed (%s); falling back to mock. last reply: %r",
                    state.generation + 1, e, e.raw_output)
        plan = select_pair_mock(req, cfg.mock_weights)
        fallback = True
    children = make_offspring(state, plan, state.rng)
    old_best = min(ind.length for ind in state.population)
    population = survivors(state.population, children, cfg.population_size)
    improved = population[0].length < old_best
    new = replace(state, population=population, generation=state.generation + 1,
                  temperature=advance_temperature(state.temperature, improved))
    return new, _entry(new, fallback)


def run_id_for(instance: TspInstance, config: EngineConfig, model_label: str = "") -> str:
    strat = config.strategy
    if config.strategy == "pair_llm" and model_label:
        strat += "-" + "".join(c if c.isalnum() or c in "-." else "_" for c in model_label)
    return f"{instance.id}__{strat}__{config.seed}"


def run(
    instance: TspInstance,
    config: EngineConfig,
    bridge: LlmSession | None = None,
    sink: Callable[[dict], None] | None = None,
) -> RunRecord:
    """Run up to ``max_generations`` generations (generation 0 included).

    Stops early once the best length matches ``instance.optimal_length``
    (1e-9 relative) when ``early_stop_on_optimal`` is set. Every generation
    entry, and finally the summary, is passed to ``sink`` as it is produced.
    A failing step raises EngineError whose ``record`` is the partial run.
    """
    config.validate()
    if config.strategy == "pair_llm" and bridge is None:
        raise ConfigError("strategy pair_llm needs a model session")
    if config.early_stop_on_optimal and instance.optimal_length is None:
        raise ConfigError(f"instance {instance.id!r} has no optimal_length; solve it or disable early stop")
    label = bridge.label if config.strategy == "pair_llm" else ""
    checksum = bridge.prompt_checksum if bridge is not None else template_checksum()
    record = RunRecord(
        run_id=run_id_for(instance, config, label),
        instance_id=instance.id, family=instance.family, n=instance.n,
        strategy=config.strategy, mode=config.mode, model_label=label, seed=config.seed,
        optimal_length=instance.optimal_length, config=config.to_dict(), prompt_checksum=checksum,
    )
    t0 = time.perf_counter()

    def accept(state, entry):
        record.generations.append(entry)
        best = state.best
        if record.best is None or best.length < record.best.length:
            record.best = best
        if record.success_step is None and is_optimal(entry.best_length, instance.optimal_length):
            record.success_step = entry.generation
        if sink:
            sink(entry.to_dict())

    def finish(status, error=None):
        record.status = status
        record.error = error
        record.duration_s = time.perf_counter() - t0
        if sink:
            sink(record.summary_dict())

    state = init_state(instance, config)
    accept(state, _entry(state, False))
    while state.generation + 1 < config.max_generations:
        if config.early_stop_on_optimal and record.success_step is not None:
            break
        try:
            state, entry = step_generation(state, bridge)
        except PairError as e:
            finish("aborted", f"{type(e).__name__}: {e}")
            raise EngineError(f"run {record.run_id} aborted at generation {state.generation + 1}: {e}",
                              record) from e
        accept(state, entry)
    finish("complete")
    return record
