"""Elitist evolutionary search for Euclidean TSP with pluggable parent pairing.

Parent pairs come from a chat model (``pair_llm``), a deterministic offline
stand-in (``pair_mock``) or uniform random choice (``random_lmea``). Exact
optima from Held-Karp make optimality gaps measurable.
"""

from .engine import EngineConfig, RunRecord, run
from .selection import STRATEGIES
from .tsp_core import TspInstance, generate, held_karp_optimal, read_instance, write_instance

__all__ = ["EngineConfig", "RunRecord", "run", "STRATEGIES", "TspInstance", "generate",
           "held_karp_optimal", "read_instance", "write_instance"]
