"""Euclidean TSP instances, tour evaluation and exact solvers.

Instances are generated from numpy's PCG64 bit generator, so a given
``(n, seed, ...)`` tuple regenerates the same coordinates on any platform.
Distances are plain double-precision Euclidean, no integer rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import permutations
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .errors import CapacityError, ValidationError

FAMILIES = ("rue", "clu")
DEFAULT_EXTENT = 100.0
HELD_KARP_MAX_N = 25
BRUTE_FORCE_MAX_N = 10


@dataclass(eq=False)
class TspInstance:
    id: str
    nodes: tuple[tuple[float, float], ...]
    family: str = "rue"
    seed: int = 0
    optimal_length: float | None = None
    # generator parameters, recorded so files regenerate
    params: dict = field(default_factory=dict)
    _dist: np.ndarray = field(init=False, repr=False)
    _rows: list = field(init=False, repr=False)

    def __post_init__(self):
        self.nodes = tuple((float(x), float(y)) for x, y in self.nodes)
        if len(self.nodes) < 3:
            raise ValidationError(f"instance {self.id!r} needs at least 3 nodes, got {len(self.nodes)}")
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown family {self.family!r}")
        xy = np.array(self.nodes, dtype=np.float64)
        if not np.all(np.isfinite(xy)):
            raise ValidationError(f"instance {self.id!r} has non-finite coordinates")
        diff = xy[:, None, :] - xy[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        dist.setflags(write=False)
        self._dist = dist
        self._rows = dist.tolist()

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def dist(self) -> np.ndarray:
        """Read-only ``n x n`` distance matrix."""
        return self._dist

    def d(self, a: int, b: int) -> float:
        return self._rows[a][b]

    def __eq__(self, other):
        if not isinstance(other, TspInstance):
            return NotImplemented
        return (self.id, self.nodes, self.family, self.seed, self.optimal_length, self.params) == (
            other.id, other.nodes, other.family, other.seed, other.optimal_length, other.params)


@dataclass(frozen=True)
class Individual:
    """A closed tour with its cached length."""

    tour: tuple[int, ...]
    length: float
    instance_id: str = ""

    @classmethod
    def from_tour(cls, instance: TspInstance, tour: Sequence[int]) -> "Individual":
        tour = tuple(int(v) for v in tour)
        return cls(tour, tour_length(instance, tour), instance.id)


def check_permutation(tour: Sequence[int], n: int) -> None:
    """Raise ValidationError unless ``tour`` is a permutation of ``0..n-1``."""
    if len(tour) != n:
        raise ValidationError(f"tour has {len(tour)} entries, expected {n}")
    seen = [False] * n
    for v in tour:
        if not 0 <= v < n:
            raise ValidationError(f"node index {v} out of range 0..{n - 1}")
        if seen[v]:
            raise ValidationError(f"node index {v} appears more than once")
        seen[v] = True


def is_permutation(tour: Sequence[int], n: int) -> bool:
    try:
        check_permutation(tour, n)
    except (ValidationError, TypeError):
        return False
    return True


def tour_length(instance: TspInstance, tour: Sequence[int]) -> float:
    """Closed-tour length: consecutive edges plus the edge back to the start."""
    check_permutation(tour, instance.n)
    rows = instance._rows
    total = 0.0
    prev = tour[-1]
    for v in tour:
        total += rows[prev][v]
        prev = v
    return total


# -- generators --------------------------------------------------------------

def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def generate_rue(n: int, seed: int, extent: float = DEFAULT_EXTENT, id: str | None = None) -> TspInstance:
    """Nodes placed uniformly at random in ``[0, extent]^2``."""
    if n < 3:
        raise ValidationError(f"n must be >= 3, got {n}")
    if not extent > 0:
        raise ValidationError("extent must be positive")
    xy = _rng(seed).uniform(0.0, extent, size=(n, 2))
    return TspInstance(
        id=id or f"rue-{n}-{seed}",
        nodes=tuple(map(tuple, xy.tolist())),
        family="rue",
        seed=seed,
        params={"extent": float(extent)},
    )


def generate_clu(
    n: int,
    k: int | None = None,
    seed: int = 0,
    extent: float = DEFAULT_EXTENT,
    spread: float | None = None,
    id: str | None = None,
) -> TspInstance:
    """Nodes scattered around ``k`` uniformly placed centers.

    Node ``i`` belongs to center ``i % k`` and is offset by isotropic Gaussian
    noise with standard deviation ``spread``; coordinates are clamped to the
    square. Defaults: ``k = ceil(n / 5)``, ``spread = extent / 20``.
    """
    if n < 3:
        raise ValidationError(f"n must be >= 3, got {n}")
    if k is None:
        k = math.ceil(n / 5)
    if not 1 <= k <= n:
        raise ValidationError(f"cluster count k={k} outside [1, {n}]")
    if spread is None:
        spread = extent / 20.0
    if not extent > 0 or not spread > 0:
        raise ValidationError("extent and spread must be positive")
    rng = _rng(seed)
    centers = rng.uniform(0.0, extent, size=(k, 2))
    offsets = rng.normal(0.0, spread, size=(n, 2))
    xy = np.clip(centers[np.arange(n) % k] + offsets, 0.0, extent)
    return TspInstance(
        id=id or f"clu-{n}-{seed}",
        nodes=tuple(map(tuple, xy.tolist())),
        family="clu",
        seed=seed,
        params={"extent": float(extent), "clusters": int(k), "spread": float(spread)},
    )


def generate(family: str, n: int, seed: int, id: str | None = None, **kw) -> TspInstance:
    if family == "rue":
        return generate_rue(n, seed, id=id, **kw)
    if family == "clu":
        return generate_clu(n, seed=seed, id=id, **kw)
    raise ValidationError(f"unknown family {family!r}")


# -- exact solvers -----------------------------------------------------------

@njit(cache=True)
def _held_karp_kernel(dist):
    # Node 0 is the fixed start; nodes 1..n-1 are bits 0..m-1.
    # Layer k holds, for each k-subset S (ranked among k-subsets in increasing
    # mask order) and each j in S (column = position of j among S's bits), the
    # cheapest path 0 -> ... -> j covering exactly S.
    n = dist.shape[0]
    m = n - 1
    full = (1 << m) - 1

    rank = np.empty(1 << m, dtype=np.int32)
    counts = np.zeros(m + 1, dtype=np.int64)
    for mask in range(1 << m):
        c = 0
        x = mask
        while x:
            x &= x - 1
            c += 1
        rank[mask] = counts[c]
        counts[c] += 1

    offsets = np.zeros(m + 2, dtype=np.int64)
    for k in range(1, m + 1):
        offsets[k + 1] = offsets[k] + counts[k] * k
    parent = np.empty(offsets[m + 1], dtype=np.int8)

    prev_layer = np.empty((1, 1), dtype=np.float64)
    for k in range(1, m + 1):
        layer = np.empty((counts[k], k), dtype=np.float64)
        base = offsets[k]
        mask = (1 << k) - 1
        while mask <= full:
            r = rank[mask]
            pos_j = 0
            for j in range(m):
                if not (mask >> j) & 1:
                    continue
                if k == 1:
                    layer[r, 0] = dist[0, j + 1]
                    parent[base + r] = -1
                else:
                    pm = mask ^ (1 << j)
                    pr = rank[pm]
                    best = np.inf
                    arg = -1
                    pos_i = 0
                    for i in range(m):
                        if not (pm >> i) & 1:
                            continue
                        cand = prev_layer[pr, pos_i] + dist[i + 1, j + 1]
                        if cand < best:
                            best = cand
                            arg = i
                        pos_i += 1
                    layer[r, pos_j] = best
                    parent[base + r * k + pos_j] = arg
                pos_j += 1
            # Gosper's hack: next mask with the same popcount
            c = mask & -mask
            rr = mask + c
            mask = (((rr ^ mask) >> 2) // c) | rr
        prev_layer = layer

    best = np.inf
    last = -1
    for j in range(m):
        cand = prev_layer[0, j] + dist[j + 1, 0]
        if cand < best:
            best = cand
            last = j

    tour = np.zeros(n, dtype=np.int64)
    mask = full
    j = last
    for k in range(m, 0, -1):
        tour[k] = j + 1
        pos = 0
        for b in range(j):
            if (mask >> b) & 1:
                pos += 1
        p = parent[offsets[k] + rank[mask] * k + pos]
        mask ^= 1 << j
        j = p
    return best, tour


def held_karp_optimal(instance: TspInstance, max_n: int = HELD_KARP_MAX_N) -> tuple[float, tuple[int, ...]]:
    """Exact optimum by dynamic programming over node subsets.

    Stores the result in ``instance.optimal_length``. The returned length is
    re-summed along the tour with :func:`tour_length` so it compares directly
    with lengths of individuals.
    """
    n = instance.n
    if n > max_n:
        raise CapacityError(
            f"Held-Karp is capped at n={max_n} (got n={n}); brute force is capped lower "
            f"(n<={BRUTE_FORCE_MAX_N}) so no exact solver is available for this size"
        )
    _, tour = _held_karp_kernel(np.ascontiguousarray(instance.dist))
    tour = tuple(int(v) for v in tour)
    length = tour_length(instance, tour)
    instance.optimal_length = length
    return length, tour


@lru_cache(maxsize=None)
def _canonical_tours(n: int) -> np.ndarray:
    # node 0 first; keep one orientation per cycle (second node < last node)
    perms = np.array(list(permutations(range(1, n))), dtype=np.int64).reshape(-1, n - 1)
    perms = perms[perms[:, 0] < perms[:, -1]] if n > 3 else perms
    zeros = np.zeros((perms.shape[0], 1), dtype=np.int64)
    return np.hstack([zeros, perms])


def brute_force_optimal(instance: TspInstance) -> tuple[float, tuple[int, ...]]:
    """Enumerate every distinct closed tour; for test cross-checks only."""
    n = instance.n
    if n > BRUTE_FORCE_MAX_N:
        raise CapacityError(f"brute force is capped at n={BRUTE_FORCE_MAX_N}, got n={n}")
    tours = _canonical_tours(n)
    d = instance.dist
    lengths = d[tours, np.roll(tours, -1, axis=1)].sum(axis=1)
    best = int(np.argmin(lengths))
    tour = tuple(int(v) for v in tours[best])
    return tour_length(instance, tour), tour


# -- instance files ----------------------------------------------------------

_HEADER_KEYS = ("id", "family", "seed", "n", "optimal_length", "extent", "clusters", "spread")


def format_instance(instance: TspInstance) -> str:
    lines = [
        f"id {instance.id}",
        f"family {instance.family}",
        f"seed {instance.seed}",
        f"n {instance.n}",
    ]
    if instance.optimal_length is not None:
        lines.append(f"optimal_length {instance.optimal_length!r}")
    for key in ("extent", "clusters", "spread"):
        if key in instance.params:
            lines.append(f"{key} {instance.params[key]!r}")
    for i, (x, y) in enumerate(instance.nodes):
        lines.append(f"{i} {x!r} {y!r}")
    return "\n".join(lines) + "\n"


def parse_instance(text: str) -> TspInstance:
    header: dict[str, str] = {}
    nodes: list[tuple[float, float]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] in _HEADER_KEYS:
            if len(parts) != 2:
                raise ValidationError(f"line {lineno}: expected 'key value', got {raw!r}")
            header[parts[0]] = parts[1]
            continue
        if len(parts) != 3:
            raise ValidationError(f"line {lineno}: expected 'index x y', got {raw!r}")
        try:
            idx, x, y = int(parts[0]), float(parts[1]), float(parts[2])
        except ValueError:
            raise ValidationError(f"line {lineno}: cannot parse {raw!r}") from None
        if idx != len(nodes):
            raise ValidationError(f"line {lineno}: node index {idx} out of order")
        nodes.append((x, y))
    for key in ("id", "family", "seed", "n"):
        if key not in header:
            raise ValidationError(f"instance file missing header {key!r}")
    if int(header["n"]) != len(nodes):
        raise ValidationError(f"header says n={header['n']} but {len(nodes)} nodes listed")
    params = {}
    if "extent" in header:
        params["extent"] = float(header["extent"])
    if "clusters" in header:
        params["clusters"] = int(header["clusters"])
    if "spread" in header:
        params["spread"] = float(header["spread"])
    opt = header.get("optimal_length")
    return TspInstance(
        id=header["id"],
        nodes=tuple(nodes),
        family=header["family"],
        seed=int(header["seed"]),
        optimal_length=float(opt) if opt is not None else None,
        params=params,
    )


def write_instance(instance: TspInstance, path) -> Path:
    path = Path(path)
    path.write_text(format_instance(instance), encoding="utf-8")
    return path


def read_instance(path) -> TspInstance:
    return parse_instance(Path(path).read_text(encoding="utf-8"))
