"""Command-line harness: ``pairea gen | run | compare | report``.

Every command writes under ``--out`` and finishes by writing
``manifest-<command>.txt`` there, listing the files it produced. Options may
also come from a ``key = value`` file given with ``--config``; flags win.

Exit codes: 0 ok, 2 configuration, 3 transport/API, 4 strategy/engine, 5 I/O.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .engine import EngineConfig, JsonlSink, RunRecord, run, run_id_for
from .errors import (
    ApiError, CapacityError, ConfigError, EngineError, PairError, TransportError, ValidationError,
)
from .llm_bridge import DEFAULT_BUDGET, LlmSession, ModelEndpointConfig
from .llm_bridge.prompts import MODES
from .metrics import column_key, emit_reports, summarize
from .selection import STRATEGIES
from .tsp_core import FAMILIES, TspInstance, generate, held_karp_optimal, read_instance, write_instance

log = logging.getLogger("pairea")

EXIT_OK, EXIT_CONFIG, EXIT_TRANSPORT, EXIT_STRATEGY, EXIT_IO = 0, 2, 3, 4, 5


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, EngineError) and exc.__cause__ is not None:
        exc = exc.__cause__
    if isinstance(exc, (TransportError, ApiError)):
        return EXIT_TRANSPORT
    if isinstance(exc, (ConfigError, ValidationError, CapacityError, FileNotFoundError)):
        return EXIT_CONFIG
    if isinstance(exc, PairError):
        return EXIT_STRATEGY
    if isinstance(exc, OSError):
        return EXIT_IO
    raise exc


# -- options and config files ------------------------------------------------

def _ints(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v.strip()]


def _strs(text: str) -> list[str]:
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


# name -> (type, default, help); bools become --x / --no-x
ENGINE_OPTIONS = {
    "strategy": (str, "pair_mock", f"one of {', '.join(STRATEGIES)}"),
    "mode": (str, "engine_executes", f"one of {', '.join(MODES)}"),
    "population": (int, 16, "population size N"),
    "generations": (int, 250, "max generations, initial population included"),
    "offspring": (int, None, "children per generation (default N)"),
    "early_stop": (_bool, True, "stop once the known optimum is reached"),
    "w_fit": (float, 1.0, "mock PAIR fitness weight"),
    "w_div": (float, 1.0, "mock PAIR diversity weight"),
    "base_url": (str, None, "chat-completions endpoint (or PAIR_LLM_BASE_URL)"),
    "model": (str, None, "model name (or PAIR_LLM_MODEL)"),
    "timeout": (float, 120.0, "request timeout in seconds"),
    "max_retries": (int, 3, "attempts per request"),
    "max_requeries": (int, 2, "re-queries per generation before falling back"),
    "per_pair": (_bool, False, "one model request per pair"),
    "budget": (int, DEFAULT_BUDGET, "prompt size limit in characters"),
}

COMMAND_OPTIONS = {
    "gen": {
        "family": (str, "rue", f"one of {', '.join(FAMILIES)}"),
        "n": (int, 10, "nodes per instance"),
        "count": (int, 5, "number of instances"),
        "seed": (int, 0, "master seed"),
        "extent": (float, 100.0, "side of the coordinate square"),
        "clusters": (int, None, "clu: number of clusters"),
        "spread": (float, None, "clu: cluster standard deviation"),
    },
    "run": {
        "instance": (str, None, "instance file"),
        "seed": (int, 0, "engine seed"),
        **ENGINE_OPTIONS,
    },
    "compare": {
        "families": (_strs, ["rue", "clu"], "comma-separated families"),
        "node_counts": (_ints, [10, 15, 20, 25], "comma-separated node counts"),
        "instances_per_cell": (int, 5, "instances per (family, n)"),
        "instances": (str, None, "read instances from this directory instead of generating"),
        "strategies": (_strs, ["pair_mock", "random_lmea"], "comma-separated strategies"),
        "runs_per_instance": (int, 1, "runs per instance and strategy"),
        "seed": (int, 0, "master seed"),
        "jobs": (int, 1, "concurrent runs"),
        "extent": (float, 100.0, "side of the coordinate square for generated instances"),
        **{k: v for k, v in ENGINE_OPTIONS.items() if k != "strategy"},
    },
    "report": {},
}


def read_config_file(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; dashes in keys become underscores."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def resolve_options(command: str, args: argparse.Namespace) -> dict:
    table = COMMAND_OPTIONS[command]
    file_values = read_config_file(args.config) if args.config else {}
    unknown = set(file_values) - set(table)
    if unknown:
        raise ConfigError(f"unknown config key(s) for {command}: {', '.join(sorted(unknown))}")
    opts = {}
    for name, (kind, default, _) in table.items():
        value = getattr(args, name)
        if value is None and name in file_values:
            try:
                value = kind(file_values[name])
            except ValueError as e:
                raise ConfigError(f"config key {name}: {e}") from None
        opts[name] = default if value is None else value
    return opts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pairea", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for command, table in COMMAND_OPTIONS.items():
        p = sub.add_parser(command)
        p.add_argument("--out", default=".", help="output root (default: current directory)")
        p.add_argument("--config", help="key = value option file; flags override it")
        for name, (kind, default, help_text) in table.items():
            flag = "--" + name.replace("_", "-")
            shown = f"{help_text} (default: {default})" if default is not None else help_text
            if kind is _bool:
                p.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction,
                               default=None, help=shown)
            else:
                p.add_argument(flag, dest=name, type=kind, default=None, help=shown)
    return parser


# -- helpers -----------------------------------------------------------------

def derive_seed(*parts) -> int:
    """Stable 32-bit seed from ints and strings (strings via CRC-32)."""
    words = [zlib.crc32(p.encode()) if isinstance(p, str) else int(p) for p in parts]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


def make_instances(family: str, n: int, count: int, seed: int, out_dir: Path,
                   **gen_kw) -> list[Path]:
    """Generate, solve exactly and write ``count`` instances named ``<family>-<n>-<i>``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        iid = f"{family}-{n}-{i}"
        inst = generate(family, n, derive_seed(seed, f"{family}-{n}", i), id=iid, **gen_kw)
        held_karp_optimal(inst)
        paths.append(write_instance(inst, out_dir / f"{iid}.tsp"))
        log.info("wrote %s (optimal %.4f)", paths[-1], inst.optimal_length)
    return paths


def write_manifest(out: Path, command: str, paths) -> Path:
    rel = sorted({str(Path(p).resolve().relative_to(out.resolve())) for p in paths})
    path = out / f"manifest-{command}.txt"
    path.write_text("".join(r + "\n" for r in rel), encoding="utf-8")
    return path


def engine_config(opts: dict, strategy: str, seed: int) -> EngineConfig:
    cfg = EngineConfig(
        population_size=opts["population"], max_generations=opts["generations"],
        strategy=strategy, mode=opts["mode"], seed=seed, early_stop_on_optimal=opts["early_stop"],
        offspring_needed=opts["offspring"], mock_weights=(opts["w_fit"], opts["w_div"]),
    )
    cfg.validate()
    return cfg


def endpoint_config(opts: dict) -> ModelEndpointConfig:
    # the API key only ever comes from the environment
    cfg = ModelEndpointConfig.from_env(
        base_url=opts["base_url"], model_name=opts["model"], timeout=opts["timeout"],
        max_retries=opts["max_retries"], max_requeries_per_generation=opts["max_requeries"])
    cfg.validate()
    return cfg


def model_label(opts: dict, strategy: str) -> str:
    if strategy != "pair_llm":
        return ""
    return endpoint_config(opts).model_name or "scripted"


def load_record(path: Path) -> RunRecord | None:
    if not path.is_file():
        return None
    try:
        return RunRecord.from_jsonl(path.read_text(encoding="utf-8"))
    except (ValueError, KeyError):
        return None


def execute_run(instance_path: str, opts: dict, strategy: str, seed: int, out: str,
                transport=None) -> tuple[str, int, str]:
    """One engine run writing ``runs/<run_id>.jsonl`` and a timing sidecar.

    Returns ``(run_id, exit_code, message)``; failures are reported, not raised.
    """
    out = Path(out)
    run_id = "?"
    try:
        inst = read_instance(instance_path)
        cfg = engine_config(opts, strategy, seed)
        session = None
        if strategy == "pair_llm":
            session = LlmSession(endpoint_config(opts), transport=transport, mode=opts["mode"],
                                 per_pair=opts["per_pair"], budget=opts["budget"])
        run_id = run_id_for(inst, cfg, session.label if session else "")
        sink = JsonlSink(out / "runs" / f"{run_id}.jsonl")
        try:
            record = run(inst, cfg, session, sink)
        finally:
            sink.close()
        timing = {"run_id": run_id, "duration_s": record.duration_s,
                  "generations_run": len(record.generations)}
        (out / "runs" / f"{run_id}.timing.json").write_text(json.dumps(timing, sort_keys=True) + "\n")
        return run_id, EXIT_OK, f"best {record.best.length:.4f} after {len(record.generations)} generations"
    except Exception as e:  # noqa: BLE001 - triaged into exit codes
        code = exit_code_for(e)
        return run_id, code, f"{type(e).__name__}: {e}"


def write_report(out: Path, problems=(), columns=()) -> list[Path]:
    records = []
    for path in sorted((out / "runs").glob("*.jsonl")):
        rec = load_record(path)
        if rec is None or rec.status != "complete":
            log.warning("skipping incomplete record %s", path)
            continue
        records.append(rec)
    if not records:
        log.warning("no complete run records under %s; writing an empty table", out / "runs")
    return emit_reports(summarize(records), records, out / "report", problems, columns)


# -- commands ----------------------------------------------------------------

def cmd_gen(opts: dict, out: Path) -> int:
    if opts["family"] not in FAMILIES:
        raise ConfigError(f"unknown family {opts['family']!r}")
    if opts["count"] < 1:
        raise ConfigError("--count must be >= 1")
    kw = {"extent": opts["extent"]}
    if opts["family"] == "clu":
        kw.update(k=opts["clusters"], spread=opts["spread"])
    paths = make_instances(opts["family"], opts["n"], opts["count"], opts["seed"], out / "instances", **kw)
    manifest = write_manifest(out, "gen", paths)
    print(manifest.read_text(), end="")
    return EXIT_OK


def cmd_run(opts: dict, out: Path) -> int:
    if not opts["instance"]:
        raise ConfigError("--instance is required")
    if not Path(opts["instance"]).is_file():
        raise ConfigError(f"instance file not found: {opts['instance']}")
    run_id, code, message = execute_run(opts["instance"], opts, opts["strategy"], opts["seed"], str(out))
    print(f"{run_id}: {message}")
    if code != EXIT_OK:
        return code
    rec = load_record(out / "runs" / f"{run_id}.jsonl")
    paths = [out / "runs" / f"{run_id}.jsonl", out / "runs" / f"{run_id}.timing.json"]
    paths += emit_reports(summarize([rec]), [rec], out / "report")
    write_manifest(out, "run", paths)
    return EXIT_OK


def _compare_instances(opts: dict, out: Path) -> list[Path]:
    if opts["instances"]:
        src = Path(opts["instances"])
        paths = sorted(src.glob("*.tsp"))
        if not paths:
            raise ConfigError(f"no *.tsp files in {src}")
        wanted = {(f, n) for f in opts["families"] for n in opts["node_counts"]}
        keep = []
        for p in paths:
            inst = read_instance(p)
            if (inst.family, inst.n) in wanted:
                keep.append(p)
        return keep
    paths = []
    for family in opts["families"]:
        for n in opts["node_counts"]:
            for i in range(opts["instances_per_cell"]):
                path = out / "instances" / f"{family}-{n}-{i}.tsp"
                if path.is_file():
                    paths.append(path)
                    continue
                kw = {"extent": opts["extent"]}
                inst = generate(family, n, derive_seed(opts["seed"], f"{family}-{n}", i),
                                id=f"{family}-{n}-{i}", **kw)
                held_karp_optimal(inst)
                path.parent.mkdir(parents=True, exist_ok=True)
                paths.append(write_instance(inst, path))
    return paths


def cmd_compare(opts: dict, out: Path) -> int:
    bad = [f for f in opts["families"] if f not in FAMILIES]
    bad += [s for s in opts["strategies"] if s not in STRATEGIES]
    if bad:
        raise ConfigError(f"unknown family/strategy: {', '.join(bad)}")
    if opts["instances_per_cell"] < 1 or opts["runs_per_instance"] < 1 or opts["jobs"] < 1:
        raise ConfigError("instances-per-cell, runs-per-instance and jobs must be >= 1")
    for s in opts["strategies"]:
        engine_config(opts, s, 0)
    instance_paths = _compare_instances(opts, out)
    instances: list[tuple[Path, TspInstance]] = [(p, read_instance(p)) for p in instance_paths]

    tasks = []
    for path, inst in instances:
        for rep in range(opts["runs_per_instance"]):
            # seeds depend on the instance only, so every strategy starts from the same population
            seed = derive_seed(opts["seed"], inst.id, rep)
            for strategy in opts["strategies"]:
                cfg = engine_config(opts, strategy, seed)
                run_id = run_id_for(inst, cfg, model_label(opts, strategy))
                rec = load_record(out / "runs" / f"{run_id}.jsonl")
                if rec is not None and rec.status == "complete":
                    log.info("resume: %s already complete", run_id)
                    continue
                tasks.append((str(path), opts, strategy, seed, str(out)))

    failures = []
    if opts["jobs"] == 1:
        results = [execute_run(*t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=opts["jobs"]) as pool:
            results = list(pool.map(execute_run, *zip(*tasks))) if tasks else []
    for run_id, code, message in results:
        print(f"{run_id}: {message}")
        err_path = out / "runs" / f"{run_id}.error.txt"
        if code != EXIT_OK:
            failures.append(code)
            err_path.parent.mkdir(parents=True, exist_ok=True)
            err_path.write_text(f"exit {code}\n{message}\n", encoding="utf-8")
        elif err_path.exists():
            err_path.unlink()

    problems = sorted({f"{f}-{n}" for f in opts["families"] for n in opts["node_counts"]})
    columns = sorted({column_key(s, model_label(opts, s)) for s in opts["strategies"]})
    grid = {"problems": problems, "columns": columns}
    (out / "experiment.json").write_text(json.dumps(grid, indent=2, sort_keys=True) + "\n")
    paths = instance_paths + [out / "experiment.json"]
    paths += sorted((out / "runs").glob("*")) if (out / "runs").is_dir() else []
    paths += write_report(out, problems, columns)
    write_manifest(out, "compare", paths)
    print((out / "report" / "table.tsv").read_text(), end="")
    if failures:
        log.warning("%d of %d runs failed; see runs/*.error.txt", len(failures), len(tasks))
        return max(failures)
    return EXIT_OK


def cmd_report(opts: dict, out: Path) -> int:
    grid_path = out / "experiment.json"
    grid = json.loads(grid_path.read_text()) if grid_path.is_file() else {}
    paths = write_report(out, grid.get("problems", ()), grid.get("columns", ()))
    write_manifest(out, "report", paths)
    print((out / "report" / "table.tsv").read_text(), end="")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "compare": cmd_compare, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    t0 = time.perf_counter()
    try:
        opts = resolve_options(args.command, args)
        out.mkdir(parents=True, exist_ok=True)
        code = COMMANDS[args.command](opts, out)
    except Exception as e:  # noqa: BLE001 - triaged into exit codes
        code = exit_code_for(e)
        print(f"error: {e}", file=sys.stderr)
    log.info("%s finished in %.1fs with exit code %d", args.command, time.perf_counter() - t0, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
