"""Benchmark CLI: sweeps scheduler x threads x precision over a preset or
model file, with repeated runs, per-cell timeouts, and CSV/JSON emission.

Cells execute strictly sequentially so measurements do not contend; the
engine inside a cell uses its configured worker pool. Timeouts are
cooperative: the generate loop checks its deadline between steps, marks
the run `timeout`, and the sweep continues.
"""

from __future__ import annotations

import argparse
import csv
import os
import resource
import statistics
import sys
from dataclasses import dataclass, field

from .errors import GenerationTimeout
from .graph import dump_graph
from .model import build_llama, gen_synthetic_weights, load_model, preset_config
from .profiler import write_profile_json
from .runtime import InferenceEngine
from .scheduler import AccelModel, SchedulerKind
from .tensor import DType

CSV_FIELDS = (
    "preset", "scheduler", "threads", "dtype", "run",
    "prefill_tps", "decode_tps", "peak_rss_bytes", "status",
)

_DTYPE_TOKENS = {"f32": DType.F32, "f16": DType.F16, "q8": DType.Q8_0, "q4": DType.Q4_0}
_DTYPE_NAMES = {v: k for k, v in _DTYPE_TOKENS.items()}
_SCHED_TOKENS = {k.value: k for k in SchedulerKind}


@dataclass
class SweepSpec:
    preset: str | None = "toy"
    model_path: str | None = None
    schedulers: list[SchedulerKind] = field(default_factory=lambda: [SchedulerKind.Sequential])
    threads: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5, 6])
    dtypes: list[DType] = field(default_factory=lambda: [DType.F16])
    prompt_ids: list[int] | None = None
    prompt_len: int = 7
    gen_tokens: int = 121
    runs: int = 5
    timeout_secs: float = 60.0
    accel: AccelModel = field(default_factory=AccelModel)
    seed: int = 42
    out_path: str = "results.csv"
    profile_path: str | None = None
    dump_graph_path: str | None = None


def _csv_list(text: str, parse_one, what: str):
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise argparse.ArgumentTypeError(f"{what} list is empty")
    return [parse_one(s) for s in items]


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="wavellm-bench",
        description="Tokens-per-second sweep over scheduler, threads, and precision.",
    )
    src = p.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=("toy", "1b-proportioned"), default="toy")
    src.add_argument("--model", metavar="PATH", help="model file saved by save_model")
    p.add_argument("--scheduler", default="seq",
                   help="comma list of seq,graph,graph-tensor,hybrid")
    p.add_argument("--threads", default="1,2,3,4,5,6", help="comma list of thread counts")
    p.add_argument("--dtype", default="f16", help="comma list of f32,f16,q8,q4")
    prompt = p.add_mutually_exclusive_group()
    prompt.add_argument("--prompt-ids", metavar="CSV", help="explicit token ids")
    prompt.add_argument("--prompt-len", type=int, default=7, metavar="N",
                        help="synthetic prompt length")
    p.add_argument("--gen", type=int, default=121, metavar="N", help="tokens to generate")
    p.add_argument("--runs", type=int, default=5, metavar="N", help="repetitions per cell")
    p.add_argument("--timeout-secs", type=float, default=60.0, metavar="N")
    p.add_argument("--launch-latency-us", type=float, default=0.0, metavar="N")
    p.add_argument("--transfer-gbps", type=float, default=1.0, metavar="F")
    p.add_argument("--unified-memory", type=_parse_bool, default=False, metavar="BOOL")
    p.add_argument("--seed", type=int, default=42, metavar="N")
    p.add_argument("--out", default="results.csv", metavar="PATH.csv")
    p.add_argument("--profile", metavar="PATH.json",
                   help="write op/matmul breakdowns from the last completed run")
    p.add_argument("--dump-graph", metavar="PATH.txt", help="write the graph debug dump")
    p.add_argument("--summarize", metavar="PATH.csv",
                   help="print the per-cell mean/stddev table for an existing CSV and exit")
    return p


def parse_args(argv: list[str]) -> SweepSpec:
    """Parse CLI flags into a SweepSpec. Invalid values exit with a usage
    error and nonzero status."""
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.summarize is not None:
        spec = SweepSpec()
        spec.summarize_only = ns.summarize  # type: ignore[attr-defined]
        return spec

    def fail(msg: str):
        parser.error(msg)

    try:
        schedulers = _csv_list(ns.scheduler, lambda s: _SCHED_TOKENS[s], "scheduler")
    except KeyError as exc:
        fail(f"unknown scheduler {exc.args[0]!r}; choose from {sorted(_SCHED_TOKENS)}")
    try:
        dtypes = _csv_list(ns.dtype, lambda s: _DTYPE_TOKENS[s], "dtype")
    except KeyError as exc:
        fail(f"unknown dtype {exc.args[0]!r}; choose from {sorted(_DTYPE_TOKENS)}")
    threads = _csv_list(ns.threads, int, "threads")
    if any(t < 1 for t in threads):
        fail("--threads values must be >= 1")
    if ns.runs < 1:
        fail("--runs must be >= 1")
    if ns.gen < 0:
        fail("--gen must be >= 0")
    if ns.prompt_ids is not None:
        prompt_ids = _csv_list(ns.prompt_ids, int, "prompt ids")
        prompt_len = len(prompt_ids)
    else:
        prompt_ids = None
        prompt_len = ns.prompt_len
        if prompt_len < 1:
            fail("--prompt-len must be >= 1")

    return SweepSpec(
        preset=None if ns.model else ns.preset,
        model_path=ns.model,
        schedulers=schedulers,
        threads=threads,
        dtypes=dtypes,
        prompt_ids=prompt_ids,
        prompt_len=prompt_len,
        gen_tokens=ns.gen,
        runs=ns.runs,
        timeout_secs=ns.timeout_secs,
        accel=AccelModel(
            launch_latency_us=ns.launch_latency_us,
            transfer_bandwidth=ns.transfer_gbps * 1e9,
            unified_memory=ns.unified_memory,
        ),
        seed=ns.seed,
        out_path=ns.out,
        profile_path=ns.profile,
        dump_graph_path=ns.dump_graph,
    )


def _peak_rss_bytes() -> int:
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


def _synthetic_prompt(n: int, vocab: int) -> list[int]:
    return [(i + 1) % vocab for i in range(n)]


def run_sweep(spec: SweepSpec) -> int:
    """Execute the cartesian product of cells, streaming rows to the CSV.
    Returns the number of rows written (excluding the header)."""
    sources: dict[DType, tuple] = {}

    def source_for(dtype: DType):
        if dtype not in sources:
            if spec.model_path:
                config, weights = load_model(spec.model_path)
                sources[config.dtype] = (config, weights)
                if config.dtype != dtype:
                    sources[dtype] = (config, weights)
            else:
                config = preset_config(spec.preset, dtype)
                sources[dtype] = (config, gen_synthetic_weights(config, spec.seed))
        return sources[dtype]

    label = spec.preset or os.path.basename(spec.model_path or "")
    if spec.model_path:
        spec.dtypes = spec.dtypes[:1]  # the file fixes the precision axis
    import time as _time

    last_trace = None
    rows_written = 0
    with open(spec.out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for scheduler in spec.schedulers:
            for threads in spec.threads:
                for dtype in spec.dtypes:
                    config, weights = source_for(dtype)
                    prompt = spec.prompt_ids or _synthetic_prompt(spec.prompt_len, config.vocab)
                    dtype_name = _DTYPE_NAMES[config.dtype if spec.model_path else dtype]
                    cell_status = None
                    for run_idx in range(1, spec.runs + 1):
                        if cell_status in ("timeout", "oom"):
                            # the whole cell shares the failure; do not re-run
                            writer.writerow([label, scheduler.value, threads, dtype_name,
                                             run_idx, "", "", _peak_rss_bytes(), cell_status])
                            rows_written += 1
                            continue
                        accel = spec.accel if scheduler == SchedulerKind.Hybrid else None
                        deadline = _time.monotonic() + spec.timeout_secs
                        try:
                            with InferenceEngine(
                                config, weights, scheduler=scheduler,
                                n_threads=threads, accel=accel,
                            ) as engine:
                                _, metrics = engine.generate(
                                    prompt, spec.gen_tokens, deadline=deadline
                                )
                                last_trace = engine.trace_records()
                            writer.writerow([
                                label, scheduler.value, threads, dtype_name, run_idx,
                                f"{metrics.prefill_tps:.6g}", f"{metrics.decode_tps:.6g}",
                                _peak_rss_bytes(), "ok",
                            ])
                        except GenerationTimeout:
                            cell_status = "timeout"
                            writer.writerow([label, scheduler.value, threads, dtype_name,
                                             run_idx, "", "", _peak_rss_bytes(), "timeout"])
                        except MemoryError:
                            cell_status = "oom"
                            writer.writerow([label, scheduler.value, threads, dtype_name,
                                             run_idx, "", "", _peak_rss_bytes(), "oom"])
                        rows_written += 1
                        fh.flush()

    if spec.profile_path and last_trace:
        write_profile_json(last_trace, spec.profile_path)
    if spec.dump_graph_path:
        config, _ = next(iter(sources.values()))
        with open(spec.dump_graph_path, "w") as fh:
            fh.write(dump_graph(build_llama(config)))
    return rows_written


def summarize(csv_path: str) -> int:
    """Group rows by (preset, scheduler, threads, dtype); print mean and
    stddev of decode_tps over ok rows. Timeout/oom rows are excluded."""
    groups: dict[tuple, list[float]] = {}
    try:
        with open(csv_path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                print("no data")
                return 0
            missing = set(CSV_FIELDS) - set(reader.fieldnames)
            if missing:
                raise ValueError(f"line 1: missing columns {sorted(missing)}")
            for lineno, row in enumerate(reader, start=2):
                key = (row["preset"], row["scheduler"], row["threads"], row["dtype"])
                groups.setdefault(key, [])
                if row["status"] != "ok":
                    continue
                try:
                    groups[key].append(float(row["decode_tps"]))
                except ValueError as exc:
                    raise ValueError(f"line {lineno}: bad decode_tps {row['decode_tps']!r}") from exc
    except FileNotFoundError:
        raise ValueError(f"no such file: {csv_path}") from None

    if not groups:
        print("no data")
        return 0
    header = f"{'preset':>16} {'scheduler':>12} {'threads':>7} {'dtype':>5} {'runs':>4} {'mean tk/s':>10} {'stddev':>8}"
    print(header)
    for key in sorted(groups):
        vals = groups[key]
        preset, sched, threads, dtype = key
        if vals:
            mean = statistics.fmean(vals)
            sd = statistics.pstdev(vals)
            print(f"{preset:>16} {sched:>12} {threads:>7} {dtype:>5} {len(vals):>4} {mean:>10.2f} {sd:>8.2f}")
        else:
            print(f"{preset:>16} {sched:>12} {threads:>7} {dtype:>5} {0:>4} {'-':>10} {'-':>8}")
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    spec = parse_args(argv)
    summarize_only = getattr(spec, "summarize_only", None)
    try:
        if summarize_only is not None:
            return summarize(summarize_only)
        rows = run_sweep(spec)
        print(f"wrote {rows} rows to {spec.out_path}")
        summarize(spec.out_path)
        return 0
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
