"""ncsim command line: run, scenarios, covert, calibrate.

Exit codes: 0 success, 1 parse or usage error, 2 config error, 3 runtime
failure (simulation error, failed expectations, broken channel).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, RunConfig, default_config_path
from .isa import AsmSyntaxError, parse_program
from .pipeline import PRESETS, SimulationError
from .scenarios import ChannelBroken, run_catalog, run_covert_channel, select
from .sidechannel import (SCRATCH_PADDR, CalibrationFailed, OracleArray, calibrate_threshold,
                          flush_oracle, reload_and_classify)

EXIT_OK, EXIT_PARSE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_PARSE, f"{self.prog}: error: {message}\n")


def _err(msg: str) -> None:
    print(f"ncsim: {msg}", file=sys.stderr)


def _load_config(path: Optional[str]) -> RunConfig:
    path = path or default_config_path()
    return RunConfig.load(path) if path else RunConfig()


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    try:
        text = Path(args.program).read_text()
    except OSError as e:
        raise UsageError(f"cannot read {args.program}: {e.strerror}") from None
    program = parse_program(text)
    cfg = _load_config(args.config)
    if args.preset:
        cfg.preset = args.preset
    core = cfg.build_core()
    oracle = OracleArray(base=cfg.oracle_base, context=cfg.oracle_context)
    threshold = cfg.threshold if cfg.threshold is not None else calibrate_threshold(core)
    flush_oracle(core, oracle)
    result = core.run(program)
    hist = reload_and_classify(core, oracle, threshold, seed=cfg.seed)

    out = _out_dir(args, cfg)
    stem = Path(args.program).stem
    (out / f"{stem}.trace.jsonl").write_text(result.trace_jsonl())
    (out / f"{stem}.signal.csv").write_text(hist.to_csv())
    _write_json(out / f"{stem}.json", {
        "program": Path(args.program).name,
        "preset": cfg.preset,
        "cycles": result.cycles,
        "threshold": threshold,
        "hot_slots": hist.hot_slots,
        "signal_csv_path": f"{stem}.signal.csv",
        "trace_path": f"{stem}.trace.jsonl",
        "fault_records": [f.to_dict() for f in result.faults],
        "registers": [[f"{v:#x}" for v in regs] for regs in result.registers],
    })
    hot = ", ".join(str(i) for i in hist.hot_slots) or "none"
    print(f"{stem}: {result.cycles} cycles, {len(result.faults)} fault(s), hot slots: {hot}")
    return EXIT_OK


def cmd_scenarios(args) -> int:
    cfg = _load_config(args.config)
    if args.seeds < 1:
        raise UsageError("--seeds must be at least 1")
    presets = PRESETS if args.preset == "all" else (args.preset or cfg.preset,)
    chosen = select(args.filter)
    if not chosen:
        print(f"0 scenarios match {args.filter!r}")
        return EXIT_OK
    out = _out_dir(args, cfg)
    results = run_catalog(args.filter, range(args.seeds), presets, cfg, out)
    rows = {}
    for r in results:
        row = rows.setdefault((r.name, r.preset), [r.expected, {}, 0, 0])
        row[1][r.verdict] = row[1].get(r.verdict, 0) + 1
        row[2] += 1
        row[3] += r.passed
    width = max(len(n) for n, _ in rows)
    print(f"{'scenario':<{width}}  {'preset':<14} {'expected':<10} {'verdicts':<28} pass")
    for (name, preset), (expected, verdicts, n, ok) in rows.items():
        seen = " ".join(f"{v}:{c}" for v, c in sorted(verdicts.items()))
        print(f"{name:<{width}}  {preset:<14} {expected:<10} {seen:<28} {ok}/{n}")
    summary = [{"name": r.name, "preset": r.preset, "seed": r.seed, "verdict": r.verdict,
                "expected": r.expected, "passed": r.passed} for r in results]
    _write_json(out / "scenarios.json", summary)
    failed = sorted({f"{r.name}[{r.preset}]" for r in results if not r.passed})
    if failed:
        _err("failed: " + ", ".join(failed))
        return EXIT_RUNTIME
    print(f"{len(rows)} scenario/preset pairs, {len(results)} runs, all match")
    return EXIT_OK


def cmd_covert(args) -> int:
    try:
        payload = Path(args.payload).read_bytes()
    except OSError as e:
        raise UsageError(f"cannot read {args.payload}: {e.strerror}") from None
    if not payload:
        raise UsageError("payload is empty")
    cfg = _load_config(args.config)
    if args.jitter is not None:
        cfg.jitter = args.jitter
    if args.seed is not None:
        cfg.seed = args.seed
    report = run_covert_channel(payload, cfg, rounds=args.rounds)
    doc = {**report.to_dict(), "seed": cfg.seed, "jitter": cfg.jitter, "preset": cfg.preset}
    out = _out_dir(args, cfg)
    _write_json(out / "covert.json", doc)
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _load_config(args.config)
    core = cfg.build_core()
    threshold = calibrate_threshold(core, samples=args.samples)
    hit = [core.cache.hit_sample() for _ in range(args.samples)]
    miss = [core.cache.miss_sample() for _ in range(args.samples)]
    doc = {"threshold": threshold, "hit_min": min(hit), "hit_max": max(hit),
           "miss_min": min(miss), "miss_max": max(miss), "jitter": cfg.jitter,
           "samples": args.samples, "scratch_paddr": f"{SCRATCH_PADDR:#x}"}
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ncsim", description="Cycle-stepped OoO core with a non-canonical load gate.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="YAML run config (default: $NCSIM_CONFIG)")
        sp.add_argument("--out", help="output directory (default: config output_dir)")

    r = sub.add_parser("run", help="assemble and run a program, then Flush+Reload the oracle")
    r.add_argument("program")
    r.add_argument("--preset", choices=PRESETS)
    common(r)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("scenarios", help="run the scenario catalog")
    s.add_argument("--filter", default="*", help="name glob (default '*')")
    s.add_argument("--seeds", type=int, default=1, help="number of seeds, 0..N-1")
    s.add_argument("--preset", choices=(*PRESETS, "all"))
    common(s)
    s.set_defaults(func=cmd_scenarios)

    c = sub.add_parser("covert", help="send a file through the covert channel")
    c.add_argument("--payload", required=True)
    c.add_argument("--rounds", type=int, default=1)
    c.add_argument("--jitter", type=int)
    c.add_argument("--seed", type=int)
    common(c)
    c.set_defaults(func=cmd_covert)

    k = sub.add_parser("calibrate", help="report the hit/miss threshold")
    k.add_argument("--samples", type=int, default=1000)
    k.add_argument("--config", help="YAML run config (default: $NCSIM_CONFIG)")
    k.set_defaults(func=cmd_calibrate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (AsmSyntaxError, UsageError) as e:
        _err(str(e))
        return EXIT_PARSE
    except ConfigError as e:
        _err(f"config error: {e}")
        return EXIT_CONFIG
    except (SimulationError, ChannelBroken, CalibrationFailed, ValueError) as e:
        _err(f"{type(e).__name__}: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
