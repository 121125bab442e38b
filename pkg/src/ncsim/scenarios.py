"""Scenario catalog runner, covert channel and the load-gate truth table."""

from __future__ import annotations

import fnmatch
import hashlib
import itertools
import json
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import yaml

from .config import ConfigError, MapEntry, RunConfig
from .isa import (DATA_VA, MASK64, NONCANONICAL_MASK, Instruction, MemRef, Program,
                  encode_listing2, parse_program)
from .pipeline import PRESETS, Core, CpuConfig, RunResult
from .sidechannel import (OracleArray, SignalHistogram, calibrate_threshold, flush_oracle,
                          majority_decode, reload_and_classify)

VERDICTS = ("leak", "no_leak", "fault_only")
FLUSH_COST = 1  # cycles charged per CLFLUSH in the covert-channel budget


class ExpectationViolated(AssertionError):
    def __init__(self, result: "ScenarioResult"):
        self.result = result
        super().__init__(f"{result.name} on {result.preset} (seed {result.seed}): "
                         f"expected {result.expected}, got {result.verdict}")


class ChannelBroken(RuntimeError):
    pass


@dataclass
class Scenario:
    name: str
    program: str
    expected: dict[str, str]
    memory_map: list[MapEntry]
    description: str = ""
    constants: dict[str, int] = field(default_factory=dict)
    setup: list[dict] = field(default_factory=list)
    smt_contexts: int = 1
    asids: dict[int, int] = field(default_factory=dict)
    oracle_context: int = 0
    leak_constant: str = "secret"
    random_constants: list[str] = field(default_factory=list)
    rounds: int = 1

    def resolve_constants(self, seed: int, overrides: Optional[dict] = None) -> dict[str, int]:
        c = dict(self.constants)
        rng = random.Random(f"{self.name}:{seed}")
        for name in self.random_constants:
            c[name] = rng.randrange(256)
        c.update(overrides or {})
        mask = NONCANONICAL_MASK
        c.setdefault("mask", mask)
        c.setdefault("decoy", c.get("secret", 0) ^ 0xFF)
        if "data_va" in c:
            c.setdefault("data_alias", c["data_va"] | mask)
        if "attacker_va" in c:
            c.setdefault("attacker_alias", c["attacker_va"] | mask)
        if "sandbox_base" in c:
            c.setdefault("bound_mask", ~(c["sandbox_base"] - 1) & MASK64)
        return c

    def build_program(self, constants: dict[str, int]) -> Program:
        return parse_program(self.program.format(**constants))


def _expr(text, constants: dict) -> int:
    if isinstance(text, int):
        return text
    return sum(int(part.strip(), 0) for part in str(text).format(**constants).split("+"))


_SCENARIO_KEYS = {"name", "program", "expected", "memory_map", "description", "setup",
                  "smt_contexts", "asids", "oracle_context", "leak_constant",
                  "random_constants", "rounds", "constants"}


def load_catalog(path=None) -> list[Scenario]:
    if path is None:
        text = resources.files("ncsim").joinpath("data/scenarios.yaml").read_text()
    else:
        text = Path(path).read_text()
    doc = yaml.safe_load(text)
    shared = doc.get("constants", {})
    out = []
    for raw in doc["scenarios"]:
        unknown = set(raw) - _SCENARIO_KEYS
        if unknown:
            raise ConfigError(f"scenario {raw.get('name')}: unknown key {sorted(unknown)[0]!r}")
        for preset, verdict in raw["expected"].items():
            if preset not in PRESETS or verdict not in VERDICTS:
                raise ConfigError(f"scenario {raw['name']}: bad expectation {preset}: {verdict}")
        consts = {**shared, **raw.get("constants", {})}
        out.append(Scenario(
            name=raw["name"],
            program=raw["program"],
            expected=dict(raw["expected"]),
            memory_map=[MapEntry.from_dict(e) for e in raw["memory_map"]],
            description=raw.get("description", ""),
            constants={k: int(v) for k, v in consts.items()},
            setup=list(raw.get("setup", [])),
            smt_contexts=raw.get("smt_contexts", 1),
            asids={int(k): int(v) for k, v in raw.get("asids", {}).items()},
            oracle_context=raw.get("oracle_context", 0),
            leak_constant=raw.get("leak_constant", "secret"),
            random_constants=list(raw.get("random_constants", [])),
            rounds=raw.get("rounds", 1),
        ))
    return out


CATALOG = {s.name: s for s in load_catalog()}


def get_scenario(name: str) -> Scenario:
    try:
        return CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; known: {', '.join(CATALOG)}") from None


def select(pattern: str = "*") -> list[Scenario]:
    return [s for s in CATALOG.values() if fnmatch.fnmatchcase(s.name, pattern)]


@dataclass
class ScenarioResult:
    name: str
    preset: str
    seed: int
    expected: str
    verdict: str
    leak_value: int
    recovered: Optional[int]
    hot_slots: list[int]
    faults: list[dict]
    cycles: int
    histograms: list[SignalHistogram]
    runs: list[RunResult]

    @property
    def passed(self) -> bool:
        return satisfies(self.verdict, self.expected)

    @property
    def trace(self) -> list[dict]:
        return [r for run in self.runs for r in run.trace]

    def summary(self, signal_csv_path: Optional[str] = None) -> dict:
        return {
            "name": self.name,
            "preset": self.preset,
            "seed": self.seed,
            "expected": self.expected,
            "verdict": self.verdict,
            "passed": self.passed,
            "leak_value": self.leak_value,
            "recovered": self.recovered,
            "hot_slots": self.hot_slots,
            "cycles": self.cycles,
            "signal_csv_path": signal_csv_path,
            "fault_records": self.faults,
        }


def satisfies(verdict: str, expected: str) -> bool:
    if expected == "no_leak":
        return verdict != "leak"
    return verdict == expected


def classify(recovered: Optional[int], leak_value: int, faulted: bool, any_hot: bool) -> str:
    if recovered is not None and recovered == leak_value:
        return "leak"
    if faulted and not any_hot:
        return "fault_only"
    return "no_leak"


def run_scenario(scenario: Scenario | str, seed: int = 0, *, preset: Optional[str] = None,
                 config: Optional[RunConfig] = None, constants: Optional[dict] = None,
                 rounds: Optional[int] = None, strict: bool = True,
                 backend: Optional[str] = None) -> ScenarioResult:
    """Run one catalog entry and judge it against its expectation for ``preset``.

    Raises :class:`ExpectationViolated` on a mismatch when ``strict``.
    """
    s = get_scenario(scenario) if isinstance(scenario, str) else scenario
    base = config or RunConfig()
    preset = preset or base.preset
    if preset not in s.expected:
        raise KeyError(f"{s.name} has no expectation for preset {preset!r}")
    consts = s.resolve_constants(seed, {**base.constants, **(constants or {})})
    program = s.build_program(consts)

    cpu = CpuConfig(preset=preset, rob_size=base.rob_size, window_cycles=base.window_cycles,
                    smt_contexts=s.smt_contexts, seed=seed, tlb_size=base.tlb_size,
                    walk_latency=base.walk_latency, max_cycles=base.max_cycles,
                    asids=dict(s.asids))
    core = Core(cpu, base.cache, jitter=base.jitter, backend=backend)
    for e in s.memory_map:
        e.apply(core)
    for step in s.setup:
        if "poke" in step:
            size = int(step.get("size", 1))
            value = _expr(step["value"], consts)
            core.poke(step.get("context", 0), _expr(step["poke"], consts),
                      (value & ((1 << (8 * size)) - 1)).to_bytes(size, "little"))
        elif "warm" in step:
            core.warm(step.get("context", 0), _expr(step["warm"], consts))
        elif "flush" in step:
            core.cache.flush_line(core.translate(step.get("context", 0),
                                                 _expr(step["flush"], consts)))
        else:
            raise ConfigError(f"scenario {s.name}: unknown setup step {step}")

    oracle = OracleArray(base=consts.get("oracle_va", base.oracle_base), context=s.oracle_context)
    threshold = base.threshold if base.threshold is not None else calibrate_threshold(core)
    paddrs = oracle.paddrs(core)
    histograms, runs = [], []
    for r in range(rounds or s.rounds):
        flush_oracle(core, oracle, paddrs)
        runs.append(core.run(program))
        histograms.append(reload_and_classify(core, oracle, threshold, seed * 7919 + r, paddrs))

    decoded = majority_decode(histograms)
    leak_value = consts[s.leak_constant]
    faults = [f.to_dict() for run in runs for f in run.faults]
    hot = sorted({i for h in histograms for i in h.hot_slots})
    verdict = classify(decoded.value, leak_value, bool(faults), bool(hot))
    result = ScenarioResult(s.name, preset, seed, s.expected[preset], verdict, leak_value,
                            decoded.value, hot, faults, sum(r.cycles for r in runs),
                            histograms, runs)
    if strict and not result.passed:
        raise ExpectationViolated(result)
    return result


def run_catalog(pattern: str = "*", seeds: Sequence[int] = (0,), presets: Sequence[str] = ("zen",),
                config: Optional[RunConfig] = None, out_dir=None) -> list[ScenarioResult]:
    """Run every matching scenario for each preset and seed, optionally writing
    ``<name>.<preset>.<seed>.{json,csv,trace.jsonl}`` under ``out_dir``."""
    results = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for s, preset, seed in itertools.product(select(pattern), presets, seeds):
        if preset not in s.expected:
            continue
        res = run_scenario(s, seed, preset=preset, config=config, strict=False)
        results.append(res)
        if out is not None:
            stem = f"{s.name}.{preset}.{seed}"
            csv_name = f"{stem}.csv"
            (out / csv_name).write_text(res.histograms[-1].to_csv())
            (out / f"{stem}.trace.jsonl").write_text("".join(r.trace_jsonl() for r in res.runs))
            (out / f"{stem}.json").write_text(
                json.dumps(res.summary(csv_name), indent=2, sort_keys=True) + "\n")
    return results


# ---- covert channel -------------------------------------------------------------

@dataclass
class CovertChannelReport:
    payload_bytes: int
    errors: int
    cycles_total: int
    rounds: int
    decoded: bytes

    @property
    def bandwidth(self) -> float:
        """Bytes per 10**6 simulated cycles."""
        return self.payload_bytes * 1_000_000 / self.cycles_total if self.cycles_total else 0.0

    @property
    def error_rate(self) -> float:
        return self.errors / self.payload_bytes if self.payload_bytes else 0.0

    def to_dict(self) -> dict:
        return {
            "payload_bytes": self.payload_bytes,
            "errors": self.errors,
            "error_rate": self.error_rate,
            "cycles_total": self.cycles_total,
            "bandwidth_bytes_per_mcycle": round(self.bandwidth, 6),
            "rounds": self.rounds,
            "decoded_sha256": hashlib.sha256(self.decoded).hexdigest(),
        }


def run_covert_channel(payload: bytes, config: Optional[RunConfig] = None, *, rounds: int = 1,
                       offset: int = 0, backend: Optional[str] = None,
                       strict: bool = True) -> CovertChannelReport:
    """Send ``payload`` one byte per transmission through the non-canonical
    alias load, decoding each with Flush+Reload and a ``rounds``-way majority.

    The cycle budget counts the sender program, one cycle per oracle flush and
    every timed reload.
    """
    if not payload:
        raise ValueError("payload must not be empty")
    cfg = config or RunConfig()
    core = cfg.build_core(backend=backend)
    oracle = OracleArray(base=cfg.oracle_base, context=cfg.oracle_context)
    threshold = cfg.threshold if cfg.threshold is not None else calibrate_threshold(core)
    paddrs = oracle.paddrs(core)
    programs = {}
    decoded = bytearray()
    errors = 0
    cycles = 0
    probe = 0
    for byte in payload:
        prog = programs.get(byte)
        if prog is None:
            prog = programs[byte] = encode_listing2(byte, offset, oracle_va=oracle.base)
        hists = []
        for _ in range(rounds):
            flush_oracle(core, oracle, paddrs)
            run = core.run(prog)
            h = reload_and_classify(core, oracle, threshold, cfg.seed * 1_000_003 + probe, paddrs)
            probe += 1
            hists.append(h)
            cycles += run.cycles + FLUSH_COST * oracle.slots + sum(h.latencies)
        value = majority_decode(hists).value
        if value != byte:
            errors += 1
        decoded.append(0 if value is None else value)
    report = CovertChannelReport(len(payload), errors, cycles, rounds, bytes(decoded))
    if strict and report.error_rate > 0.5:
        raise ChannelBroken(f"{errors}/{len(payload)} bytes decoded wrongly")
    return report


# ---- load-gate truth table ------------------------------------------------------

@dataclass(frozen=True)
class TruthRow:
    tlb_hit: bool
    permission_ok: bool
    l1d_resident: bool
    sq_match: bool
    flowed: bool
    source: Optional[str]
    value: Optional[int]

    @property
    def predicted(self) -> bool:
        # the pending store targets the load's own line, so its residency is l1d_resident
        qualified_stlf = self.sq_match and self.l1d_resident
        return self.tlb_hit and self.permission_ok and (self.l1d_resident or qualified_stlf)


def gate_row(tlb_hit: bool, permission_ok: bool, l1d_resident: bool, sq_match: bool,
             preset: str = "zen", offset: int = 0x40, memory_value: int = 0x11,
             store_value: int = 0x77) -> TruthRow:
    """Drive one alias load through the datapath with the four conditions set
    directly on the machine state."""
    core = Core(CpuConfig(preset=preset))
    target = DATA_VA + offset
    core.map_page(0, DATA_VA, 0x100, user=permission_ok)
    core.poke(0, target, bytes([memory_value]))
    paddr = core.translate(0, target)
    if tlb_hit:
        core.warm(0, target, line=False)
    if l1d_resident:
        core.cache.access(paddr)
    else:
        core.cache.flush_line(paddr)
    program = Program([
        Instruction("LDI", dst=3, src=target | NONCANONICAL_MASK),
        Instruction("LD", dst=4, mem=MemRef(3, 0, 1)),
        Instruction("HLT"),
    ])
    core.load(program)
    if sq_match:
        core.inject_pending_store(0, target, store_value, 1)
    run = core.run()
    rec = next(r for r in run.trace if r["opcode"] == "LD")
    load_value = None
    if rec["transient_data"]:
        load_value = store_value if rec["data_source"].startswith("StoreForward") else memory_value
    return TruthRow(tlb_hit, permission_ok, l1d_resident, sq_match, rec["transient_data"],
                    rec["data_source"], load_value)


def forwarding_truth_table(preset: str = "zen") -> list[TruthRow]:
    return [gate_row(*combo, preset=preset)
            for combo in itertools.product((True, False), repeat=4)]
