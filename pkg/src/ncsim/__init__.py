"""ncsim: a cycle-stepped out-of-order core that reproduces the non-canonical
address load gate and the Flush+Reload side channel built on it."""

from .cache import Cache, CacheConfig, PhysicalMemory
from .config import ConfigError, RunConfig
from .isa import (AsmSyntaxError, Instruction, MemRef, Program, disassemble, encode_listing2,
                  format_instruction, parse_program)
from .pipeline import PRESETS, Core, CpuConfig, FaultKind, RunResult, SimulationError
from .scenarios import (CATALOG, ChannelBroken, CovertChannelReport, ExpectationViolated,
                        Scenario, ScenarioResult, forwarding_truth_table, run_covert_channel,
                        run_scenario)
from .sidechannel import (CalibrationFailed, OracleArray, SignalHistogram, calibrate_threshold,
                          flush_oracle, majority_decode, reload_and_classify)
from .vmem import PageTable, Tlb, canonical_alias, is_canonical

__version__ = "0.1.0"

__all__ = [
    "AsmSyntaxError", "CATALOG", "Cache", "CacheConfig", "CalibrationFailed", "ChannelBroken",
    "ConfigError", "Core", "CovertChannelReport", "CpuConfig", "ExpectationViolated", "FaultKind",
    "Instruction", "MemRef", "OracleArray", "PRESETS", "PageTable", "PhysicalMemory", "Program",
    "RunConfig", "RunResult", "Scenario", "ScenarioResult", "SignalHistogram", "SimulationError",
    "Tlb", "calibrate_threshold", "canonical_alias", "disassemble", "encode_listing2",
    "flush_oracle", "format_instruction", "forwarding_truth_table", "is_canonical",
    "majority_decode", "parse_program", "reload_and_classify", "run_covert_channel",
    "run_scenario",
]
