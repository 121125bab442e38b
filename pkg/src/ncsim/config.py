"""Run configuration: one YAML document, unknown keys rejected."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .cache import CacheConfig
from .isa import DATA_VA, ORACLE_VA
from .pipeline import PRESETS, Core, CpuConfig

CONFIG_ENV = "NCSIM_CONFIG"

DELAY_VA = 0x0000_1000_0001_0000
KERNEL_VA = 0xFFFF_8000_0000_0000


class ConfigError(ValueError):
    pass


def _int(value: Any, key: str) -> int:
    if isinstance(value, bool):
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        try:
            return int(value, 0)
        except ValueError:
            pass
    raise ConfigError(f"{key}: expected an integer, got {value!r}")


def _bool(value: Any, key: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{key}: expected true/false, got {value!r}")
    return value


def _reject_unknown(d: dict, allowed, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key {unknown[0]!r}")


@dataclass(frozen=True)
class MapEntry:
    context: int
    vaddr: int
    ppage: int
    user: bool = True
    writable: bool = True
    count: int = 1

    @classmethod
    def from_dict(cls, d: dict, where: str = "memory_map") -> "MapEntry":
        _reject_unknown(d, {f.name for f in fields(cls)}, where)
        for k in ("context", "vaddr", "ppage"):
            if k not in d:
                raise ConfigError(f"{where}: missing key {k!r}")
        return cls(
            context=_int(d["context"], f"{where}.context"),
            vaddr=_int(d["vaddr"], f"{where}.vaddr"),
            ppage=_int(d["ppage"], f"{where}.ppage"),
            user=_bool(d.get("user", True), f"{where}.user"),
            writable=_bool(d.get("writable", True), f"{where}.writable"),
            count=_int(d.get("count", 1), f"{where}.count"),
        )

    def to_dict(self) -> dict:
        return {"context": self.context, "vaddr": f"{self.vaddr:#x}", "ppage": f"{self.ppage:#x}",
                "user": self.user, "writable": self.writable, "count": self.count}

    def apply(self, core: Core) -> None:
        for i in range(self.count):
            core.map_page(self.context, self.vaddr + i * 4096, self.ppage + i, self.user,
                          self.writable)


@dataclass(frozen=True)
class MemInit:
    context: int
    vaddr: int
    data: bytes

    @classmethod
    def from_dict(cls, d: dict, where: str = "memory") -> "MemInit":
        _reject_unknown(d, {"context", "vaddr", "data"}, where)
        for k in ("context", "vaddr", "data"):
            if k not in d:
                raise ConfigError(f"{where}: missing key {k!r}")
        try:
            data = bytes.fromhex(str(d["data"]))
        except ValueError:
            raise ConfigError(f"{where}.data: expected hex bytes") from None
        return cls(_int(d["context"], f"{where}.context"), _int(d["vaddr"], f"{where}.vaddr"), data)

    def to_dict(self) -> dict:
        return {"context": self.context, "vaddr": f"{self.vaddr:#x}", "data": self.data.hex()}


STANDARD_LAYOUT = (
    MapEntry(0, DATA_VA, 0x100),
    MapEntry(0, DELAY_VA, 0x101),
    MapEntry(0, KERNEL_VA, 0x200, user=False),
    MapEntry(0, ORACLE_VA, 0x1000, count=256),
)


@dataclass
class RunConfig:
    preset: str = "zen"
    cache: CacheConfig = field(default_factory=CacheConfig)
    tlb_size: int = 64
    rob_size: int = 64
    window_cycles: int = 100
    walk_latency: int = 10
    smt_contexts: int = 1
    jitter: int = 0
    seed: int = 0
    threshold: Optional[int] = None
    max_cycles: int = 200_000
    asids: dict[int, int] = field(default_factory=dict)
    memory_map: list[MapEntry] = field(default_factory=lambda: list(STANDARD_LAYOUT))
    memory: list[MemInit] = field(default_factory=list)
    oracle_base: int = ORACLE_VA
    oracle_context: int = 0
    constants: dict[str, int] = field(default_factory=dict)
    output_dir: str = "ncsim-out"

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {self.preset!r}")

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "RunConfig":
        d = d or {}
        _reject_unknown(d, {f.name for f in fields(cls)}, "config")
        kw: dict[str, Any] = {}
        for key in ("tlb_size", "rob_size", "window_cycles", "walk_latency", "smt_contexts",
                    "jitter", "seed", "max_cycles", "oracle_base", "oracle_context"):
            if key in d:
                kw[key] = _int(d[key], key)
        if "preset" in d:
            kw["preset"] = str(d["preset"])
        if "output_dir" in d:
            kw["output_dir"] = str(d["output_dir"])
        if d.get("threshold") is not None:
            kw["threshold"] = _int(d["threshold"], "threshold")
        if "cache" in d:
            c = d["cache"]
            _reject_unknown(c, {f.name for f in fields(CacheConfig)}, "cache")
            try:
                kw["cache"] = CacheConfig(**{k: _int(v, f"cache.{k}") for k, v in c.items()})
            except ValueError as e:
                raise ConfigError(f"cache: {e}") from None
        if "asids" in d:
            if not isinstance(d["asids"], dict):
                raise ConfigError("asids: expected a mapping of context to asid")
            kw["asids"] = {_int(k, "asids"): _int(v, "asids") for k, v in d["asids"].items()}
        if "constants" in d:
            if not isinstance(d["constants"], dict):
                raise ConfigError("constants: expected a mapping of name to integer")
            kw["constants"] = {str(k): _int(v, f"constants.{k}") for k, v in d["constants"].items()}
        if "memory_map" in d:
            kw["memory_map"] = [MapEntry.from_dict(e, f"memory_map[{i}]")
                                for i, e in enumerate(d["memory_map"] or [])]
        if "memory" in d:
            kw["memory"] = [MemInit.from_dict(e, f"memory[{i}]")
                            for i, e in enumerate(d["memory"] or [])]
        cfg = cls(**kw)
        try:
            cfg.cpu_config()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        return cfg

    def to_dict(self) -> dict:
        return {
            "preset": self.preset,
            "cache": self.cache.to_dict(),
            "tlb_size": self.tlb_size,
            "rob_size": self.rob_size,
            "window_cycles": self.window_cycles,
            "walk_latency": self.walk_latency,
            "smt_contexts": self.smt_contexts,
            "jitter": self.jitter,
            "seed": self.seed,
            "threshold": self.threshold,
            "max_cycles": self.max_cycles,
            "asids": dict(sorted(self.asids.items())),
            "memory_map": [e.to_dict() for e in self.memory_map],
            "memory": [m.to_dict() for m in self.memory],
            "oracle_base": f"{self.oracle_base:#x}",
            "oracle_context": self.oracle_context,
            "constants": dict(sorted(self.constants.items())),
            "output_dir": self.output_dir,
        }

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigError(f"YAML: {e}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read {path}: {e.strerror}") from None
        return cls.loads(text)

    def cpu_config(self, **overrides) -> CpuConfig:
        kw = dict(preset=self.preset, rob_size=self.rob_size, window_cycles=self.window_cycles,
                  smt_contexts=self.smt_contexts, seed=self.seed, tlb_size=self.tlb_size,
                  walk_latency=self.walk_latency, max_cycles=self.max_cycles,
                  asids=dict(self.asids))
        kw.update(overrides)
        return CpuConfig(**kw)

    def build_core(self, backend: Optional[str] = None, **overrides) -> Core:
        core = Core(self.cpu_config(**overrides), self.cache, jitter=self.jitter, backend=backend)
        for e in self.memory_map:
            e.apply(core)
        for m in self.memory:
            core.poke(m.context, m.vaddr, m.data)
        return core


def default_config_path() -> Optional[str]:
    return os.environ.get(CONFIG_ENV) or None
