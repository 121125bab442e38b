"""Cycle-stepped out-of-order core: reorder buffer, load/store queues,
transient forwarding and fault-at-retirement.

Each cycle runs four phases in order: complete outstanding walks and fills,
retire (one op per hardware thread), issue ready ops out of order, fetch.
Faults are only raised when the faulting op is the oldest in its thread and
``window_cycles`` have elapsed since it first issued; until then dependent
ops may consume whatever data the load datapath delivered.
"""

from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

from .cache import Cache, CacheConfig, PhysicalMemory
from .isa import ALU_OPS, MASK64, NUM_REGS, Instruction, Program
from .vmem import (PAGE_MASK, PageTable, Tlb, TlbEntry, is_canonical, page_tag)


class FaultKind(str, enum.Enum):
    NON_CANONICAL = "NonCanonical"
    PAGE_NOT_MAPPED = "PageNotMapped"
    PERMISSION_DENIED = "PermissionDenied"
    MISALIGNED = "Misaligned"


@dataclass(frozen=True)
class GateTable:
    """Which checks the load datapath applies before handing out data."""
    check_permission: bool
    check_canonical: bool


PRESETS = {
    "zen": GateTable(check_permission=True, check_canonical=False),
    "mds_resistant": GateTable(check_permission=True, check_canonical=True),
    "legacy_intel": GateTable(check_permission=False, check_canonical=False),
}

# Parts the presets stand in for.
PRESET_MODELS = {
    "zen": ["EPYC 7262 (Zen2)", "Ryzen 7 2700X (Zen+)", "Threadripper 2990WX (Zen+)"],
    "mds_resistant": ["Core i7-10510U"],
    "legacy_intel": ["MDS-vulnerable Intel cores"],
}


class SimulationError(RuntimeError):
    """The simulation could not make progress or exceeded its cycle budget."""


@dataclass
class CpuConfig:
    preset: str = "zen"
    rob_size: int = 64
    window_cycles: int = 100
    smt_contexts: int = 1
    seed: int = 0
    fetch_width: int = 4
    issue_width: int = 4
    walk_latency: int = 10
    tlb_size: int = 64
    max_cycles: int = 200_000
    asids: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; expected one of {sorted(PRESETS)}")
        if self.window_cycles < 1:
            raise ValueError("window_cycles must be >= 1")
        if self.smt_contexts not in (1, 2):
            raise ValueError("smt_contexts must be 1 or 2")
        for name in ("rob_size", "fetch_width", "issue_width", "tlb_size", "walk_latency"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        self.asids = {int(k): int(v) for k, v in self.asids.items()}

    @property
    def gates(self) -> GateTable:
        return PRESETS[self.preset]

    def asid_of(self, context: int) -> int:
        return self.asids.get(context, context)


@dataclass
class StoreQueueEntry:
    seq: int
    vaddr: int
    size: int
    paddr: Optional[int] = None
    data: int = 0
    committed: bool = False
    executed: bool = False
    fault_kind: Optional[FaultKind] = None

    def data_bytes(self) -> bytes:
        return (self.data & ((1 << (8 * self.size)) - 1)).to_bytes(self.size, "little")


@dataclass
class LoadQueueEntry:
    seq: int
    vaddr: Optional[int] = None
    data_source: Optional[str] = None


@dataclass(eq=False)
class MicroOp:
    seq: int
    pc: int
    instr: Instruction
    thread: int
    context: int
    state: str = "waiting"
    result: Optional[int] = None
    transient_data_valid: bool = False
    fault_kind: Optional[FaultKind] = None
    vaddr: Optional[int] = None
    paddr: Optional[int] = None
    issue_cycle: Optional[int] = None
    done_cycle: Optional[int] = None
    retire_cycle: Optional[int] = None
    data_source: Optional[str] = None
    blocked_on: Optional[int] = None
    walking: bool = False
    operands: list = field(default_factory=list)  # (producer MicroOp | None, value)

    def ready(self, now: int) -> bool:
        return self.done_cycle is not None and self.done_cycle <= now

    def record(self, cycle: int) -> dict:
        return {
            "cycle": cycle,
            "seq": self.seq,
            "thread": self.thread,
            "context": self.context,
            "pc": self.pc,
            "opcode": self.instr.opcode,
            "state": self.state,
            "vaddr": None if self.vaddr is None else f"{self.vaddr:#018x}",
            "data_source": self.data_source,
            "fault_kind": None if self.fault_kind is None else self.fault_kind.value,
            "issue_cycle": self.issue_cycle,
            "transient_data": self.transient_data_valid,
        }


@dataclass(frozen=True)
class FaultRecord:
    thread: int
    context: int
    seq: int
    pc: int
    kind: str
    vaddr: int
    cycle: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vaddr"] = f"{self.vaddr:#018x}"
        return d


@dataclass
class RunResult:
    start_cycle: int
    end_cycle: int
    faults: list[FaultRecord]
    registers: list[list[int]]
    contexts: list[int]
    trace: list[dict]

    @property
    def cycles(self) -> int:
        return self.end_cycle - self.start_cycle

    def trace_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.trace)


@dataclass
class _Thread:
    tid: int
    program: Program
    pc: int
    context: int
    regs: list[int] = field(default_factory=lambda: [0] * NUM_REGS)
    rename: list = field(default_factory=lambda: [None] * NUM_REGS)
    rob: deque = field(default_factory=deque)
    sq: list = field(default_factory=list)
    lq: dict = field(default_factory=dict)
    fetch_blocked: Optional[MicroOp] = None
    fetch_done: bool = False
    halted: bool = False


_SERIALIZING = frozenset({"LFENCE", "CTXSW"})


class Core:
    """Machine state (memory, L1D, TLB, page tables) plus the OoO pipeline.

    Machine state persists across :meth:`run` calls; pipeline state is reset
    by :meth:`load`.
    """

    def __init__(self, config: Optional[CpuConfig] = None,
                 cache_config: Optional[CacheConfig] = None, *, jitter: int = 0,
                 backend: Optional[str] = None):
        self.config = config or CpuConfig()
        self.memory = PhysicalMemory()
        self.cache = Cache(cache_config or CacheConfig(), self.memory, jitter=jitter,
                           seed=self.config.seed, backend=backend)
        self.cache.clock = lambda: self.cycle
        self.tlb = Tlb(self.config.tlb_size, backend=backend)
        self.page_table = PageTable()
        self.cycle = 0
        self._seq = 0
        self.threads: list[_Thread] = []
        self.trace: list[dict] = []
        self.faults: list[FaultRecord] = []
        self._fills: list[tuple[int, int, MicroOp]] = []
        self._walks: list[tuple[int, MicroOp, int, int]] = []
        self._fetch_rr = 0

    # ---- machine setup helpers -------------------------------------------------

    def asid_of(self, context: int) -> int:
        return self.config.asid_of(context)

    def map_page(self, context: int, vaddr: int, phys_page: int, user: bool = True,
                 writable: bool = True) -> None:
        self.page_table.map(self.asid_of(context), vaddr, phys_page, user, writable)

    def translate(self, context: int, vaddr: int) -> int:
        m = self.page_table.walk(self.asid_of(context), vaddr)
        return (m.phys_page << 12) | (vaddr & PAGE_MASK)

    def poke(self, context: int, vaddr: int, data: bytes) -> None:
        """Write memory directly, bypassing the cache and pipeline."""
        self.memory.write(self.translate(context, vaddr), data)

    def peek(self, context: int, vaddr: int, size: int) -> bytes:
        return self.memory.read(self.translate(context, vaddr), size)

    def warm(self, context: int, vaddr: int, *, tlb: bool = True, line: bool = True) -> None:
        """Leave the page translation and/or data line resident, as if touched earlier."""
        if tlb:
            self.tlb.fill(self.asid_of(context), vaddr, self.page_table)
        if line:
            self.cache.access(self.translate(context, vaddr))

    # ---- program loading ----------------------------------------------------------

    def load(self, program: Program, threads: Optional[Sequence[tuple[int, int]]] = None,
             registers: Optional[Sequence[Sequence[int]]] = None) -> None:
        """Reset the pipeline and start ``program``.

        ``threads`` lists ``(entry index, context)`` per hardware thread.  By
        default thread 0 starts at ``program.entry`` in context 0 and, with
        two SMT contexts, thread 1 starts at label ``thread1`` in context 1.
        """
        if threads is None:
            threads = [(program.entry, 0)]
            if self.config.smt_contexts == 2:
                if "thread1" not in program.labels:
                    raise ValueError("SMT programs need a 'thread1' label")
                threads.append((program.labels["thread1"], 1))
        if len(threads) > self.config.smt_contexts:
            raise ValueError("more threads than SMT contexts")
        self.threads = []
        for tid, (entry, ctx) in enumerate(threads):
            th = _Thread(tid, program, entry, ctx)
            if registers is not None:
                th.regs = [v & MASK64 for v in registers[tid]]
            self.threads.append(th)
        self.trace = []
        self.faults = []
        self._fills = []
        self._walks = []
        self._fetch_rr = 0

    def inject_pending_store(self, tid: int, vaddr: int, data: int, size: int = 1) -> StoreQueueEntry:
        """Place an executed, never-committing store ahead of everything in the
        thread's Store Queue.  Used to drive the load gate in isolation."""
        th = self.threads[tid]
        asid = self.asid_of(th.context)
        m = self.page_table.walk(asid, vaddr)
        entry = StoreQueueEntry(seq=-1 - len(th.sq), vaddr=vaddr, size=size,
                                paddr=(m.phys_page << 12) | (vaddr & PAGE_MASK),
                                data=data, executed=True)
        th.sq.insert(0, entry)
        return entry

    @property
    def halted(self) -> bool:
        return all(th.halted for th in self.threads)

    def run(self, program: Optional[Program] = None, threads=None, registers=None,
            max_cycles: Optional[int] = None) -> RunResult:
        if program is not None:
            self.load(program, threads, registers)
        start = self.cycle
        budget = max_cycles if max_cycles is not None else self.config.max_cycles
        while not self.halted:
            if self.cycle - start > budget:
                raise SimulationError(f"no halt within {budget} cycles")
            if not self.step():
                nxt = self._next_event()
                if nxt is None:
                    if self.halted:
                        break
                    raise SimulationError("pipeline deadlock")
                # nothing can change before the next event
                if nxt > self.cycle:
                    self.cycle = nxt
        return RunResult(start, self.cycle, list(self.faults),
                         [list(th.regs) for th in self.threads],
                         [th.context for th in self.threads], list(self.trace))

    # ---- the cycle ------------------------------------------------------------------

    def step(self) -> bool:
        """Advance one cycle; returns whether any state changed."""
        now = self.cycle
        progress = self._complete(now)
        for th in self.threads:
            if not th.halted:
                progress |= self._retire(th, now)
        progress |= self._issue(now)
        progress |= self._fetch(now)
        self.cycle = now + 1
        return progress

    def _next_event(self) -> Optional[int]:
        now = self.cycle
        times = [c for c, _, _ in self._fills] + [c for c, _, _, _ in self._walks]
        window = self.config.window_cycles
        for th in self.threads:
            for u in th.rob:
                if u.done_cycle is not None and u.done_cycle >= now:
                    times.append(u.done_cycle)
                if u.fault_kind is not None and u.issue_cycle is not None:
                    times.append(u.issue_cycle + window)
        future = [t for t in times if t >= now]
        return min(future) if future else None

    def _complete(self, now: int) -> bool:
        progress = False
        if self._walks:
            due = [w for w in self._walks if w[0] <= now]
            if due:
                self._walks = [w for w in self._walks if w[0] > now]
                for _, u, asid, vaddr in due:
                    self.tlb.fill(asid, vaddr, self.page_table)
                    u.walking = False
                    u.state = "waiting"
                progress = True
        if self._fills:
            due = [f for f in self._fills if f[0] <= now]
            if due:
                self._fills = [f for f in self._fills if f[0] > now]
                for _, paddr, _ in due:
                    self.cache.fill(paddr)
                progress = True
        return progress

    # ---- retirement -------------------------------------------------------------

    def _retire(self, th: _Thread, now: int) -> bool:
        if not th.rob:
            if th.fetch_done and th.fetch_blocked is None:
                th.halted = True
                return True
            return False
        u = th.rob[0]
        if u.issue_cycle is None or u.walking or u.state == "waiting":
            return False
        if u.fault_kind is not None:
            if now < u.issue_cycle + self.config.window_cycles:
                return False
            return self._raise_fault(th, u, now)
        if not u.ready(now):
            return False

        ins = u.instr
        op = ins.opcode
        if ins.writes_reg():
            th.regs[ins.dst] = u.result
            if th.rename[ins.dst] is u:
                th.rename[ins.dst] = None
        elif op == "ST":
            entry = next(e for e in th.sq if e.seq == u.seq)
            th.sq.remove(entry)
            self.cache.access(entry.paddr, True, entry.data_bytes())
            entry.committed = True
            for v in th.rob:
                if v.blocked_on == u.seq:
                    v.blocked_on = None
        elif op == "CLFLUSH":
            self.cache.flush_line(u.paddr)
        elif op == "CTXSW":
            self.context_switch(th, u.instr.src)
        elif op == "HLT":
            th.halted = True
            th.fetch_done = True
        th.rob.popleft()
        th.lq.pop(u.seq, None)
        u.state = "retired"
        u.retire_cycle = now
        self.trace.append(u.record(now))
        return True

    def _raise_fault(self, th: _Thread, u: MicroOp, now: int) -> bool:
        th.rob.popleft()
        u.state = "retired"
        u.retire_cycle = now
        self.trace.append(u.record(now))
        self.faults.append(FaultRecord(th.tid, th.context, u.seq, u.pc, u.fault_kind.value,
                                       u.vaddr, now))
        self._squash(th, now)
        th.halted = True
        th.fetch_done = True
        return True

    def _squash(self, th: _Thread, now: int) -> None:
        """Discard every remaining op of ``th``; completed fills and walks stay."""
        doomed = set(th.rob)
        for v in th.rob:
            v.state = "squashed"
            self.trace.append(v.record(now))
        th.rob.clear()
        th.sq = [e for e in th.sq if e.seq < 0]
        th.lq.clear()
        th.fetch_blocked = None
        th.rename = [None] * NUM_REGS
        self._fills = [f for f in self._fills if f[2] not in doomed]
        self._walks = [w for w in self._walks if w[1] not in doomed]

    def context_switch(self, th: _Thread, to: int) -> None:
        """Switch ``th`` to context ``to``; the outgoing address space loses its TLB entries."""
        if to == th.context:
            return
        outgoing = self.asid_of(th.context)
        if outgoing != self.asid_of(to):
            self.tlb.flush(outgoing)
        th.context = to

    # ---- issue / execute ------------------------------------------------------

    def _issue(self, now: int) -> bool:
        slots = self.config.issue_width
        progress = False
        n = len(self.threads)
        for k in range(n):
            th = self.threads[(now + k) % n]
            if th.halted:
                continue
            for u in list(th.rob):
                if slots == 0:
                    return progress
                op = u.instr.opcode
                if op in _SERIALIZING:
                    if u.state == "waiting" and u is th.rob[0]:
                        u.issue_cycle = now
                        u.done_cycle = now + 1
                        u.state = "executed"
                        slots -= 1
                        progress = True
                    break
                if u.state != "waiting" or u.walking:
                    continue
                if not all(p is None or p.ready(now) for p, _ in u.operands):
                    continue
                if op == "LD":
                    if u.blocked_on is not None:
                        continue
                    if any(not e.executed for e in th.sq if e.seq < u.seq):
                        continue
                self._execute(th, u, now)
                slots -= 1
                progress = True
        return progress

    def _values(self, u: MicroOp) -> list[int]:
        return [p.result if p is not None else v for p, v in u.operands]

    def _execute(self, th: _Thread, u: MicroOp, now: int) -> None:
        if u.issue_cycle is None:
            u.issue_cycle = now
        ins = u.instr
        op = ins.opcode
        vals = self._values(u)
        if op == "LD":
            self.execute_load(th, u, now, vals[0])
            return
        if op in ("ST", "CLFLUSH"):
            self._execute_addressed(th, u, now, vals)
            return
        u.state = "executed"
        u.done_cycle = now + 1
        if op == "LDI":
            u.result = ins.src
        elif op in ALU_OPS:
            a = vals[0]
            b = vals[1] if ins.src_is_reg else ins.src
            if op == "ADD":
                u.result = (a + b) & MASK64
            elif op == "OR":
                u.result = a | b
            elif op == "AND":
                u.result = a & b
            else:
                u.result = (a << (b & 63)) & MASK64
        elif op == "RDT":
            u.result = now
        elif op == "JNZ":
            th.pc = ins.target if vals[0] != 0 else u.pc + 1
            th.fetch_blocked = None

    def arch_fault(self, context: int, vaddr: int, size: int, write: bool) -> Optional[FaultKind]:
        """The full check performed at retirement."""
        if not is_canonical(vaddr):
            return FaultKind.NON_CANONICAL
        m = self.page_table.lookup(self.asid_of(context), vaddr)
        if m is None:
            return FaultKind.PAGE_NOT_MAPPED
        if not m.user_accessible or (write and not m.writable):
            return FaultKind.PERMISSION_DENIED
        if vaddr % size:
            return FaultKind.MISALIGNED
        return None

    def _lookup_or_walk(self, th: _Thread, u: MicroOp, now: int) -> tuple[Optional[TlbEntry], bool]:
        """TLB lookup on canonical bits.  Returns (entry, walk_started)."""
        asid = self.asid_of(th.context)
        entry = self.tlb.lookup(asid, u.vaddr)
        if entry is not None:
            return entry, False
        if is_canonical(u.vaddr) and self.page_table.lookup(asid, u.vaddr) is not None:
            u.walking = True
            self._walks.append((now + self.config.walk_latency, u, asid, u.vaddr))
            return None, True
        return None, False

    def _execute_addressed(self, th: _Thread, u: MicroOp, now: int, vals: list[int]) -> None:
        ins = u.instr
        u.vaddr = (vals[0] + ins.mem.disp) & MASK64
        is_store = ins.opcode == "ST"
        u.fault_kind = self.arch_fault(th.context, u.vaddr, ins.mem.size, write=is_store)
        entry, walking = self._lookup_or_walk(th, u, now)
        if walking:
            return
        if entry is not None:
            u.paddr = entry.translate(u.vaddr)
        if is_store:
            sq = next(e for e in th.sq if e.seq == u.seq)
            sq.vaddr = u.vaddr
            sq.paddr = u.paddr
            sq.data = vals[1]
            sq.fault_kind = u.fault_kind
            sq.executed = True
        u.state = "faulting" if u.fault_kind is not None else "executed"
        u.done_cycle = now + 1

    def execute_load(self, th: _Thread, u: MicroOp, now: int, base: int) -> None:
        """Load datapath.

        1. TLB lookup on bits [47:12] only.  A miss walks the page table if the
           address is canonical and mapped (the load replays afterwards);
           otherwise no data is delivered.
        2. Per-preset datapath checks (permission, canonicality) on a hit.
        3. Store-to-load forwarding from the youngest older uncommitted store
           whose bits [11:0] overlap; for a load that will fault it completes
           only when the page tags match and the store's line is L1D-resident.
           A [11:0]-only overlap with a different page blocks the load.
        4. Otherwise L1D at the translated address; a faulting load that
           misses gets nothing, a legal one fills the line.

        Faulting loads get exactly one attempt at data.
        """
        ins = u.instr
        size = ins.mem.size
        if u.vaddr is None:
            u.vaddr = (base + ins.mem.disp) & MASK64
            u.fault_kind = self.arch_fault(th.context, u.vaddr, size, write=False)
        lq = th.lq.setdefault(u.seq, LoadQueueEntry(u.seq))
        lq.vaddr = u.vaddr
        fault = u.fault_kind

        entry, walking = self._lookup_or_walk(th, u, now)
        if walking:
            return
        if entry is None:
            self._no_data(u)
            return
        gates = self.config.gates
        if fault is not None:
            if gates.check_permission and not entry.user_accessible:
                self._no_data(u)
                return
            if gates.check_canonical and not is_canonical(u.vaddr):
                self._no_data(u)
                return
        paddr = entry.translate(u.vaddr)
        u.paddr = paddr

        st = self._youngest_overlapping_store(th, u.seq, u.vaddr, size)
        if st is not None:
            lo = u.vaddr & PAGE_MASK
            so = st.vaddr & PAGE_MASK
            same_page = page_tag(st.vaddr) == page_tag(u.vaddr)
            contained = so <= lo and lo + size <= so + st.size
            if same_page and contained and (fault is None or self.cache.is_resident(st.paddr)):
                chunk = st.data_bytes()[lo - so:lo - so + size]
                self._deliver(u, int.from_bytes(chunk, "little"), f"StoreForward:{st.seq}",
                              now + self.cache.hit_sample(), lq)
                return
            if fault is not None:
                self._no_data(u)
            else:
                u.blocked_on = st.seq
            return

        if self.cache.touch(paddr):
            latency = self.cache.hit_sample()
            if self.cache.trace is not None:
                self.cache.trace.append((now, paddr, True))
        elif fault is not None:
            self._no_data(u)
            return
        else:
            latency = self.cache.miss_sample()
            if self.cache.trace is not None:
                self.cache.trace.append((now, paddr, False))
            self._fills.append((now + latency, paddr, u))
        self._deliver(u, self.memory.read_int(paddr, size), "L1D", now + latency, lq)

    def _youngest_overlapping_store(self, th: _Thread, seq: int, vaddr: int,
                                    size: int) -> Optional[StoreQueueEntry]:
        lo = vaddr & PAGE_MASK
        found = None
        for e in th.sq:
            if e.seq >= seq:
                break
            if e.committed or e.fault_kind is not None or e.paddr is None:
                continue
            so = e.vaddr & PAGE_MASK
            if so < lo + size and lo < so + e.size:
                found = e
        return found

    def _deliver(self, u: MicroOp, value: int, source: str, done: int,
                 lq: LoadQueueEntry) -> None:
        u.result = value
        u.done_cycle = done
        u.data_source = source
        u.transient_data_valid = True
        u.state = "faulting" if u.fault_kind is not None else "executed"
        lq.data_source = source

    def _no_data(self, u: MicroOp) -> None:
        u.state = "faulting" if u.fault_kind is not None else "executed"
        if u.fault_kind is None:  # pragma: no cover - a legal access always translates
            raise SimulationError(f"legal load seq {u.seq} got no data")

    # ---- fetch / decode ---------------------------------------------------------

    def _fetch(self, now: int) -> bool:
        n = len(self.threads)
        for k in range(n):
            th = self.threads[(self._fetch_rr + k) % n]
            if th.halted or th.fetch_done or th.fetch_blocked is not None:
                continue
            self._fetch_rr = (self._fetch_rr + k + 1) % n
            return self._fetch_thread(th)
        return False

    def _fetch_thread(self, th: _Thread) -> bool:
        progress = False
        prog = th.program.instructions
        for _ in range(self.config.fetch_width):
            if sum(len(t.rob) for t in self.threads) >= self.config.rob_size:
                break
            if th.pc >= len(prog):
                th.fetch_done = True
                progress = True
                break
            ins = prog[th.pc]
            u = MicroOp(self._seq, th.pc, ins, th.tid, th.context)
            self._seq += 1
            u.operands = [(th.rename[r], th.regs[r]) for r in ins.sources()]
            if ins.writes_reg():
                th.rename[ins.dst] = u
            th.rob.append(u)
            progress = True
            if ins.opcode == "ST":
                th.sq.append(StoreQueueEntry(u.seq, 0, ins.mem.size))
            elif ins.opcode == "LD":
                th.lq[u.seq] = LoadQueueEntry(u.seq)
            if ins.opcode == "JNZ":
                th.fetch_blocked = u
                break
            if ins.opcode == "HLT":
                th.fetch_done = True
                break
            th.pc += 1
        return progress


def step(core: Core) -> Core:
    core.step()
    return core


def write_trace(path, records: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
