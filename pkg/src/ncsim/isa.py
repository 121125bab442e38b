"""Minimal instruction set and text assembler for attack programs.

Grammar, one statement per line (``;`` starts a comment)::

    label:
    .entry label
    MNEMONIC [dst][, src]

Memory operands are written ``[rN+disp]`` / ``[rN-disp]`` / ``[rN]`` with an
optional width prefix (``byte``, ``word``, ``dword``, ``qword``; default
``qword``).  Immediates are decimal (optionally negative) or ``0x`` hex and are
stored as unsigned 64-bit values.

    LDI   r1, 0xff0f000000000000
    OR    r2, r1            ; ADD/OR/AND/SHL take a register or immediate
    LD    r4, byte [r3+8]
    ST    byte [r1+8], r2
    CLFLUSH [r1]
    JNZ   r1, loop
    CTXSW 1
    RDT   r7
    LFENCE
    HLT
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

MASK64 = (1 << 64) - 1
NUM_REGS = 16

NONCANONICAL_MASK = 0xFF0F000000000000

OPCODES = (
    "LDI", "LD", "ST", "ADD", "OR", "AND", "SHL",
    "CLFLUSH", "LFENCE", "RDT", "JNZ", "CTXSW", "HLT",
)
ALU_OPS = frozenset({"ADD", "OR", "AND", "SHL"})
MEM_OPS = frozenset({"LD", "ST", "CLFLUSH"})

WIDTHS = {"byte": 1, "word": 2, "dword": 4, "qword": 8}
WIDTH_NAMES = {v: k for k, v in WIDTHS.items()}


class AsmSyntaxError(SyntaxError):
    """Assembly error carrying the 1-based line and column."""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, col {column}: {message}")


@dataclass(frozen=True)
class MemRef:
    base: int
    disp: int = 0
    size: int = 8


@dataclass(frozen=True)
class Instruction:
    opcode: str
    dst: int = 0
    src: Optional[int] = None   # register id when src_is_reg, else immediate
    src_is_reg: bool = False
    mem: Optional[MemRef] = None
    target: Optional[int] = None  # JNZ destination index

    def __post_init__(self):
        if self.opcode not in OPCODES:
            raise ValueError(f"unknown opcode {self.opcode!r}")
        if not 0 <= self.dst < NUM_REGS:
            raise ValueError(f"register r{self.dst} out of range")
        if self.src_is_reg and not 0 <= (self.src or 0) < NUM_REGS:
            raise ValueError(f"register r{self.src} out of range")
        if (self.opcode in MEM_OPS) != (self.mem is not None):
            raise ValueError(f"{self.opcode} address operand mismatch")
        if self.mem is not None:
            if not 0 <= self.mem.base < NUM_REGS:
                raise ValueError(f"register r{self.mem.base} out of range")
            if self.mem.size not in WIDTH_NAMES:
                raise ValueError(f"bad access size {self.mem.size}")
            if not -(1 << 31) <= self.mem.disp < (1 << 31):
                raise ValueError("displacement exceeds signed 32 bits")
        if self.src is not None and not self.src_is_reg:
            object.__setattr__(self, "src", self.src & MASK64)

    def sources(self) -> tuple[int, ...]:
        """Register ids read by this instruction."""
        op = self.opcode
        if op in ALU_OPS:
            return (self.dst, self.src) if self.src_is_reg else (self.dst,)
        if op == "LD" or op == "CLFLUSH":
            return (self.mem.base,)
        if op == "ST":
            return (self.mem.base, self.src)
        if op == "JNZ":
            return (self.dst,)
        return ()

    def writes_reg(self) -> bool:
        return self.opcode in ALU_OPS or self.opcode in ("LDI", "LD", "RDT")


@dataclass
class Program:
    instructions: list[Instruction]
    labels: dict[str, int] = field(default_factory=dict)
    entry: int = 0

    def __post_init__(self):
        n = len(self.instructions)
        for ins in self.instructions:
            if ins.opcode == "JNZ" and not (ins.target is not None and 0 <= ins.target <= n):
                raise ValueError(f"JNZ target {ins.target} out of range")
        for name, idx in self.labels.items():
            if not 0 <= idx <= n:
                raise ValueError(f"label {name} points outside the program")
        if n and not 0 <= self.entry < n:
            raise ValueError("entry outside the program")

    def __len__(self):
        return len(self.instructions)

    def label_at(self, index: int) -> Optional[str]:
        names = sorted(k for k, v in self.labels.items() if v == index)
        return names[0] if names else None


_REG = re.compile(r"^r(\d+)$", re.IGNORECASE)
_MEM = re.compile(
    r"^(?:(byte|word|dword|qword)\s+)?\[\s*(r\d+)\s*(?:([+-])\s*(0x[0-9a-fA-F]+|\d+))?\s*\]$",
    re.IGNORECASE,
)
_LABEL = re.compile(r"^([A-Za-z_.][\w.]*):$")


def _parse_int(tok: str) -> int:
    t = tok.strip()
    neg = t.startswith("-")
    if neg:
        t = t[1:]
    value = int(t, 16) if t.lower().startswith("0x") else int(t, 10)
    return -value if neg else value


class _Parser:
    def __init__(self, lineno: int, line: str):
        self.lineno = lineno
        self.line = line

    def fail(self, msg: str, tok: str = "") -> AsmSyntaxError:
        col = self.line.find(tok) + 1 if tok and tok in self.line else 1
        return AsmSyntaxError(msg, self.lineno, col)

    def reg(self, tok: str) -> int:
        m = _REG.match(tok.strip())
        if not m or int(m.group(1)) >= NUM_REGS:
            raise self.fail(f"bad register {tok.strip()!r}", tok.strip())
        return int(m.group(1))

    def imm(self, tok: str) -> int:
        try:
            value = _parse_int(tok)
        except ValueError:
            raise self.fail(f"bad immediate {tok.strip()!r}", tok.strip()) from None
        if not -(1 << 63) <= value <= MASK64:
            raise self.fail(f"immediate {tok.strip()} exceeds 64 bits", tok.strip())
        return value & MASK64

    def mem(self, tok: str) -> MemRef:
        m = _MEM.match(tok.strip())
        if not m:
            raise self.fail(f"bad memory operand {tok.strip()!r}", tok.strip())
        width, base, sign, disp = m.groups()
        d = _parse_int(disp) if disp else 0
        if sign == "-":
            d = -d
        if not -(1 << 31) <= d < (1 << 31):
            raise self.fail("displacement exceeds signed 32 bits", tok.strip())
        return MemRef(self.reg(base), d, WIDTHS[(width or "qword").lower()])

    def reg_or_imm(self, tok: str) -> tuple[int, bool]:
        if _REG.match(tok.strip()):
            return self.reg(tok), True
        return self.imm(tok), False


def parse_program(text: str) -> Program:
    """Assemble ``text`` into a :class:`Program` with labels resolved."""
    pending: list[tuple[int, str, str, list[str]]] = []
    labels: dict[str, int] = {}
    entry_label: Optional[tuple[int, str]] = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        m = _LABEL.match(line)
        if m:
            name = m.group(1)
            if name in labels:
                raise AsmSyntaxError(f"duplicate label {name!r}", lineno, 1)
            labels[name] = len(pending)
            continue
        head, rest = (line.split(None, 1) + [""])[:2]
        if head.lower() == ".entry":
            entry_label = (lineno, rest.strip())
            continue
        mnemonic = head.upper()
        if mnemonic not in OPCODES:
            raise AsmSyntaxError(f"unknown mnemonic {head!r}", lineno, raw.find(head) + 1)
        operands = [o.strip() for o in rest.split(",")] if rest.strip() else []
        pending.append((lineno, raw, mnemonic, operands))

    instructions = []
    for lineno, raw, op, args in pending:
        p = _Parser(lineno, raw)

        def want(n: int):
            if len(args) != n:
                raise p.fail(f"{op} expects {n} operand(s), got {len(args)}")

        if op in ("LFENCE", "HLT"):
            want(0)
            ins = Instruction(op)
        elif op == "RDT":
            want(1)
            ins = Instruction(op, dst=p.reg(args[0]))
        elif op == "LDI":
            want(2)
            ins = Instruction(op, dst=p.reg(args[0]), src=p.imm(args[1]))
        elif op in ALU_OPS:
            want(2)
            src, is_reg = p.reg_or_imm(args[1])
            ins = Instruction(op, dst=p.reg(args[0]), src=src, src_is_reg=is_reg)
        elif op == "LD":
            want(2)
            ins = Instruction(op, dst=p.reg(args[0]), mem=p.mem(args[1]))
        elif op == "ST":
            want(2)
            ins = Instruction(op, src=p.reg(args[1]), src_is_reg=True, mem=p.mem(args[0]))
        elif op == "CLFLUSH":
            want(1)
            ins = Instruction(op, mem=p.mem(args[0]))
        elif op == "CTXSW":
            want(1)
            ins = Instruction(op, src=p.imm(args[0]))
        else:  # JNZ
            name = args[-1] if args else ""
            if name not in labels:
                raise p.fail(f"unresolved label {name!r}", name)
            want(2)
            ins = Instruction(op, dst=p.reg(args[0]), target=labels[name])
        instructions.append(ins)

    entry = 0
    if entry_label is not None:
        lineno, name = entry_label
        if name not in labels:
            raise AsmSyntaxError(f"unresolved label {name!r}", lineno, 1)
        entry = labels[name]
    return Program(instructions, labels, entry)


def _mem_text(m: MemRef) -> str:
    disp = f"+{m.disp}" if m.disp > 0 else (f"-{-m.disp}" if m.disp < 0 else "")
    return f"{WIDTH_NAMES[m.size]} [r{m.base}{disp}]"


def _imm(v: int) -> str:
    return str(v) if v < 10 else f"{v:#x}"


def format_instruction(ins: Instruction, labels: Optional[dict[int, str]] = None) -> str:
    op = ins.opcode
    if op in ("LFENCE", "HLT"):
        return op
    if op == "RDT":
        return f"RDT r{ins.dst}"
    if op == "LDI":
        return f"LDI r{ins.dst}, {_imm(ins.src)}"
    if op in ALU_OPS:
        src = f"r{ins.src}" if ins.src_is_reg else _imm(ins.src)
        return f"{op} r{ins.dst}, {src}"
    if op == "LD":
        return f"LD r{ins.dst}, {_mem_text(ins.mem)}"
    if op == "ST":
        return f"ST {_mem_text(ins.mem)}, r{ins.src}"
    if op == "CLFLUSH":
        return f"CLFLUSH {_mem_text(ins.mem)}"
    if op == "CTXSW":
        return f"CTXSW {ins.src}"
    name = (labels or {}).get(ins.target, f"L{ins.target}")
    return f"JNZ r{ins.dst}, {name}"


def disassemble(program: Program) -> str:
    """Render ``program`` as source that re-assembles to an equal Program."""
    by_index: dict[int, list[str]] = {}
    for name, idx in sorted(program.labels.items(), key=lambda kv: (kv[1], kv[0])):
        by_index.setdefault(idx, []).append(name)
    # JNZ targets and a non-zero entry need a name to round-trip
    needed = {i.target for i in program.instructions if i.opcode == "JNZ"}
    if program.entry:
        needed.add(program.entry)
    for idx in sorted(needed):
        if idx not in by_index:
            by_index[idx] = [f"L{idx}"]
    primary = {idx: names[0] for idx, names in by_index.items()}

    lines = []
    if program.entry:
        lines.append(f".entry {primary[program.entry]}")
    for idx, ins in enumerate(program.instructions):
        lines.extend(f"{name}:" for name in by_index.get(idx, ()))
        lines.append(format_instruction(ins, primary))
    lines.extend(f"{name}:" for name in by_index.get(len(program.instructions), ()))
    return "\n".join(lines)


# Default virtual layout shared by the canned attack programs.
DATA_VA = 0x0000_1000_0000_0000
ORACLE_VA = 0x0000_2000_0000_0000
ORACLE_STRIDE = 4096


def encode_listing2(secret: int, offset: int = 0, *, data_va: int = DATA_VA,
                    oracle_va: int = ORACLE_VA) -> Program:
    """Store ``secret`` at data_va+offset, read it back through the
    non-canonical alias and encode the transient byte into the oracle array
    at a 4096-byte stride."""
    if not 0 <= secret <= 0xFF:
        raise ValueError("secret must be a byte")
    if not 0 <= offset < 4096:
        raise ValueError("offset must lie within one page")
    return Program([
        Instruction("LDI", dst=1, src=data_va),
        Instruction("LDI", dst=2, src=secret),
        Instruction("ST", src=2, src_is_reg=True, mem=MemRef(1, offset, 1)),
        Instruction("LFENCE"),
        Instruction("LDI", dst=3, src=NONCANONICAL_MASK),
        Instruction("OR", dst=3, src=1, src_is_reg=True),
        Instruction("LD", dst=4, mem=MemRef(3, offset, 1)),
        Instruction("SHL", dst=4, src=12),
        Instruction("LDI", dst=5, src=oracle_va),
        Instruction("ADD", dst=5, src=4, src_is_reg=True),
        Instruction("LD", dst=6, mem=MemRef(5, 0, 1)),
        Instruction("HLT"),
    ])
