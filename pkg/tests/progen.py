"""Seeded random program generator for differential testing.

Programs use LDI/ALU/LD/ST/CLFLUSH/LFENCE/JNZ (forward only)/CTXSW/HLT.  RDT
is left out on purpose: its value is the cycle count.
"""

from __future__ import annotations

import random

from ncsim.isa import NONCANONICAL_MASK, Instruction, MemRef, Program

PAGES = [
    # (context, vaddr, ppage, user, writable)
    (0, 0x0000_1000_0000_0000, 0x100, True, True),
    (0, 0x0000_1000_0000_1000, 0x101, True, True),
    (0, 0x0000_1000_0000_2000, 0x102, True, False),
    (0, 0xFFFF_8000_0000_0000, 0x200, False, True),
    (1, 0x0000_1000_0000_0000, 0x300, True, True),
    (1, 0x0000_3000_0000_0000, 0x301, True, True),
]
UNMAPPED = 0x0000_5000_0000_0000
SIZES = (1, 2, 4, 8)


def initial_memory(rng: random.Random) -> dict[int, bytes]:
    """Random contents for a few lines of every mapped physical page."""
    out = {}
    for _, _, ppage, _, _ in PAGES:
        for line in rng.sample(range(64), 4):
            out[(ppage << 12) | (line * 64)] = bytes(rng.randrange(256) for _ in range(64))
    return out


def _address(rng: random.Random, hostile: bool, offsets: list[int]) -> int:
    # a small offset pool makes [11:0] aliasing across pages common
    off = rng.choice(offsets)
    r = rng.random()
    if not hostile:
        return rng.choice(PAGES[:2])[1] + off
    if r < 0.88:
        base = rng.choice((PAGES[0], PAGES[0], PAGES[1], PAGES[2], PAGES[5]))[1]
    elif r < 0.92:
        base = PAGES[3][1]
    elif r < 0.95:
        base = UNMAPPED
    else:
        base = PAGES[0][1] | NONCANONICAL_MASK
    return base + off


def random_program(rng: random.Random, length: int = 24) -> Program:
    """r8..r11 hold pointers (mostly into mapped pages); r0..r7 hold data.

    About a third of the programs are tame (writable user pages, no CTXSW) so
    that many run to completion; the rest mix in every fault kind.
    """
    hostile = rng.random() < 0.65
    offsets = [rng.randrange(0, 4096 - 512, 8) for _ in range(3)]
    ins: list[Instruction] = [Instruction("LDI", dst=b, src=_address(rng, hostile, offsets))
                              for b in range(8, 12)]
    jnz_fixups = []

    def base() -> int:
        if not hostile or rng.random() < 0.95:
            return rng.randrange(8, 12)
        return rng.randrange(12)

    def disp(size: int) -> int:
        if hostile and rng.random() < 0.03:
            return 1
        return rng.choice((0, 0, size, 8 * rng.randrange(8), 64 * rng.randrange(4)))

    for _ in range(length):
        r = rng.random()
        reg = rng.randrange(8)
        if r < 0.12:
            ins.append(Instruction("LDI", dst=reg, src=rng.randrange(1 << 64)))
        elif r < 0.16:
            ins.append(Instruction("LDI", dst=rng.randrange(8, 12),
                                   src=_address(rng, hostile, offsets)))
        elif r < 0.18:
            ins.append(Instruction("ADD", dst=rng.randrange(8, 12), src=rng.choice((8, 64, -64))))
        elif r < 0.34:
            op = rng.choice(("ADD", "OR", "AND", "SHL"))
            if rng.random() < 0.5:
                ins.append(Instruction(op, dst=reg, src=rng.randrange(12), src_is_reg=True))
            else:
                imm = rng.randrange(64) if op == "SHL" else rng.choice(
                    (rng.randrange(-64, 64), rng.randrange(1 << 64)))
                ins.append(Instruction(op, dst=reg, src=imm))
        elif r < 0.58:
            size = rng.choice(SIZES)
            ins.append(Instruction("LD", dst=reg, mem=MemRef(base(), disp(size), size)))
        elif r < 0.82:
            size = rng.choice(SIZES)
            ins.append(Instruction("ST", src=rng.randrange(12), src_is_reg=True,
                                   mem=MemRef(base(), disp(size), size)))
        elif r < 0.86:
            ins.append(Instruction("CLFLUSH", mem=MemRef(base(), 0, 8)))
        elif r < 0.89:
            ins.append(Instruction("LFENCE"))
        elif r < 0.98:
            jnz_fixups.append(len(ins))
            ins.append(Instruction("JNZ", dst=rng.randrange(12), target=0))
        elif hostile:
            ins.append(Instruction("CTXSW", src=rng.randrange(2)))
        else:
            ins.append(Instruction("LFENCE"))
    ins.append(Instruction("HLT"))
    for idx in jnz_fixups:
        old = ins[idx]
        ins[idx] = Instruction("JNZ", dst=old.dst, target=rng.randrange(idx + 1, len(ins) + 1))
    return Program(ins)
