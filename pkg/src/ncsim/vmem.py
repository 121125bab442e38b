"""Virtual addresses, page tables and a TLB that matches on canonical bits only."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from . import _kernels

PAGE_SHIFT = 12
PAGE_SIZE = 1 << PAGE_SHIFT
PAGE_MASK = PAGE_SIZE - 1
CANONICAL_BITS = 48
LOW48 = (1 << CANONICAL_BITS) - 1
MASK64 = (1 << 64) - 1
PHYS_BITS = 32
PHYS_PAGES = 1 << (PHYS_BITS - PAGE_SHIFT)


class PageNotMapped(Exception):
    """Page walk found no translation."""


def is_canonical(addr: int) -> bool:
    """True iff bits [63:48] replicate bit 47."""
    upper = (addr & MASK64) >> 47
    return upper == 0 or upper == 0x1FFFF


def canonical_alias(a: int, b: int) -> bool:
    return (a & LOW48) == (b & LOW48)


def page_tag(addr: int) -> int:
    """Bits [47:12]."""
    return (addr & LOW48) >> PAGE_SHIFT


def page_offset(addr: int) -> int:
    return addr & PAGE_MASK


def upper16(addr: int) -> int:
    return (addr & MASK64) >> CANONICAL_BITS


def reconstruct(upper: int, tag: int, offset: int) -> int:
    return (upper << CANONICAL_BITS) | (tag << PAGE_SHIFT) | offset


def canonicalize(addr: int) -> int:
    """Sign-extend bit 47 over the upper 16 bits."""
    low = addr & LOW48
    return low | (0xFFFF << 48) if low >> 47 else low


@dataclass(frozen=True)
class VirtAddr:
    raw: int

    def __post_init__(self):
        object.__setattr__(self, "raw", self.raw & MASK64)

    @property
    def canonical(self) -> bool:
        return is_canonical(self.raw)

    @property
    def tag(self) -> int:
        return page_tag(self.raw)

    @property
    def offset(self) -> int:
        return page_offset(self.raw)

    @property
    def upper(self) -> int:
        return upper16(self.raw)

    def __int__(self):
        return self.raw

    def __repr__(self):
        return f"VirtAddr({self.raw:#018x})"


@dataclass(frozen=True)
class Mapping:
    phys_page: int
    user_accessible: bool = True
    writable: bool = True


@dataclass(frozen=True)
class TlbEntry:
    tag: int
    phys_page: int
    user_accessible: bool
    writable: bool
    asid: int

    def translate(self, addr: int) -> int:
        return (self.phys_page << PAGE_SHIFT) | page_offset(addr)


class PageTable:
    """Per-address-space maps from canonical virtual page to physical page."""

    def __init__(self):
        self._maps: dict[int, dict[int, Mapping]] = {}

    def map(self, asid: int, vaddr: int, phys_page: int, user: bool = True,
            writable: bool = True) -> None:
        if not is_canonical(vaddr):
            raise ValueError(f"cannot map non-canonical address {vaddr:#x}")
        if not 0 <= phys_page < PHYS_PAGES:
            raise ValueError(f"physical page {phys_page:#x} outside physical space")
        self._maps.setdefault(asid, {})[page_tag(vaddr)] = Mapping(phys_page, user, writable)

    def walk(self, asid: int, vaddr: int) -> Mapping:
        """Architectural translation; the full 64-bit address must be canonical."""
        if not is_canonical(vaddr):
            raise PageNotMapped(f"{vaddr:#x} is not canonical")
        m = self._maps.get(asid, {}).get(page_tag(vaddr))
        if m is None:
            raise PageNotMapped(f"{vaddr:#x} unmapped in asid {asid}")
        return m

    def lookup(self, asid: int, vaddr: int) -> Optional[Mapping]:
        try:
            return self.walk(asid, vaddr)
        except PageNotMapped:
            return None

    def mappings(self, asid: int) -> dict[int, Mapping]:
        return dict(self._maps.get(asid, {}))

    def asids(self) -> list[int]:
        return sorted(self._maps)


class Tlb:
    """Fully associative, LRU, ASID-tagged.  Keys carry bits [47:12] only."""

    def __init__(self, capacity: int = 64, backend: Optional[str] = None):
        self.capacity = capacity
        self._core = _kernels.get_backend(backend).TlbCore(capacity)

    def lookup(self, asid: int, addr: int) -> Optional[TlbEntry]:
        tag = page_tag(addr)
        e = self._core.lookup(asid, tag)
        if e is None:
            return None
        return TlbEntry(tag, e[0], e[1], e[2], asid)

    def contains(self, asid: int, addr: int) -> bool:
        """Presence test that leaves the LRU order alone."""
        return self._core.peek(asid, page_tag(addr)) is not None

    def fill(self, asid: int, addr: int, pt: PageTable) -> TlbEntry:
        m = pt.walk(asid, addr)
        tag = page_tag(addr)
        self._core.insert(asid, tag, m.phys_page, m.user_accessible, m.writable)
        return TlbEntry(tag, m.phys_page, m.user_accessible, m.writable, asid)

    def flush(self, asid: Optional[int] = None) -> None:
        """Drop every entry of ``asid``, or everything when ``asid`` is None."""
        if asid is None:
            self._core.flush_all()
        else:
            self._core.flush(asid)

    def entries(self) -> list[tuple[int, int]]:
        """(asid, tag) pairs, least recently used first."""
        return [tuple(k) for k in self._core.keys()]

    def __len__(self):
        return len(self._core)


def tlb_lookup(tlb: Tlb, asid: int, addr: int) -> Optional[TlbEntry]:
    return tlb.lookup(asid, addr)


def tlb_fill(tlb: Tlb, asid: int, addr: int, pt: PageTable) -> TlbEntry:
    return tlb.fill(asid, addr, pt)


def tlb_flush(tlb: Tlb, asid: Optional[int] = None) -> None:
    tlb.flush(asid)
