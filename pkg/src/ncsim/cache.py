"""Physically tagged L1D model with write-through backing memory."""

from __future__ import annotations

import random
from dataclasses import asdict, dataclass
from typing import Optional

from . import _kernels
from .vmem import PAGE_MASK, PAGE_SHIFT, PHYS_BITS

LINE_SIZE = 64
LINE_SHIFT = 6


def _pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class CacheConfig:
    sets: int = 64
    ways: int = 8
    line_size: int = LINE_SIZE
    hit_latency: int = 4
    miss_latency: int = 50

    def __post_init__(self):
        if not (_pow2(self.sets) and _pow2(self.ways)):
            raise ValueError("sets and ways must be powers of two")
        if self.line_size != LINE_SIZE:
            raise ValueError("line_size must be 64")
        if self.hit_latency < 1:
            raise ValueError("hit_latency must be positive")
        if self.miss_latency < self.hit_latency:
            raise ValueError("miss_latency must not be below hit_latency")

    def to_dict(self) -> dict:
        return asdict(self)


class PhysicalMemory:
    """Sparse byte-addressed store over a 2**32 physical space, zero-initialised."""

    def __init__(self):
        self._pages: dict[int, bytearray] = {}

    def read(self, paddr: int, size: int) -> bytes:
        self._check(paddr, size)
        out = bytearray()
        while size:
            page, off = paddr >> PAGE_SHIFT, paddr & PAGE_MASK
            n = min(size, (1 << PAGE_SHIFT) - off)
            buf = self._pages.get(page)
            out += buf[off:off + n] if buf is not None else bytes(n)
            paddr += n
            size -= n
        return bytes(out)

    def write(self, paddr: int, data: bytes) -> None:
        self._check(paddr, len(data))
        pos = 0
        while pos < len(data):
            page, off = paddr >> PAGE_SHIFT, paddr & PAGE_MASK
            n = min(len(data) - pos, (1 << PAGE_SHIFT) - off)
            buf = self._pages.get(page)
            if buf is None:
                buf = self._pages[page] = bytearray(1 << PAGE_SHIFT)
            buf[off:off + n] = data[pos:pos + n]
            paddr += n
            pos += n

    def read_int(self, paddr: int, size: int) -> int:
        return int.from_bytes(self.read(paddr, size), "little")

    def write_int(self, paddr: int, value: int, size: int) -> None:
        self.write(paddr, (value & ((1 << (8 * size)) - 1)).to_bytes(size, "little"))

    def snapshot(self) -> dict[int, bytes]:
        """Non-zero pages only, so untouched and zero-written pages compare equal."""
        return {p: bytes(b) for p, b in sorted(self._pages.items()) if any(b)}

    @staticmethod
    def _check(paddr: int, size: int):
        if paddr < 0 or paddr + size > (1 << PHYS_BITS):
            raise ValueError(f"physical access {paddr:#x}+{size} outside physical space")


class Cache:
    """Single-level set-associative LRU cache in front of :class:`PhysicalMemory`.

    Lines hold no private data: write-through keeps them equal to memory, so
    reads always come from the backing image.
    """

    def __init__(self, config: CacheConfig = CacheConfig(), memory: Optional[PhysicalMemory] = None,
                 *, jitter: int = 0, seed: int = 0, backend: Optional[str] = None):
        if jitter < 0:
            raise ValueError("jitter must be non-negative")
        if jitter >= config.hit_latency and jitter:
            # latencies must stay positive
            raise ValueError("jitter must be smaller than hit_latency")
        self.config = config
        self.memory = memory if memory is not None else PhysicalMemory()
        self.jitter = jitter
        self._rng = random.Random(seed)
        self._core = _kernels.get_backend(backend).CacheCore(config.sets, config.ways)
        self.trace: Optional[list[tuple[int, int, bool]]] = None
        self.clock = lambda: 0

    def line_of(self, paddr: int) -> int:
        return paddr >> LINE_SHIFT

    def set_index(self, paddr: int) -> int:
        return self.line_of(paddr) % self.config.sets

    def _noisy(self, base: int) -> int:
        if not self.jitter:
            return base
        return base + self._rng.randint(-self.jitter, self.jitter)

    def hit_sample(self) -> int:
        return self._noisy(self.config.hit_latency)

    def miss_sample(self) -> int:
        return self._noisy(self.config.miss_latency)

    def access(self, paddr: int, is_write: bool = False,
               data: Optional[bytes] = None) -> tuple[int, bool]:
        """Touch the line holding ``paddr``; a write also updates memory.

        Returns ``(latency, was_hit)``.
        """
        if is_write:
            if data is None:
                raise ValueError("write access needs data")
            self.memory.write(paddr, data)
        hit = self._core.access(self.line_of(paddr))
        if self.trace is not None:
            self.trace.append((self.clock(), paddr, hit))
        return (self.hit_sample() if hit else self.miss_sample()), hit

    def touch(self, paddr: int) -> bool:
        """LRU update on a hit, no fill on a miss."""
        return self._core.lookup(self.line_of(paddr))

    def fill(self, paddr: int) -> None:
        """Complete an outstanding fill for ``paddr``'s line."""
        self._core.fill(self.line_of(paddr))

    def read(self, paddr: int, size: int) -> bytes:
        return self.memory.read(paddr, size)

    def flush_line(self, paddr: int) -> None:
        self._core.invalidate(self.line_of(paddr))

    def flush_lines(self, paddrs) -> None:
        self._core.invalidate_many([self.line_of(p) for p in paddrs])

    def reload_lines(self, paddrs) -> list[tuple[int, bool]]:
        """Timed access followed by a flush for each address, in order."""
        hits = self._core.reload_many([self.line_of(p) for p in paddrs])
        return [((self.hit_sample() if h else self.miss_sample()), h) for h in hits]

    def is_resident(self, paddr: int) -> bool:
        return self._core.contains(self.line_of(paddr))

    def set_lru_order(self, index: int) -> list[int]:
        return list(self._core.set_order(index))

    def resident_lines(self) -> list[int]:
        return list(self._core.resident())

    def invalidate_all(self) -> None:
        self._core.clear()
