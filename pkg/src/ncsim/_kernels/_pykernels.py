"""Pure-Python cache-set and TLB kernels (fallback for ``_ckernels``)."""

from collections import OrderedDict


class CacheCore:
    """Set-associative LRU tag store keyed by line number."""

    def __init__(self, num_sets, ways):
        self.num_sets = num_sets
        self.ways = ways
        self._sets = [OrderedDict() for _ in range(num_sets)]

    def contains(self, line):
        return line in self._sets[line % self.num_sets]

    def lookup(self, line):
        s = self._sets[line % self.num_sets]
        if line in s:
            s.move_to_end(line)
            return True
        return False

    def fill(self, line):
        """Insert ``line`` as MRU; returns the evicted line or -1."""
        s = self._sets[line % self.num_sets]
        if line in s:
            s.move_to_end(line)
            return -1
        victim = -1
        if len(s) >= self.ways:
            victim, _ = s.popitem(last=False)
        s[line] = None
        return victim

    def access(self, line):
        if self.lookup(line):
            return True
        self.fill(line)
        return False

    def invalidate(self, line):
        s = self._sets[line % self.num_sets]
        if line in s:
            del s[line]
            return True
        return False

    def invalidate_many(self, lines):
        for line in lines:
            self._sets[line % self.num_sets].pop(line, None)

    def reload_many(self, lines):
        """Access then invalidate each line in order; returns hit flags."""
        hits = []
        for line in lines:
            s = self._sets[line % self.num_sets]
            hits.append(line in s)
            s.pop(line, None)
        return hits

    def set_order(self, index):
        """Resident lines of one set, least recently used first."""
        return list(self._sets[index])

    def resident(self):
        return sorted(line for s in self._sets for line in s)

    def clear(self):
        for s in self._sets:
            s.clear()


class TlbCore:
    """Fully associative LRU translation store keyed by (asid, page tag)."""

    def __init__(self, capacity):
        self.capacity = capacity
        self._entries = OrderedDict()

    def lookup(self, asid, tag):
        """Return (ppage, user, writable) or None; a hit becomes MRU."""
        key = (asid, tag)
        e = self._entries.get(key)
        if e is not None:
            self._entries.move_to_end(key)
        return e

    def peek(self, asid, tag):
        return self._entries.get((asid, tag))

    def insert(self, asid, tag, ppage, user, writable):
        """Insert as MRU; returns the evicted (asid, tag) or None."""
        key = (asid, tag)
        victim = None
        if key in self._entries:
            self._entries.move_to_end(key)
        elif len(self._entries) >= self.capacity:
            victim, _ = self._entries.popitem(last=False)
        self._entries[key] = (ppage, bool(user), bool(writable))
        return victim

    def flush(self, asid):
        for key in [k for k in self._entries if k[0] == asid]:
            del self._entries[key]

    def flush_all(self):
        self._entries.clear()

    def keys(self):
        """(asid, tag) pairs, least recently used first."""
        return list(self._entries)

    def __len__(self):
        return len(self._entries)
