# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled cache-set and TLB kernels.

Behaviour is identical to ``_pykernels``; tests run both side by side.
"""

from libc.stdint cimport int64_t, uint64_t
from libc.stdlib cimport malloc, free


cdef class CacheCore:
    cdef public int num_sets
    cdef public int ways
    cdef int64_t *tags      # -1 marks an invalid way
    cdef uint64_t *stamps   # larger = more recently used
    cdef uint64_t clock

    def __cinit__(self, int num_sets, int ways):
        self.num_sets = num_sets
        self.ways = ways
        self.tags = <int64_t *> malloc(num_sets * ways * sizeof(int64_t))
        self.stamps = <uint64_t *> malloc(num_sets * ways * sizeof(uint64_t))
        if self.tags == NULL or self.stamps == NULL:
            raise MemoryError()
        self.clock = 0
        self._reset()

    def __dealloc__(self):
        free(self.tags)
        free(self.stamps)

    cdef void _reset(self):
        cdef int i
        for i in range(self.num_sets * self.ways):
            self.tags[i] = -1
            self.stamps[i] = 0

    cdef inline int _find(self, int64_t line):
        cdef int base = <int> (line % self.num_sets) * self.ways
        cdef int w
        for w in range(self.ways):
            if self.tags[base + w] == line:
                return base + w
        return -1

    cdef int64_t _fill(self, int64_t line):
        cdef int base = <int> (line % self.num_sets) * self.ways
        cdef int w, slot = -1
        cdef uint64_t oldest
        cdef int64_t victim = -1
        for w in range(self.ways):
            if self.tags[base + w] == line:
                self.clock += 1
                self.stamps[base + w] = self.clock
                return -1
        for w in range(self.ways):
            if self.tags[base + w] == -1:
                slot = base + w
                break
        if slot == -1:
            slot = base
            oldest = self.stamps[base]
            for w in range(1, self.ways):
                if self.stamps[base + w] < oldest:
                    oldest = self.stamps[base + w]
                    slot = base + w
            victim = self.tags[slot]
        self.tags[slot] = line
        self.clock += 1
        self.stamps[slot] = self.clock
        return victim

    def contains(self, int64_t line):
        return self._find(line) >= 0

    def lookup(self, int64_t line):
        cdef int i = self._find(line)
        if i < 0:
            return False
        self.clock += 1
        self.stamps[i] = self.clock
        return True

    def fill(self, int64_t line):
        return self._fill(line)

    def access(self, int64_t line):
        cdef int i = self._find(line)
        if i >= 0:
            self.clock += 1
            self.stamps[i] = self.clock
            return True
        self._fill(line)
        return False

    def invalidate(self, int64_t line):
        cdef int i = self._find(line)
        if i < 0:
            return False
        self.tags[i] = -1
        self.stamps[i] = 0
        return True

    def invalidate_many(self, lines):
        cdef int64_t line
        cdef int i
        for line in lines:
            i = self._find(line)
            if i >= 0:
                self.tags[i] = -1
                self.stamps[i] = 0

    def reload_many(self, lines):
        cdef int64_t line
        cdef int i
        cdef list hits = []
        for line in lines:
            i = self._find(line)
            if i >= 0:
                self.tags[i] = -1
                self.stamps[i] = 0
                hits.append(True)
            else:
                hits.append(False)
        return hits

    def set_order(self, int index):
        cdef int base = index * self.ways
        cdef int w
        pairs = []
        for w in range(self.ways):
            if self.tags[base + w] != -1:
                pairs.append((self.stamps[base + w], self.tags[base + w]))
        pairs.sort()
        return [line for _, line in pairs]

    def resident(self):
        cdef int i
        return sorted(self.tags[i] for i in range(self.num_sets * self.ways)
                      if self.tags[i] != -1)

    def clear(self):
        self._reset()


cdef class TlbCore:
    cdef public int capacity
    cdef int64_t *asid
    cdef int64_t *tag
    cdef int64_t *ppage
    cdef unsigned char *flags   # bit0 user, bit1 writable
    cdef uint64_t *stamps       # 0 marks an invalid slot
    cdef uint64_t clock
    cdef int count

    def __cinit__(self, int capacity):
        self.capacity = capacity
        self.asid = <int64_t *> malloc(capacity * sizeof(int64_t))
        self.tag = <int64_t *> malloc(capacity * sizeof(int64_t))
        self.ppage = <int64_t *> malloc(capacity * sizeof(int64_t))
        self.flags = <unsigned char *> malloc(capacity * sizeof(unsigned char))
        self.stamps = <uint64_t *> malloc(capacity * sizeof(uint64_t))
        if (self.asid == NULL or self.tag == NULL or self.ppage == NULL
                or self.flags == NULL or self.stamps == NULL):
            raise MemoryError()
        self.clock = 0
        self.flush_all()

    def __dealloc__(self):
        free(self.asid)
        free(self.tag)
        free(self.ppage)
        free(self.flags)
        free(self.stamps)

    cdef inline int _find(self, int64_t asid, int64_t tag):
        cdef int i
        for i in range(self.capacity):
            if self.stamps[i] != 0 and self.tag[i] == tag and self.asid[i] == asid:
                return i
        return -1

    cdef inline tuple _entry(self, int i):
        return (self.ppage[i], bool(self.flags[i] & 1), bool(self.flags[i] & 2))

    def lookup(self, int64_t asid, int64_t tag):
        cdef int i = self._find(asid, tag)
        if i < 0:
            return None
        self.clock += 1
        self.stamps[i] = self.clock
        return self._entry(i)

    def peek(self, int64_t asid, int64_t tag):
        cdef int i = self._find(asid, tag)
        return None if i < 0 else self._entry(i)

    def insert(self, int64_t asid, int64_t tag, int64_t ppage, user, writable):
        cdef int i = self._find(asid, tag)
        cdef int j
        cdef uint64_t oldest
        victim = None
        if i < 0:
            for j in range(self.capacity):
                if self.stamps[j] == 0:
                    i = j
                    break
            if i < 0:
                i = 0
                oldest = self.stamps[0]
                for j in range(1, self.capacity):
                    if self.stamps[j] < oldest:
                        oldest = self.stamps[j]
                        i = j
                victim = (self.asid[i], self.tag[i])
            else:
                self.count += 1
        self.asid[i] = asid
        self.tag[i] = tag
        self.ppage[i] = ppage
        self.flags[i] = (1 if user else 0) | (2 if writable else 0)
        self.clock += 1
        self.stamps[i] = self.clock
        return victim

    def flush(self, int64_t asid):
        cdef int i
        for i in range(self.capacity):
            if self.stamps[i] != 0 and self.asid[i] == asid:
                self.stamps[i] = 0
                self.count -= 1

    def flush_all(self):
        cdef int i
        for i in range(self.capacity):
            self.stamps[i] = 0
        self.count = 0

    def keys(self):
        cdef int i
        pairs = [(self.stamps[i], (self.asid[i], self.tag[i]))
                 for i in range(self.capacity) if self.stamps[i] != 0]
        pairs.sort()
        return [k for _, k in pairs]

    def __len__(self):
        return self.count
