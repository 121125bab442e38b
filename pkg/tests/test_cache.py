import random

import pytest

from ncsim.cache import Cache, CacheConfig, PhysicalMemory


@pytest.fixture(params=["python", "cython"])
def backend(request):
    from ncsim._kernels import available_backends
    if request.param not in available_backends():
        pytest.skip("compiled kernels not built")
    return request.param


def same_set(cfg: CacheConfig, n: int, set_index: int = 3) -> list[int]:
    stride = cfg.sets * cfg.line_size
    return [set_index * cfg.line_size + i * stride for i in range(n)]


def test_cold_then_hit(backend):
    c = Cache(backend=backend)
    assert c.access(0x1000) == (50, False)
    assert c.access(0x1008) == (4, True)


def test_lru_eviction(backend):
    cfg = CacheConfig()
    c = Cache(cfg, backend=backend)
    lines = same_set(cfg, cfg.ways + 1)
    for a in lines[:-1]:
        c.access(a)
    c.access(lines[-1])
    assert c.access(lines[0]) == (50, False)


def test_lru_matches_reference_model(backend):
    """Random access/flush streams against a list-based LRU model."""
    cfg = CacheConfig(sets=4, ways=4)
    c = Cache(cfg, backend=backend)
    model = {s: [] for s in range(cfg.sets)}
    rng = random.Random(3)
    for _ in range(5000):
        line = rng.randrange(40)
        s = line % cfg.sets
        if rng.random() < 0.15:
            c.flush_line(line * 64)
            if line in model[s]:
                model[s].remove(line)
            continue
        _, hit = c.access(line * 64)
        assert hit == (line in model[s])
        if hit:
            model[s].remove(line)
        elif len(model[s]) == cfg.ways:
            model[s].pop(0)
        model[s].append(line)
        assert c.set_lru_order(s) == model[s]


def test_flush(backend):
    c = Cache(backend=backend)
    c.access(0x40)
    c.flush_line(0x40)
    assert c.access(0x40) == (50, False)
    c.flush_line(0x9000)  # not resident: no-op
    assert c.is_resident(0x40)


def test_residency_query_does_not_perturb_lru(backend):
    cfg = CacheConfig()
    lines = same_set(cfg, cfg.ways + 4)
    rng = random.Random(5)
    stream = [rng.choice(lines) for _ in range(300)]

    def run(query: bool):
        c = Cache(cfg, backend=backend)
        out = []
        for a in stream:
            if query:
                for b in lines:
                    c.is_resident(b)
            out.append(c.access(a)[1])
        return out, c.set_lru_order(3)

    assert run(False) == run(True)


def test_is_resident(backend):
    c = Cache(backend=backend)
    assert not c.is_resident(0x80)
    c.access(0x80)
    assert c.is_resident(0x80)
    c.flush_line(0x80)
    assert not c.is_resident(0x80)


def test_reload_lines_flushes_each_probe(backend):
    cfg = CacheConfig()
    c = Cache(cfg, backend=backend)
    lines = same_set(cfg, 16)
    c.access(lines[5])
    timed = c.reload_lines(lines)
    assert [h for _, h in timed] == [i == 5 for i in range(16)]
    assert c.resident_lines() == []


def test_write_then_read():
    mem = PhysicalMemory()
    c = Cache(memory=mem)
    c.access(0x1234, True, b"\xaa\xbb")
    assert c.read(0x1234, 2) == b"\xaa\xbb"
    assert mem.read_int(0x1234, 2) == 0xBBAA
    assert c.is_resident(0x1234)
    with pytest.raises(ValueError):
        c.access(0x10, True)


def test_memory_snapshot_and_bounds():
    mem = PhysicalMemory()
    mem.write_int(0x2000, 0x1122, 2)
    mem.write_int(0x5000, 0, 8)
    snap = mem.snapshot()
    assert list(snap) == [2]
    assert snap[2][:2] == b"\x22\x11"
    with pytest.raises(ValueError):
        mem.read(-1, 1)


def test_config_validation():
    with pytest.raises(ValueError):
        CacheConfig(sets=3)
    with pytest.raises(ValueError):
        CacheConfig(hit_latency=60, miss_latency=50)
    CacheConfig(hit_latency=4, miss_latency=4)
    with pytest.raises(ValueError):
        Cache(jitter=4)


def test_jitter_is_seeded():
    a = Cache(jitter=3, seed=9)
    b = Cache(jitter=3, seed=9)
    sa = [a.miss_sample() for _ in range(100)]
    assert sa == [b.miss_sample() for _ in range(100)]
    assert {x - 50 for x in sa} <= set(range(-3, 4))
    assert len(set(sa)) > 1


def test_trace_records_accesses():
    c = Cache()
    c.trace = []
    c.clock = lambda: 17
    c.access(0x40)
    c.access(0x40)
    assert c.trace == [(17, 0x40, False), (17, 0x40, True)]
