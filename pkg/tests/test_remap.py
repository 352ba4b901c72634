import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dasim import (ClusterTopology, MapConfig, MapKind, PhysicalLocation, das,
                   das_inverse, das_map, interleaved, interleaved_map, resolve,
                   resolve_array, segment_transfer, terapool_default)


def toy_topology(b=4, r=4):
    """Smallest parametric cluster with 2^b banks and 2^r rows."""
    # one tile of 2^b banks keeps the geometry legal for any b
    return ClusterTopology(pes_per_tile=4, banks_per_tile=2 ** b,
                           tiles_per_subgroup=1, subgroups_per_group=1,
                           groups=1, rows_per_bank=2 ** r, word_bytes=4)


def fold_reference(b, p, s, u):
    """Independent folding oracle using div/mod arithmetic only."""
    bank_lo = u % 2 ** p
    u //= 2 ** p
    row_lo = u % 2 ** s
    u //= 2 ** s
    bank_hi = u % 2 ** (b - p)
    u //= 2 ** (b - p)
    row_hi = u
    return bank_hi * 2 ** p + bank_lo, row_hi * 2 ** s + row_lo


def bound(cfg, base, size):
    return MapConfig(kind=cfg.kind, p=cfg.p, s=cfg.s, base_addr=base, size_bytes=size)


# -- interleaved baseline -----------------------------------------------------

def test_interleaved_examples():
    t = toy_topology()
    assert interleaved_map(t, 0x00) == PhysicalLocation(0, 0)
    assert interleaved_map(t, 0x44) == PhysicalLocation(1, 1)
    assert interleaved_map(t, 0x40) == PhysicalLocation(0, 1)


def test_interleaved_out_of_range():
    t = toy_topology()
    with pytest.raises(ValueError):
        interleaved_map(t, t.total_bytes)


# -- partitioned mapping ------------------------------------------------------

def test_das_toy_examples():
    t = toy_topology()
    cfg = bound(das(2, 1), 0, t.total_bytes)
    assert das_map(t, cfg, 0x14) == PhysicalLocation(1, 1)
    assert das_map(t, cfg, 0x20) == PhysicalLocation(4, 0)


def test_das_terapool_folding():
    # frozen from the div/mod oracle over the first 2^16 words
    t = terapool_default()
    cfg = bound(das(5, 2), 0, t.total_bytes)
    assert das_map(t, cfg, 0x200) == PhysicalLocation(32, 0)
    for u in range(0, 2 ** 16, 97):
        want = fold_reference(t.bank_bits, 5, 2, u)
        assert das_map(t, cfg, u * 4) == want


def test_das_region_gating():
    t = toy_topology()
    cfg = bound(das(2, 1), 0x40, 0x40)
    with pytest.raises(ValueError):
        das_map(t, cfg, 0x20)
    with pytest.raises(ValueError):
        das_map(t, cfg, 0x80)


def test_das_misaligned_region_rejected():
    t = toy_topology()
    cfg = bound(das(2, 1), 0x10, 0x40)  # block is 32 B, base is 16
    with pytest.raises(ValueError):
        das_map(t, cfg, 0x10)


def test_identity_when_p_is_b():
    t = toy_topology()
    cfg = bound(das(t.bank_bits, 0), 0, t.total_bytes)
    for addr in range(0, t.total_bytes, 4):
        assert das_map(t, cfg, addr) == interleaved_map(t, addr)


@settings(max_examples=60, deadline=None)
@given(b=st.integers(1, 6), r=st.integers(1, 6), data=st.data())
def test_bijectivity_and_inverse(b, r, data):
    t = toy_topology(b, r)
    p = data.draw(st.integers(0, b))
    s = data.draw(st.integers(0, r))
    block = 4 * 2 ** (p + s)
    n_blocks = t.total_bytes // block
    base_blk = data.draw(st.integers(0, n_blocks - 1))
    size = data.draw(st.integers(1, n_blocks - base_blk)) * block
    cfg = bound(das(p, s), base_blk * block, size)
    seen = set()
    for addr in range(cfg.base_addr, cfg.base_addr + size, 4):
        loc = das_map(t, cfg, addr)
        assert loc not in seen
        seen.add(loc)
        assert 0 <= loc.bank < t.n_banks
        assert 0 <= loc.row < t.rows_per_bank
        assert das_inverse(t, cfg, loc) == addr


def test_locality_one_tile_per_block():
    # 2^(p+s) consecutive words stay in one tile when p covers its banks
    t = ClusterTopology(pes_per_tile=4, banks_per_tile=8, tiles_per_subgroup=2,
                        subgroups_per_group=2, groups=2, rows_per_bank=16)
    p = 3  # log2(banks_per_tile)
    for s in (0, 1, 2):
        cfg = bound(das(p, s), 0, t.total_bytes)
        words_per_block = 2 ** (p + s)
        for blk in range(t.total_bytes // (4 * words_per_block)):
            tiles = {das_map(t, cfg, (blk * words_per_block + w) * 4).bank
                     // t.banks_per_tile for w in range(words_per_block)}
            assert len(tiles) == 1


def test_resolve_registry():
    t = toy_topology()
    r1 = bound(das(2, 1), 0x40, 0x40)
    assert resolve(t, [], 0x14) == interleaved_map(t, 0x14)
    assert resolve(t, [r1], 0x50) == das_map(t, r1, 0x50)
    assert resolve(t, [r1], 0x3F) == interleaved_map(t, 0x3F)
    r2 = bound(das(2, 1), 0x60, 0x40)
    with pytest.raises(ValueError):
        resolve(t, [r1, r2], 0x0)


def test_resolve_array_matches_scalar():
    t = toy_topology()
    r1 = bound(das(2, 1), 0x40, 0x40)
    r2 = bound(interleaved(), 0x100, 0x40)
    addrs = np.arange(0, t.total_bytes, 4)
    banks, rows = resolve_array(t, [r1, r2], addrs)
    for i, a in enumerate(addrs):
        want = resolve(t, [r1, r2], int(a))
        assert (banks[i], rows[i]) == want


def test_resolve_array_rejects_out_of_l1():
    t = toy_topology()
    with pytest.raises(ValueError):
        resolve_array(t, [], np.array([t.total_bytes]))


# -- transfer segmentation ----------------------------------------------------

def test_segment_examples():
    t = toy_topology()  # b=4, word 4 -> line 64 B
    cfg = bound(das(2, 1), 0, 0x100)  # block 32 B
    assert segment_transfer(t, cfg, (0, 64), (0, 64)) == [
        ((0, 32), (0, 32)), ((32, 64), (32, 64))]
    assert segment_transfer(t, cfg, (0, 32), (8, 40)) == [
        ((0, 24), (8, 32)), ((24, 32), (32, 40))]
    il = interleaved()
    assert segment_transfer(t, il, (0, 64), (0, 64)) == [((0, 64), (0, 64))]


def test_segment_length_mismatch():
    t = toy_topology()
    with pytest.raises(ValueError):
        segment_transfer(t, interleaved(), (0, 63), (0, 64))


@settings(max_examples=200, deadline=None)
@given(data=st.data())
def test_segment_partition_respecting(data):
    t = toy_topology()
    p = data.draw(st.integers(0, 4))
    s = data.draw(st.integers(0, 4))
    block = 4 * 2 ** (p + s)
    base = data.draw(st.integers(0, 3)) * block
    size = data.draw(st.integers(1, 4)) * block
    cfg = bound(das(p, s), base, size)
    lo = data.draw(st.integers(0, size - 4))
    hi = data.draw(st.integers(lo + 4, size))
    dst = (base + lo, base + hi)
    src = (1024, 1024 + hi - lo)
    segs = segment_transfer(t, cfg, src, dst)
    # ordered, disjoint, boundary-respecting, and reuniting to the input
    pos_s, pos_d = src[0], dst[0]
    for (s0, s1), (d0, d1) in segs:
        assert s0 == pos_s and d0 == pos_d
        assert s1 - s0 == d1 - d0 > 0
        assert (d0 - base) // block == (d1 - 1 - base) // block
        pos_s, pos_d = s1, d1
    assert pos_s == src[1] and pos_d == dst[1]
