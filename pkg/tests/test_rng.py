import numpy as np
import pytest
from scipy import special, stats

from smalldev import rng

U = np.uint64

# Known-answer vectors for Philox4x32-10 (Random123 distribution, kat_vectors)
KAT = [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF,) * 2, (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0),
     (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
]


@pytest.mark.parametrize("ctr, key, want", KAT)
def test_philox_known_answers(ctr, key, want):
    got = rng.philox4x32(*map(U, ctr), *map(U, key))
    assert tuple(int(w) for w in got) == want


@pytest.mark.parametrize("ctr, key, want", KAT)
def test_philox_jit_matches(ctr, key, want):
    got = rng.philox4x32_jit(*map(U, ctr), *map(U, key))
    assert tuple(int(w) for w in got) == want


def test_uniform_pairs_vector_matches_scalar():
    k0, k1 = rng.split_key(12345678901234)
    blocks = np.arange(20, dtype=np.uint64)
    streams = np.full(20, 2**40 + 7, dtype=np.uint64)
    u0, u1 = rng.uniform_pairs(blocks, rng.PURPOSE_NORMAL, streams, 12345678901234)
    for b in range(20):
        a0, a1 = rng.uniform_pair_jit(U(b), U(0), U(2**40 + 7), k0, k1)
        assert (a0, a1) == (u0[b], u1[b])


def test_uniforms_open_interval_and_uniform():
    u0, u1 = rng.uniform_pairs(np.arange(50_000), 0, 3, seed=9)
    u = np.concatenate([u0, u1])
    assert u.min() > 0 and u.max() < 1
    assert stats.kstest(u, "uniform").pvalue > 0.01


def test_streams_and_purposes_differ():
    a = rng.uniform_pairs(np.arange(4), 0, 1, seed=5)[0]
    b = rng.uniform_pairs(np.arange(4), 0, 2, seed=5)[0]
    c = rng.uniform_pairs(np.arange(4), 1, 1, seed=5)[0]
    d = rng.uniform_pairs(np.arange(4), 0, 1, seed=6)[0]
    assert len({tuple(a), tuple(b), tuple(c), tuple(d)}) == 4


def test_ndtri_against_scipy():
    p = np.concatenate([np.linspace(1e-12, 1 - 1e-12, 10001),
                        np.logspace(-300, -1, 400), 1 - np.logspace(-16, -1, 200)])
    want = special.ndtri(p)
    got = rng.ndtri(p)
    np.testing.assert_allclose(got, want, rtol=1e-14, atol=1e-14)
    for v in p[::97]:
        assert rng.ndtri_jit(v) == pytest.approx(special.ndtri(v), rel=1e-14, abs=1e-14)


def test_normals_moments():
    z = rng.normals(np.arange(200_000), stream=11, seed=3)
    assert abs(z.mean()) < 5 / np.sqrt(len(z))
    assert abs(z.var() - 1) < 0.02
    assert stats.kstest(z, "norm").pvalue > 0.01
