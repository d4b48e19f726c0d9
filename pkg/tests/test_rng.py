import numpy as np

from tmlmc import rng as crng


def test_uniform_range_and_moments():
    u = crng.uniforms(crng.root_key(1), np.arange(200_000, dtype=np.uint64))
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 3 * np.sqrt(1 / 12 / u.size)
    counts = np.bincount((u * 10).astype(int), minlength=10)
    chi2 = ((counts - u.size / 10) ** 2 / (u.size / 10)).sum()
    assert chi2 < 30  # 9 dof, p ~ 4e-4


def test_stream_is_order_free():
    s = crng.CounterStream.from_seed(3, 1, 2)
    seq = np.array([s.random() for _ in range(5)] + list(s.random(7)))
    direct = crng.uniforms(crng.derive_key(3, 1, 2), np.arange(12, dtype=np.uint64))
    assert np.array_equal(seq, direct)


def test_child_keys_distinct_and_vectorised():
    root = crng.root_key(0)
    keys = crng.child_key(root, np.arange(1000))
    assert np.unique(keys).size == 1000
    assert keys[17] == crng.child_key(root, 17)
    assert crng.derive_key(0, 5) != crng.derive_key(1, 5)
    assert crng.derive_key(0, 1, 2) != crng.derive_key(0, 2, 1)


def test_children_look_independent():
    a = crng.uniforms(crng.derive_key(9, 0), np.arange(50_000, dtype=np.uint64))
    b = crng.uniforms(crng.derive_key(9, 1), np.arange(50_000, dtype=np.uint64))
    assert abs(np.corrcoef(a, b)[0, 1]) < 4 / np.sqrt(a.size)
