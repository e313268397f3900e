import numpy as np
import pytest

from gnmap.rng import Rng, derive_seed, splitmix64


def test_same_seed_same_stream():
    a = Rng(123)
    b = Rng(123)
    assert [a.next_u64() for _ in range(50)] == [b.next_u64() for _ in range(50)]


def test_different_seeds_differ():
    assert [Rng(1).next_u64() for _ in range(4)] != [Rng(2).next_u64() for _ in range(4)]


def test_golden_values_pin_the_generator():
    # frozen outputs: any platform or refactor drift shows up here
    r = Rng(0)
    assert r.next_u64() == 8916199331640804048
    assert splitmix64(0) == 16294208416658607535
    assert derive_seed(0, "tile") == derive_seed(0, "tile")
    assert derive_seed(0, "tile") != derive_seed(0, "tour")
    assert derive_seed(0, "tile") != derive_seed(1, "tile")


def test_uniform_range_and_mean():
    r = Rng(7)
    xs = [r.uniform() for _ in range(20000)]
    assert all(0.0 <= x < 1.0 for x in xs)
    assert abs(np.mean(xs) - 0.5) < 0.01


def test_randint_bounds_and_uniformity():
    r = Rng(11)
    counts = np.zeros(5)
    for _ in range(25000):
        v = r.randint(5)
        assert 0 <= v < 5
        counts[v] += 1
    assert np.abs(counts / 25000 - 0.2).max() < 0.02


def test_randint_rejects_nonpositive():
    with pytest.raises(ValueError):
        Rng(1).randint(0)


def test_normal_moments():
    r = Rng(13)
    xs = np.array(r.normals(40000, sigma=2.0))
    assert abs(xs.mean()) < 0.05
    assert abs(xs.std() - 2.0) < 0.05


def test_sample_prefix_is_a_subset_without_replacement():
    r = Rng(5)
    for n, k in ((10, 3), (16, 4), (4, 4), (9, 0)):
        picked = r.sample_prefix(n, k)
        assert len(picked) == k
        assert len(set(picked)) == k
        assert all(0 <= i < n for i in picked)
    with pytest.raises(ValueError):
        r.sample_prefix(4, 5)


def test_shuffle_is_a_permutation():
    r = Rng(3)
    items = list(range(30))
    r.shuffle(items)
    assert sorted(items) == list(range(30))
    assert items != list(range(30))
