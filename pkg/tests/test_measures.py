import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flatmetric.errors import DimensionMismatch, InvalidRadius, InvalidSplit, NegativeIntensity, ZeroMass
from flatmetric.measures import (
    DiscreteMeasure,
    MeasurePair,
    image_to_measure,
    intensity_bin,
    normalize_pair,
    read_image,
    read_point_cloud,
    sample_ball_with_split,
    sample_sphere,
    total_variation,
    write_point_cloud,
)


def test_measure_copies_and_freezes():
    pts = np.zeros((2, 2))
    m = DiscreteMeasure(pts, [1.0, 2.0])
    pts[0, 0] = 5.0
    assert m.points[0, 0] == 0.0
    with pytest.raises(ValueError):
        m.weights[0] = 3.0


def test_measure_validation():
    with pytest.raises(DimensionMismatch):
        DiscreteMeasure(np.zeros((3, 2)), [1.0, 1.0])
    with pytest.raises(ValueError):
        DiscreteMeasure(np.zeros((1, 2)), [-1.0])
    with pytest.raises(ValueError):
        DiscreteMeasure([[np.nan, 0.0]])
    with pytest.raises(DimensionMismatch):
        MeasurePair(DiscreteMeasure.dirac([0.0]), DiscreteMeasure.dirac([0.0, 0.0]))


def test_total_variation():
    assert total_variation(DiscreteMeasure.dirac([0.0, 0.0])) == 1.0
    assert total_variation(DiscreteMeasure([[0.0], [1.0]], [0.5, 1.5])) == 2.0
    # deleting one Dirac and creating another costs 2 regardless of where they sit
    a, b = DiscreteMeasure.dirac([0.0]), DiscreteMeasure.dirac([100.0])
    assert total_variation(a) + total_variation(b) == 2.0


def test_normalize_pair_examples():
    mu = DiscreteMeasure([[0.0]], [5.0])
    nu = DiscreteMeasure([[1.0]], [3.0])
    p = normalize_pair(mu, nu)
    assert p.mu.total_mass == pytest.approx(5 / 3)
    assert p.nu.total_mass == pytest.approx(1.0)
    assert p.scale == pytest.approx(1 / 3)

    same = normalize_pair(DiscreteMeasure.dirac([0.0]), DiscreteMeasure.dirac([1.0]))
    assert same.scale == 1.0

    m = DiscreteMeasure.dirac([0.0] * 4, 16 * 10)
    n = DiscreteMeasure(np.ones((16 * 50, 4)))
    p = normalize_pair(m, n)
    assert (p.mu.total_mass, p.nu.total_mass) == pytest.approx((1.0, 5.0))


def test_normalize_pair_rejects_zero_mass():
    with pytest.raises(ZeroMass):
        normalize_pair(DiscreteMeasure.empty(2), DiscreteMeasure.dirac([0.0, 0.0]))


@given(
    st.floats(0.01, 1e4),
    st.floats(0.01, 1e4),
)
def test_normalize_pair_min_mass_is_one(a, b):
    p = normalize_pair(DiscreteMeasure.dirac([0.0], a), DiscreteMeasure.dirac([1.0], b))
    assert min(p.mu.total_mass, p.nu.total_mass) == pytest.approx(1.0)
    assert p.mu.total_mass / p.scale == pytest.approx(a)


def test_sample_sphere():
    m = sample_sphere(4, 2, 2.0, seed=0)
    assert m.size == 4
    np.testing.assert_allclose(np.linalg.norm(m.points, axis=1), 2.0)

    one = sample_sphere(1, 1, 5.0, seed=1)
    assert abs(one.points[0, 0]) == pytest.approx(5.0)

    big = sample_sphere(30 * 2**3, 3, 1.0, seed=2)
    assert big.size == 240
    np.testing.assert_allclose(np.linalg.norm(big.points, axis=1), 1.0)

    with pytest.raises(InvalidRadius):
        sample_sphere(3, 2, 0.0)


def test_sample_sphere_is_seeded():
    np.testing.assert_array_equal(sample_sphere(5, 3, 1.0, seed=7).points, sample_sphere(5, 3, 1.0, seed=7).points)


def test_ball_split_boundaries():
    inner = np.linalg.norm(sample_ball_with_split(10, 10, 2, seed=0).points, axis=1)
    assert np.all(inner <= 2.0)
    outer = np.linalg.norm(sample_ball_with_split(10, 0, 2, seed=0).points, axis=1)
    assert np.all((outer > 2.0) & (outer <= 200.0))


@given(st.integers(1, 100), st.integers(0, 100), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_ball_split_counts(n, l_f, dim, seed):
    l_f = min(l_f, n)
    r = np.linalg.norm(sample_ball_with_split(n, l_f, dim, seed=seed).points, axis=1)
    assert np.count_nonzero(r <= 2.0) == l_f
    assert np.all(r <= 200.0 * (1 + 1e-12))


def test_ball_split_rejects_bad_share():
    with pytest.raises(InvalidSplit):
        sample_ball_with_split(5, 6, 2)


def test_intensity_bins():
    assert intensity_bin(23) == 0
    assert intensity_bin(28) == 0
    assert intensity_bin(29) == 1
    assert intensity_bin(250) == 8
    assert intensity_bin(255) == 8


def test_image_to_measure():
    assert image_to_measure([[23]]).size == 0
    single = image_to_measure([[250]])
    assert single.weights.tolist() == [8.0]

    m = image_to_measure(np.full((2, 2), 255))
    assert m.size == 4
    np.testing.assert_array_equal(m.weights, 8.0)
    assert sorted(map(tuple, m.points)) == [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)]

    with pytest.raises(NegativeIntensity):
        image_to_measure([[-1]])


@given(st.integers(0, 255))
def test_image_weight_is_monotone_in_intensity(v):
    w = image_to_measure([[v]]).total_mass
    w_next = image_to_measure([[min(v + 1, 255)]]).total_mass
    assert 0 <= w <= w_next <= 8


def test_point_cloud_round_trip(tmp_path):
    m = DiscreteMeasure(np.random.default_rng(0).normal(size=(5, 3)), [1, 2, 3, 4, 5])
    path = tmp_path / "cloud.csv"
    write_point_cloud(path, m)
    back = read_point_cloud(path)
    np.testing.assert_array_equal(back.points, m.points)
    np.testing.assert_array_equal(back.weights, m.weights)


def test_point_cloud_without_weights(tmp_path):
    path = tmp_path / "plain.csv"
    path.write_text("1,2\n3,4\n")
    m = read_point_cloud(path)
    assert m.dim == 2 and m.total_mass == 2.0


def test_read_image_formats(tmp_path):
    from PIL import Image

    grid = np.array([[0, 128], [255, 30]], dtype=np.uint8)
    pgm = tmp_path / "x.pgm"
    Image.fromarray(grid).save(pgm)
    np.testing.assert_array_equal(read_image(pgm), grid)
    txt = tmp_path / "x.txt"
    txt.write_text("0 128\n255 30\n")
    np.testing.assert_array_equal(read_image(txt), grid)


@pytest.mark.parametrize("dim", [1, 2, 5, 10])
def test_sphere_norms_exact(dim):
    r = np.linalg.norm(sample_sphere(50, dim, 3.7, seed=dim).points, axis=1)
    np.testing.assert_allclose(r, 3.7, atol=1e-9, rtol=0)


@given(st.integers(0, 2**32 - 1))
def test_normalize_pair_scales_the_distance(seed):
    from flatmetric.lp_oracle import flat_distance_exact

    rng = np.random.default_rng(seed)
    mu = DiscreteMeasure(rng.normal(size=(4, 2)), rng.uniform(0.1, 5, 4))
    nu = DiscreteMeasure(rng.normal(size=(3, 2)), rng.uniform(0.1, 5, 3))
    p = normalize_pair(mu, nu)
    expected = flat_distance_exact(mu, nu) / min(mu.total_mass, nu.total_mass)
    assert flat_distance_exact(p.mu, p.nu) == pytest.approx(expected, abs=1e-8)


@given(st.lists(st.integers(0, 255), min_size=9, max_size=9))
def test_image_mass_is_bin_sum(values):
    grid = np.array(values, dtype=float).reshape(3, 3)
    assert image_to_measure(grid).total_mass == sum(intensity_bin(v) for v in values)
