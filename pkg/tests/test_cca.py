import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_force_rho, random_pair

from canonsim.cca import (
    CsaModel,
    FeatureMatrix,
    Fixed,
    ModelFileError,
    NoDimensionError,
    PairingError,
    Threshold,
    center,
    fit,
    load_model,
    project,
    select_s,
)
from canonsim.linalg import NotPositiveDefiniteError
from canonsim.similarity import score_matrix

# canonical correlations of the seeded 3x50 / 4x50 instance below, from the
# generalized-eigenproblem oracle
SEEDED_RHO = [0.6377483837266485, 0.5643052719994107, 0.14283509441379108]


@pytest.fixture
def seeded_pair():
    rng = np.random.default_rng(7)
    lat = rng.standard_normal((2, 50))
    z1 = rng.standard_normal((3, 2)) @ lat + 0.8 * rng.standard_normal((3, 50))
    z2 = rng.standard_normal((4, 2)) @ lat + 0.8 * rng.standard_normal((4, 50))
    return FeatureMatrix(z1), FeatureMatrix(z2)


def test_feature_matrix_validation():
    with pytest.raises(ValueError):
        FeatureMatrix(np.ones((2, 2)), ("a", "a"))
    with pytest.raises(ValueError):
        FeatureMatrix(np.array([[1.0, np.inf]]))
    with pytest.raises(ValueError):
        FeatureMatrix(np.ones((2, 3)), ("a", "b"))
    assert FeatureMatrix(np.ones((2, 3))).ids == ("0", "1", "2")


def test_center_constant_rows():
    c, mean = center(FeatureMatrix(np.full((2, 5), 3.5)))
    np.testing.assert_array_equal(c.values, 0.0)
    np.testing.assert_array_equal(mean, [3.5, 3.5])


def test_center_two_points():
    c, mean = center(FeatureMatrix(np.array([[1.0, 3.0]])))
    np.testing.assert_array_equal(c.values, [[-1.0, 1.0]])
    np.testing.assert_array_equal(mean, [2.0])


def test_center_random():
    z = np.random.default_rng(0).standard_normal((4, 100)) + 5.0
    c, mean = center(FeatureMatrix(z))
    assert np.abs(c.values.mean(axis=1)).max() < 1e-12
    assert mean.shape == (4,)


def test_center_needs_two_items():
    with pytest.raises(ValueError):
        center(FeatureMatrix(np.ones((3, 1))))


def test_select_s_threshold():
    assert select_s([0.9, 0.5, 0.1], Threshold(0.3)) == 2
    assert select_s([0.9, 0.8, 0.7], Threshold(0.3)) == 3
    assert select_s([0.9, 0.5, 0.3], Threshold(0.3)) == 3


def test_select_s_fixed():
    assert select_s(np.linspace(1, 0, 768), Fixed(700)) == 700
    with pytest.raises(ValueError):
        select_s([0.9, 0.5], Fixed(3))


def test_select_s_nothing_qualifies():
    with pytest.raises(NoDimensionError):
        select_s([0.2, 0.1], Threshold(0.3))


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 1.5])
def test_threshold_range(bad):
    with pytest.raises(ValueError):
        Threshold(bad)


def test_fit_matches_oracle(seeded_pair):
    z1, z2 = seeded_pair
    model = fit(z1, z2, eps=0.0, s_rule=Fixed(1))
    assert model.r == 3
    np.testing.assert_allclose(model.rho, SEEDED_RHO, atol=1e-8)
    np.testing.assert_allclose(brute_force_rho(z1.values, z2.values), SEEDED_RHO, atol=1e-12)


def test_project_matches_explicit_product(seeded_pair):
    z1, z2 = seeded_pair
    model = fit(z1, z2, eps=0.0, s_rule=Fixed(1))
    x = z1.values - z1.values.mean(axis=1, keepdims=True)
    np.testing.assert_allclose(project(model, "first", z1), model.map_a @ x, atol=1e-12)
    # projected coordinates are pairwise correlated exactly by rho
    u, v = project(model, 1, z1), project(model, 2, z2)
    np.testing.assert_allclose(np.diag(u @ v.T), model.rho, atol=1e-10)


def test_self_pair_is_maximally_correlated():
    z = np.random.default_rng(1).standard_normal((6, 200))
    model = fit(FeatureMatrix(z), FeatureMatrix(z), eps=0.0)
    assert np.all(model.rho >= 1 - 1e-6)


def test_r_is_min_dim():
    rng = np.random.default_rng(2)
    z1, z2 = random_pair(rng, 7, 12, 100)
    model = fit(FeatureMatrix(z1), FeatureMatrix(z2), eps=0.0, s_rule=Fixed(1))
    assert model.r == 7 and model.map_a.shape == (7, 7) and model.map_b.shape == (7, 12)


def test_r_for_768_by_1536_features():
    rng = np.random.default_rng(3)
    z1, z2 = random_pair(rng, 768, 1536, 400, k=20)
    model = fit(FeatureMatrix(z1), FeatureMatrix(z2), eps=1e-6, s_rule=Fixed(700))
    assert model.r == 768 and model.s == 700


def test_whitening_constraint():
    rng = np.random.default_rng(4)
    z1, z2 = random_pair(rng, 8, 11, 300)
    model = fit(FeatureMatrix(z1), FeatureMatrix(z2), eps=0.0, s_rule=Fixed(1))
    for side, z in ((1, z1), (2, z2)):
        p = project(model, side, FeatureMatrix(z))
        assert np.abs(p @ p.T - np.eye(model.r)).max() < 1e-4


def test_training_mean_projects_to_zero(seeded_pair):
    z1, z2 = seeded_pair
    model = fit(z1, z2, eps=0.0, s_rule=Fixed(1))
    np.testing.assert_allclose(project(model, 1, model.mean_a), 0.0, atol=1e-12)
    np.testing.assert_allclose(project(model, 2, model.mean_b[:, None]), 0.0, atol=1e-12)


def test_project_dim_mismatch(seeded_pair):
    model = fit(*seeded_pair, eps=0.0, s_rule=Fixed(1))
    with pytest.raises(ValueError):
        project(model, 1, np.ones((4, 2)))
    with pytest.raises(ValueError):
        project(model, "third", np.ones((3, 2)))


def test_fit_pairing_errors():
    a = FeatureMatrix(np.ones((2, 3)) + np.eye(2, 3), ("a", "b", "c"))
    with pytest.raises(PairingError):
        fit(a, FeatureMatrix(np.ones((2, 4))))
    with pytest.raises(PairingError):
        fit(a, FeatureMatrix(a.values, ("a", "c", "b")))


def test_fit_rank_deficient_needs_ridge():
    rng = np.random.default_rng(5)
    z1, z2 = random_pair(rng, 30, 20, 10)  # fewer items than dimensions
    with pytest.raises(NotPositiveDefiniteError, match="eps"):
        fit(FeatureMatrix(z1), FeatureMatrix(z2), eps=0.0)
    model = fit(FeatureMatrix(z1), FeatureMatrix(z2), eps=1e-6, s_rule=Fixed(5))
    assert np.all((model.rho >= 0) & (model.rho <= 1))


def test_rho_clamped_and_sorted():
    rng = np.random.default_rng(6)
    z1, z2 = random_pair(rng, 5, 5, 40, k=0)
    model = fit(FeatureMatrix(z1), FeatureMatrix(z2), eps=0.0, s_rule=Fixed(1))
    assert np.all(np.diff(model.rho) <= 0)
    assert np.all((model.rho >= 0) & (model.rho <= 1))


@settings(max_examples=40, deadline=None)
@given(d1=st.integers(1, 10), d2=st.integers(1, 10), n=st.integers(30, 200), seed=st.integers(0, 2**32 - 1))
def test_oracle_equivalence(d1, d2, n, seed):
    rng = np.random.default_rng(seed)
    z1, z2 = random_pair(rng, d1, d2, n)
    model = fit(FeatureMatrix(z1), FeatureMatrix(z2), eps=0.0, s_rule=Fixed(1))
    np.testing.assert_allclose(model.rho, brute_force_rho(z1, z2), atol=1e-8)


def test_order_invariance():
    rng = np.random.default_rng(8)
    z1, z2 = random_pair(rng, 6, 9, 150)
    perm = rng.permutation(150)
    m1 = fit(FeatureMatrix(z1), FeatureMatrix(z2), eps=0.0, s_rule=Fixed(4))
    m2 = fit(FeatureMatrix(z1[:, perm]), FeatureMatrix(z2[:, perm]), eps=0.0, s_rule=Fixed(4))
    np.testing.assert_allclose(m1.rho, m2.rho, atol=1e-8)
    t1, t2 = random_pair(rng, 6, 9, 20)
    s1 = score_matrix(project(m1, 1, t1), project(m1, 2, t2), m1.rho, 4).scores
    s2 = score_matrix(project(m2, 1, t1), project(m2, 2, t2), m2.rho, 4).scores
    np.testing.assert_allclose(s1, s2, atol=1e-8)


def test_with_s(seeded_pair):
    model = fit(*seeded_pair, eps=0.0, s_rule=Fixed(1))
    assert model.with_s(3).s == 3
    assert model.with_s(Threshold(0.5)).s == 2
    with pytest.raises(ValueError):
        model.with_s(4)


def test_model_round_trip_is_bit_exact(tmp_path, seeded_pair):
    model = fit(*seeded_pair, eps=1e-6, s_rule=Threshold(0.3))
    path = tmp_path / "m.csam"
    model.save(path)
    back = load_model(path)
    assert back.to_bytes() == model.to_bytes()
    for name in ("map_a", "map_b", "rho", "mean_a", "mean_b"):
        assert getattr(back, name).tobytes() == getattr(model, name).tobytes()
    assert (back.eps, back.s) == (model.eps, model.s)


def test_model_byte_layout(seeded_pair):
    model = fit(*seeded_pair, eps=0.25, s_rule=Fixed(2))
    blob = model.to_bytes()
    assert blob[:4] == b"CSAM"
    assert np.frombuffer(blob[4:24], "<u4").tolist() == [1, 3, 4, 3, 2]
    assert np.frombuffer(blob[24:32], "<f8")[0] == 0.25
    assert len(blob) == 32 + 8 * (3 + 4 + 3 + 3 * 3 + 3 * 4)
    np.testing.assert_array_equal(np.frombuffer(blob[32:56], "<f8"), model.mean_a)


def test_model_file_errors(seeded_pair):
    blob = fit(*seeded_pair, eps=0.0, s_rule=Fixed(1)).to_bytes()
    with pytest.raises(ModelFileError, match="magic"):
        CsaModel.from_bytes(b"XSAM" + blob[4:])
    with pytest.raises(ModelFileError, match="bytes"):
        CsaModel.from_bytes(blob[:-8])
    with pytest.raises(ModelFileError, match="truncated"):
        CsaModel.from_bytes(blob[:10])
    with pytest.raises(ModelFileError, match="version"):
        CsaModel.from_bytes(blob[:4] + (2).to_bytes(4, "little") + blob[8:])
