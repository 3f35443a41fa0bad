import json
import pathlib

import numpy as np
import pytest

import atomskit as ak

FIXTURES = pathlib.Path(__file__).resolve().parents[1] / "fixtures"


def test_square_dictionary_is_orthogonal():
    d = np.random.default_rng(0).standard_normal((6, 6))
    np.testing.assert_allclose(ak.naip_gram(d), np.eye(6), atol=1e-10)
    assert abs(ak.angle_centroid(d, d) - 90.0) < 1e-6


def test_geometry_matches_numpy():
    d = np.random.default_rng(1).standard_normal((4, 9))
    s = np.linalg.inv(d @ d.T)
    s_tilde, root = ak.metric(d)
    np.testing.assert_allclose(s_tilde, s, rtol=1e-10)
    np.testing.assert_allclose(root @ root, s, rtol=1e-8)
    g = d.T @ s @ d
    np.testing.assert_allclose(ak.raw_gram(d), g, atol=1e-10)
    x = np.random.default_rng(2).standard_normal((4, 3))
    np.testing.assert_allclose(ak.atom_match(d, x), d.T @ s @ x, atol=1e-10)


def test_certificates():
    assert ak.rip_bound(0.03447, 15) == pytest.approx((0.48258, True))
    assert ak.uniqueness_certified(0.03447, 14.947)
    assert not ak.uniqueness_certified(0.2, 3)
    unit = ak.normalize_atoms(ak.gen_atoms(8, 16, seed=1)[0])
    mu, (i, j) = ak.coherence(unit)
    assert i < j and 0 < mu < 1


def test_quantile_fixture_replay():
    layer = json.loads((FIXTURES / "layer_quantiles.json").read_text())["layers"][0]
    mu = [v for v, c in layer["coherence"] for _ in range(c)]
    ks = [float(v) for v, c in layer["sparsity"] for _ in range(c)]
    r = ak.max_uniqueness_quantile(mu, ks)
    assert r["satisfied"]
    assert abs(r["q"] - 0.997398) < 1e-4
    assert r["k_q"] == pytest.approx(14.947, abs=5e-4)


def test_recovery_on_certified_instance():
    atoms, eps = ak.gen_atoms(16, 24, seed=3, epsilon_target=0.333)
    assert eps <= 0.333
    unit = ak.normalize_atoms(atoms)
    codes = ak.gen_codes(24, 2, 5, seed=3)
    for c in codes.T:
        bp = ak.basis_pursuit(unit, unit @ c)
        assert bp["converged"]
        np.testing.assert_allclose(bp["solution"], c, atol=1e-6)
        np.testing.assert_allclose(ak.l0_oracle(unit, unit @ c, 2)["solution"], c, atol=1e-8)


def test_analytic_sae_and_training(tmp_path):
    atoms, eps = ak.gen_atoms(32, 33, seed=2)
    lo, hi = ak.threshold_window(eps, 2, 0.5, 1.0)
    model = ak.analytic_sae(atoms, 0.5 * (lo + hi))
    codes = ak.gen_codes(33, 2, 50, seed=2)
    xs = atoms @ codes
    got, recon = ak.forward(model, xs)
    assert ((got != 0) == (codes != 0)).all()
    assert ak.avg_l0(got) == 2.0
    assert ak.alignment(model) == pytest.approx(1.0, abs=1e-8)

    trained, curve = ak.train(xs, width=33, epochs=2, batch_size=16, checkpoint_every=2)
    assert curve[0]["step"] == 0 and curve[-1]["step"] == 8
    again, _ = ak.train(xs, width=33, epochs=2, batch_size=16, checkpoint_every=2)
    np.testing.assert_array_equal(trained.w_enc, again.w_enc)
    path = tmp_path / "model.atd"
    ak.save_model(str(path), trained)
    loaded = ak.load_model(str(path))
    np.testing.assert_array_equal(loaded.w_dec, trained.w_dec)
    assert ak.r_squared(xs, ak.forward(loaded, xs)[1]) == ak.r_squared(xs, ak.forward(trained, xs)[1])


def test_dumps(tmp_path):
    vectors, meta = ak.read_dump(FIXTURES / "dumps" / "valid_2x3.atd")
    assert vectors.shape == (2, 3)
    assert meta["layer"] == 3
    out = tmp_path / "v.atd"
    ak.write_dump(out, vectors, meta)
    back, meta_back = ak.read_dump(out)
    np.testing.assert_array_equal(back, vectors)
    assert meta_back == meta

    with pytest.raises(ak.AtomsError) as err:
        ak.read_dump(FIXTURES / "dumps" / "version2.atd")
    assert err.value.code == "UnsupportedVersion"
    assert err.value.byte_offset == 8


def test_errors_map_to_atoms_error():
    with pytest.raises(ak.AtomsError) as err:
        ak.metric(np.ones((3, 4)))
    assert err.value.code == "RankDeficient"
    with pytest.raises(ValueError):
        ak.rip_bound(0.1, 0)
