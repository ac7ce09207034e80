import numpy as np
import pytest

from funmix.basis import evaluate
from funmix.errors import ConfigError, InvalidStateError
from funmix.model import observation_coefficients
from funmix.simgen import (
    SimSpec,
    allocation_groups,
    draw_truth,
    orthogonal_complement,
    replicate_specs,
    simulate,
    study_mean_vectors,
    synthesize,
)


class TestSpec:
    def test_study1_defaults(self):
        s = SimSpec()
        assert (s.K, s.P, s.M, s.sigma2) == (2, 8, 3, 0.001)
        assert s.phi_scales == (2.25, 1.0, 0.49)
        assert s.basis.n_basis == 8

    def test_study2_from_dict(self):
        s = SimSpec.from_dict({"study": "study2", "N": 10})
        assert s.K == 3 and len(s.z_components) == 4

    @pytest.mark.parametrize(
        "kw",
        [
            {"study": "study1", "K": 3},
            {"study": "nope"},
            {"sigma2": 0.0},
            {"N": 0},
            {"z_components": ((0.5, (1.0, 1.0)),)},
            {"z_components": ((1.0, (1.0, 1.0, 1.0)),)},
            {"phi_scales": (1.0,)},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            SimSpec(**kw)

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            SimSpec.from_dict({"bogus": 1})

    def test_round_trip(self):
        s = SimSpec(N=12, seed=4)
        assert SimSpec.from_dict(s.to_dict()) == s


class TestTruth:
    def test_mean_centres(self):
        down, up = study_mean_vectors(8)
        np.testing.assert_array_equal(down, [6, 4, 2, 0, -2, -4, -6, -8])
        np.testing.assert_array_equal(up, down[::-1])

    def test_loadings_orthogonal_to_means(self):
        for seed in range(5):
            t = draw_truth(SimSpec(seed=seed))
            for m in range(3):
                assert np.max(np.abs(t.nu @ t.phi[:, :, m].T)) < 1e-10

    def test_complement_coordinate_variance(self):
        vals = []
        for seed in range(10_000):
            t = draw_truth(SimSpec(N=1, seed=seed))
            comp = orthogonal_complement(t.nu)
            vals.append(comp.T @ t.phi[0, :, 0])
        x = np.concatenate(vals)
        assert abs(x.var() - 2.25) < 3 * 2.25 * np.sqrt(2 / x.size)

    def test_no_complement(self):
        with pytest.raises(InvalidStateError):
            orthogonal_complement(np.eye(3))
        spec = SimSpec(study="custom", K=4, P=4, M=1, phi_scales=(1.0,))
        with pytest.raises(InvalidStateError):
            draw_truth(spec)

    def test_deterministic_split(self):
        g = allocation_groups(SimSpec(N=40), np.random.default_rng(0))
        assert np.bincount(g).tolist() == [12, 12, 16]

    def test_stochastic_proportions(self):
        spec = SimSpec(N=10_000, stochastic_assignment=True)
        g = allocation_groups(spec, np.random.default_rng(1))
        p = np.mean(g == 0)
        assert abs(p - 0.3) < 3 * np.sqrt(0.3 * 0.7 / spec.N)

    def test_membership_rows_on_simplex(self):
        t = draw_truth(SimSpec(N=50))
        np.testing.assert_allclose(t.Z.sum(axis=1), 1.0, atol=1e-12)
        t.validate()

    def test_replicates_share_population(self):
        a, b = (draw_truth(s) for s in replicate_specs(SimSpec(N=5, seed=3), [10, 11]))
        np.testing.assert_array_equal(a.nu, b.nu)
        np.testing.assert_array_equal(a.phi, b.phi)
        assert not np.array_equal(a.Z, b.Z)


class TestSynthesize:
    def test_tiny_noise_recovers_mean(self):
        spec = SimSpec(N=6, n_i=20, sigma2=1e-30)
        truth, data = simulate(spec)
        S = evaluate(spec.basis, spec.grid())
        means = observation_coefficients(truth) @ S
        for i, obs in enumerate(data):
            np.testing.assert_allclose(obs.values, means[i], atol=1e-12)

    def test_residual_variance(self):
        spec = SimSpec(N=160, n_i=100)
        truth, data = simulate(spec)
        means = observation_coefficients(truth) @ evaluate(spec.basis, spec.grid())
        r = np.concatenate([obs.values for obs in data]) - means.ravel()
        assert abs(r.var() - 0.001) < 0.1 * 0.001

    def test_seed_determinism(self):
        _, a = simulate(SimSpec(N=5, seed=8))
        _, b = simulate(SimSpec(N=5, seed=8))
        _, c = simulate(SimSpec(N=5, seed=9))
        assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))
        assert not np.array_equal(a[0].values, c[0].values)

    def test_shapes_and_ids(self):
        truth, data = simulate(SimSpec(N=7, n_i=13))
        assert data.N == 7 and all(o.n == 13 for o in data)
        assert data[0].obs_id == "obs00000"

    def test_explicit_streams(self):
        spec = SimSpec(N=3)
        t = draw_truth(spec, np.random.default_rng(0))
        d1 = synthesize(t, spec, np.random.default_rng(5))
        d2 = synthesize(t, spec, np.random.default_rng(5))
        assert np.array_equal(d1[2].values, d2[2].values)
