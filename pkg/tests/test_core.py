import json
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from multical_lab.core import (
    ConditionalLabelLaw,
    FiniteInstance,
    GroupFamily,
    PredictionGrid,
    RandomizedPredictor,
    Transcript,
    ValidationError,
    deterministic_predictor,
    load_json,
    mean_prediction_function,
    mixture,
    quantize_predictor,
    regression_function,
    stream,
)


def random_predictor(rng, m, k):
    vals = np.sort(rng.choice(np.linspace(0, 1, 41), size=k, replace=False))
    return RandomizedPredictor(PredictionGrid(vals), rng.dirichlet(np.ones(k), size=m))


class TestPredictionGrid:
    def test_rejects_bad_grids(self):
        for bad in ([], [0.5, 0.5], [0.6, 0.4], [-0.1, 0.5], [0.5, 1.2]):
            with pytest.raises(ValidationError):
                PredictionGrid(bad)

    def test_nearest_ties_to_lower(self):
        g = PredictionGrid([0.25, 0.75])
        assert g.nearest_index(0.5) == 0
        assert g.nearest_index(0.51) == 1

    def test_mesh(self):
        np.testing.assert_allclose(PredictionGrid.mesh(0.25).values, [0, 0.25, 0.5, 0.75, 1])
        np.testing.assert_allclose(PredictionGrid.mesh(0.3).values, [0, 0.3, 0.6, 0.9, 1.0])
        np.testing.assert_allclose(PredictionGrid.mesh(1.0).values, [0, 1])

    def test_centers(self):
        np.testing.assert_allclose(PredictionGrid.centers(4).values, [0.125, 0.375, 0.625, 0.875])


class TestRandomizedPredictor:
    def test_rejects_non_distributions(self):
        g = PredictionGrid([0.2, 0.8])
        with pytest.raises(ValidationError):
            RandomizedPredictor(g, [[0.5, 0.6]])
        with pytest.raises(ValidationError):
            RandomizedPredictor(g, [[1.2, -0.2]])

    def test_renormalizes_within_tolerance(self):
        g = PredictionGrid([0.2, 0.8])
        with pytest.warns(UserWarning):
            Q = RandomizedPredictor(g, [[0.5, 0.5 + 1e-10]])
        assert Q.weights.sum() == pytest.approx(1, abs=1e-15)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            RandomizedPredictor(g, [[0.5, 0.5 + 1e-13]])

    def test_json_round_trip(self):
        Q = random_predictor(np.random.default_rng(0), 5, 3)
        Q2 = RandomizedPredictor.from_json(json.loads(json.dumps(Q.to_json())))
        np.testing.assert_array_equal(Q.weights, Q2.weights)
        np.testing.assert_array_equal(Q.grid.values, Q2.grid.values)
        assert Q.to_json()["format"] == "multical-lab/v1"


class TestDeterministicPredictor:
    def test_constant(self):
        Q = deterministic_predictor([0.5, 0.5], PredictionGrid([0.5]))
        np.testing.assert_array_equal(Q.weights, [[1], [1]])

    def test_identity_embedding(self):
        Q = deterministic_predictor([0.25, 0.75], PredictionGrid([0.25, 0.75]))
        np.testing.assert_array_equal(Q.weights, [[1, 0], [0, 1]])

    def test_off_grid_names_context(self):
        with pytest.raises(ValidationError, match="context 0"):
            deterministic_predictor([0.3], PredictionGrid([0.25, 0.75]))


class TestMeanPrediction:
    def test_examples(self):
        assert mean_prediction_function(deterministic_predictor([0.75], PredictionGrid([0.25, 0.75])))[0] == 0.75
        assert mean_prediction_function(RandomizedPredictor(PredictionGrid([0, 1]), [[0.5, 0.5]]))[0] == 0.5
        # 0.25 * 0.2 + 0.75 * 0.6
        Q = RandomizedPredictor(PredictionGrid([0.2, 0.6]), [[0.25, 0.75]])
        assert mean_prediction_function(Q)[0] == pytest.approx(0.5, abs=1e-15)

    @given(st.integers(0, 2**32 - 1), st.floats(0, 1))
    def test_linear_in_mixtures(self, seed, lam):
        rng = np.random.default_rng(seed)
        Q1 = random_predictor(rng, 4, 3)
        Q2 = RandomizedPredictor(Q1.grid, rng.dirichlet(np.ones(3), size=4))
        lhs = mean_prediction_function(mixture(Q1, Q2, lam))
        rhs = (1 - lam) * mean_prediction_function(Q1) + lam * mean_prediction_function(Q2)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    @given(st.integers(0, 2**32 - 1))
    def test_within_grid_range(self, seed):
        Q = random_predictor(np.random.default_rng(seed), 6, 4)
        f = mean_prediction_function(Q)
        assert np.all(f >= Q.grid.values[0] - 1e-15) and np.all(f <= Q.grid.values[-1] + 1e-15)


class TestQuantize:
    def test_point_mass(self):
        Q = quantize_predictor(deterministic_predictor([0.3], PredictionGrid([0.3])), 0.25)
        assert Q.grid.values[np.argmax(Q.weights[0])] == 0.25

    def test_coarsest(self):
        Q = quantize_predictor(random_predictor(np.random.default_rng(1), 3, 5), 1.0)
        assert set(Q.grid.values) == {0.0, 1.0}

    def test_half_mesh(self):
        Q = RandomizedPredictor(PredictionGrid([0.2, 0.8]), [[0.4, 0.6]])
        out = quantize_predictor(Q, 0.5)
        np.testing.assert_allclose(out.weights, [[0.4, 0.0, 0.6]])

    def test_tie_goes_down(self):
        Q = deterministic_predictor([0.25], PredictionGrid([0.25]))
        out = quantize_predictor(Q, 0.5)
        assert out.weights[0, 0] == 1.0

    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 1.0))
    def test_rows_and_displacement(self, seed, eta):
        Q = random_predictor(np.random.default_rng(seed), 4, 5)
        out = quantize_predictor(Q, eta)
        np.testing.assert_allclose(out.weights.sum(axis=1), 1, atol=1e-12)
        moved = out.grid.values[out.grid.nearest_index(Q.grid.values)]
        assert np.max(np.abs(moved - Q.grid.values)) <= eta + 1e-12


class TestLawsAndInstances:
    def test_regression_function(self):
        P = FiniteInstance.uniform([
            ConditionalLabelLaw.bernoulli_mean(0.5),
            ConditionalLabelLaw.expectile_bernoulli(0.5, 0.3),
        ])
        np.testing.assert_allclose(regression_function(P), [0.5, 0.3])

    def test_quantile_uniform_mean(self):
        law = ConditionalLabelLaw.quantile_truncexp(0.4, 0.4)  # t = q means lambda = 0
        assert law.natural_param == pytest.approx(0.0, abs=1e-9)
        assert law.mean() == pytest.approx(0.5, abs=1e-9)

    def test_invalid_laws(self):
        with pytest.raises(ValidationError):
            ConditionalLabelLaw.bernoulli_mean(1.0)
        with pytest.raises(ValidationError):
            ConditionalLabelLaw.expectile_bernoulli(0.5, 0.9)
        with pytest.raises(ValidationError):
            ConditionalLabelLaw("poisson", 0.5)

    def test_instance_round_trip(self, tmp_path):
        P = FiniteInstance(
            (ConditionalLabelLaw.bernoulli_mean(0.2), ConditionalLabelLaw.quantile_truncexp(0.5, 0.6)),
            np.array([0.3, 0.7]),
        )
        path = tmp_path / "p.json"
        path.write_text(json.dumps(P.to_json()))
        P2 = load_json(str(path))
        assert P2.laws == P.laws
        np.testing.assert_array_equal(P2.context_weights, P.context_weights)

    def test_groups(self):
        G = GroupFamily(np.array([[1, 0], [1, 1]]))
        assert G.labels == ("g0", "g1")
        assert G.index("g1") == 1
        with pytest.raises(ValidationError):
            GroupFamily(np.array([[2, 0]]))
        with pytest.raises(ValidationError):
            GroupFamily(np.array([[1, 0], [0, 1]]), ("a", "a"))
        G2 = GroupFamily.from_json(json.loads(json.dumps(G.to_json())))
        np.testing.assert_array_equal(G2.groups, G.groups)

    def test_sampling_matches_regression(self):
        P = FiniteInstance.uniform([ConditionalLabelLaw.bernoulli_mean(t) for t in (0.3, 0.6)])
        x, y = P.sample(200_000, stream("t", 0))
        for i, t in enumerate((0.3, 0.6)):
            sel = y[x == i]
            assert abs(sel.mean() - t) < 4 * np.sqrt(t * (1 - t) / sel.size)


class TestTranscript:
    def test_dense_and_indexed_agree(self, tmp_path):
        g = PredictionGrid([0.25, 0.75])
        idx = np.array([[0, 1], [1, 1], [0, 0]])
        dense = np.zeros((3, 2, 2))
        for t in range(3):
            dense[t, np.arange(2), idx[t]] = 1
        a = Transcript(g, [0, 1, 0], [0.0, 1.0, 1.0], rule_indices=idx)
        b = Transcript(g, [0, 1, 0], [0.0, 1.0, 1.0], rules=dense)
        np.testing.assert_array_equal(a.realized_rows(), b.realized_rows())
        a.save(str(tmp_path / "s.npz"))
        c = Transcript.load(str(tmp_path / "s.npz"))
        np.testing.assert_array_equal(c.rule_indices, idx)

    def test_rejects(self):
        g = PredictionGrid([0.5])
        with pytest.raises(ValidationError):
            Transcript(g, [0], [1.5], rule_indices=[[0]])
        with pytest.raises(ValidationError):
            Transcript(g, [3], [0.5], rule_indices=[[0]])


def test_streams_are_keyed():
    a = stream("op", 1, 2).random(4)
    np.testing.assert_array_equal(a, stream("op", 1, 2).random(4))
    assert not np.array_equal(a, stream("op", 1, 3).random(4))
    assert not np.array_equal(a, stream("other", 1, 2).random(4))
