import itertools
import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multical_lab.codes import (
    DyadicSignatures,
    PackingCode,
    SignCode,
    default_rho,
    dyadic_signatures,
    failure_bound,
    hamming_distances,
    minimum_distance,
    packing_size_target,
    default_block_length,
    realized_correlation,
    search_low_correlation,
    search_packing,
    signatures_for_error,
    to_binary,
)
from multical_lab.core import ValidationError


def max_pair_corr(words):
    """Pair-by-pair oracle for the realized correlation."""
    z = np.asarray(words, dtype=int)
    best = 0
    for a, b in itertools.combinations(range(len(z)), 2):
        best = max(best, abs(int(z[a] @ z[b])))
    return best / z.shape[1]


def test_single_word_has_zero_correlation():
    code = search_low_correlation(1, 5, 0.1, seed=0)
    assert code.realized_rho == 0.0 and code.met_target


def test_two_short_words():
    code = search_low_correlation(2, 2, 1.0, seed=3)
    assert abs(int(code.words[0] @ code.words[1])) in (0, 2)
    assert code.met_target


def test_n8_k40_exhaustive():
    k = math.ceil(8 * 0.75**-2 * math.log(16))
    assert k == 40
    code = search_low_correlation(8, k, 0.75, seed=0)
    assert code.met_target
    assert code.realized_rho == pytest.approx(max_pair_corr(code.words))
    assert max_pair_corr(code.words) <= 0.75


@given(st.integers(2, 12), st.integers(1, 30), st.integers(0, 1000))
def test_realized_correlation_matches_pairs(n, k, seed):
    z = np.random.default_rng(seed).choice([-1, 1], size=(n, k))
    assert realized_correlation(z) == pytest.approx(max_pair_corr(z))


@given(st.integers(2, 10), st.integers(1, 20), st.integers(0, 1000))
def test_hamming_matches_pairs(n, d, seed):
    w = np.random.default_rng(seed).integers(0, 2, size=(n, d))
    D = hamming_distances(w)
    for a, b in itertools.combinations(range(n), 2):
        assert D[a, b] == int(np.sum(w[a] != w[b]))


def test_hamming_sign_identity():
    z = np.array([[1, -1, 1, 1], [-1, -1, 1, -1]])
    assert hamming_distances(to_binary(z))[0, 1] == (4 - z[0] @ z[1]) // 2


def test_dyadic_default_lengths():
    assert default_rho(16) == pytest.approx(1 / 40)
    expect = [math.ceil(12800 * math.log(2 * n)) for n in (16, 8, 4, 2)]
    assert expect[0] == 44362
    assert [default_block_length(n, 1 / 40) for n in (16, 8, 4, 2)] == expect


@pytest.mark.slow
def test_dyadic_default_m16_meets_rho():
    sig = dyadic_signatures(16, seed=0)
    assert sig.block_lengths == [44362, 35490, 26617, 17745]
    assert sig.mode == "default"
    assert all(r <= 1 / 40 for r in sig.realized_rhos)


def test_dyadic_override_reports_rho():
    sig = dyadic_signatures(16, seed=0, k_override=64)
    assert sig.block_lengths == [64] * 4
    for code in sig.codes:
        assert code.realized_rho == pytest.approx(max_pair_corr(code.words))
    assert sig.realized_rho == max(sig.realized_rhos)


def test_dyadic_m2_relaxed():
    sig = dyadic_signatures(2, seed=0, relaxed=True)
    assert sig.levels == 1 and sig.codes[0].n_words == 2


def test_dyadic_rejects():
    with pytest.raises(ValidationError):
        dyadic_signatures(12, seed=0, relaxed=True)
    with pytest.raises(ValidationError):
        dyadic_signatures(8, seed=0)


def test_signatures_for_error():
    sig = signatures_for_error(16, 0.25, seed=0)
    assert 2 * sig.levels * sig.realized_rho <= 0.25


def test_json_round_trips():
    code = search_low_correlation(4, 16, 1.0, seed=1)
    back = SignCode.from_json(json.loads(json.dumps(code.to_json())))
    np.testing.assert_array_equal(back.words, code.words)
    sig = dyadic_signatures(8, seed=1, k_override=16)
    back = DyadicSignatures.from_json(json.loads(json.dumps(sig.to_json())))
    assert back.block_lengths == sig.block_lengths and back.realized_rho == sig.realized_rho
    pk = search_packing(8, 2, 6, seed=0)
    back = PackingCode.from_json(json.loads(json.dumps(pk.to_json())))
    np.testing.assert_array_equal(back.words, pk.words)


def test_failure_bound():
    assert failure_bound(2, 10_000, 0.5) < 1e-100
    assert failure_bound(100, 1, 0.01) == 1.0


def test_packing_distinct():
    pk = search_packing(8, 1, 16, seed=0)
    assert len(pk) == 16 and pk.complete and pk.min_distance >= 1


def test_packing_d3_is_maximal_at_two():
    # exhaustive oracle: the largest distance-3 code in {0,1}^3 has two words
    words = list(itertools.product([0, 1], repeat=3))
    largest = 1
    for r in range(2, 5):
        if any(
            all(sum(a != b for a, b in zip(u, v)) >= 3 for u, v in itertools.combinations(S, 2))
            for S in itertools.combinations(words, r)
        ):
            largest = r
    assert largest == 2
    with pytest.warns(UserWarning, match="stopped"):
        pk = search_packing(3, 3, 4, seed=0, budget=2000)
    assert len(pk) == 2 and not pk.complete and pk.min_distance == 3


def test_packing_d64():
    target = packing_size_target(64)
    assert target == math.ceil(math.exp(9 * 64 / 256) / 4) == 3
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        pk = search_packing(64, 8, target, seed=0)
    D = hamming_distances(pk.words)
    assert len(pk) == 3 and all(D[a, b] >= 8 for a, b in itertools.combinations(range(3), 2))


@settings(max_examples=30)
@given(st.integers(2, 12), st.integers(0, 4), st.integers(1, 20), st.integers(0, 100))
def test_packing_respects_distance(d, dist, count, seed):
    dist = min(dist, d)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pk = search_packing(d, dist, count, seed, budget=500)
    assert pk.min_distance >= max(1, dist) or len(pk) == 1
    assert len(pk) <= count


def test_packing_rejects_duplicates():
    with pytest.raises(ValidationError):
        PackingCode(np.array([[0, 1], [0, 1]]), 0)
    with pytest.raises(ValidationError):
        PackingCode(np.array([[0, 1], [1, 1]]), 2)


def test_minimum_distance_single_word():
    assert minimum_distance(np.zeros((1, 5), dtype=int)) == 5
