import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refqa.errors import DegenerateInputError
from refqa.metrics import kendall, pearson, rmse, score_all, spearman, tau_b


# -- definitional oracles (pure python, no numpy reductions) -----------------------

def pearson_oracle(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def average_ranks(v):
    # rank = 1 + number strictly smaller + (number equal - 1) / 2
    return [1 + sum(b < a for b in v) + (sum(b == a for b in v) - 1) / 2 for a in v]


def spearman_oracle(x, y):
    return pearson_oracle(average_ranks(x), average_ranks(y))


def kendall_oracle(x, y):
    c = d = tx = ty = 0
    for i, j in itertools.combinations(range(len(x)), 2):
        sx = (x[i] > x[j]) - (x[i] < x[j])
        sy = (y[i] > y[j]) - (y[i] < y[j])
        tx += sx == 0
        ty += sy == 0
        c += sx * sy > 0
        d += sx * sy < 0
    p = len(x) * (len(x) - 1) // 2
    return (c - d) / math.sqrt((p - tx) * (p - ty))


def rmse_oracle(p, t):
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(p, t)) / len(p))


def seeded_vectors(count=200):
    rng = np.random.default_rng(2024)
    out = []
    for i in range(count):
        n = int(rng.integers(3, 11))
        if i % 2:  # small integer alphabet forces ties
            x = rng.integers(0, 4, n).astype(float)
            y = rng.integers(0, 4, n).astype(float)
        else:
            x, y = rng.normal(size=n), rng.normal(size=n)
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            x[0] += 1.0
        out.append((x.tolist(), y.tolist()))
    return out


VECTORS = seeded_vectors()


# -- examples ---------------------------------------------------------------------------

def test_pearson_examples():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-15)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-15)
    assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)


def test_spearman_examples():
    x = np.linspace(-2, 2, 9)
    assert spearman(x, np.exp(x)) == pytest.approx(1.0)
    assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    # average ranks of (1, 2, 2, 3) are (1, 2.5, 2.5, 4)
    expected = pearson_oracle([1, 2.5, 2.5, 4], [1, 2, 3, 4])
    assert spearman([1, 2, 2, 3], [1, 2, 3, 4]) == pytest.approx(expected, abs=1e-12)


def test_kendall_examples():
    assert kendall([1, 2, 3], [1, 3, 2]) == pytest.approx(1 / 3, abs=1e-15)
    assert kendall([4, 1, 7, 2], [4, 1, 7, 2]) == 1.0
    # pairs: (0,1) tied in x, (0,2) and (1,2) concordant -> 2 / sqrt(2 * 3)
    assert kendall([1, 1, 2], [1, 2, 3]) == pytest.approx(2 / math.sqrt(6), abs=1e-15)


def test_rmse_examples():
    assert rmse([1.5, 2.5], [1.5, 2.5]) == 0.0
    assert rmse([3.0, -4.0], [0.0, 0.0]) == pytest.approx(math.sqrt(12.5))
    assert rmse(np.arange(5) + 2.5, np.arange(5)) == pytest.approx(2.5)


def test_tau_b_from_counts():
    assert tau_b(2, 1, 0, 0, 3) == pytest.approx(1 / 3)


@pytest.mark.parametrize("fn", [pearson, spearman, kendall])
def test_constant_input_is_degenerate(fn):
    with pytest.raises(DegenerateInputError):
        fn([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


@pytest.mark.parametrize("fn", [pearson, spearman, kendall])
def test_single_sample_is_degenerate(fn):
    with pytest.raises(DegenerateInputError):
        fn([1.0], [2.0])


def test_length_mismatch_rejected():
    with pytest.raises(ValueError):
        pearson([1, 2, 3], [1, 2])


# -- oracle parity ----------------------------------------------------------------------

def test_pearson_matches_oracle():
    for x, y in VECTORS:
        assert abs(pearson(x, y) - pearson_oracle(x, y)) <= 1e-9


def test_spearman_matches_oracle():
    for x, y in VECTORS:
        assert abs(spearman(x, y) - spearman_oracle(x, y)) <= 1e-9


def test_kendall_matches_oracle_exactly():
    for x, y in VECTORS:
        assert kendall(x, y) == kendall_oracle(x, y)


def test_rmse_matches_oracle():
    for x, y in VECTORS:
        assert abs(rmse(x, y) - rmse_oracle(x, y)) <= 1e-9


def test_oracle_set_includes_ties():
    assert sum(len(set(x)) < len(x) for x, _ in VECTORS) > 50


# -- properties -------------------------------------------------------------------------

# a 1e-3 grid keeps variances away from underflow while still producing ties
finite = st.integers(-10**6, 10**6).map(lambda v: v / 1000)
pairs = st.integers(3, 12).flatmap(lambda n: st.tuples(st.lists(finite, min_size=n, max_size=n),
                                                       st.lists(finite, min_size=n, max_size=n)))


def _nondegenerate(x, y):
    return len(set(x)) > 1 and len(set(y)) > 1


@settings(max_examples=100, deadline=None)
@given(pairs, st.floats(0.1, 5.0), st.floats(-3.0, 3.0))
def test_rank_metrics_monotone_invariant(xy, a, b):
    x, y = map(np.asarray, xy)
    if not _nondegenerate(x, y):
        return
    fx = np.tanh(x / 1e3) * a + b  # strictly increasing on the sampled range
    assert abs(spearman(fx, y) - spearman(x, y)) <= 1e-12
    assert kendall(fx, y) == kendall(x, y)


@settings(max_examples=100, deadline=None)
@given(pairs, st.floats(0.01, 100.0), st.floats(-100.0, 100.0))
def test_pearson_affine_invariant(xy, a, b):
    x, y = map(np.asarray, xy)
    if not _nondegenerate(x, y) or np.ptp(x) < 1e-6:
        return
    assert abs(pearson(a * x + b, y) - pearson(x, y)) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(pairs)
def test_symmetry_and_range(xy):
    x, y = xy
    if not _nondegenerate(x, y):
        return
    assert kendall(x, y) == kendall(y, x)
    assert spearman(x, y) == pytest.approx(spearman(y, x), abs=1e-15)
    for fn in (pearson, spearman, kendall):
        assert -1.0 <= fn(x, y) <= 1.0


# -- score_all ----------------------------------------------------------------------------

def test_score_all_perfect():
    y = np.array([3.0, 1.0, 4.0, 1.5, 5.0])
    r = score_all(y, y)
    assert (r.srcc, r.plcc, r.krcc, r.rmse, r.n) == (1.0, 1.0, 1.0, 0.0, 5)


def test_score_all_constant_prediction_reports_rmse():
    r = score_all(np.full(4, 2.0), [1.0, 2.0, 3.0, 4.0])
    assert r.srcc is None and r.plcc is None and r.krcc is None
    assert set(r.errors) == {"srcc", "plcc", "krcc"}
    assert r.rmse == pytest.approx(math.sqrt(1.5))
    with pytest.raises(DegenerateInputError, match="over 4 samples"):
        score_all(np.full(4, 2.0), [1.0, 2.0, 3.0, 4.0], strict=True)
