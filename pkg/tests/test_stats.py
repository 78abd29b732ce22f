from __future__ import annotations

import random

import numpy as np
import pytest

from witnessnet.harness.stats import (
    StatsError,
    average_ranks,
    has_ties,
    mean,
    median,
    ordinal_ranks,
    pearson,
    spearman,
    spearman_ordinal,
)

BASELINE = [1.36, 0.42, 6.21, 8.31]


def test_mean_and_median():
    assert mean([1, 2, 3, 4]) == 2.5
    assert median([3, 1, 2]) == 2.0
    assert median([4, 1, 3, 2]) == 2.5
    with pytest.raises(StatsError):
        mean([])
    with pytest.raises(StatsError):
        median([])


def test_pearson_against_numpy():
    rng = random.Random(4)
    for _ in range(50):
        x = [rng.uniform(-5, 5) for _ in range(8)]
        y = [a * 0.3 + rng.gauss(0, 1) for a in x]
        assert pearson(x, y) == pytest.approx(float(np.corrcoef(x, y)[0, 1]), abs=1e-12)


def test_pearson_errors():
    with pytest.raises(StatsError):
        pearson([1, 2], [1, 2, 3])
    with pytest.raises(StatsError):
        pearson([1], [1])
    with pytest.raises(StatsError):
        pearson([1, 1, 1], [1, 2, 3])


def test_average_ranks_share_ties():
    assert average_ranks([2, 1, 2, 3]) == [2.5, 1.0, 2.5, 4.0]
    assert ordinal_ranks([2, 1, 2, 3]) == [2.0, 1.0, 3.0, 4.0]
    assert has_ties([2, 1, 2]) and not has_ties([1, 2, 3])


def test_spearman_matches_numpy_rank_correlation():
    rng = random.Random(8)
    for _ in range(30):
        x = [rng.randint(0, 4) for _ in range(7)]
        y = [rng.uniform(0, 1) for _ in range(7)]
        if len(set(x)) < 2:
            continue
        expected = np.corrcoef(average_ranks(x), average_ranks(y))[0, 1]
        assert spearman(x, y) == pytest.approx(float(expected), abs=1e-12)


def test_cycling_spot_correlations():
    means = [17 / 11, 12 / 11, 22 / 11, 34 / 11]
    medians = [2, 1, 2, 3]
    assert spearman(means, BASELINE) == 1.0
    assert spearman(medians, BASELINE) == pytest.approx(0.9487, abs=1e-4)
    assert spearman_ordinal(medians, BASELINE) == 1.0
