"""
More PMU teachers should not make the estimated covariance worse.
"""

import numpy as np

from enrichment import EnrichmentSettings, enrich_dataset
from moments import estimate_moments, node_samples, pv_capacity_map, sm_only_samples
from synthetic import SyntheticSettings, generate_dataset

SEEDS = range(20)
COUNTS = (0, 4, 8)


def _covariance_error(estimate, truth):
    """Frobenius distance of the (diagonal) covariance over the truth's entries."""
    idx = [estimate.index[k] for k in truth.keys]
    return float(np.linalg.norm(estimate.variance[idx] - truth.variance))


def test_error_does_not_grow_with_teacher_count(feeder13):
    capacity = pv_capacity_map(feeder13)
    errors = {count: [] for count in COUNTS}
    for seed in SEEDS:
        dataset = generate_dataset(feeder13, SyntheticSettings(days=2, samples_per_hour=60, seed=seed))
        truth = estimate_moments(node_samples(feeder13, dataset.truth), pv_capacity=capacity)
        for count in COUNTS:
            if count == 0:
                samples = sm_only_samples(feeder13, dataset.sm())
            else:
                teachers = dataset.select_teachers(count)
                result = enrich_dataset(dataset.pmu(teachers), dataset.sm(), EnrichmentSettings(seed=seed))
                samples = node_samples(feeder13, result.series)
            errors[count].append(_covariance_error(estimate_moments(samples, pv_capacity=capacity), truth))

    mean = [np.mean(errors[count]) for count in COUNTS]
    assert mean[0] >= mean[1] >= mean[2]
