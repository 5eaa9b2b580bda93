"""
Uncertainty-vector layout, moment estimation and moments.json.
"""

import json

import numpy as np
import pytest

from errors import DataError, MomentLayoutError, ParameterError, SchemaError
from moments import (
    MomentAmbiguitySet,
    UncertaintyVectorLayout,
    estimate_moments,
    load_moments,
    node_samples,
    pv_capacity_map,
    save_moments,
    sm_only_samples,
    symmetric_sqrt,
)


def test_layout_is_time_major(three_bus):
    layout = UncertaintyVectorLayout.for_feeder(three_bus, start_hour=10, horizon=2)
    assert (layout.n, layout.g) == (6, 3)
    assert layout.block_size == 18
    assert layout.size == 36
    assert layout.index("p_L", "2", "a", 10) == 0
    assert layout.index("q_L", "2", "a", 10) == 6
    assert layout.index("p_g", "3", "a", 10) == 12
    assert layout.index("Q_cap", "3", "c", 11) == 35
    assert layout.key(18) == ("p_L", "2", "a", 11)
    with pytest.raises(ParameterError):
        UncertaintyVectorLayout.for_feeder(three_bus, start_hour=0, horizon=0)


def test_estimates_use_maximum_likelihood_normalization():
    moments = estimate_moments({("p_L", "2", "a", 0): [1.0, 2.0, 3.0, 4.0]})
    assert moments.mu == pytest.approx([2.5])
    assert moments.variance == pytest.approx([1.25])


def test_qcap_is_derived_from_pv_output():
    moments = estimate_moments(
        {("p_g", "3", "a", 12): np.array([0.3, 0.3, 0.3])},
        pv_capacity={("3", "a"): 0.5},
    )
    k = moments.index[("Q_cap", "3", "a", 12)]
    assert moments.mu[k] == pytest.approx(0.4)
    assert moments.variance[k] == pytest.approx(0.0)


def test_grouped_covariance_is_psd():
    rng = np.random.default_rng(0)
    base = rng.standard_normal(200)
    samples = {
        ("p_L", "2", "a", 0): base,
        ("p_L", "2", "b", 0): base + 0.1 * rng.standard_normal(200),
        ("q_L", "2", "a", 0): -base,
        ("p_L", "2", "a", 1): rng.standard_normal(200),
    }
    moments = estimate_moments(samples, groups="hour")
    hour0 = [moments.index[k] for k in samples if k[3] == 0]
    cov = moments.covariance(hour0)
    assert np.all(np.linalg.eigvalsh(cov) >= -1e-12)
    np.testing.assert_allclose(np.diag(cov), moments.variance[hour0])
    assert cov[0, 1] > 0.5
    sqrt = symmetric_sqrt(cov)
    np.testing.assert_allclose(sqrt @ sqrt, cov, atol=1e-10)


def test_bad_estimation_inputs():
    with pytest.raises(ParameterError):
        estimate_moments({("p_L", "2", "a", 0): [1.0, 2.0]}, groups="feeder")
    with pytest.raises(DataError):
        estimate_moments({("p_L", "2", "a", 0): [1.0]})
    with pytest.raises(DataError):
        estimate_moments({("p_L", "2", "a", 0): [1.0, np.inf]})


def test_restrict_reports_missing_entries(three_bus, moments13):
    layout = UncertaintyVectorLayout.for_feeder(three_bus, 0, 1)
    with pytest.raises(MomentLayoutError):
        moments13.restrict(layout)


def test_restrict_orders_like_layout(feeder13, moments13):
    layout = UncertaintyVectorLayout.for_feeder(feeder13, 5, 3)
    mu, blocks = moments13.restrict(layout)
    assert mu.shape == (layout.size,)
    assert len(blocks) == 3 and blocks[0].shape == (layout.block_size, layout.block_size)
    k = layout.index("p_L", "675", "b", 6)
    assert mu[k] == moments13.mu[moments13.index[("p_L", "675", "b", 6)]]


def test_zero_covariance_keeps_means(moments13):
    flat = moments13.with_zero_covariance()
    np.testing.assert_array_equal(flat.mu, moments13.mu)
    assert not flat.variance.any()


def test_moments_file_round_trip(tmp_path):
    moments = MomentAmbiguitySet(
        (("p_L", "2", "a", 0), ("q_L", "2", "a", 0)),
        np.array([0.3, 0.1]),
        np.array([0.01, 0.02]),
        low_confidence=True,
        meta={"source": "test"},
    )
    path = tmp_path / "moments.json"
    save_moments(path, moments, timing={"estimate_ms": 1.5})
    assert json.loads(path.read_text())["timing"] == {"estimate_ms": 1.5}
    loaded = load_moments(path)
    assert loaded.keys == moments.keys
    np.testing.assert_allclose(loaded.mu, moments.mu)
    assert loaded.low_confidence
    assert loaded.meta == {"source": "test"}


def test_moments_file_schema_errors(tmp_path):
    path = tmp_path / "moments.json"
    path.write_text(json.dumps({"entries": [
        {"quantity": "p_X", "bus": "2", "phase": "a", "hour": 0, "mu": 0.1, "var": 0.0}
    ]}))
    with pytest.raises(SchemaError, match="entries.0.quantity"):
        load_moments(path)
    path.write_text(json.dumps({"entries": [
        {"quantity": "p_L", "bus": "2", "phase": "a", "hour": 0, "mu": 0.1, "var": 0.0},
        {"quantity": "p_L", "bus": "2", "phase": "a", "hour": 0, "mu": 0.2, "var": 0.0},
    ]}))
    with pytest.raises(SchemaError, match="duplicate"):
        load_moments(path)


def test_node_samples_aggregate_transformers(three_bus, three_bus_dataset):
    samples = node_samples(three_bus, three_bus_dataset.truth)
    expected = three_bus_dataset.truth["S1"]["p"].samples[4] / three_bus.base_power_kva
    np.testing.assert_allclose(samples[("p_L", "2", "a", 4)], np.clip(expected, 0.0, 1.0))
    assert ("p_g", "3", "b", 12) in samples
    moments = estimate_moments(samples, pv_capacity=pv_capacity_map(three_bus))
    assert ("Q_cap", "3", "b", 12) in moments.index


def test_sm_only_samples_pool_same_hour_of_day(three_bus, three_bus_dataset):
    sm = three_bus_dataset.sm()
    samples = sm_only_samples(three_bus, sm)
    pooled = samples[("p_L", "2", "a", 7)]
    assert pooled.size == three_bus_dataset.settings.days
    np.testing.assert_array_equal(pooled, samples[("p_L", "2", "a", 31)])
    hourly = sm["S1"]["p"].values / three_bus.base_power_kva
    np.testing.assert_allclose(pooled, hourly[[7, 31, 55]])
