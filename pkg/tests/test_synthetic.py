"""
Synthetic feeder data and profile moments.
"""

import numpy as np
import pytest

from errors import ParameterError
from synthetic import (
    ARCHETYPE_NAMES,
    SyntheticSettings,
    generate_dataset,
    moments_from_profile,
    pv_shape,
    write_dataset,
)


@pytest.fixture(scope="module")
def dataset13(feeder13):
    return generate_dataset(feeder13, SyntheticSettings(days=2, seed=4))


def test_archetypes_rotate_over_sorted_ids(dataset13):
    assert dataset13.archetypes["T01"] == "residential"
    assert dataset13.archetypes["T02"] == "commercial"
    assert dataset13.archetypes["T05"] == "residential"
    assert set(dataset13.archetypes.values()) == set(ARCHETYPE_NAMES)


def test_teacher_order_takes_pairs_per_archetype(dataset13):
    order = dataset13.teacher_order()
    assert sorted(order) == sorted(dataset13.truth)
    first = [dataset13.archetypes[t] for t in order[:8]]
    assert first == [name for name in ARCHETYPE_NAMES for _ in range(2)]
    assert dataset13.select_teachers(3) == order[:3]
    with pytest.raises(ParameterError):
        dataset13.select_teachers(43)


def test_pv_goes_to_one_transformer_per_node(feeder13, dataset13):
    with_pv = [tid for tid, data in dataset13.truth.items() if "pv" in data]
    assert len(with_pv) == len(feeder13.pv_nodes)
    pv = dataset13.truth[with_pv[0]]["pv"]
    night = pv_shape(np.arange(pv.hours)) == 0
    assert not pv.samples[night].any()
    capacity = max(feeder13.bus(b).pv.s_cap for b, _ in feeder13.pv_nodes) * feeder13.base_power_kva
    assert pv.samples.max() <= capacity


def test_generation_is_seeded(feeder13, dataset13):
    again = generate_dataset(feeder13, SyntheticSettings(days=2, seed=4))
    np.testing.assert_array_equal(again.truth["T07"]["p"].samples, dataset13.truth["T07"]["p"].samples)
    other = generate_dataset(feeder13, SyntheticSettings(days=2, seed=5))
    assert not np.array_equal(other.truth["T07"]["p"].samples, dataset13.truth["T07"]["p"].samples)


def test_samples_are_nonnegative_and_hourly(dataset13):
    p = dataset13.truth["T01"]["p"]
    assert p.samples.shape == (48, 60)
    assert np.all(p.samples >= 0)
    assert np.all(np.diff(p.hour_start) == np.timedelta64(3600, "s"))


def test_settings_are_checked():
    with pytest.raises(ParameterError):
        SyntheticSettings(days=1)
    with pytest.raises(ParameterError):
        SyntheticSettings(ar_coefficient=1.0)


def test_write_dataset(tmp_path, three_bus_dataset):
    write_dataset(three_bus_dataset, tmp_path / "pmu", tmp_path / "sm", ["S1", "S4"])
    assert sorted(p.name for p in (tmp_path / "pmu").iterdir()) == ["S1.csv", "S4.csv"]
    assert len(list((tmp_path / "sm").glob("*.csv"))) == 6


def test_profile_moments_cover_the_layout(feeder13):
    moments = moments_from_profile(feeder13, horizon=2, start_hour=11, relative_sigma=0.2)
    n, g = len(feeder13.nodes), len(feeder13.pv_nodes)
    assert len(moments.keys) == 2 * (2 * n + 2 * g)
    np.testing.assert_allclose(np.sqrt(moments.variance), 0.2 * moments.mu)
    k = moments.index[("Q_cap", "680", "a", 12)]
    s_cap = feeder13.bus("680").pv.s_cap
    p_g = moments.mu[moments.index[("p_g", "680", "a", 12)]]
    assert moments.mu[k] == pytest.approx(np.sqrt(s_cap ** 2 - p_g ** 2))
    assert moments.meta["source"] == "profile"
