import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esgsched.model import (
    MIN_CONFIG,
    ApplicationDag,
    ConfigGrid,
    Configuration,
    FunctionSpec,
    MissingProfileError,
    Pricing,
    ProfileModel,
    ProfileTable,
    enumerate_configs,
    per_job_cost,
    synth_exec_time,
    weighted_job_cost,
)

# execution time at (1,1,1) and cold start, straight from the published profile table
PUBLISHED = {
    "super_resolution": (86, 3503, 2.7),
    "segmentation": (293, 16510, 2.5),
    "deblur": (319, 22343, 1.1),
    "classification": (147, 18299, 0.147),
    "background_removal": (1047, 3729, 2.5),
    "depth_recognition": (828, 16479, 0.648),
}


def test_enumerate_singleton():
    assert enumerate_configs(ConfigGrid((1,), (1,), (1,))) == [Configuration(1, 1, 1)]


def test_enumerate_order_batch_major():
    got = enumerate_configs(ConfigGrid.from_ranges((1, 2), (1, 2), (1, 1)))
    assert got == [Configuration(*t) for t in [(1, 1, 1), (1, 2, 1), (2, 1, 1), (2, 2, 1)]]


def test_enumerate_256():
    assert len(enumerate_configs(ConfigGrid.from_ranges((1, 8), (1, 8), (1, 4)))) == 256


def test_enumerate_empty():
    with pytest.raises(ValueError, match="empty configuration space"):
        enumerate_configs(ConfigGrid((), (1,), (1,)))


@pytest.mark.parametrize("bad", [(0, 1, 1), (1, 0, 1), (1, 1, -2), (1.5, 1, 1)])
def test_configuration_rejects_bad_values(bad):
    with pytest.raises(ValueError):
        Configuration(*bad)


def test_catalog_matches_published_profiles(functions):
    for fid, (t, cold, size) in PUBLISHED.items():
        spec = functions[fid]
        assert (spec.base_exec_ms, spec.cold_start_ms, spec.input_size_mb) == (t, cold, size)


def test_synth_anchor_super_resolution(functions):
    assert synth_exec_time(functions["super_resolution"], MIN_CONFIG) == 86


def test_synth_deblur_fixture(functions):
    # 319 * (1 + 0.6*3) / (1 + 0.15*1 + 0.35*1) = 319 * 2.8 / 1.5
    assert synth_exec_time(functions["deblur"], Configuration(4, 2, 2)) == pytest.approx(595.4666666666667, rel=1e-12)


def test_synth_vgpu_scale():
    spec = FunctionSpec("x", 100.0)
    # one whole-GPU unit of 7 slices: 1 + 0.35*6
    assert synth_exec_time(spec, MIN_CONFIG, ProfileModel(vgpu_scale=7)) == pytest.approx(100.0 / 3.1)


@given(
    base=st.floats(0.1, 1e4),
    b=st.integers(1, 16),
    c=st.integers(1, 16),
    g=st.integers(1, 7),
)
def test_synth_monotone(base, b, c, g):
    spec = FunctionSpec("x", base)
    t = synth_exec_time(spec, Configuration(b, c, g))
    assert t > 0
    assert synth_exec_time(spec, Configuration(b, c + 1, g)) <= t
    assert synth_exec_time(spec, Configuration(b, c, g + 1)) <= t
    assert synth_exec_time(spec, Configuration(b + 1, c, g)) >= t
    assert synth_exec_time(spec, MIN_CONFIG) == base


def test_per_job_cost_example():
    cost = per_job_cost(Configuration(2, 4, 1), 100.0, Pricing(0.034, 0.67))
    assert cost == pytest.approx((4 * 0.034 + 0.67) * 100 / 3_600_000 / 2, rel=1e-12)
    assert cost == pytest.approx(1.1194e-5, rel=1e-4)


def test_per_job_cost_zero_prices():
    assert per_job_cost(MIN_CONFIG, 50.0, Pricing(0.0, 0.0)) == 0


def test_batch_halves_cost():
    p = Pricing()
    assert per_job_cost(Configuration(2, 3, 2), 80.0, p) * 2 == pytest.approx(per_job_cost(Configuration(1, 3, 2), 80.0, p))


def test_weighted_cost():
    p = Pricing(alpha=0.25)
    assert weighted_job_cost(Configuration(2, 4, 2), 10.0, p) == pytest.approx((0.25 * 4 + 0.75 * 2) * 10 / 2)


@given(
    t=st.floats(1e-3, 1e5),
    k=st.floats(0.0, 100.0),
    pc=st.floats(0.0, 10.0),
    pg=st.floats(0.0, 10.0),
)
def test_cost_linear(t, k, pc, pg):
    cfg = Configuration(2, 3, 2)
    base = per_job_cost(cfg, t, Pricing(pc, pg))
    assert per_job_cost(cfg, t * k, Pricing(pc, pg)) == pytest.approx(base * k, rel=1e-9, abs=1e-300)
    assert per_job_cost(cfg, t, Pricing(pc * k, pg * k)) == pytest.approx(base * k, rel=1e-9, abs=1e-300)
    assert base >= 0


def test_pricing_validation():
    with pytest.raises(ValueError):
        Pricing(-1.0, 0.1)
    with pytest.raises(ValueError):
        Pricing(alpha=1.5)
    assert Pricing(alpha=0.3).beta == pytest.approx(0.7)


def test_profile_views_sorted(profiles):
    for fid in profiles.functions:
        view = profiles.sorted_view(fid)
        times = [t for _, t in view]
        assert times == sorted(times)
        assert sorted(c for c, _ in view) == sorted(profiles.grid)
        assert len(view) == len(ConfigGrid()) == 128


def test_profile_missing_entry():
    grid = [Configuration(1, 1, 1), Configuration(1, 2, 1)]
    entries = {("a", grid[0]): 5.0, ("a", grid[1]): 4.0, ("b", grid[0]): 3.0}
    with pytest.raises(MissingProfileError) as err:
        ProfileTable(entries)
    assert "b" in str(err.value) and "(1,2,1)" in str(err.value)


def test_profile_rejects_nonpositive():
    with pytest.raises(ValueError):
        ProfileTable({("a", MIN_CONFIG): 0.0})


def test_profile_lookup_errors(profiles):
    with pytest.raises(MissingProfileError):
        profiles.exec_ms("nope", MIN_CONFIG)
    with pytest.raises(MissingProfileError):
        profiles.exec_ms("deblur", Configuration(3, 1, 1))


def test_profile_dict_roundtrip(profiles):
    back = ProfileTable.from_dict(profiles.to_dict())
    assert list(back.entries()) == list(profiles.entries())


def test_profile_from_dict_malformed():
    with pytest.raises(ValueError, match=r"profiles.functions.a\[0\]"):
        ProfileTable.from_dict({"functions": {"a": [{"batch": 1}]}})


def test_dag_validation():
    a, b, c = (FunctionSpec(x, 1.0) for x in "abc")
    with pytest.raises(ValueError, match="unique entry"):
        ApplicationDag("x", (a, b, c), (("a", "c"), ("b", "c")))
    with pytest.raises(ValueError, match="unique exit"):
        ApplicationDag("x", (a, b, c), (("a", "b"), ("a", "c")))
    with pytest.raises(ValueError, match="cycle"):
        ApplicationDag("x", (a, b, c), (("a", "b"), ("b", "c"), ("c", "b")))
    with pytest.raises(ValueError, match="unknown function"):
        ApplicationDag("x", (a,), (("a", "z"),))
    with pytest.raises(ValueError, match="slo_ms"):
        ApplicationDag("x", (a,), (), 0.0)


def test_dag_queries():
    fs = tuple(FunctionSpec(x, 1.0) for x in "abcd")
    d = ApplicationDag("x", fs, (("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")))
    assert d.entry == "a" and d.exit == "d"
    assert not d.is_chain
    assert d.paths() == [("a", "b", "d"), ("a", "c", "d")]
    assert d.critical_path_ms({"a": 1, "b": 5, "c": 2, "d": 1}) == 7
    assert d.suffix("b").node_ids == ("b", "d")
    assert d.descendants("a") == {"b", "c", "d"}
