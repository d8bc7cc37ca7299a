import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from semhide.errors import ConfigError, ScheduleError
from semhide.scheduler import (
    HidingSchedule,
    apply_schedule,
    compression_ratio,
    draw_schedule,
    hidden_count,
    required_hidden,
)

# capacity-ratio table as printed, three decimals
CR_TABLE = {0.0: 0.033, 0.2: 0.028, 0.4: 0.024, 0.6: 0.021, 0.8: 0.019, 1.0: 0.016}


def test_extremes():
    rng = np.random.default_rng(0)
    assert draw_schedule(10, 0.0, rng).indices == ()
    assert draw_schedule(10, 1.0, rng).indices == tuple(range(10))


def test_rounding_half_up():
    assert hidden_count(10, 0.25) == 3
    assert hidden_count(4, 0.5) == 2
    assert hidden_count(5, 0.5) == 3
    assert hidden_count(3, 0.1) == 0


@pytest.mark.parametrize("r", [-0.1, 1.5, None])
def test_ratio_out_of_range(r):
    with pytest.raises(ConfigError):
        draw_schedule(10, r, np.random.default_rng(0))


def test_selection_frequency():
    rng = np.random.default_rng(123)
    counts = np.zeros(10)
    draws = 100_000
    for _ in range(draws):
        counts[list(draw_schedule(10, 0.4, rng).indices)] += 1
    assert np.all(np.abs(counts / draws - 0.4) < 0.01)


@given(N=st.integers(1, 40), r=st.floats(0, 1), seed=st.integers(0, 2**31))
def test_schedule_properties(N, r, seed):
    s = draw_schedule(N, r, np.random.default_rng(seed))
    assert s.M == hidden_count(N, r)
    assert list(s.indices) == sorted(set(s.indices))
    assert all(0 <= i < N for i in s.indices)
    assert HidingSchedule.from_json(s.to_json()) == s


@pytest.mark.parametrize("r, expected", sorted(CR_TABLE.items()))
def test_compression_table(r, expected):
    assert abs(compression_ratio(5, 64, 64, r) - expected) <= 1e-3


def test_compression_is_resolution_free():
    assert compression_ratio(5, 64, 64, 0.4) == pytest.approx(compression_ratio(5, 128, 32, 0.4))
    assert compression_ratio(5, 64, 64, 0.0) == pytest.approx(2 / 60)


def _hider(c, s):
    return c + s


def test_apply_schedule_identity_cases():
    covers = [torch.randn(16, 2, 4, 4) for _ in range(5)]
    secrets = [torch.randn(16, 2, 4, 4) for _ in range(5)]
    out = apply_schedule(covers, secrets, HidingSchedule(5), _hider)
    assert all(a is b for a, b in zip(out, covers))
    s = HidingSchedule(5, indices=(1, 3))
    out = apply_schedule(covers, secrets, s, _hider)
    for i in (0, 2, 4):
        assert out[i] is covers[i]
        assert torch.equal(out[i], covers[i])
    assert torch.equal(out[1], covers[1] + secrets[0])
    assert torch.equal(out[3], covers[3] + secrets[1])


def test_apply_schedule_errors():
    covers = [torch.zeros(1)] * 4
    with pytest.raises(ScheduleError):
        apply_schedule(covers, [], HidingSchedule(4, indices=(0,)), _hider)
    with pytest.raises(ScheduleError):
        apply_schedule(covers, covers, HidingSchedule(5), _hider)


def test_bad_schedules():
    with pytest.raises(ScheduleError):
        HidingSchedule(4, indices=(2, 1))
    with pytest.raises(ScheduleError):
        HidingSchedule(4, indices=(4,))
    with pytest.raises(ScheduleError):
        HidingSchedule(4, indices=(0, 1), assignment=(0, 2))


def test_required_hidden_names_m():
    assert required_hidden(2, 4, 0.5) == 2
    with pytest.raises(ScheduleError, match="M=2"):
        required_hidden(3, 4, 0.5)
