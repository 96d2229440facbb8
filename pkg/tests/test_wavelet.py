import os

import numpy as np
import pytest
from pydantic import ValidationError

from errors import DataError
from wavelet import (
    CwtConfig,
    cwt,
    cwt_raw,
    export_scaleogram,
    frequency_to_scale,
    morlet,
    read_scaleogram,
    scaleogram_stack,
)


def _naive_cwt(x, cfg):
    n = len(x)
    offsets = np.arange(n)[:, None] - np.arange(n)[None, :]
    out = np.zeros((cfg.n_scales, n), dtype=complex)
    for s, a in enumerate(cfg.scales):
        out[s] = x @ np.conj(morlet(offsets / a, cfg.omega0)) / np.sqrt(a)
    return out


def test_fft_transform_matches_direct_sum():
    cfg = CwtConfig(n_scales=12, scale_min=1.0, scale_max=64.0, remove_mean=False)
    x = np.random.default_rng(0).normal(size=256)
    np.testing.assert_allclose(cwt_raw(x, cfg), _naive_cwt(x, cfg), rtol=1e-9, atol=1e-10)


def test_fft_transform_matches_direct_sum_on_the_full_scale_grid():
    cfg = CwtConfig(n_scales=128, remove_mean=False)
    assert (cfg.scales[0], cfg.scales[-1]) == (1.0, pytest.approx(256.0))
    for seed in (0, 1):
        x = np.random.default_rng(seed).normal(size=256)
        np.testing.assert_allclose(cwt_raw(x, cfg), _naive_cwt(x, cfg), rtol=1e-9, atol=1e-10)


def test_ridge_follows_tone_frequency():
    cfg = CwtConfig(output_height=128)
    t = np.arange(2048) / 500.0
    for freq in (10.0, 25.0, 60.0):
        magnitude = np.abs(cwt_raw(np.sin(2 * np.pi * freq * t), cfg))
        ridge = int(np.argmax(magnitude[:, 1024]))
        expected = int(np.argmin(np.abs(cfg.scales - frequency_to_scale(freq))))
        assert abs(ridge - expected) <= 1


def test_impulse_is_localized_in_time():
    cfg = CwtConfig(n_scales=16, scale_max=32.0, remove_mean=False)
    x = np.zeros(401)
    x[200] = 1.0
    magnitude = np.abs(cwt_raw(x, cfg))
    assert magnitude.shape == (16, 401)
    for row, a in zip(magnitude, cfg.scales):
        assert int(np.argmax(row)) == 200
        assert row[200] == pytest.approx(np.pi ** -0.25 / np.sqrt(a), rel=1e-9)


def test_scaleogram_shape_and_range():
    x = np.random.default_rng(1).normal(size=800)
    s = cwt(x, CwtConfig(), source_channel=3)
    assert s.shape == (128, 800)
    assert s.values.min() == pytest.approx(0.0)
    assert s.values.max() == pytest.approx(1.0)
    assert s.source_channel == 3
    assert len(s.scales) == 128


def test_scaleogram_of_constant_signal_is_zero():
    s = cwt(np.full(100, 5.0))
    assert np.all(s.values == 0.0)


def test_output_height_resamples_scale_axis():
    s = cwt(np.random.default_rng(2).normal(size=64), CwtConfig(n_scales=40, output_height=16))
    assert s.shape == (16, 64)


def test_cwt_input_validation():
    with pytest.raises(DataError):
        cwt_raw(np.zeros(7))
    with pytest.raises(DataError):
        cwt_raw(np.zeros((2, 50)))
    with pytest.raises(ValidationError):
        CwtConfig(scale_min=10.0, scale_max=5.0)


def test_frequency_to_scale():
    assert frequency_to_scale(25.0) == pytest.approx(6.0 * 500.0 / (2 * np.pi * 25.0))


def test_scaleogram_stack_uses_force_and_torque_rows():
    cfg = CwtConfig(n_scales=8, output_height=8, scale_max=16.0)
    x = np.random.default_rng(3).normal(size=(9, 64))
    stack = scaleogram_stack(x, cfg)
    assert stack.shape == (6, 8, 64)
    np.testing.assert_allclose(stack[4], cwt(x[4], cfg).values)
    assert scaleogram_stack(x, cfg, channels=[8, 0]).shape == (2, 8, 64)
    with pytest.raises(DataError):
        scaleogram_stack(x, cfg, channels=[])


def test_export_and_read_scaleogram(tmp_path):
    cfg = CwtConfig(n_scales=16, output_height=16, scale_max=32.0)
    s = cwt(np.random.default_rng(4).normal(size=120), cfg, source_channel=2)
    paths = export_scaleogram(s, tmp_path / "sub" / "rec.fz")
    for path in paths.values():
        assert os.path.exists(path)
    back = read_scaleogram(tmp_path / "sub" / "rec.fz")
    assert back.source_channel == 2
    np.testing.assert_allclose(back.values, s.values, atol=1e-6)
    np.testing.assert_allclose(back.scales, s.scales)
