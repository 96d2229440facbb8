import numpy as np
import pytest
from pydantic import ValidationError

from datagen import SEGMENT, GenSpec, class_names, generate, generate_imbalanced, ground_truth_table
from errors import ConfigError
from preprocess import PipelineConfig, isolate_transient, lowpass_filter, short_time_energy, transform_record_to_tcp
from records import ActionKind


def _small(kind="Button", count=3, **kw):
    return GenSpec(action_kind=kind, count_per_class=count, seed=11, **kw)


def test_generation_is_deterministic_and_labeled():
    d1, truths = generate(_small())
    d2, _ = generate(_small())
    assert len(d1) == 6
    assert dict(d1.class_map) == {0: "Success", 1: "Fail"}
    assert d1.records[0].id == "button-success-0000"
    assert set(truths) == {r.id for r in d1}
    for a, b in zip(d1, d2):
        np.testing.assert_array_equal(a.channels, b.channels)
    assert d1.records[0].n_samples == 2000


def test_class_subset_and_known_classes():
    assert class_names("Knob") == ["Success", "MidState", "Fail"]
    d, _ = generate(_small("Knob", classes=("Success", "Fail")))
    assert dict(d.class_map) == {0: "Success", 1: "Fail"}
    with pytest.raises(ValidationError):
        GenSpec(action_kind="Button", classes=("Locked",))


def test_spec_timing_validation():
    with pytest.raises(ValidationError):
        GenSpec(transient_onset_s=0.2, onset_jitter_s=0.25)
    with pytest.raises(ValidationError):
        GenSpec(duration_s=2.5)
    with pytest.raises(ValidationError):
        GenSpec(ripple_amplitude=0.3)


def test_ground_truth_geometry():
    _, truths = generate(_small(count=2))
    rows = ground_truth_table(truths)
    assert len(rows) == 4
    for t in truths.values():
        assert 875 <= t.onset <= 1125
        assert t.segment == (t.onset + SEGMENT[0], t.onset + SEGMENT[1])
        assert 12.0 * 0.9 <= t.amplitude <= 12.0 * 1.1


@pytest.mark.parametrize("kind", list(ActionKind))
def test_detector_finds_the_generated_onset(kind):
    d, truths = generate(_small(kind, count=2))
    cfg = PipelineConfig()
    for rec in d:
        isolated = isolate_transient(rec, cfg)
        assert abs(isolated.onset - truths[rec.id].onset) <= 60, rec.id


def test_frame_transform_recovers_press_direction():
    d, truths = generate(_small(noise_std=0.0))
    rec = d.records[-1]
    truth = truths[rec.id]
    tcp = transform_record_to_tcp(rec.channels, rec.tcp_rotvec)
    plateau = slice(truth.onset + 100, truth.onset + 250)
    fz = tcp[2, plateau].mean()
    assert fz == pytest.approx(truth.amplitude, rel=0.15)
    assert tcp[0, plateau].mean() == pytest.approx(0.10 * fz, rel=0.05)
    assert tcp[1, plateau].mean() == pytest.approx(-0.05 * fz, rel=0.05)
    assert np.all(rec.channels[6:, 0] == 0.0)


def test_success_records_carry_a_dip_in_the_segment():
    d, truths = generate(_small(count=4))
    for rec in d:
        truth = truths[rec.id]
        fz = lowpass_filter(transform_record_to_tcp(rec.channels, rec.tcp_rotvec)[2])
        lo, hi = truth.segment
        depth = fz[lo:hi].min() / truth.amplitude
        if rec.label.class_name == "Success":
            assert depth < 0.8, rec.id
        else:
            assert depth > 0.8, rec.id


def test_window_keeps_most_contact_energy():
    d, _ = generate(_small(count=3, onset_jitter_s=0.0))
    cfg = PipelineConfig()
    for rec in (r for r in d if r.label.class_name == "Fail"):
        filtered = lowpass_filter(transform_record_to_tcp(rec.channels, rec.tcp_rotvec))
        power = np.sum(filtered[:3] ** 2, axis=0)
        isolated = isolate_transient(rec, cfg)
        start = isolated.onset
        assert power[start:start + 800].sum() / power.sum() > 0.93
        energy = short_time_energy(filtered, 300, (0, 1, 2))
        assert energy.argmax() > start


def test_imbalanced_knob_set():
    d, _ = generate_imbalanced(_small("Knob"), 0.1, total=30)
    assert dict(d.class_map) == {0: "Success", 1: "MidState", 2: "Fail"}
    assert d.class_counts() == {0: 14, 1: 3, 2: 13}
    with pytest.raises(ConfigError):
        generate_imbalanced(_small("Knob"), 0.6)
