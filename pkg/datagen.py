"""
Synthetic labeled recordings for desk-scale benchmarks.

Each record is a press-and-hold contact in the TCP frame: a short ramp, a
plateau with amplitude-modulated controller ripple, and a release. Classes of
one action kind share the template and differ only by events (dips, spikes,
torque detents) placed inside a fixed discriminative segment, so ground truth
for the detector and for attribution checks is known exactly. Not a physics
simulator.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.signal import windows
from scipy.spatial.transform import Rotation

import config
from errors import ConfigError
from records import ActionKind, ActionRecord, Dataset, Label

logger = logging.getLogger(__name__)

# Template geometry, in samples from contact start.
RAMP_LEN = 12
CONTACT_LEN = 780
RELEASE_LEN = 20
SEGMENT = (280, 560)
APPROACH_LEN = 400
APPROACH_DISTANCE_M = 0.02
PRESS_TRAVEL_M = 0.002
LEVER_ARM_M = 0.05
RIPPLE_AM_HZ = 0.6


@dataclass(frozen=True)
class Event:
    """Windowed modification at `at` samples after contact start."""

    shape: str  # "dip" (multiplies the press force), "spike" (adds to it), "detent" (adds twist torque)
    at: int
    width: int
    scale: float = 1.0  # dips: fraction of event_depth; spikes/detents: fraction of the contact amplitude
    taper: float = 1.0


@dataclass(frozen=True)
class KindProfile:
    base_force: float
    direction: tuple[float, float, float]
    classes: dict[str, tuple[Event, ...]]
    twist: float = 0.0


KIND_PROFILES: dict[ActionKind, KindProfile] = {
    ActionKind.BUTTON: KindProfile(
        base_force=12.0,
        direction=(0.10, -0.05, 1.0),
        classes={
            "Success": (Event("dip", 300, 40), Event("spike", 480, 20, 0.4)),
            "Fail": (),
        },
    ),
    ActionKind.SWITCH: KindProfile(
        base_force=8.0,
        direction=(0.05, 0.60, 1.0),
        classes={
            "Success": (Event("dip", 320, 30), Event("spike", 380, 16, 0.4)),
            "Fail": (),
        },
    ),
    ActionKind.KNOB: KindProfile(
        base_force=6.0,
        direction=(0.05, 0.05, 1.0),
        twist=0.3,
        classes={
            "Success": tuple(e for at in (320, 400, 480) for e in (Event("detent", at, 30, 0.5), Event("dip", at, 30, 0.3))),
            "MidState": (Event("detent", 320, 30, 0.5), Event("dip", 320, 30, 0.3)),
            "Fail": (),
        },
    ),
    ActionKind.FLAP: KindProfile(
        base_force=15.0,
        direction=(0.70, 0.10, 1.0),
        classes={
            "Success": (Event("dip", 300, 220, 1.0, taper=0.3),),
            "Locked": (),
        },
    ),
    ActionKind.LDG: KindProfile(
        base_force=20.0,
        direction=(0.40, 0.40, 1.0),
        classes={
            "Success": (Event("spike", 500, 25, 0.4),),
            "NotFullyDown": (),
        },
    ),
    ActionKind.SBRAKE: KindProfile(
        base_force=14.0,
        direction=(0.60, 0.0, 1.0),
        classes={
            "Success": (Event("dip", 300, 30), Event("dip", 420, 30)),
            "Fail": (),
        },
    ),
}


def class_names(action_kind) -> list[str]:
    return list(KIND_PROFILES[ActionKind.parse(action_kind)].classes)


class GenSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    action_kind: ActionKind = ActionKind.BUTTON
    classes: tuple[str, ...] | None = None
    duration_s: float = Field(default=4.0, gt=0)
    sample_rate_hz: float = Field(default=config.SAMPLE_RATE_HZ, gt=0)
    noise_std: float = Field(default=0.15, ge=0)
    ripple_amplitude: float = Field(default=0.08, ge=0, lt=0.3)
    ripple_hz: float = Field(default=5.0, gt=0)
    transient_onset_s: float = Field(default=2.0, gt=0)
    onset_jitter_s: float = Field(default=0.25, ge=0)
    event_depth: float = Field(default=0.5, ge=0, le=0.9)
    count_per_class: int = Field(default=200, ge=1)
    seed: int = config.DEFAULT_SEED

    @model_validator(mode="after")
    def _check(self):
        known = class_names(self.action_kind)
        unknown = [c for c in (self.classes or ()) if c not in known]
        if unknown:
            raise ValueError(f"{self.action_kind.value} has no classes {unknown}; known: {known}")
        if self.transient_onset_s - self.onset_jitter_s <= 0:
            raise ValueError("earliest onset must be after the start of the record")
        latest_end = self.transient_onset_s + self.onset_jitter_s + (CONTACT_LEN + RELEASE_LEN) / self.sample_rate_hz
        if latest_end > self.duration_s:
            raise ValueError(f"contact may end at {latest_end:.2f} s, after the {self.duration_s} s record")
        return self

    @property
    def class_list(self) -> list[str]:
        return list(self.classes) if self.classes else class_names(self.action_kind)

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))


class GroundTruth(BaseModel):
    record_id: str
    class_name: str
    onset: int
    segment: tuple[int, int]
    amplitude: float


# --- Template synthesis ---
def _window(shape_len: int, taper: float) -> np.ndarray:
    return windows.tukey(shape_len, taper)


def _place(n: int, start: int, values: np.ndarray) -> np.ndarray:
    out = np.zeros(n)
    lo, hi = max(0, start), min(n, start + len(values))
    if hi > lo:
        out[lo:hi] = values[lo - start:hi - start]
    return out


def press_profile(n: int, onset: int, amplitude: float, events, spec: GenSpec, rng) -> tuple[np.ndarray, np.ndarray]:
    """Press force magnitude and twist-event track (both [n]) for one record."""
    fs = spec.sample_rate_hz
    envelope = np.zeros(n)
    ramp = 0.5 * (1 - np.cos(np.pi * np.arange(RAMP_LEN) / RAMP_LEN))
    release = 0.5 * (1 + np.cos(np.pi * np.arange(RELEASE_LEN) / RELEASE_LEN))
    shape = np.concatenate([ramp, np.ones(CONTACT_LEN - RAMP_LEN), release])
    envelope += _place(n, onset, shape)

    t = np.arange(n) / fs
    phase = rng.uniform(0, 2 * np.pi)
    am = 1 + 0.3 * np.sin(2 * np.pi * RIPPLE_AM_HZ * t)
    ripple = 1 + spec.ripple_amplitude * am * np.sin(2 * np.pi * spec.ripple_hz * t + phase)

    factor = np.ones(n)
    added = np.zeros(n)
    twist = np.zeros(n)
    for ev in events:
        bump = _place(n, onset + ev.at, _window(ev.width, ev.taper))
        if ev.shape == "dip":
            factor *= 1 - spec.event_depth * ev.scale * bump
        elif ev.shape == "spike":
            added += ev.scale * bump
        elif ev.shape == "detent":
            twist += spec.event_depth * ev.scale * bump
        else:
            raise ConfigError(f"unknown event shape '{ev.shape}'")
    press = amplitude * (envelope * factor * ripple + added)
    return press, amplitude * twist


def synthesize(kind: ActionKind, class_id: int, class_name: str, record_id: str, spec: GenSpec,
               rng: np.random.Generator) -> tuple[ActionRecord, GroundTruth]:
    profile = KIND_PROFILES[kind]
    n = spec.n_samples
    fs = spec.sample_rate_hz
    jitter = rng.uniform(-spec.onset_jitter_s, spec.onset_jitter_s) if spec.onset_jitter_s > 0 else 0.0
    onset = int(round((spec.transient_onset_s + jitter) * fs))
    amplitude = profile.base_force * rng.uniform(0.9, 1.1)

    press, twist_events = press_profile(n, onset, amplitude, profile.classes[class_name], spec, rng)
    direction = np.asarray(profile.direction)
    f_tcp = direction[:, None] * press[None, :]
    # Torque from a force applied at the fingertip, plus knob twist.
    lever = np.array([0.0, 0.0, LEVER_ARM_M])
    t_tcp = np.cross(lever[None, :], f_tcp.T).T
    t_tcp[2] += LEVER_ARM_M * (profile.twist * press + twist_events)

    approach = np.clip((np.arange(n) - (onset - APPROACH_LEN)) / APPROACH_LEN, 0, 1)
    retreat = np.clip((np.arange(n) - (onset + CONTACT_LEN + RELEASE_LEN)) / APPROACH_LEN, 0, 1)
    depth = APPROACH_DISTANCE_M * (approach - retreat) + PRESS_TRAVEL_M * press / amplitude
    p_tcp = np.stack([np.zeros(n), np.zeros(n), depth])

    rotvec = np.array([np.pi, 0.0, 0.0]) + rng.normal(0.0, 0.05, size=3)
    rot = Rotation.from_rotvec(rotvec)
    f_base = rot.apply(f_tcp.T).T + rng.normal(0.0, spec.noise_std, size=(3, n))
    t_base = rot.apply(t_tcp.T).T + rng.normal(0.0, spec.noise_std * 0.02, size=(3, n))
    p_base = rot.apply(p_tcp.T).T + rng.normal(0.0, 1e-5 if spec.noise_std > 0 else 0.0, size=(3, n))
    p_base -= p_base[:, :1]

    record = ActionRecord(
        id=record_id,
        action_kind=kind,
        sample_rate_hz=fs,
        channels=np.concatenate([f_base, t_base, p_base]),
        tcp_rotvec=np.repeat(rotvec[:, None], n, axis=1),
        label=Label(class_id, class_name),
    )
    truth = GroundTruth(
        record_id=record_id,
        class_name=class_name,
        onset=onset,
        segment=(onset + SEGMENT[0], onset + SEGMENT[1]),
        amplitude=float(amplitude),
    )
    return record, truth


def generate_counts(spec: GenSpec, counts: dict[str, int]) -> tuple[Dataset, dict[str, GroundTruth]]:
    kind = spec.action_kind
    class_map = dict(enumerate(spec.class_list))
    ids = {name: cid for cid, name in class_map.items()}
    records, truths = [], {}
    for name, count in counts.items():
        cid = ids[name]
        for i in range(count):
            rng = np.random.default_rng(np.random.SeedSequence([spec.seed, cid, i]))
            record_id = f"{kind.value.lower()}-{name.lower()}-{i:04d}"
            rec, truth = synthesize(kind, cid, name, record_id, spec, rng)
            records.append(rec)
            truths[record_id] = truth
    logger.info(f"Generated {len(records)} {kind.value} records: {counts}")
    return Dataset(records=tuple(records), class_map=class_map, action_kind=kind), truths


def generate(spec: GenSpec) -> tuple[Dataset, dict[str, GroundTruth]]:
    """`count_per_class` records for every class in `spec.class_list`; deterministic per seed."""
    return generate_counts(spec, {name: spec.count_per_class for name in spec.class_list})


def generate_imbalanced(spec: GenSpec, minority_fraction: float, total: int | None = None,
                        minority_class: str = "MidState") -> tuple[Dataset, dict[str, GroundTruth]]:
    """Knob set with one undersampled class; the rest is split evenly across the other classes."""
    if not 0 < minority_fraction < 0.5:
        raise ConfigError(f"minority_fraction must be in (0, 0.5), got {minority_fraction}")
    spec = spec.model_copy(update={"action_kind": ActionKind.KNOB, "classes": None})
    names = class_names(ActionKind.KNOB)
    total = total or spec.count_per_class * len(names)
    minority = int(round(total * minority_fraction))
    others = [c for c in names if c != minority_class]
    base, extra = divmod(total - minority, len(others))
    counts = {c: base + (1 if i < extra else 0) for i, c in enumerate(others)}
    counts[minority_class] = minority
    return generate_counts(spec, {c: counts[c] for c in names})


def ground_truth_table(truths: dict[str, GroundTruth]) -> list[dict]:
    return [t.model_dump() for t in truths.values()]
