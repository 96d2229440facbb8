"""Small builders shared by the test modules."""
import numpy as np

import config
from records import ActionKind, ActionRecord, Dataset, Label


def make_record(rec_id="r0", kind=ActionKind.BUTTON, class_id=0, class_name="Success", n=400, seed=0,
                channels=None, rotvec=None, **kw) -> ActionRecord:
    rng = np.random.default_rng(seed)
    if channels is None:
        channels = rng.normal(size=(config.N_CHANNELS, n))
    channels = np.asarray(channels, dtype=np.float64)
    if rotvec is None:
        rotvec = np.zeros((3, channels.shape[1]))
    return ActionRecord(
        id=rec_id,
        action_kind=kind,
        sample_rate_hz=config.SAMPLE_RATE_HZ,
        channels=channels,
        tcp_rotvec=rotvec,
        label=Label(class_id, class_name),
        **kw,
    )


def make_dataset(counts=None, kind=ActionKind.BUTTON, n=400) -> Dataset:
    """Random-noise records; `counts` maps class name to record count, ids follow the dict order."""
    counts = counts or {"Success": 10, "Fail": 10}
    class_map = dict(enumerate(counts))
    records = []
    for cid, name in class_map.items():
        for i in range(counts[name]):
            records.append(make_record(f"{name.lower()}-{i:03d}", kind, cid, name, n=n, seed=cid * 1000 + i))
    return Dataset(records=tuple(records), class_map=class_map, action_kind=kind)
