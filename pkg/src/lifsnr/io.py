"""On-disk formats for spike lists, potential traces and weight snapshots."""

from __future__ import annotations

import csv

import numpy as np

from .spikegen import SpikeList

SPIKE_DTYPE = np.dtype([("afferent", "<u4"), ("time", "<f8")])


def write_spikes_csv(spikes: SpikeList, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["afferent_index", "time_ms"])
        for a, t in zip(spikes.afferents.tolist(), spikes.times.tolist()):
            # repr gives the shortest round-tripping float text
            w.writerow([a, repr(t)])


def read_spikes_csv(path) -> SpikeList:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["afferent_index", "time_ms"]:
            raise ValueError(f"unexpected header {header!r}")
        rows = list(reader)
    if not rows:
        return SpikeList.empty()
    aff = np.array([int(r[0]) for r in rows], dtype=np.int64)
    t = np.array([float(r[1]) for r in rows], dtype=np.float64)
    return SpikeList(aff, t)


def write_spikes_binary(spikes: SpikeList, path) -> None:
    """Packed records of little-endian u32 afferent index + f64 time (12 bytes)."""
    if len(spikes) and (spikes.afferents.min() < 0 or spikes.afferents.max() > 0xFFFFFFFF):
        raise ValueError("afferent index does not fit in u32")
    rec = np.empty(len(spikes), dtype=SPIKE_DTYPE)
    rec["afferent"] = spikes.afferents
    rec["time"] = spikes.times
    with open(path, "wb") as fh:
        fh.write(rec.tobytes())


def read_spikes_binary(path) -> SpikeList:
    raw = np.fromfile(path, dtype=SPIKE_DTYPE)
    return SpikeList(raw["afferent"].astype(np.int64), raw["time"].astype(np.float64))


def write_f32(array, path) -> None:
    np.asarray(array, dtype="<f4").tofile(path)


def read_f32(path, shape=None) -> np.ndarray:
    data = np.fromfile(path, dtype="<f4")
    return data.reshape(shape) if shape is not None else data
