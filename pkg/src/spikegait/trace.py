"""Per-tick experiment traces with a fixed column order.

A trace has one row per control tick, including t=0 (the state before the
first step) and a closing row at the final time, so a run of duration T at
step dt has T/dt + 1 rows. Optionally it carries a down-sampled
per-population spike-count block in a side array.
"""

from __future__ import annotations

import csv

import numpy as np

__all__ = ["TRACE_COLUMNS", "Trace"]

LEGS = ("fl", "fr", "hl", "hr")

TRACE_COLUMNS = (
    ["t"]
    + [f"target_{leg}" for leg in LEGS]
    + [f"readout_{leg}" for leg in LEGS]
    + [f"sensor_raw_{leg}" for leg in LEGS]
    + [f"sensor_filt_{leg}" for leg in LEGS]
    + ["control", "beta", "body_x", "body_y", "heading", "distance"]
)

_IDX = {name: i for i, name in enumerate(TRACE_COLUMNS)}


class Trace:
    """Dense float matrix with named columns; rows are written in order."""

    def __init__(self, n_rows: int, spike_downsample: int = 0, n_populations: int = 0):
        self.data = np.zeros((n_rows, len(TRACE_COLUMNS)))
        self.n_rows = n_rows
        self.spike_downsample = spike_downsample
        if spike_downsample > 0 and n_populations > 0:
            n_spike_rows = (n_rows + spike_downsample - 1) // spike_downsample
            self.spikes = np.zeros((n_spike_rows, n_populations), dtype=np.int64)
        else:
            self.spikes = None

    def set_row(
        self,
        k: int,
        t: float,
        targets: np.ndarray,
        readouts: np.ndarray,
        sensors_raw: np.ndarray,
        sensors_filt: np.ndarray,
        control: float,
        beta: float,
        body_x: float,
        body_y: float,
        heading: float,
        distance: float,
    ) -> None:
        row = self.data[k]
        row[0] = t
        row[1:5] = targets
        row[5:9] = readouts
        row[9:13] = sensors_raw
        row[13:17] = sensors_filt
        row[17] = control
        row[18] = beta
        row[19] = body_x
        row[20] = body_y
        row[21] = heading
        row[22] = distance

    def column(self, name: str) -> np.ndarray:
        return self.data[:, _IDX[name]]

    def columns(self, names: list[str]) -> np.ndarray:
        return self.data[:, [_IDX[n] for n in names]]

    @property
    def t(self) -> np.ndarray:
        return self.data[:, 0]

    def targets(self) -> np.ndarray:
        return self.data[:, 1:5]

    def readouts(self) -> np.ndarray:
        return self.data[:, 5:9]

    def slice_rows(self, start: int, stop: int) -> "Trace":
        out = Trace(stop - start)
        out.data = self.data[start:stop].copy()
        out.n_rows = stop - start
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(TRACE_COLUMNS)
            for row in self.data[: self.n_rows]:
                writer.writerow([repr(v) for v in row])

    @classmethod
    def from_csv(cls, path) -> "Trace":
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            if header != list(TRACE_COLUMNS):
                raise ValueError(f"unexpected trace columns in {path}")
            rows = [[float(v) for v in row] for row in reader]
        trace = cls(len(rows))
        if rows:
            trace.data = np.asarray(rows)
        return trace

    def equals(self, other: "Trace") -> bool:
        """Bitwise equality of all recorded values."""
        return self.n_rows == other.n_rows and np.array_equal(self.data, other.data)
