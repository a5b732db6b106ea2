from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Segment:
    offset: int
    shape: tuple

    @property
    def size(self):
        return int(np.prod(self.shape, dtype=int))


class ParamVector:
    """Flat float64 vector partitioned into named, shaped segments.

    Instances are treated as immutable snapshots: every update returns a new
    vector and :meth:`get` hands out read-only views.
    """

    def __init__(self, values, layout):
        values = np.array(values, dtype=np.float64).ravel()
        values.flags.writeable = False
        end = 0
        for name, seg in layout.items():
            if seg.offset != end:
                raise ValueError(f"segment {name!r} does not start at offset {end}")
            end += seg.size
        if end != values.size:
            raise ValueError(f"layout covers {end} values, vector has {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter vector contains non-finite values")
        self.values = values
        self.layout = dict(layout)

    @classmethod
    def from_segments(cls, segments):
        layout, chunks, offset = {}, [], 0
        for name, arr in segments.items():
            arr = np.asarray(arr, dtype=np.float64)
            layout[name] = Segment(offset, tuple(arr.shape))
            offset += arr.size
            chunks.append(arr.ravel())
        values = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(values, layout)

    def __len__(self):
        return self.values.size

    def __contains__(self, name):
        return name in self.layout

    def names(self):
        return list(self.layout)

    def get(self, name):
        seg = self.layout[name]
        return self.values[seg.offset:seg.offset + seg.size].reshape(seg.shape)

    def segments(self):
        return {name: self.get(name) for name in self.layout}

    def with_segment(self, name, arr):
        seg = self.layout[name]
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != seg.shape:
            raise ValueError(f"segment {name!r} expects shape {seg.shape}, got {arr.shape}")
        values = self.values.copy()
        values[seg.offset:seg.offset + seg.size] = arr.ravel()
        return type(self)(values, self.layout)

    def with_values(self, values):
        return type(self)(values, self.layout)

    def same_layout(self, other):
        return self.layout == other.layout

    def select(self, prefixes):
        """Names of segments starting with any of ``prefixes``."""
        return [n for n in self.layout if n.startswith(tuple(prefixes))]

    def __eq__(self, other):
        return (isinstance(other, ParamVector) and self.layout == other.layout
                and np.array_equal(self.values, other.values))

    def __repr__(self):
        return f"{type(self).__name__}({len(self)} values, segments={self.names()})"


class GradVector(ParamVector):
    """Gradient with the layout of the parameter vector it differentiates."""

    def norm(self):
        return float(np.linalg.norm(self.values))


def zeros_like(p, cls=GradVector):
    return cls(np.zeros(len(p)), p.layout)
