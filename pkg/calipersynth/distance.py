"""Scaled L2 / L-infinity distances and the treated x control distance matrix."""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pandas as pd

from .data_model import CaliperSpec, Dataset, Norm, ScalingMatrix, parse_norm
from .errors import DimensionMismatch

# Treated rows per block when building the full matrix.
CHUNK_ROWS = 256


def _reduce(scaled: np.ndarray, norm: Norm) -> np.ndarray:
    """Collapse scaled gaps along the last axis, covariate by covariate in order.

    The same loop serves single pairs and whole blocks, so a matrix entry is
    bit-identical to the pairwise value.
    """
    magnitude = np.abs(scaled)
    p = magnitude.shape[-1]
    if norm is Norm.LINF:
        out = magnitude[..., 0].copy()
        for k in range(1, p):
            out = np.maximum(out, magnitude[..., k])
        return out
    out = magnitude[..., 0] * magnitude[..., 0]
    for k in range(1, p):
        out = out + magnitude[..., k] * magnitude[..., k]
    return np.sqrt(out)


def scaled_distance(x, y, V: ScalingMatrix, norm=Norm.LINF) -> float:
    """d_V(x, y) under the scaled L2 or L-infinity norm."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.shape[0] != V.p:
        raise DimensionMismatch(f"Vectors of shape {x.shape} and {y.shape} do not fit {V.p} calipers")
    return float(_reduce(V.scale(x - y), parse_norm(norm)))


def scaled_distances_to(x, points, V: ScalingMatrix, norm=Norm.LINF) -> np.ndarray:
    """Distances from one vector to each row of a matrix."""
    x = np.asarray(x, dtype=float)
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != x.shape[0] or x.shape[0] != V.p:
        raise DimensionMismatch(f"Point matrix of shape {points.shape} does not fit vector of length {x.shape[0]}")
    return _reduce(V.scale(x[None, :] - points), parse_norm(norm))


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    d: np.ndarray
    treated_ids: Tuple[str, ...]
    control_ids: Tuple[str, ...]
    treated_idx: np.ndarray
    control_idx: np.ndarray
    norm: Norm

    @property
    def shape(self) -> Tuple[int, int]:
        return self.d.shape

    def row(self, treated_id: str) -> np.ndarray:
        return self.d[self.treated_ids.index(treated_id)]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.d, index=list(self.treated_ids), columns=list(self.control_ids))


def distance_matrix(ds: Dataset, spec: CaliperSpec) -> DistanceMatrix:
    """All treated-to-control scaled distances under spec's calipers and norm."""
    if spec.p != ds.p:
        raise DimensionMismatch(f"Caliper spec has {spec.p} calipers but dataset has {ds.p} covariates")
    if tuple(spec.columns) != tuple(ds.column_names):
        raise DimensionMismatch(f"Caliper columns {spec.columns} do not match dataset columns {ds.column_names}")

    V = spec.scaling()
    treated_idx = ds.treated_idx
    control_idx = ds.control_idx
    Xt = ds.X[treated_idx]
    Xc = ds.X[control_idx]

    d = np.empty((len(treated_idx), len(control_idx)))
    for start in range(0, len(treated_idx), CHUNK_ROWS):
        block = Xt[start:start + CHUNK_ROWS]
        d[start:start + CHUNK_ROWS] = _reduce(V.scale(block[:, None, :] - Xc[None, :, :]), spec.norm)
    d.setflags(write=False)

    logging.debug(f"Distance matrix {d.shape[0]}x{d.shape[1]} ({spec.norm.value})")
    return DistanceMatrix(
        d=d,
        treated_ids=tuple(ds.ids[i] for i in treated_idx),
        control_ids=tuple(ds.ids[j] for j in control_idx),
        treated_idx=treated_idx,
        control_idx=control_idx,
        norm=spec.norm,
    )
