"""
Reconstructed supports: thresholded level sets of TD/TE fields, ground-truth
shapes and the scores comparing the two.
"""

import json
import logging
from dataclasses import dataclass, replace
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, parse_obj_as, validator
from scipy import ndimage

from topoimg.topofield import KIND_TD, InspectionGrid, ScalarGrid

MODE_MIN = "min-side"
MODE_MAX = "max-side"


class RegionError(Exception):
    """RegionError"""
    def __init__(self, message):
        self.message = message


#
# ground truth
#

class DiskShape(BaseModel):
    type: Literal["disk"] = "disk"
    center: List[float]
    radius: float
    material: Optional[str] = None

    @validator("center")
    def center_dimension(cls, v):
        if len(v) not in (2, 3):
            raise ValueError("disk center must have 2 or 3 coordinates")
        return v

    @validator("radius")
    def radius_positive(cls, v):
        if not v > 0.0:
            raise ValueError("disk radius must be positive")
        return v

    @property
    def dimension(self):
        return len(self.center)

    def contains(self, nodes):
        d = nodes - np.asarray(self.center)
        return np.sqrt(np.sum(d * d, axis=-1)) <= self.radius

    def inside_box(self, lower, upper):
        return all(l <= c - self.radius and c + self.radius <= u for l, c, u in zip(lower, self.center, upper))


class BoxShape(BaseModel):
    type: Literal["box"] = "box"
    corner: List[float]
    extents: List[float]
    material: Optional[str] = None

    @validator("extents")
    def extents_positive(cls, v, values):
        if "corner" in values and len(v) != len(values["corner"]):
            raise ValueError("box corner and extents differ in dimension")
        if any(not e > 0.0 for e in v):
            raise ValueError("box extents must be positive")
        return v

    @property
    def dimension(self):
        return len(self.corner)

    def contains(self, nodes):
        lower = np.asarray(self.corner)
        upper = lower + np.asarray(self.extents)
        return np.all((nodes >= lower) & (nodes <= upper), axis=-1)

    def inside_box(self, lower, upper):
        return all(l <= c and c + e <= u for l, c, e, u in zip(lower, self.corner, self.extents, upper))


class PointShape(BaseModel):
    type: Literal["point"] = "point"
    location: List[float]
    amplitude: Optional[List[float]] = None

    @property
    def dimension(self):
        return len(self.location)

    def contains(self, nodes):
        # a point covers the single node closest to it
        d = nodes - np.asarray(self.location)
        dist = np.sqrt(np.sum(d * d, axis=-1))
        return dist == np.min(dist)

    def inside_box(self, lower, upper):
        return all(l <= c <= u for l, c, u in zip(lower, self.location, upper))


Primitive = Union[DiskShape, BoxShape, PointShape]


class ShapeTruth(BaseModel):
    primitives: List[Primitive]

    @classmethod
    def from_json(cls, text: str) -> "ShapeTruth":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise RegionError("Truth file is not valid JSON: {0}".format(e))
        return cls(primitives=parse_obj_as(List[Primitive], data))

    def to_json(self) -> str:
        return json.dumps([p.dict(exclude_none=True) for p in self.primitives], indent=2)

    def inside(self, grid: InspectionGrid) -> bool:
        return all(p.inside_box(grid.lower, grid.upper) for p in self.primitives)

    def rasterize(self, grid: InspectionGrid) -> np.ndarray:
        """Cells whose center lies inside at least one primitive"""
        nodes = grid.nodes()
        mask = np.zeros(grid.shape, dtype=bool)
        for p in self.primitives:
            if p.dimension != grid.dimension:
                raise RegionError("Shape dimension does not match the grid")
            mask |= p.contains(nodes)
        return mask


#
# masks
#

@dataclass(frozen=True, eq=False)
class RegionMask:
    grid: InspectionGrid
    membership: np.ndarray
    lam: float
    mode: str
    extremum: float

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.membership))

    def nodes(self) -> np.ndarray:
        return self.grid.nodes()[self.membership]

    def indices(self) -> np.ndarray:
        return np.argwhere(self.membership)


def extract(field: ScalarGrid, lam: float) -> RegionMask:
    """
        Thresholded support of an indicator field

        TD fields keep the nodes with value <= lam * min (min < 0), TE fields
        the nodes with value >= lam * max (max > 0).

        Parameters
        ----------
        field : ScalarGrid
        lam : float
            threshold in [0, 1]

        Returns
        -------
        mask : RegionMask
    """
    if not 0.0 <= lam <= 1.0:
        raise RegionError("Threshold lambda must lie in [0, 1] (got {0})".format(lam))
    if field.kind == KIND_TD:
        extremum = float(np.min(field.values))
        if not extremum < 0.0:
            raise RegionError("TD field has no negative values, nothing to reconstruct")
        membership = field.values <= lam * extremum
        mode = MODE_MIN
    else:
        extremum = float(np.max(field.values))
        if not extremum > 0.0:
            raise RegionError("TE field has no positive values, nothing to reconstruct")
        membership = field.values >= lam * extremum
        mode = MODE_MAX
    logging.info(f"extracted {int(np.count_nonzero(membership))} nodes at lambda={lam} ({mode})")
    return RegionMask(field.grid, membership, float(lam), mode, extremum)


def prune_components(mask: RegionMask, min_cells: int) -> RegionMask:
    """Drop connected components with fewer than min_cells nodes"""
    labels, count = ndimage.label(mask.membership)
    keep = np.zeros_like(mask.membership)
    for label in range(1, count + 1):
        component = labels == label
        if np.count_nonzero(component) >= min_cells:
            keep |= component
    return replace(mask, membership=keep)


@dataclass(frozen=True)
class RegionScore:
    jaccard: float
    mask_centroid: Tuple[float, ...]
    truth_centroid: Tuple[float, ...]
    centroid_offset_m: float
    components: int
    measure: float
    measure_unit: str
    mask_cells: int
    truth_cells: int

    def as_dict(self) -> dict:
        return {"jaccard": self.jaccard, "mask_centroid_m": list(self.mask_centroid),
                "truth_centroid_m": list(self.truth_centroid), "centroid_offset_m": self.centroid_offset_m,
                "components": self.components, "measure": self.measure, "measure_unit": self.measure_unit,
                "mask_cells": self.mask_cells, "truth_cells": self.truth_cells}


def score(mask: RegionMask, truth: ShapeTruth) -> RegionScore:
    """
        Compare a mask with rasterized ground truth

        Returns the Jaccard index, both centroids and their distance in
        meters, the number of connected components (face connectivity) and
        the area or volume of the mask.
    """
    if mask.count == 0:
        raise RegionError("Cannot score an empty mask")
    reference = truth.rasterize(mask.grid)
    if not reference.any():
        raise RegionError("Truth shape below grid resolution: no cell center lies inside it")
    union = np.count_nonzero(mask.membership | reference)
    intersection = np.count_nonzero(mask.membership & reference)
    nodes = mask.grid.nodes()
    mask_centroid = nodes[mask.membership].mean(axis=0)
    truth_centroid = nodes[reference].mean(axis=0)
    _, components = ndimage.label(mask.membership)
    return RegionScore(
        jaccard=float(intersection / union),
        mask_centroid=tuple(float(c) for c in mask_centroid),
        truth_centroid=tuple(float(c) for c in truth_centroid),
        centroid_offset_m=float(np.linalg.norm(mask_centroid - truth_centroid)),
        components=int(components),
        measure=mask.count * mask.grid.cell_measure,
        measure_unit="m^2" if mask.grid.dimension == 2 else "m^3",
        mask_cells=mask.count,
        truth_cells=int(np.count_nonzero(reference)))
