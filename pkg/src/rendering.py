import json
import logging
from typing import Optional

import numpy
import pandas
from matplotlib import colormaps
from PIL import Image

from topoimg.regions import RegionError, RegionMask
from topoimg.topofield import InspectionGrid, ScalarGrid, TopologicalFieldError, slice_z, z_spread

AXES = ("x", "y", "z")
INDEX_AXES = ("i", "j", "k")


class HeatmapFigure:
    """Binary PPM heatmap with a blue-white-red scale centered on zero"""

    def __init__(self, title: str = "", colormap: str = "bwr", pixels_per_cell: int = 4):
        self.title = title
        self.colormap = colormap
        self.pixels_per_cell = pixels_per_cell
        self.image: Optional[Image.Image] = None
        self.vmin = 0.0
        self.vmax = 0.0

    def update_plot(self, field: ScalarGrid) -> Image.Image:
        plane = slice_z(field, 0.0) if field.grid.dimension == 3 else field
        values = plane.values
        bound = float(numpy.max(numpy.abs(values)))
        if bound == 0.0:
            bound = 1.0
        self.vmin, self.vmax = -bound, bound

        # rows run from the largest y down, columns along x
        normalized = (values.T[::-1, :] - self.vmin) / (self.vmax - self.vmin)
        rgba = colormaps[self.colormap](numpy.clip(normalized, 0.0, 1.0))
        rgb = numpy.round(rgba[..., :3] * 255.0).astype(numpy.uint8)
        rgb = numpy.repeat(numpy.repeat(rgb, self.pixels_per_cell, axis=0), self.pixels_per_cell, axis=1)
        self.image = Image.fromarray(rgb)
        return self.image

    def color_scale(self) -> dict:
        return {"colormap": self.colormap, "vmin": self.vmin, "vmax": self.vmax, "title": self.title}

    def save(self, path: str) -> None:
        self.image.save(path, format="PPM")
        logging.info(f"Zapisano mapę ciepła: {path}")


def field_frame(field: ScalarGrid) -> pandas.DataFrame:
    nodes = field.grid.nodes().reshape(-1, field.grid.dimension)
    columns = {AXES[d]: nodes[:, d] for d in range(field.grid.dimension)}
    columns["value"] = field.values.reshape(-1)
    return pandas.DataFrame(columns)


def grid_description(grid: InspectionGrid) -> dict:
    return {"lower": list(grid.lower), "upper": list(grid.upper), "resolution": list(grid.resolution)}


def grid_from_description(description: dict) -> InspectionGrid:
    return InspectionGrid(tuple(description["lower"]), tuple(description["upper"]), tuple(description["resolution"]))


def write_json(data: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_field(field: ScalarGrid, prefix: str, title: str = ""):
    """Field CSV, JSON sidecar and PPM heatmap; returns the written paths"""
    csv_path = f"{prefix}.field.csv"
    field_frame(field).to_csv(csv_path, index=False)

    figure = HeatmapFigure(title)
    figure.update_plot(field)
    ppm_path = f"{prefix}.field.ppm"
    figure.save(ppm_path)

    sidecar = {
        "grid": grid_description(field.grid),
        "kind": field.kind,
        "provenance": field.provenance,
        "extrema": {"min": float(numpy.min(field.values)), "max": float(numpy.max(field.values)),
                    "argmin": [float(c) for c in field.argmin_point()],
                    "argmax": [float(c) for c in field.argmax_point()]},
        "color_scale": figure.color_scale(),
    }
    if field.grid.dimension == 3:
        sidecar["heatmap_slice_z"] = 0.0
        sidecar["z_spread"] = z_spread(field)
    json_path = f"{prefix}.field.json"
    write_json(sidecar, json_path)
    logging.info(f"Zapisano pole {field.kind}: {csv_path}")
    return [csv_path, json_path, ppm_path]


def mask_paths(prefix: str, lam: float):
    return f"{prefix}.mask-{lam:g}.csv", f"{prefix}.mask-{lam:g}.json"


def write_mask(mask: RegionMask, prefix: str):
    csv_path, json_path = mask_paths(prefix, mask.lam)
    indices = mask.indices()
    nodes = mask.nodes()
    columns = {}
    for d in range(mask.grid.dimension):
        columns[INDEX_AXES[d]] = indices[:, d]
    for d in range(mask.grid.dimension):
        columns[AXES[d]] = nodes[:, d]
    pandas.DataFrame(columns).to_csv(csv_path, index=False)
    write_json({"grid": grid_description(mask.grid), "lambda": mask.lam, "mode": mask.mode,
                "extremum": mask.extremum, "count": mask.count}, json_path)
    return [csv_path, json_path]


def read_mask(csv_path: str, json_path: Optional[str] = None) -> RegionMask:
    if json_path is None:
        json_path = csv_path[:-len(".csv")] + ".json" if csv_path.endswith(".csv") else csv_path + ".json"
    try:
        sidecar = read_json(json_path)
        grid = grid_from_description(sidecar["grid"])
        frame = pandas.read_csv(csv_path)
        lam, mode, extremum = float(sidecar["lambda"]), sidecar["mode"], float(sidecar["extremum"])
    except (pandas.errors.EmptyDataError, pandas.errors.ParserError, KeyError, TypeError, ValueError) as e:
        raise RegionError(f"Malformed mask {csv_path}: {e}")
    except TopologicalFieldError as e:
        raise RegionError(f"Malformed mask grid in {json_path}: {e.message}")

    membership = numpy.zeros(grid.shape, dtype=bool)
    if len(frame) > 0:
        missing = [INDEX_AXES[d] for d in range(grid.dimension) if INDEX_AXES[d] not in frame.columns]
        if missing:
            raise RegionError(f"Mask {csv_path} lacks index columns {missing}")
        index = []
        for d in range(grid.dimension):
            column = pandas.to_numeric(frame[INDEX_AXES[d]], errors="coerce").to_numpy(dtype=float)
            if not numpy.all(numpy.isfinite(column)) or numpy.any(column != numpy.round(column)):
                raise RegionError(f"Mask {csv_path} has non-integer indices in column {INDEX_AXES[d]}")
            if numpy.any(column < 0) or numpy.any(column >= grid.shape[d]):
                raise RegionError(f"Mask {csv_path} has indices outside the {grid.shape} grid")
            index.append(column.astype(int))
        membership[tuple(index)] = True
    return RegionMask(grid, membership, lam, mode, extremum)
