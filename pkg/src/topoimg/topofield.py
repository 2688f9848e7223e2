"""
Topological derivative (TD) and topological energy (TE) indicator fields.

Per-experiment formulas, the emitter average, the normalized multi-frequency
combination and the evaluation of all of it on a regular inspection grid.
TD fields take large negative values at likely scatterer locations, TE
fields large positive ones.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from topoimg.adjoint import ResidualSet, adjoint_2d, adjoint_3d
from topoimg.dataset import CONVENTION_WORKING, Dataset, reciprocity_swap
from topoimg.geometry import wavenumber
from topoimg.incident import DEFAULT_MODES, incident_model_for_record

KIND_TD = "TD"
KIND_TE = "TE"

# nodes per evaluation chunk; fixed so results do not depend on the worker count
CHUNK_SIZE = 4096


class TopologicalFieldError(Exception):
    """TopologicalFieldError"""
    def __init__(self, message):
        self.message = message


class ZeroNormalizerError(TopologicalFieldError):
    """ZeroNormalizerError"""
    def __init__(self, message, frequency_index=None):
        self.frequency_index = frequency_index
        self.message = message


#
# grids
#

@dataclass(frozen=True)
class InspectionGrid:
    """
    Regular grid over an axis-aligned box, nodes at cell centers.

    Node i along an axis sits at center + (i - (n - 1) / 2) * h with
    h = (upper - lower) / n, so a box symmetric about the origin gives
    exactly antisymmetric node coordinates.
    """
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    resolution: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        object.__setattr__(self, "resolution", tuple(int(v) for v in self.resolution))
        if not len(self.lower) == len(self.upper) == len(self.resolution) or len(self.lower) not in (2, 3):
            raise TopologicalFieldError("Grid bounds and resolution must describe a 2D or 3D box")
        if any(n < 2 for n in self.resolution):
            raise TopologicalFieldError("Grid resolution must be at least 2 per axis")
        if any(not u > l for l, u in zip(self.lower, self.upper)):
            raise TopologicalFieldError("Grid bounds are degenerate")

    @classmethod
    def default(cls, dimension: int) -> "InspectionGrid":
        if dimension == 2:
            return cls((-0.1, -0.1), (0.1, 0.1), (100, 100))
        return cls((-0.1, -0.1, -0.1), (0.1, 0.1, 0.1), (41, 41, 41))

    @property
    def dimension(self) -> int:
        return len(self.resolution)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.resolution

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple((u - l) / n for l, u, n in zip(self.lower, self.upper, self.resolution))

    @property
    def cell_measure(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self) -> List[np.ndarray]:
        result = []
        for l, u, n, h in zip(self.lower, self.upper, self.resolution, self.spacing):
            center = 0.5 * (l + u)
            result.append(center + (np.arange(n) - 0.5 * (n - 1)) * h)
        return result

    def nodes(self) -> np.ndarray:
        """Node coordinates, array of shape (*resolution, dimension)"""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def nearest_index(self, point) -> Tuple[int, ...]:
        index = []
        for axis, p in zip(self.axes(), point):
            index.append(int(np.argmin(np.abs(axis - p))))
        return tuple(index)

    def contains(self, point) -> bool:
        return all(l <= p <= u for l, p, u in zip(self.lower, point, self.upper))


@dataclass(frozen=True, eq=False)
class ScalarGrid:
    grid: InspectionGrid
    values: np.ndarray
    kind: str
    provenance: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise TopologicalFieldError("Values of shape {0} do not match grid {1}".format(values.shape, self.grid.shape))
        if not np.all(np.isfinite(values)):
            raise TopologicalFieldError("Indicator field contains non-finite values")
        if self.kind not in (KIND_TD, KIND_TE):
            raise TopologicalFieldError("Unknown field kind {0}".format(self.kind))
        if self.kind == KIND_TE and np.any(values < 0.0):
            raise TopologicalFieldError("Topological energy must be non-negative")
        object.__setattr__(self, "values", values)

    def argmin_point(self) -> np.ndarray:
        index = np.unravel_index(int(np.argmin(self.values)), self.values.shape)
        return self.grid.nodes()[index]

    def argmax_point(self) -> np.ndarray:
        index = np.unravel_index(int(np.argmax(self.values)), self.values.shape)
        return self.grid.nodes()[index]


#
# materials
#

@dataclass(frozen=True)
class MaterialSpec:
    kind: str
    permittivity: Optional[float] = None

    def __post_init__(self):
        if self.kind == "dielectric":
            if self.permittivity is None or not np.isfinite(self.permittivity) or self.permittivity <= 0.0:
                raise TopologicalFieldError("Dielectric material needs a finite positive permittivity")
            object.__setattr__(self, "permittivity", float(self.permittivity))
        elif self.kind == "conducting":
            if self.permittivity is not None:
                raise TopologicalFieldError("Conducting material carries no permittivity")
        else:
            raise TopologicalFieldError("Unknown material kind {0}".format(self.kind))

    @classmethod
    def parse(cls, text: str) -> "MaterialSpec":
        """
            Material from its short form

            Examples
            --------
            >>> MaterialSpec.parse("diel:3")
            MaterialSpec(kind='dielectric', permittivity=3.0)
            >>> MaterialSpec.parse("cond")
            MaterialSpec(kind='conducting', permittivity=None)
        """
        name, _, value = text.strip().partition(":")
        if name in ("diel", "dielectric"):
            try:
                return cls("dielectric", float(value))
            except ValueError:
                raise TopologicalFieldError("Malformed permittivity in '{0}'".format(text))
        if name in ("cond", "conducting") and not value:
            return cls("conducting")
        raise TopologicalFieldError("Unknown material '{0}'".format(text))

    def short(self) -> str:
        return "cond" if self.kind == "conducting" else "diel:{0!r}".format(self.permittivity)


#
# per-experiment formulas
#

def _bilinear(u, v, vector):
    """u . conj(v), summed over the vector axis in a fixed order"""
    if vector:
        return u[..., 0] * np.conj(v[..., 0]) + u[..., 1] * np.conj(v[..., 1]) + u[..., 2] * np.conj(v[..., 2])
    return u * np.conj(v)


def _squared_norm(u, vector):
    if vector:
        return (u[..., 0].real ** 2 + u[..., 0].imag ** 2 + u[..., 1].real ** 2 + u[..., 1].imag ** 2
                + u[..., 2].real ** 2 + u[..., 2].imag ** 2)
    return u.real ** 2 + u.imag ** 2


def td_from_fields_2d(u, v, mat: MaterialSpec):
    """
        2D TD from incident and adjoint values

        dielectric: (1 - eps_d) Re(u conj v), conducting: Re(u conj v)

        Examples
        --------
        >>> print(td_from_fields_2d(1.0 + 0j, 1.0 + 1j, MaterialSpec("conducting")))
        1.0
    """
    u = np.asarray(u, dtype=complex)
    v = np.asarray(v, dtype=complex)
    product = _bilinear(u, v, False).real
    if mat.kind == "dielectric":
        product = (1.0 - mat.permittivity) * product
    return float(product) if product.ndim == 0 else product


def td_from_fields_3d(u, v, mat: MaterialSpec, kappa: float):
    """-3 Re(k^2 (eps_r - 1) / (eps_r + 2) u . conj v), dielectric targets only"""
    if mat.kind != "dielectric":
        raise TopologicalFieldError("3D topological derivative is defined for dielectric targets only")
    if mat.permittivity == -2.0:
        raise TopologicalFieldError("Permittivity -2 makes the 3D contrast factor singular")
    u = np.asarray(u, dtype=complex)
    v = np.asarray(v, dtype=complex)
    contrast = kappa * kappa * (mat.permittivity - 1.0) / (mat.permittivity + 2.0)
    value = -3.0 * (contrast * _bilinear(u, v, True)).real
    return float(value) if value.ndim == 0 else value


def te_from_fields(u, v, vector: bool = False):
    """|u|^2 |v|^2, Euclidean norms over the last axis when vector is set"""
    u = np.asarray(u, dtype=complex)
    v = np.asarray(v, dtype=complex)
    value = _squared_norm(u, vector) * _squared_norm(v, vector)
    return float(value) if value.ndim == 0 else value


def _evaluator(obj, dimension):
    if isinstance(obj, ResidualSet):
        return (lambda x: adjoint_2d(obj, x)) if dimension == 2 else (lambda x: adjoint_3d(obj, x))
    if hasattr(obj, "evaluate"):
        return obj.evaluate
    return obj


def td_point_2d(incident, adjoint, mat: MaterialSpec, x):
    """
        2D topological derivative at x

        Parameters
        ----------
        incident : incident model or callable x -> U(x)
        adjoint : ResidualSet or callable x -> V(x)
        mat : MaterialSpec
        x : point or array of points of shape (..., 2)
    """
    x = np.asarray(x, dtype=float)
    return td_from_fields_2d(_evaluator(incident, 2)(x), _evaluator(adjoint, 2)(x), mat)


def td_point_3d(incident, adjoint, mat: MaterialSpec, kappa: float, x):
    x = np.asarray(x, dtype=float)
    return td_from_fields_3d(_evaluator(incident, 3)(x), _evaluator(adjoint, 3)(x), mat, kappa)


def te_point(incident, adjoint, x):
    x = np.asarray(x, dtype=float)
    dimension = x.shape[-1]
    return te_from_fields(_evaluator(incident, dimension)(x), _evaluator(adjoint, dimension)(x), dimension == 3)


def asymptotic_factor(eps: float, dimension: int, kind: str, kappa: Optional[float] = None) -> float:
    """
        Scaling f(eps) of the small-inclusion expansion of the misfit

        Examples
        --------
        >>> print(round(asymptotic_factor(0.01, 2, "dielectric"), 12))
        0.000314159265
        >>> print(round(asymptotic_factor(0.1, 2, "conducting", 1.0), 7))
        2.7287527
    """
    if not eps > 0.0:
        raise TopologicalFieldError("Inclusion radius must be positive")
    if dimension == 3:
        return 4.0 / 3.0 * np.pi * eps ** 3
    if dimension != 2:
        raise TopologicalFieldError("Dimension must be 2 or 3")
    if kind == "dielectric":
        return np.pi * eps ** 2
    if kind == "conducting":
        if kappa is None or not kappa * eps < 1.0:
            raise TopologicalFieldError("2D conducting factor requires kappa * eps < 1")
        return -2.0 * np.pi / np.log(kappa * eps)
    raise TopologicalFieldError("Unknown material kind {0}".format(kind))


#
# combinations
#

def _check_compatible(fields):
    if not fields:
        raise TopologicalFieldError("Nothing to combine")
    first = fields[0]
    for f in fields[1:]:
        if f.grid != first.grid:
            raise TopologicalFieldError("Cannot combine fields sampled on different grids")
        if f.kind != first.kind:
            raise TopologicalFieldError("Cannot combine TD and TE fields")


def combine_emitters(fields: Sequence[ScalarGrid]) -> ScalarGrid:
    """Nodewise mean of single-experiment fields at one frequency"""
    fields = list(fields)
    _check_compatible(fields)
    total = fields[0].values.copy()
    for f in fields[1:]:
        total = total + f.values
    provenance = dict(fields[0].provenance)
    provenance["emitters"] = [e for f in fields for e in f.provenance.get("emitters", [])]
    return ScalarGrid(fields[0].grid, total / len(fields), fields[0].kind, provenance)


def combine_frequencies(fields: Sequence[ScalarGrid], kind: Optional[str] = None,
                        skip_degenerate: bool = False) -> ScalarGrid:
    """
        Normalized mean over frequencies

        Every TD field is divided by the modulus of its (strictly negative)
        grid minimum, every TE field by its (strictly positive) grid maximum,
        and the normalized fields are averaged.

        Parameters
        ----------
        fields : list of ScalarGrid
            one field per frequency, same grid and kind
        kind : "TD" or "TE", optional
            checked against the fields when given
        skip_degenerate : bool
            drop fields without a usable normalizer (with a warning) instead of raising

        Returns
        -------
        combined : ScalarGrid
    """
    fields = list(fields)
    _check_compatible(fields)
    kind = kind or fields[0].kind
    if kind != fields[0].kind:
        raise TopologicalFieldError("Expected {0} fields, got {1}".format(kind, fields[0].kind))

    kept, skipped = [], []
    for index, f in enumerate(fields):
        label = f.provenance.get("frequency_index", index)
        normalizer = float(np.min(f.values)) if kind == KIND_TD else float(np.max(f.values))
        degenerate = not normalizer < 0.0 if kind == KIND_TD else not normalizer > 0.0
        if degenerate:
            if not skip_degenerate:
                raise ZeroNormalizerError("Degenerate {0} field at frequency index {1}: no usable normalizer".format(
                    kind, label), label)
            logging.warning(f"skipping degenerate {kind} field at frequency index {label}")
            skipped.append(label)
            continue
        kept.append(f.values / abs(normalizer))
    if not kept:
        raise ZeroNormalizerError("All {0} fields are degenerate".format(kind))

    total = kept[0].copy()
    for values in kept[1:]:
        total = total + values
    provenance = dict(fields[0].provenance)
    provenance.pop("frequency_index", None)
    provenance["frequencies"] = [f.provenance.get("frequency_hz") for f in fields]
    provenance["skipped_frequencies"] = skipped
    return ScalarGrid(fields[0].grid, total / len(kept), kind, provenance)


#
# grid evaluation
#

@dataclass(frozen=True)
class _Experiment:
    incident: object
    residuals: ResidualSet
    kappa: float


def _experiment_values(experiment: _Experiment, nodes, mat, kind, dimension):
    u = experiment.incident.evaluate(nodes)
    v = adjoint_2d(experiment.residuals, nodes) if dimension == 2 else adjoint_3d(experiment.residuals, nodes)
    if kind == KIND_TE:
        return te_from_fields(u, v, dimension == 3)
    if dimension == 2:
        return td_from_fields_2d(u, v, mat)
    return td_from_fields_3d(u, v, mat, experiment.kappa)


def _evaluate_chunk(experiments, nodes, mat, kind, dimension):
    return np.stack([_experiment_values(e, nodes, mat, kind, dimension) for e in experiments])


def evaluate_frequency_fields(dataset: Dataset, mat: MaterialSpec, grid: Optional[InspectionGrid] = None,
                              emitters: Optional[Sequence[int]] = None,
                              frequencies: Optional[Sequence[int]] = None, kind: str = KIND_TD,
                              incident: str = "isotropic", n_modes: int = DEFAULT_MODES,
                              reciprocity: bool = False, threads: int = 1,
                              progress: bool = False) -> List[ScalarGrid]:
    """
        Emitter-averaged indicator field for every selected frequency

        Nodes are split into chunks of fixed size and evaluated by a pool of
        `threads` workers; every node value is computed by the same sequence
        of operations, so the result does not depend on the worker count.

        Parameters
        ----------
        dataset : Dataset
            in the e^{-i omega t} convention
        mat : MaterialSpec
        grid : InspectionGrid, default grid of the dataset dimension when omitted
        emitters, frequencies : lists of dataset ids, all when omitted
        kind : "TD" or "TE"
        incident : "isotropic", "plane" or "hankel" (2D only)
        reciprocity : bool
            exchange emitters and receivers first (3D only)
        threads : integer
            number of workers
        progress : bool
            show a progress bar over experiments

        Returns
        -------
        fields : list of ScalarGrid, in frequency order
    """
    if dataset.convention != CONVENTION_WORKING:
        raise TopologicalFieldError("Dataset must be converted to the e^(-iwt) convention first")
    if kind not in (KIND_TD, KIND_TE):
        raise TopologicalFieldError("Unknown field kind {0}".format(kind))
    grid = grid or InspectionGrid.default(dataset.dimension)
    if grid.dimension != dataset.dimension:
        raise TopologicalFieldError("Grid dimension does not match dataset dimension")
    if dataset.dimension == 3 and kind == KIND_TD and mat.kind != "dielectric":
        raise TopologicalFieldError("3D topological derivative is defined for dielectric targets only")
    if reciprocity and dataset.dimension != 3:
        raise TopologicalFieldError("Reciprocity applies to 3D datasets only")
    if threads < 1:
        raise TopologicalFieldError("Thread count must be at least 1")

    emitters = sorted(emitters) if emitters is not None else dataset.emitter_ids()
    frequencies = sorted(frequencies) if frequencies is not None else dataset.frequency_ids()
    if not emitters or not frequencies:
        raise TopologicalFieldError("Emitter and frequency subsets must be nonempty")
    pol = "-" if dataset.dimension == 2 else "PP"
    missing = [(e, f) for f in frequencies for e in emitters if (e, f, pol) not in dataset.records]
    if missing:
        raise TopologicalFieldError("Missing records for (emitter, frequency): {0}".format(
            ", ".join(str(m) for m in missing[:10]) + (" ..." if len(missing) > 10 else "")))

    source = dataset
    if reciprocity:
        selected = [dataset.records[(e, f, pol)] for f in frequencies for e in emitters]
        source = reciprocity_swap(dataset.with_records(selected))
        emitters = source.emitter_ids()

    nodes = grid.nodes().reshape(-1, grid.dimension)
    chunks = [nodes[i:i + CHUNK_SIZE] for i in range(0, len(nodes), CHUNK_SIZE)]
    start = time.perf_counter()
    logging.info(f"evaluating {kind} on {len(nodes)} nodes, {len(emitters)} emitters, "
                 f"{len(frequencies)} frequencies, {threads} threads")

    fields = []
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for freq_id in tqdm(frequencies, desc="frequencies", disable=not progress):
            kappa = wavenumber(dataset.sweep.values[freq_id])
            experiments = []
            for emitter_id in emitters:
                if (emitter_id, freq_id, pol) not in source.records:
                    continue
                record = source.records[(emitter_id, freq_id, pol)]
                experiments.append(_Experiment(incident_model_for_record(source, record, incident, n_modes),
                                               ResidualSet.from_record(source, record, kappa), kappa))
            if not experiments:
                raise TopologicalFieldError("No experiments at frequency index {0}".format(freq_id))
            parts = list(pool.map(lambda c: _evaluate_chunk(experiments, c, mat, kind, grid.dimension), chunks))
            per_experiment = np.concatenate(parts, axis=1)
            singles = [ScalarGrid(grid, per_experiment[i].reshape(grid.shape), kind,
                                  {"emitters": [e], "frequency_index": freq_id,
                                   "frequency_hz": dataset.sweep.values[freq_id]})
                       for i, e in enumerate(emitters) if (e, freq_id, pol) in source.records]
            fields.append(combine_emitters(singles))

    logging.info(f"{kind} evaluation finished in {time.perf_counter() - start:.2f} s")
    for f in fields:
        f.provenance.update({"material": mat.short(), "incident": incident, "reciprocity": reciprocity,
                             "dataset": dataset.metadata.get("id", "")})
    return fields


def evaluate_grid(dataset: Dataset, mat: MaterialSpec, grid: Optional[InspectionGrid] = None,
                  emitters: Optional[Sequence[int]] = None, frequencies: Optional[Sequence[int]] = None,
                  kind: str = KIND_TD, incident: str = "isotropic", n_modes: int = DEFAULT_MODES,
                  reciprocity: bool = False, threads: int = 1, skip_degenerate: bool = False,
                  progress: bool = False) -> ScalarGrid:
    """Multi-frequency indicator field: emitter averages combined over frequencies"""
    fields = evaluate_frequency_fields(dataset, mat, grid, emitters, frequencies, kind, incident, n_modes,
                                       reciprocity, threads, progress)
    return combine_frequencies(fields, kind, skip_degenerate)


#
# 3D helpers
#

def slice_z(field_3d: ScalarGrid, z: float = 0.0) -> ScalarGrid:
    """Horizontal slice of a 3D field at the node layer nearest to z"""
    if field_3d.grid.dimension != 3:
        raise TopologicalFieldError("slice_z needs a 3D field")
    axis_z = field_3d.grid.axes()[2]
    k = int(np.argmin(np.abs(axis_z - z)))
    g = field_3d.grid
    plane = InspectionGrid(g.lower[:2], g.upper[:2], g.resolution[:2])
    provenance = dict(field_3d.provenance)
    provenance["z"] = float(axis_z[k])
    return ScalarGrid(plane, field_3d.values[:, :, k], field_3d.kind, provenance)


def z_spread(field_3d: ScalarGrid) -> float:
    """Largest variation along z of a 3D field, relative to its largest modulus"""
    if field_3d.grid.dimension != 3:
        raise TopologicalFieldError("z_spread needs a 3D field")
    scale = float(np.max(np.abs(field_3d.values)))
    if scale == 0.0:
        return 0.0
    spread = np.max(field_3d.values, axis=2) - np.min(field_3d.values, axis=2)
    return float(np.max(spread)) / scale
