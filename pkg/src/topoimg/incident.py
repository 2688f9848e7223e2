"""
Incident field models: a least-squares Hankel series around the emitter,
the plane wave and the isotropic (outgoing H^1_0) wave anchored at the
receiver in front of the emitter, and the unit plane waves of the
calibrated 3D experiment.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from topoimg import specfun
from topoimg.geometry import Layout2D, wavenumber

DEFAULT_MODES = 14

# design matrices with a larger condition estimate are reported as rank deficient
MAX_CONDITION = 1e13

SINGULAR_DISTANCE = 1e-12


class IncidentModelError(Exception):
    """IncidentModelError"""
    def __init__(self, message):
        self.message = message


class RankDeficiencyError(IncidentModelError):
    """RankDeficiencyError"""
    def __init__(self, message, condition=None):
        self.condition = condition
        self.message = message


def _points(x, dim):
    xa = np.asarray(x, dtype=float)
    if xa.shape[-1] != dim:
        raise IncidentModelError("Expected {0}D points, got shape {1}".format(dim, xa.shape))
    return xa


def _distance(x, center):
    d = x - center
    return np.sqrt(np.sum(d * d, axis=-1))


def emitter_polar(x, emitter) -> Tuple[np.ndarray, np.ndarray]:
    """
        Emitter-centered polar coordinates (rho, theta)

        theta is signed and measured from the direction pointing from the
        emitter toward the origin; an emitter at the origin uses the x axis.
    """
    x = _points(x, 2)
    e = np.asarray(emitter, dtype=float)
    rel = x - e
    rho = np.sqrt(np.sum(rel * rel, axis=-1))
    norm_e = np.hypot(e[0], e[1])
    ref = -e / norm_e if norm_e > 0.0 else np.array([1.0, 0.0])
    cross = ref[0] * rel[..., 1] - ref[1] * rel[..., 0]
    dot = ref[0] * rel[..., 0] + ref[1] * rel[..., 1]
    return rho, np.arctan2(cross, dot)


#
# 2D models
#

@dataclass(frozen=True)
class HankelSeriesModel:
    """
    U(x) = a_0 H^1_0(k rho) + sum_n H^1_n(k rho) (a_n cos n theta + b_n sin n theta)

    coefficients are stored as [a_0, a_1, b_1, a_2, b_2, ...]
    """
    emitter: Tuple[float, float]
    kappa: float
    coefficients: Tuple[complex, ...]

    def __post_init__(self):
        object.__setattr__(self, "emitter", tuple(float(c) for c in self.emitter))
        coefficients = tuple(complex(c) for c in self.coefficients)
        object.__setattr__(self, "coefficients", coefficients)
        if len(coefficients) % 2 != 1:
            raise IncidentModelError("Hankel series needs 2 * n_modes + 1 coefficients")
        if not all(np.isfinite(c) for c in coefficients):
            raise IncidentModelError("Hankel series coefficients must be finite")

    @property
    def n_modes(self) -> int:
        return (len(self.coefficients) - 1) // 2

    @property
    def a(self) -> np.ndarray:
        return np.array(self.coefficients[0::2])

    @property
    def b(self) -> np.ndarray:
        return np.array((0j,) + self.coefficients[2::2])

    def evaluate(self, x) -> np.ndarray:
        rho, theta = emitter_polar(x, self.emitter)
        if np.any(rho < SINGULAR_DISTANCE):
            raise IncidentModelError("Hankel series evaluated at the emitter")
        basis = hankel_basis(self.kappa, rho, theta, self.n_modes)
        value = np.zeros(basis.shape[:-1], dtype=complex)
        for i, c in enumerate(self.coefficients):
            value = value + c * basis[..., i]
        return value


def hankel_basis(kappa, rho, theta, n_modes) -> np.ndarray:
    """Columns H^1_0, H^1_1 cos, H^1_1 sin, ... evaluated at (rho, theta)"""
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    columns = [np.asarray(specfun.hankel(1, 0, kappa * rho))]
    for n in range(1, n_modes + 1):
        h = np.asarray(specfun.hankel(1, n, kappa * rho))
        columns.append(h * np.cos(n * theta))
        columns.append(h * np.sin(n * theta))
    return np.stack(columns, axis=-1)


@dataclass(frozen=True)
class PlaneWaveModel:
    """
    Plane wave amplitude * exp(i k d.(x - anchor)); with a polarization
    vector it is the vector wave polarization * amplitude * exp(...).
    """
    direction: Tuple[float, ...]
    kappa: float
    amplitude: complex = 1.0 + 0.0j
    anchor: Optional[Tuple[float, ...]] = None
    polarization: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise IncidentModelError("Plane-wave direction must be a unit vector")
        object.__setattr__(self, "direction", tuple(float(c) for c in d))
        object.__setattr__(self, "amplitude", complex(self.amplitude))
        if self.anchor is None:
            object.__setattr__(self, "anchor", tuple(0.0 for _ in d))
        else:
            object.__setattr__(self, "anchor", tuple(float(c) for c in self.anchor))
        if self.polarization is not None:
            p = np.asarray(self.polarization, dtype=float)
            if p.shape != d.shape or abs(float(np.dot(p, d))) > 1e-12:
                raise IncidentModelError("Polarization must be orthogonal to the propagation direction")
            object.__setattr__(self, "polarization", tuple(float(c) for c in p))

    @property
    def dimension(self) -> int:
        return len(self.direction)

    def phase(self, x) -> np.ndarray:
        x = _points(x, self.dimension)
        rel = x - np.asarray(self.anchor)
        projection = sum(rel[..., i] * d for i, d in enumerate(self.direction))
        return np.exp(1j * self.kappa * projection)

    def evaluate(self, x) -> np.ndarray:
        value = self.amplitude * self.phase(x)
        if self.polarization is None:
            return value
        return value[..., None] * np.asarray(self.polarization)


@dataclass(frozen=True)
class IsotropicModel:
    """
    Outgoing cylindrical wave scale * H^1_0(k |x - emitter|). When built from an
    anchor sample it reproduces that sample exactly at the anchor point.
    """
    emitter: Tuple[float, float]
    kappa: float
    scale: complex
    anchor: Optional[Tuple[float, float]] = None
    anchor_value: Optional[complex] = None

    def __post_init__(self):
        object.__setattr__(self, "emitter", tuple(float(c) for c in self.emitter))
        object.__setattr__(self, "scale", complex(self.scale))
        if not np.isfinite(self.scale) or self.scale == 0:
            raise IncidentModelError("Isotropic wave scale must be finite and nonzero")

    @classmethod
    def from_anchor(cls, emitter, kappa, anchor, anchor_value) -> "IsotropicModel":
        e = np.asarray(emitter, dtype=float)
        h = complex(specfun.hankel(1, 0, kappa * float(_distance(np.asarray(anchor, dtype=float), e))))
        return cls(tuple(e), kappa, complex(anchor_value) / h, tuple(float(c) for c in anchor), complex(anchor_value))

    def evaluate(self, x) -> np.ndarray:
        x = _points(x, 2)
        e = np.asarray(self.emitter)
        rho = _distance(x, e)
        if np.any(rho < SINGULAR_DISTANCE):
            raise IncidentModelError("Isotropic wave evaluated at the emitter")
        h = np.asarray(specfun.hankel(1, 0, self.kappa * rho))
        if self.anchor is None:
            return self.scale * h
        h_a = complex(specfun.hankel(1, 0, self.kappa * float(_distance(np.asarray(self.anchor), e))))
        return self.anchor_value * (h * h_a.conjugate()) / (h_a.real * h_a.real + h_a.imag * h_a.imag)


def eval_incident_2d(model, x):
    """
        Incident field of a 2D model at one point or an array of points

        Examples
        --------
        >>> m = IsotropicModel((0.0, 0.0), 1.0, 1.0)
        >>> v = eval_incident_2d(m, (1.0, 0.0))
        >>> print(round(v.real, 10), round(v.imag, 10))
        0.7651976866 0.0882569642
    """
    if isinstance(model, PlaneWaveModel) and model.dimension != 2:
        raise IncidentModelError("eval_incident_2d needs a 2D model")
    value = model.evaluate(x)
    return complex(value) if np.ndim(value) == 0 else value


def eval_incident_3d(model: PlaneWaveModel, x) -> np.ndarray:
    if model.polarization is None or model.dimension != 3:
        raise IncidentModelError("eval_incident_3d needs a polarized 3D plane wave")
    return model.evaluate(x)


#
# fitting
#

@dataclass(frozen=True)
class HankelFit:
    model: HankelSeriesModel
    residual_norm: float
    condition: float


def fit_hankel_series(points, samples, emitter, kappa: float, n_modes: int = DEFAULT_MODES) -> HankelFit:
    """
        Least-squares fit of a Hankel series to incident-field samples

        The complex problem is stacked into its real and imaginary parts,
        columns are scaled to unit norm and the system is solved by QR with
        column pivoting.

        Parameters
        ----------
        points : array of shape (M, 2)
            sample positions, none of them at the emitter
        samples : complex array of shape (M,)
            measured incident field
        emitter : point
        kappa : float
            wavenumber in rad/m
        n_modes : integer
            highest angular order N_modes

        Returns
        -------
        fit : HankelFit
            model, residual norm ||A c - s|| and condition estimate of the scaled system
    """
    if n_modes < 0:
        raise IncidentModelError("n_modes must be non-negative")
    points = _points(points, 2).reshape(-1, 2)
    samples = np.asarray(samples, dtype=complex).reshape(-1)
    n_unknowns = 2 * n_modes + 1
    if len(samples) != len(points):
        raise IncidentModelError("Sample count does not match point count")
    if len(samples) < n_unknowns:
        raise IncidentModelError("Need at least {0} samples for {1} modes, got {2}".format(
            n_unknowns, n_modes, len(samples)))
    rho, theta = emitter_polar(points, emitter)
    if np.any(rho < SINGULAR_DISTANCE):
        raise IncidentModelError("Sample point coincides with the emitter")

    basis = hankel_basis(kappa, rho, theta, n_modes)
    scale = np.linalg.norm(basis, axis=0)
    if np.any(scale == 0.0):
        raise RankDeficiencyError("Design matrix has a zero column", np.inf)
    scaled = basis / scale
    system = np.block([[scaled.real, -scaled.imag], [scaled.imag, scaled.real]])
    rhs = np.concatenate([samples.real, samples.imag])

    q, r, perm = linalg.qr(system, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    condition = float(diag[0] / diag[-1]) if diag[-1] > 0.0 else np.inf
    if not condition < MAX_CONDITION:
        raise RankDeficiencyError("Rank-deficient design matrix (condition estimate {0:.3e})".format(condition),
                                  condition)
    solution = np.empty(system.shape[1])
    solution[perm] = linalg.solve_triangular(r, q.T @ rhs)
    coefficients = (solution[:n_unknowns] + 1j * solution[n_unknowns:]) / scale

    residual = float(np.linalg.norm(basis @ coefficients - samples))
    logging.info(f"hankel fit: {n_modes} modes, {len(samples)} samples, residual {residual:.3e}, "
                 f"condition {condition:.3e}")
    return HankelFit(HankelSeriesModel(tuple(emitter), kappa, tuple(coefficients)), residual, condition)


#
# models from dataset records
#

INCIDENT_KINDS = ("isotropic", "plane", "hankel")


def incident_model_for_record(dataset, record, kind: str = "isotropic", n_modes: int = DEFAULT_MODES):
    """
        Incident model for one (emitter, frequency) record

        2D models are anchored at the receiver in front of the emitter; 3D
        records get the unit plane wave travelling from the source toward
        the origin, with zero phase at the origin.
    """
    kappa = wavenumber(dataset.sweep.values[record.frequency_id])
    if dataset.dimension == 3:
        return source_plane_wave(dataset.layout, record.emitter_id, kappa, record.polarization)

    layout: Layout2D = dataset.layout
    emitter = layout.emitter_point(record.emitter_id)
    receivers = layout.receiver_points(record.emitter_id)
    if kind == "hankel":
        ids = record.receiver_ids
        return fit_hankel_series(receivers[ids], record.incident, emitter, kappa, n_modes).model
    front = layout.front_receiver_id()
    front_point = receivers[front]
    front_value = record.sample(front)[0]
    if kind == "isotropic":
        return IsotropicModel.from_anchor(emitter, kappa, front_point, front_value)
    if kind == "plane":
        d = front_point - emitter
        return PlaneWaveModel(tuple(d / np.linalg.norm(d)), kappa, front_value, tuple(front_point))
    raise IncidentModelError("Unknown incident model {0} (known: {1})".format(kind, ", ".join(INCIDENT_KINDS)))


def source_plane_wave(geometry, emitter_id: int, kappa: float, polarization: str = "PP") -> PlaneWaveModel:
    source, pol = geometry.source(emitter_id, polarization)
    direction = -source / np.linalg.norm(source)
    return PlaneWaveModel(tuple(direction), kappa, 1.0, None, tuple(pol))


#
# text records
#

def format_model(model: HankelSeriesModel) -> str:
    """Tab-separated record: emitter x, emitter y, kappa, then re/im pairs"""
    parts = [repr(model.emitter[0]), repr(model.emitter[1]), repr(float(model.kappa))]
    for c in model.coefficients:
        parts += [repr(c.real), repr(c.imag)]
    return "\t".join(parts)


def parse_model(line: str) -> HankelSeriesModel:
    values = [float(v) for v in line.strip().split("\t")]
    if len(values) < 5 or (len(values) - 3) % 2:
        raise IncidentModelError("Malformed Hankel series record")
    pairs = values[3:]
    coefficients = tuple(complex(pairs[i], pairs[i + 1]) for i in range(0, len(pairs), 2))
    return HankelSeriesModel((values[0], values[1]), values[2], coefficients)
