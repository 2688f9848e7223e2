"""
Analytic forward solutions used as ground truth: the modal (Mie) series of a
circular cylinder hit by a plane or cylindrical wave, and a Born point
scatterer re-radiating through the outgoing dyadic kernel in 3D.

Everything here assumes the e^{-i omega t} convention; scattered parts are
outgoing (H^1_n in 2D, exp(i k r) / (4 pi r) in 3D).
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from topoimg import specfun
from topoimg.adjoint import curl_curl_kernel
from topoimg.dataset import CONVENTION_WORKING, Dataset, ExperimentRecord
from topoimg.geometry import FrequencySweep, Layout2D, Layout3D, wavenumber
from topoimg.incident import IsotropicModel, PlaneWaveModel, source_plane_wave
from topoimg.regions import DiskShape, PointShape, ShapeTruth
from topoimg.topofield import MaterialSpec, asymptotic_factor

# modal series are truncated once |b_N| <= TRUNCATION_TOL * max |b_n|
TRUNCATION_TOL = 1e-14
EXTRA_ORDERS = 16

BOUNDARY_TOL = 1e-12

BORN_MAX_AMPLITUDE = 0.1


class OracleError(Exception):
    """OracleError"""
    def __init__(self, message):
        self.message = message


class NonConvergentSeriesError(OracleError):
    """NonConvergentSeriesError"""
    def __init__(self, message):
        self.message = message


#
# scatterers
#

@dataclass(frozen=True)
class DiskScatterer:
    center: tuple
    radius: float
    material: MaterialSpec

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if len(self.center) != 2:
            raise OracleError("Disk center must be a 2D point")
        if not self.radius > 0.0:
            raise OracleError("Disk radius must be positive")

    def to_shape(self) -> DiskShape:
        return DiskShape(center=list(self.center), radius=self.radius, material=self.material.short())


@dataclass(frozen=True)
class BornPointScatterer3D:
    location: tuple
    amplitude: complex = 0.05

    def __post_init__(self):
        object.__setattr__(self, "location", tuple(float(c) for c in self.location))
        object.__setattr__(self, "amplitude", complex(self.amplitude))
        if len(self.location) != 3:
            raise OracleError("Point scatterer location must be a 3D point")
        if abs(self.amplitude) > BORN_MAX_AMPLITUDE:
            raise OracleError("Born amplitude {0} exceeds {1}".format(abs(self.amplitude), BORN_MAX_AMPLITUDE))

    def to_shape(self) -> PointShape:
        return PointShape(location=list(self.location), amplitude=[self.amplitude.real, self.amplitude.imag])


def truth_from_scatterers(scatterers) -> ShapeTruth:
    return ShapeTruth(primitives=[s.to_shape() for s in scatterers])


#
# modal series
#

def _polar(x, center):
    rel = np.asarray(x, dtype=float) - np.asarray(center)
    return np.hypot(rel[..., 0], rel[..., 1]), np.arctan2(rel[..., 1], rel[..., 0])


def incident_coefficients(incident, center, kappa: float, orders) -> np.ndarray:
    """
        Coefficients A_n of the incident field sum_n A_n J_n(k rho) e^{i n phi}
        about a center

        Plane waves expand by Jacobi-Anger, isotropic waves by Graf's
        addition theorem (valid inside the circle through the emitter).
    """
    orders = np.asarray(orders)
    center = np.asarray(center, dtype=float)
    if isinstance(incident, PlaneWaveModel):
        d = np.asarray(incident.direction)
        phi_d = math.atan2(d[1], d[0])
        factor = incident.amplitude * np.exp(1j * kappa * float(np.dot(d, center - np.asarray(incident.anchor))))
        return factor * (1j ** (orders % 4)) * np.exp(-1j * orders * phi_d)
    if isinstance(incident, IsotropicModel):
        rel = np.asarray(incident.emitter) - center
        r_e = float(np.hypot(rel[0], rel[1]))
        phi_e = math.atan2(rel[1], rel[0])
        h = np.array([complex(specfun.hankel1_signed(int(n), kappa * r_e)) for n in orders])
        return incident.scale * h * np.exp(-1j * orders * phi_e)
    raise OracleError("Modal expansion needs a plane or isotropic incident wave")


@dataclass(frozen=True, eq=False)
class MieSolution:
    disk: DiskScatterer
    kappa: float
    orders: np.ndarray
    incident_coefficients: np.ndarray
    b: np.ndarray
    c: Optional[np.ndarray]

    @property
    def n_max(self) -> int:
        return int(self.orders[-1])

    @property
    def interior_kappa(self) -> float:
        return self.kappa * math.sqrt(self.disk.material.permittivity)

    def cross_sections(self):
        """(scattering, extinction) sums; equal for lossless scatterers"""
        scattering = float(np.sum(np.abs(self.b) ** 2))
        extinction = float(-np.sum(self.b * np.conj(self.incident_coefficients)).real)
        return scattering, extinction

    def _series(self, coefficients, radial, kappa, rho, phi):
        value = np.zeros(np.shape(rho), dtype=complex)
        for n, coef in zip(self.orders, coefficients):
            value = value + coef * radial(int(n), kappa * rho) * np.exp(1j * n * phi)
        return value

    def exterior(self, x):
        rho, phi = _polar(x, self.disk.center)
        return self._series(self.b, specfun.hankel1_signed, self.kappa, rho, phi)

    def interior(self, x):
        if self.c is None:
            return np.zeros(np.shape(x)[:-1], dtype=complex)
        rho, phi = _polar(x, self.disk.center)
        rho = np.maximum(rho, 1e-300)
        return self._series(self.c, specfun.bessel_j_signed, self.interior_kappa, rho, phi)

    def incident_series(self, x):
        rho, phi = _polar(x, self.disk.center)
        return self._series(self.incident_coefficients, specfun.bessel_j_signed, self.kappa,
                            np.maximum(rho, 1e-300), phi)

    def total_field(self, x, side: str = "exterior"):
        """Total field from the modal series on the given side of the boundary"""
        if side == "exterior":
            return self.incident_series(x) + self.exterior(x)
        return self.interior(x)

    def radial_derivative(self, x, side: str = "exterior"):
        """d/d rho of the total field, from the differentiated modal series"""
        rho, phi = _polar(x, self.disk.center)
        value = np.zeros(np.shape(rho), dtype=complex)
        if side == "exterior":
            for n, a, b in zip(self.orders, self.incident_coefficients, self.b):
                n = int(n)
                radial = (a * specfun.bessel_jp_signed(n, self.kappa * rho)
                          + b * specfun.hankel1p_signed(n, self.kappa * rho))
                value = value + self.kappa * radial * np.exp(1j * n * phi)
            return value
        if self.c is None:
            return value
        k_in = self.interior_kappa
        for n, c in zip(self.orders, self.c):
            value = value + k_in * c * specfun.bessel_jp_signed(int(n), k_in * rho) * np.exp(1j * n * phi)
        return value


def _modal_coefficients(disk, kappa, orders, a):
    x = kappa * disk.radius
    b = np.zeros(len(orders), dtype=complex)
    if disk.material.kind == "conducting":
        for i, n in enumerate(orders):
            n = int(n)
            b[i] = -a[i] * specfun.bessel_j_signed(n, x) / specfun.hankel1_signed(n, x)
        return b, None
    m = math.sqrt(disk.material.permittivity)
    c = np.zeros(len(orders), dtype=complex)
    for i, n in enumerate(orders):
        n = int(n)
        j, jp = specfun.bessel_j_signed(n, x), specfun.bessel_jp_signed(n, x)
        h, hp = specfun.hankel1_signed(n, x), specfun.hankel1p_signed(n, x)
        jm, jpm = specfun.bessel_j_signed(n, m * x), specfun.bessel_jp_signed(n, m * x)
        denominator = jm * hp - m * jpm * h
        b[i] = a[i] * (m * jpm * j - jm * jp) / denominator
        c[i] = a[i] * (j * hp - jp * h) / denominator
    return b, c


def mie_solve(disk: DiskScatterer, incident, kappa: float, n_max: Optional[int] = None) -> MieSolution:
    """
        Modal solution for a disk hit by a plane or isotropic wave

        Dirichlet disks get b_n = -A_n J_n(ka) / H^1_n(ka); dielectric disks
        enforce continuity of the field and of its normal derivative order
        by order. Without an explicit n_max the series starts at
        ceil(ka) + 16 and grows until its last coefficients fall below the
        truncation tolerance.

        Parameters
        ----------
        disk : DiskScatterer
        incident : PlaneWaveModel or IsotropicModel
        kappa : float
            exterior wavenumber in rad/m
        n_max : integer, optional
            fixed truncation order

        Returns
        -------
        solution : MieSolution
    """
    if isinstance(incident, IsotropicModel):
        distance = math.hypot(incident.emitter[0] - disk.center[0], incident.emitter[1] - disk.center[1])
        if distance <= disk.radius:
            raise OracleError("Emitter lies inside the disk")
    n = n_max if n_max is not None else int(math.ceil(kappa * disk.radius)) + EXTRA_ORDERS
    while True:
        if n > specfun.MAX_ORDER:
            raise NonConvergentSeriesError("Modal series did not converge up to order {0}".format(specfun.MAX_ORDER))
        orders = np.arange(-n, n + 1)
        a = incident_coefficients(incident, disk.center, kappa, orders)
        b, c = _modal_coefficients(disk, kappa, orders, a)
        peak = float(np.max(np.abs(b)))
        tail = max(abs(b[0]), abs(b[-1]))
        if n_max is not None or tail <= TRUNCATION_TOL * peak:
            break
        n += 4
    return MieSolution(disk, kappa, orders, a, b, c)


def scattered_field(sol: MieSolution, disk: DiskScatterer, x):
    """
        Scattered field outside the disk, interior field inside it

        Points closer than 1e-12 m to the boundary are rejected.
    """
    x = np.asarray(x, dtype=float)
    rho, _ = _polar(x, disk.center)
    if np.any(np.abs(rho - disk.radius) <= BOUNDARY_TOL):
        raise OracleError("Point on the disk boundary, side is ambiguous")
    outside = rho > disk.radius
    if np.all(outside):
        return sol.exterior(x)
    if not np.any(outside):
        return sol.interior(x)
    return np.where(outside, sol.exterior(x), sol.interior(x))


#
# 3D Born scatterer
#

def born_scattered(scatterer: BornPointScatterer3D, incident: PlaneWaveModel, kappa: float, points) -> np.ndarray:
    """
        Field re-radiated by a point scatterer: amplitude (4 pi / k) G(x, s) U(s)
        with G = (1/k^2) curl curl [exp(i k r) / (4 pi r)]
    """
    s = np.asarray(scatterer.location)
    polarization = incident.evaluate(s)
    rel = np.asarray(points, dtype=float) - s
    factor = scatterer.amplitude * 4.0 * np.pi / kappa / (kappa * kappa)
    return factor * curl_curl_kernel(kappa, rel, polarization, sign=1)


#
# synthetic datasets
#

def _synthetic_incident_2d(kind, emitter, kappa):
    if kind == "isotropic":
        return IsotropicModel(tuple(emitter), kappa, 1.0)
    if kind == "plane":
        direction = -np.asarray(emitter) / np.linalg.norm(emitter)
        return PlaneWaveModel(tuple(direction), kappa, 1.0)
    raise OracleError("Synthetic incident wave must be 'isotropic' or 'plane'")


def _add_noise(samples, noise, rng):
    """samples: dict key -> (incident, total, scattered) arrays; mutates totals"""
    if noise <= 0.0 or not samples:
        return
    scattered = np.concatenate([v[2] for v in samples.values()])
    rms = float(np.sqrt(np.mean(np.abs(scattered) ** 2)))
    sigma = noise * rms / math.sqrt(2.0)
    for key in sorted(samples):
        inc, tot, sca = samples[key]
        perturbation = rng.standard_normal(len(tot)) + 1j * rng.standard_normal(len(tot))
        samples[key] = (inc, tot + sigma * perturbation, sca)


def synth_dataset_2d(disks: Sequence[DiskScatterer], layout: Layout2D, sweep: FrequencySweep,
                     incident: str = "isotropic", noise: float = 0.0, seed: int = 0) -> Dataset:
    """
        Synthetic 2D dataset from the modal series

        One disk is exact; several disks are superposed without multiple
        scattering and the dataset metadata carries a warning. Noise is
        complex circular Gaussian with standard deviation `noise` times the
        RMS scattered field of each frequency.
    """
    for disk in disks:
        for emitter_id in range(layout.n_emitters):
            antennas = np.vstack([layout.emitter_point(emitter_id)[None, :], layout.receiver_points(emitter_id)])
            rho, _ = _polar(antennas, disk.center)
            if np.any(rho <= disk.radius):
                raise OracleError("Disk at {0} intersects an antenna".format(disk.center))
    rng = np.random.default_rng(seed)
    records = {}
    for freq_id, frequency in enumerate(sweep.values):
        kappa = wavenumber(frequency)
        samples = {}
        for emitter_id in range(layout.n_emitters):
            emitter = layout.emitter_point(emitter_id)
            receivers = layout.receiver_points(emitter_id)
            model = _synthetic_incident_2d(incident, emitter, kappa)
            inc = model.evaluate(receivers)
            scattered = np.zeros(len(receivers), dtype=complex)
            for disk in disks:
                scattered = scattered + scattered_field(mie_solve(disk, model, kappa), disk, receivers)
            samples[emitter_id] = (inc, inc + scattered, scattered)
        _add_noise(samples, noise, rng)
        for emitter_id, (inc, tot, _) in samples.items():
            rows = tuple((j, inc[j], tot[j]) for j in range(len(inc)))
            rec = ExperimentRecord(emitter_id, freq_id, rows)
            records[rec.key] = rec
    metadata = {"source": "oracle-mie", "incident": incident, "noise": repr(float(noise)), "seed": str(seed)}
    if len(disks) > 1:
        metadata["warning"] = "multiple disks superposed without multiple scattering"
        logging.warning("synthesizing several disks by single-scattering superposition")
    logging.info(f"synthesized 2D dataset: {len(records)} records, {len(disks)} disks, noise {noise}")
    return Dataset(2, layout, sweep, records, CONVENTION_WORKING, metadata)


def synth_dataset_3d(scatterers: Sequence[BornPointScatterer3D], layout: Layout3D, sweep: FrequencySweep,
                     polarization: str = "PP", noise: float = 0.0, seed: int = 0) -> Dataset:
    """
        Synthetic 3D dataset of Born point scatterers

        Records hold the components along the probe direction of the
        incident and total fields.
    """
    if polarization != "PP":
        raise OracleError("Only parallel polarization (PP) can be synthesized")
    rng = np.random.default_rng(seed)
    records = {}
    for freq_id, frequency in enumerate(sweep.values):
        kappa = wavenumber(frequency)
        samples = {}
        for emitter_id in range(layout.n_emitters):
            model = source_plane_wave(layout, emitter_id, kappa, polarization)
            receivers = layout.receiver_points(emitter_id)
            directions = layout.probe_directions(emitter_id)
            field_inc = model.evaluate(receivers)
            field_sca = np.zeros_like(field_inc)
            for s in scatterers:
                field_sca = field_sca + born_scattered(s, model, kappa, receivers)
            inc = np.sum(field_inc * directions, axis=-1)
            sca = np.sum(field_sca * directions, axis=-1)
            samples[emitter_id] = (inc, inc + sca, sca)
        _add_noise(samples, noise, rng)
        for emitter_id, (inc, tot, _) in samples.items():
            rows = tuple((j, inc[j], tot[j]) for j in range(len(inc)))
            rec = ExperimentRecord(emitter_id, freq_id, rows, polarization)
            records[rec.key] = rec
    metadata = {"source": "oracle-born", "noise": repr(float(noise)), "seed": str(seed)}
    logging.info(f"synthesized 3D dataset: {len(records)} records, {len(scatterers)} point scatterers")
    return Dataset(3, layout, sweep, records, CONVENTION_WORKING, metadata)


#
# misfit and small-inclusion asymptotics
#

def misfit(record: ExperimentRecord, predicted) -> float:
    """
        Half the squared 2-norm of predicted minus measured values

        Examples
        --------
        >>> rec = ExperimentRecord(0, 0, ((0, 0j, 0j), (1, 0j, 0j)))
        >>> print(misfit(rec, [1.0, 1j]))
        1.0
    """
    predicted = np.asarray(predicted, dtype=complex).reshape(-1)
    measured = record.total
    if len(predicted) != len(measured):
        raise OracleError("Expected {0} predicted values, got {1}".format(len(measured), len(predicted)))
    difference = predicted - measured
    return 0.5 * float(np.sum(difference.real ** 2 + difference.imag ** 2))


def asymptotic_ratio(incident, receivers, measured, point, eps: float, mat: MaterialSpec, kappa: float) -> float:
    """
        Misfit change caused by nucleating a disk of radius eps at point,
        divided by the small-inclusion scaling f(eps)

        Predictions are the incident field plus the exact modal scattered
        field of the small disk; the difference of the two misfits is formed
        algebraically to avoid cancellation.
    """
    receivers = np.asarray(receivers, dtype=float)
    disk = DiskScatterer(tuple(point), eps, mat)
    sol = mie_solve(disk, incident, kappa)
    scattered = scattered_field(sol, disk, receivers)
    base = incident.evaluate(receivers) - np.asarray(measured, dtype=complex)
    delta = float(np.sum((np.conj(base) * scattered).real)) + 0.5 * float(np.sum(np.abs(scattered) ** 2))
    return delta / asymptotic_factor(eps, 2, mat.kind, kappa)
