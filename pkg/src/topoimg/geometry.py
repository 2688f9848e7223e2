"""
Antenna layouts of the 2D and 3D Fresnel experiments, the spherical frame
used for 3D positions and polarizations, and frequency sweeps.

Angles are kept in degrees inside the layouts and converted to radians only
where a trigonometric function is evaluated.
"""

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

MU_0 = 4.0e-7 * np.pi
EPSILON_0 = 8.8541878128e-12

# measured field component of the 3D Fresnel receivers
UNIT_K = np.array([0.0, 0.0, 1.0])


class GeometryError(Exception):
    """GeometryError"""
    def __init__(self, message):
        self.message = message


def _steps(start, stop, step):
    count = int(round((stop - start) / step)) + 1
    return tuple(float(start + step * i) for i in range(count))


#
# frequencies
#

@dataclass(frozen=True)
class FrequencySweep:
    values: Tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", values)
        if len(values) == 0:
            raise GeometryError("Frequency sweep is empty")
        if not all(np.isfinite(v) and v > 0.0 for v in values):
            raise GeometryError("Frequencies must be finite and positive")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise GeometryError("Frequencies must be strictly increasing")

    @property
    def wavenumbers(self) -> Tuple[float, ...]:
        return tuple(wavenumber(v) for v in self.values)

    def __len__(self):
        return len(self.values)

    def index_of(self, frequency_hz: float, rel_tol: float = 1e-9) -> int:
        for i, v in enumerate(self.values):
            if abs(v - frequency_hz) <= rel_tol * v:
                return i
        raise GeometryError("Frequency {0} Hz is not part of the sweep".format(frequency_hz))


def wavenumber(frequency_hz: float) -> float:
    return 2.0 * np.pi * frequency_hz * np.sqrt(MU_0 * EPSILON_0)


#
# 2D layout
#

@dataclass(frozen=True)
class Layout2D:
    emitter_radius: float = 0.76
    receiver_radius: float = 0.72
    emitter_azimuths: Tuple[float, ...] = field(default_factory=lambda: _steps(0.0, 350.0, 10.0))
    receiver_offsets: Tuple[float, ...] = field(default_factory=lambda: _steps(60.0, 300.0, 5.0))

    def __post_init__(self):
        object.__setattr__(self, "emitter_azimuths", tuple(float(a) for a in self.emitter_azimuths))
        object.__setattr__(self, "receiver_offsets", tuple(float(a) for a in self.receiver_offsets))
        if self.emitter_radius <= 0.0 or self.receiver_radius <= 0.0:
            raise GeometryError("Layout radii must be strictly positive")
        if not self.emitter_azimuths or not self.receiver_offsets:
            raise GeometryError("Layout needs at least one emitter and one receiver")
        if any(not 0.0 < o < 360.0 for o in self.receiver_offsets):
            raise GeometryError("Receiver offsets must lie strictly inside (0, 360) degrees")

    dimension = 2

    @property
    def n_emitters(self) -> int:
        return len(self.emitter_azimuths)

    @property
    def n_receivers(self) -> int:
        return len(self.receiver_offsets)

    def emitter_point(self, emitter_id: int) -> np.ndarray:
        self._check_emitter(emitter_id)
        return emitter_position_2d(self, self.emitter_azimuths[emitter_id])

    def receiver_points(self, emitter_id: int) -> np.ndarray:
        self._check_emitter(emitter_id)
        theta = np.radians(self.emitter_azimuths[emitter_id] + np.asarray(self.receiver_offsets))
        return self.receiver_radius * np.column_stack((np.cos(theta), np.sin(theta)))

    def front_receiver_id(self) -> int:
        """Receiver diametrically opposite to the emitter (offset 180 degrees)"""
        offsets = np.asarray(self.receiver_offsets)
        best = int(np.argmin(np.abs(offsets - 180.0)))
        if abs(offsets[best] - 180.0) > 1e-9:
            raise GeometryError("Layout has no receiver at offset 180 degrees")
        return best

    def _check_emitter(self, emitter_id):
        if not 0 <= emitter_id < self.n_emitters:
            raise GeometryError("Emitter id {0} out of range 0..{1}".format(emitter_id, self.n_emitters - 1))


def emitter_position_2d(layout: Layout2D, azimuth: float) -> np.ndarray:
    if not any(abs(azimuth - a) <= 1e-9 for a in layout.emitter_azimuths):
        raise GeometryError("Unknown emitter azimuth {0} deg".format(azimuth))
    theta = np.radians(azimuth)
    return layout.emitter_radius * np.array([np.cos(theta), np.sin(theta)])


def receiver_position_2d(layout: Layout2D, emitter_azimuth: float, offset_index: int) -> np.ndarray:
    """Receiver position for a 1-based offset index"""
    if not 1 <= offset_index <= layout.n_receivers:
        raise GeometryError("Receiver index {0} out of range 1..{1}".format(offset_index, layout.n_receivers))
    theta = np.radians(emitter_azimuth + layout.receiver_offsets[offset_index - 1])
    return layout.receiver_radius * np.array([np.cos(theta), np.sin(theta)])


#
# 3D frame and layout
#

def spherical_frame(theta: float, phi: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
        Unit vectors (u_r, u_theta, u_phi) at azimuth theta and altitude phi

        Parameters
        ----------
        theta : float
            azimuth in degrees, taken modulo 360
        phi : float
            altitude in degrees measured from the positive vertical axis

        Returns
        -------
        (u_r, u_theta, u_phi) : tuple of numpy arrays of shape (3,)

        Examples
        --------
        >>> u_r, u_theta, u_phi = spherical_frame(0.0, 90.0)
        >>> print(np.round(u_r, 12), np.round(u_phi, 12))
        [1. 0. 0.] [ 0.  0. -1.]
    """
    t = np.radians(np.mod(theta, 360.0))
    p = np.radians(phi)
    ct, st, cp, sp = np.cos(t), np.sin(t), np.cos(p), np.sin(p)
    u_r = np.array([ct * sp, st * sp, cp])
    u_theta = np.array([-st, ct, 0.0])
    u_phi = np.array([ct * cp, st * cp, -sp])
    return u_r, u_theta, u_phi


@dataclass(frozen=True)
class Layout3D:
    sphere_radius: float = 1.796
    emitter_azimuths: Tuple[float, ...] = field(default_factory=lambda: _steps(40.0, 360.0, 40.0))
    emitter_altitudes: Tuple[float, ...] = field(default_factory=lambda: _steps(18.0, 162.0, 18.0))
    receiver_azimuth_offsets: Tuple[float, ...] = field(default_factory=lambda: _steps(50.0, 310.0, 10.0))
    receiver_altitude: float = 90.0

    def __post_init__(self):
        for name in ("emitter_azimuths", "emitter_altitudes", "receiver_azimuth_offsets"):
            object.__setattr__(self, name, tuple(float(a) for a in getattr(self, name)))
        if self.sphere_radius <= 0.0:
            raise GeometryError("Sphere radius must be strictly positive")
        if not self.emitter_azimuths or not self.emitter_altitudes or not self.receiver_azimuth_offsets:
            raise GeometryError("Layout needs at least one emitter and one receiver")

    dimension = 3

    # receivers are polarized along -k and report the k component
    receiver_polarization = -UNIT_K

    @property
    def n_emitters(self) -> int:
        return len(self.emitter_azimuths) * len(self.emitter_altitudes)

    @property
    def n_receivers(self) -> int:
        return len(self.receiver_azimuth_offsets)

    def emitter_pq(self, emitter_id: int) -> Tuple[int, int]:
        """1-based (p, q) indices of a flat emitter id"""
        if not 0 <= emitter_id < self.n_emitters:
            raise GeometryError("Emitter id {0} out of range 0..{1}".format(emitter_id, self.n_emitters - 1))
        n_q = len(self.emitter_altitudes)
        return emitter_id // n_q + 1, emitter_id % n_q + 1

    def emitter_id(self, p: int, q: int) -> int:
        self._check_pq(p, q)
        return (p - 1) * len(self.emitter_altitudes) + (q - 1)

    def emitter_angles(self, emitter_id: int) -> Tuple[float, float]:
        p, q = self.emitter_pq(emitter_id)
        return self.emitter_azimuths[p - 1], self.emitter_altitudes[q - 1]

    def source(self, emitter_id: int, polarization: str = "PP") -> Tuple[np.ndarray, np.ndarray]:
        theta, phi = self.emitter_angles(emitter_id)
        u_r, u_theta, u_phi = spherical_frame(theta, phi)
        if polarization == "PP":
            pol = u_phi
        elif polarization == "TP":
            pol = u_theta
        else:
            raise GeometryError("Unknown polarization mode {0}".format(polarization))
        return self.sphere_radius * u_r, pol

    def receiver_points(self, emitter_id: int) -> np.ndarray:
        theta, _ = self.emitter_angles(emitter_id)
        return np.array([self.sphere_radius * spherical_frame(theta + offset, self.receiver_altitude)[0]
                         for offset in self.receiver_azimuth_offsets])

    def probe_directions(self, emitter_id: int) -> np.ndarray:
        return np.tile(UNIT_K, (self.n_receivers, 1))

    def _check_pq(self, p, q):
        if not 1 <= p <= len(self.emitter_azimuths) or not 1 <= q <= len(self.emitter_altitudes):
            raise GeometryError("Emitter indices (p={0}, q={1}) out of range".format(p, q))


def positions_3d(layout: Layout3D, p: int, q: int):
    """
        Emitter point, receiver points and both polarization vectors for
        emitter indices p (azimuth) and q (altitude), both 1-based

        Returns
        -------
        (emitter, receivers, p_pp, p_tp) : emitter point (3,), receivers (N, 3),
        parallel polarization u_phi and transverse polarization u_theta
    """
    emitter_id = layout.emitter_id(p, q)
    theta, phi = layout.emitter_angles(emitter_id)
    u_r, u_theta, u_phi = spherical_frame(theta, phi)
    return layout.sphere_radius * u_r, layout.receiver_points(emitter_id), u_phi, u_theta


@dataclass(frozen=True)
class ExplicitGeometry3D:
    """
    Sources and probes given point by point. A reciprocity-swapped dataset
    lives on this geometry: source ids and probe ids index the tables, and
    every record may use any subset of the probes.
    """
    source_points: Tuple[Tuple[float, float, float], ...]
    source_polarizations: Tuple[Tuple[float, float, float], ...]
    probe_points: Tuple[Tuple[float, float, float], ...]
    probe_directions_table: Tuple[Tuple[float, float, float], ...]

    def __post_init__(self):
        if len(self.source_points) != len(self.source_polarizations):
            raise GeometryError("Every source needs a polarization vector")
        if len(self.probe_points) != len(self.probe_directions_table):
            raise GeometryError("Every probe needs a measurement direction")

    dimension = 3

    @property
    def n_emitters(self) -> int:
        return len(self.source_points)

    @property
    def n_receivers(self) -> int:
        return len(self.probe_points)

    def source(self, emitter_id: int, polarization: str = "PP") -> Tuple[np.ndarray, np.ndarray]:
        if not 0 <= emitter_id < self.n_emitters:
            raise GeometryError("Source id {0} out of range".format(emitter_id))
        return np.array(self.source_points[emitter_id]), np.array(self.source_polarizations[emitter_id])

    def receiver_points(self, emitter_id: int) -> np.ndarray:
        return np.array(self.probe_points, dtype=float).reshape(-1, 3)

    def probe_directions(self, emitter_id: int) -> np.ndarray:
        return np.array(self.probe_directions_table, dtype=float).reshape(-1, 3)
