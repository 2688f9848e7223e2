"""
Closed-form adjoint fields radiated from the receivers.

Each receiver j carries the residual weight r_j = E_inc_j - E_meas_j. In 2D
the field is sum_j r_j (i/4) H^2_0(k |x - x_j|); in 3D every receiver is a
dipole along its measurement direction d_j radiating through the conjugate
kernel g(r) = exp(-i k r) / (4 pi r):

    V(x) = -(1/k^2) sum_j r_j curl curl [g(|x - x_j|) d_j]

Receivers are summed in a fixed order, so values do not depend on how the
evaluation points are batched.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from topoimg import specfun

# no adjoint field is evaluated closer than this to a receiver (meters)
EXCLUSION_RADIUS = 1e-6


class AdjointSingularityError(Exception):
    """AdjointSingularityError"""
    def __init__(self, message):
        self.message = message


@dataclass(frozen=True, eq=False)
class ResidualSet:
    residuals: np.ndarray
    points: np.ndarray
    kappa: float
    directions: Optional[np.ndarray] = None

    def __post_init__(self):
        residuals = np.asarray(self.residuals, dtype=complex).reshape(-1)
        points = np.asarray(self.points, dtype=float)
        points = points.reshape(len(residuals), -1) if residuals.size else points.reshape(0, points.shape[-1])
        object.__setattr__(self, "residuals", residuals)
        object.__setattr__(self, "points", points)
        if points.shape[1] not in (2, 3):
            raise AdjointSingularityError("Receiver points must be 2D or 3D")
        if not np.all(np.isfinite(residuals)):
            raise AdjointSingularityError("Residuals must be finite")
        if points.shape[1] == 3:
            if self.directions is None:
                directions = np.tile([0.0, 0.0, 1.0], (len(residuals), 1))
            else:
                directions = np.asarray(self.directions, dtype=float).reshape(len(residuals), 3)
            object.__setattr__(self, "directions", directions)

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    def scaled(self, factor) -> "ResidualSet":
        return ResidualSet(self.residuals * factor, self.points, self.kappa, self.directions)

    @classmethod
    def from_record(cls, dataset, record, kappa: float) -> "ResidualSet":
        ids = record.receiver_ids
        points = dataset.layout.receiver_points(record.emitter_id)[ids]
        directions = None
        if dataset.dimension == 3:
            directions = dataset.layout.probe_directions(record.emitter_id)[ids]
        return cls(record.residuals(), points, kappa, directions)


def _check_exclusion(distance, j):
    if np.any(distance < EXCLUSION_RADIUS):
        raise AdjointSingularityError("Adjoint field evaluated within {0} m of receiver {1}".format(
            EXCLUSION_RADIUS, j))


def adjoint_2d(rs: ResidualSet, x) -> np.ndarray:
    """
        2D adjoint field sum_j r_j (i/4) H^2_0(k |x - x_j|)

        Parameters
        ----------
        rs : ResidualSet
            residual weights at 2D receiver points
        x : array of shape (..., 2)
            evaluation points

        Returns
        -------
        V : complex or complex array of shape (...)

        Examples
        --------
        >>> rs = ResidualSet([1.0], [[0.0, 0.0]], 1.0)
        >>> v = adjoint_2d(rs, (1.0, 0.0))
        >>> print(round(v.real, 10), round(v.imag, 10))
        0.0220642411 0.1912994217
    """
    if rs.dimension != 2:
        raise AdjointSingularityError("adjoint_2d needs 2D receivers")
    x = np.asarray(x, dtype=float)
    value = np.zeros(x.shape[:-1], dtype=complex)
    for j in range(len(rs.residuals)):
        rel = x - rs.points[j]
        distance = np.sqrt(np.sum(rel * rel, axis=-1))
        _check_exclusion(distance, j)
        value = value + rs.residuals[j] * (0.25j * np.asarray(specfun.hankel(2, 0, rs.kappa * distance)))
    return complex(value) if value.ndim == 0 else value


def curl_curl_kernel(kappa, rel, direction, sign: int = -1) -> np.ndarray:
    """
        curl curl [g(|R|) d] with g(r) = exp(sign i k r) / (4 pi r), R = rel

        sign = -1 is the conjugate kernel of the adjoint problem, sign = +1
        the outgoing one. Closed form [k^2 g + g'/r] d + [g'' - g'/r] (R^ . d) R^;
        d may be complex.
    """
    s = 1j * sign * kappa
    r = np.sqrt(np.sum(rel * rel, axis=-1))
    rhat = rel / r[..., None]
    g = np.exp(s * r) / (4.0 * np.pi * r)
    g1 = g * (s - 1.0 / r)
    g2 = g * (-kappa * kappa - 2.0 * s / r + 2.0 / (r * r))
    along = rhat[..., 0] * direction[0] + rhat[..., 1] * direction[1] + rhat[..., 2] * direction[2]
    return (kappa * kappa * g + g1 / r)[..., None] * direction + ((g2 - g1 / r) * along)[..., None] * rhat


def adjoint_3d(rs: ResidualSet, x) -> np.ndarray:
    """
        3D adjoint field -(1/k^2) sum_j r_j curl curl [g(|x - x_j|) d_j]

        Parameters
        ----------
        rs : ResidualSet
            residual weights at 3D probe points with measurement directions d_j
        x : array of shape (..., 3)

        Returns
        -------
        V : complex array of shape (..., 3)
    """
    if rs.dimension != 3:
        raise AdjointSingularityError("adjoint_3d needs 3D receivers")
    x = np.asarray(x, dtype=float)
    value = np.zeros(x.shape, dtype=complex)
    factor = -1.0 / (rs.kappa * rs.kappa)
    for j in range(len(rs.residuals)):
        rel = x - rs.points[j]
        _check_exclusion(np.sqrt(np.sum(rel * rel, axis=-1)), j)
        value = value + (factor * rs.residuals[j]) * curl_curl_kernel(rs.kappa, rel, rs.directions[j])
    return value
