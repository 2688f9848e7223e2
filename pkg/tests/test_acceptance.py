"""
End-to-end imaging runs on the full Fresnel layouts with synthetic data from
the analytic forward solutions. Slow; deselect with -m "not slow".
"""

import numpy as np
import pytest

from topoimg.adjoint import ResidualSet
from topoimg.dataset import ExperimentRecord
from topoimg.geometry import FrequencySweep, Layout2D, Layout3D, wavenumber
from topoimg.incident import IsotropicModel
from topoimg.oracle import (BornPointScatterer3D, DiskScatterer, asymptotic_ratio, synth_dataset_2d,
                            synth_dataset_3d, truth_from_scatterers)
from topoimg.regions import extract, score
from topoimg.topofield import (KIND_TD, KIND_TE, InspectionGrid, MaterialSpec, combine_frequencies,
                               evaluate_frequency_fields, evaluate_grid, td_point_2d, z_spread)

pytestmark = pytest.mark.slow

CENTER = (0.03, -0.02)
RADIUS = 0.015
DIELECTRIC = MaterialSpec("dielectric", 3.0)
CONDUCTING = MaterialSpec("conducting")
SWEEP_2D = FrequencySweep((2e9, 4e9, 6e9, 8e9))

POINT = (0.02, 0.01, -0.015)
SWEEP_3D = FrequencySweep((3e9, 4.25e9, 5.5e9))


@pytest.fixture(scope="module")
def dielectric_disk():
    disk = DiskScatterer(CENTER, RADIUS, DIELECTRIC)
    return disk, synth_dataset_2d([disk], Layout2D(), SWEEP_2D)


@pytest.fixture(scope="module")
def conducting_disk():
    disk = DiskScatterer(CENTER, RADIUS, CONDUCTING)
    return disk, synth_dataset_2d([disk], Layout2D(), SWEEP_2D)


@pytest.fixture(scope="module")
def born_point():
    scatterer = BornPointScatterer3D(POINT)
    return scatterer, synth_dataset_3d([scatterer], Layout3D(), SWEEP_3D)


def _inside_disk(point):
    return np.hypot(point[0] - CENTER[0], point[1] - CENTER[1]) <= RADIUS


def _assert_nested(field):
    wide = extract(field, 0.7)
    narrow = extract(field, 0.9)
    assert not np.any(narrow.membership & ~wide.membership)


#
# small-inclusion asymptotics
#

def test_misfit_change_is_proportional_to_topological_derivative(dielectric_disk, record_property):
    _, dataset = dielectric_disk
    layout = dataset.layout
    frequency = 4e9
    f = dataset.sweep.index_of(frequency)
    kappa = wavenumber(frequency)
    wavelength = 2.0 * np.pi / kappa
    points = [(0.0, 0.0), CENTER]

    derivative = []
    for x in points:
        total = 0.0
        for e in range(layout.n_emitters):
            record = dataset.record(e, f)
            model = IsotropicModel(tuple(layout.emitter_point(e)), kappa, 1.0)
            total += td_point_2d(model, ResidualSet.from_record(dataset, record, kappa), DIELECTRIC, x)
        derivative.append(total)
    derivative = np.array(derivative)

    deviations = []
    constants = []
    for eps in (wavelength / 40.0, wavelength / 80.0):
        ratios = []
        for x in points:
            total = 0.0
            for e in range(layout.n_emitters):
                record = dataset.record(e, f)
                model = IsotropicModel(tuple(layout.emitter_point(e)), kappa, 1.0)
                receivers = layout.receiver_points(e)[record.receiver_ids]
                total += asymptotic_ratio(model, receivers, record.total, x, eps, DIELECTRIC, kappa)
            ratios.append(total)
        ratios = np.array(ratios)
        constant = float(np.dot(ratios, derivative) / np.dot(derivative, derivative))
        constants.append(constant)
        deviations.append(float(np.max(np.abs(ratios - constant * derivative) / np.abs(ratios))))

    record_property("asymptotic_constant", constants[-1])
    record_property("asymptotic_constant_over_kappa_squared", constants[-1] / kappa ** 2)
    assert deviations[1] <= 0.25
    assert deviations[1] < deviations[0]
    # the 2D derivative omits the k^2 of the small-inclusion expansion
    assert constants[-1] / kappa ** 2 == pytest.approx(1.0, rel=0.1)


#
# 2D localization
#

def test_dielectric_disk_is_localized(dielectric_disk):
    disk, dataset = dielectric_disk
    field = evaluate_grid(dataset, DIELECTRIC, InspectionGrid.default(2))
    assert _inside_disk(field.argmin_point())
    result = score(extract(field, 0.7), truth_from_scatterers([disk]))
    assert np.hypot(result.mask_centroid[0] - CENTER[0], result.mask_centroid[1] - CENTER[1]) <= 0.010
    _assert_nested(field)


def test_dielectric_disk_with_noise(dielectric_disk):
    disk, _ = dielectric_disk
    noisy = synth_dataset_2d([disk], Layout2D(), SWEEP_2D, noise=0.05, seed=1)
    field = evaluate_grid(noisy, DIELECTRIC, InspectionGrid.default(2))
    assert _inside_disk(field.argmin_point())


@pytest.mark.parametrize("kind", [KIND_TD, KIND_TE])
def test_conducting_disk_is_localized(conducting_disk, kind):
    disk, dataset = conducting_disk
    field = evaluate_grid(dataset, CONDUCTING, InspectionGrid.default(2), kind=kind)
    if kind == KIND_TD:
        assert _inside_disk(field.argmin_point())
    assert score(extract(field, 0.7), truth_from_scatterers([disk])).jaccard >= 0.2
    _assert_nested(field)


def test_rescaled_residuals_leave_combined_field_unchanged(dielectric_disk):
    _, dataset = dielectric_disk
    grid = InspectionGrid((-0.1, -0.1), (0.1, 0.1), (40, 40))
    rescaled = []
    for record in dataset.records.values():
        if record.frequency_id == 2:
            rows = tuple((j, inc, inc - 10.0 * (inc - tot)) for j, inc, tot in record.rows)
            record = ExperimentRecord(record.emitter_id, record.frequency_id, rows)
        rescaled.append(record)
    base = evaluate_grid(dataset, DIELECTRIC, grid)
    scaled = evaluate_grid(dataset.with_records(rescaled), DIELECTRIC, grid)
    assert np.max(np.abs(scaled.values - base.values)) <= 1e-12 * np.max(np.abs(base.values))


#
# 3D pipeline
#

def _cell_offsets(grid, point, target):
    return np.abs(np.array(grid.nearest_index(point)) - np.array(grid.nearest_index(target)))


def test_born_scatterer_minimizes_derivative(born_point):
    _, dataset = born_point
    grid = InspectionGrid.default(3)
    field = evaluate_grid(dataset, DIELECTRIC, grid, threads=4)
    assert np.all(_cell_offsets(grid, field.argmin_point(), POINT) <= 2)


def test_energy_is_even_in_z(born_point, record_property):
    _, dataset = born_point
    grid = InspectionGrid.default(3)
    fields = evaluate_frequency_fields(dataset, DIELECTRIC, grid, kind=KIND_TE, threads=4)
    field = combine_frequencies(fields, KIND_TE)
    mirrored = field.values[:, :, ::-1]
    assert np.max(np.abs(field.values - mirrored)) <= 1e-12 * np.max(field.values)
    record_property("te_z_spread", z_spread(field))


def test_reciprocal_energy_peaks_at_scatterer(born_point):
    _, dataset = born_point
    grid = InspectionGrid.default(3)
    field = evaluate_grid(dataset, DIELECTRIC, grid, kind=KIND_TE, reciprocity=True, threads=4)
    offsets = _cell_offsets(grid, field.argmax_point(), POINT)
    assert np.all(offsets[:2] <= 2)
    assert offsets[2] <= 3
