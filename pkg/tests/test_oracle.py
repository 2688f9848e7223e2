import numpy as np
import pytest

from topoimg.dataset import ExperimentRecord
from topoimg.geometry import FrequencySweep, Layout2D, Layout3D, wavenumber
from topoimg.incident import IsotropicModel, PlaneWaveModel, source_plane_wave
from topoimg.oracle import (BornPointScatterer3D, DiskScatterer, NonConvergentSeriesError, OracleError,
                            born_scattered, incident_coefficients, mie_solve, misfit, scattered_field,
                            synth_dataset_2d, synth_dataset_3d, truth_from_scatterers)
from topoimg.topofield import MaterialSpec

CENTER = (0.01, 0.02)
RADIUS = 0.015
CONDUCTING = MaterialSpec("conducting")
DIELECTRIC = MaterialSpec("dielectric", 3.0)


def _boundary(n=64, radius=RADIUS, center=CENTER):
    phi = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    return np.column_stack((center[0] + radius * np.cos(phi), center[1] + radius * np.sin(phi)))


def _plane(kappa):
    return PlaneWaveModel((0.6, -0.8), kappa, 1.0 - 0.5j, (0.3, 0.1))


class TestModalSeries:
    @pytest.mark.parametrize("ka", [0.5, 2.4048, 8.0])
    def test_dirichlet_boundary_condition(self, ka):
        kappa = ka / RADIUS
        disk = DiskScatterer(CENTER, RADIUS, CONDUCTING)
        sol = mie_solve(disk, _plane(kappa), kappa)
        total = sol.total_field(_boundary(), "exterior")
        assert np.max(np.abs(total)) <= 1e-8 * abs(_plane(kappa).amplitude)

    @pytest.mark.parametrize("ka", [0.5, 3.0, 8.0])
    def test_dielectric_transmission_conditions(self, ka):
        kappa = ka / RADIUS
        disk = DiskScatterer(CENTER, RADIUS, DIELECTRIC)
        sol = mie_solve(disk, _plane(kappa), kappa)
        points = _boundary()
        outside = sol.total_field(points, "exterior")
        inside = sol.total_field(points, "interior")
        scale = np.max(np.abs(outside))
        assert np.max(np.abs(outside - inside)) <= 1e-8 * scale
        jump = sol.radial_derivative(points, "exterior") - sol.radial_derivative(points, "interior")
        assert np.max(np.abs(jump)) <= 1e-8 * kappa * scale

    def test_isotropic_incidence_on_dielectric_disk(self):
        kappa = wavenumber(4e9)
        disk = DiskScatterer(CENTER, RADIUS, DIELECTRIC)
        sol = mie_solve(disk, IsotropicModel((0.76, 0.0), kappa, 1.0), kappa)
        points = _boundary()
        outside = sol.total_field(points, "exterior")
        assert np.max(np.abs(outside - sol.total_field(points, "interior"))) <= 1e-8 * np.max(np.abs(outside))

    @pytest.mark.parametrize("incident", [
        lambda k: PlaneWaveModel((0.6, -0.8), k, 1.0 - 0.5j, (0.3, 0.1)),
        lambda k: IsotropicModel((-0.5, 0.4), k, 0.7j),
    ])
    def test_incident_expansion_reproduces_model(self, incident):
        kappa = wavenumber(6e9)
        model = incident(kappa)
        disk = DiskScatterer(CENTER, 0.05, DIELECTRIC)
        sol = mie_solve(disk, model, kappa)
        points = np.array([[0.02, 0.03], [0.0, 0.0], [0.05, 0.05]])
        np.testing.assert_allclose(sol.incident_series(points), model.evaluate(points), rtol=1e-10, atol=1e-12)

    def test_plane_wave_coefficients(self):
        coefficients = incident_coefficients(PlaneWaveModel((1.0, 0.0), 5.0), (0.0, 0.0), 5.0, [-2, -1, 0, 1, 2])
        np.testing.assert_allclose(coefficients, [-1.0, -1j, 1.0, 1j, -1.0], atol=1e-15)

    @pytest.mark.parametrize("material", [CONDUCTING, DIELECTRIC])
    def test_truncation_is_stable(self, material):
        kappa = wavenumber(8e9)
        disk = DiskScatterer(CENTER, RADIUS, material)
        model = _plane(kappa)
        auto = mie_solve(disk, model, kappa)
        wider = mie_solve(disk, model, kappa, auto.n_max + 8)
        receivers = Layout2D().receiver_points(0)
        reference = scattered_field(wider, disk, receivers)
        np.testing.assert_allclose(scattered_field(auto, disk, receivers), reference,
                                   rtol=1e-10, atol=1e-10 * np.max(np.abs(reference)))

    @pytest.mark.parametrize("material", [CONDUCTING, DIELECTRIC])
    def test_scattering_equals_extinction(self, material):
        kappa = wavenumber(6e9)
        disk = DiskScatterer(CENTER, 0.04, material)
        for model in (_plane(kappa), IsotropicModel((0.0, 0.76), kappa, 1.0)):
            scattering, extinction = mie_solve(disk, model, kappa).cross_sections()
            assert scattering == pytest.approx(extinction, rel=1e-10)

    def test_series_that_cannot_converge(self):
        disk = DiskScatterer((0.0, 0.0), 1.0, CONDUCTING)
        with pytest.raises(NonConvergentSeriesError):
            mie_solve(disk, PlaneWaveModel((1.0, 0.0), 100.0), 100.0)

    def test_scattered_field_sides(self):
        kappa = wavenumber(4e9)
        disk = DiskScatterer(CENTER, RADIUS, DIELECTRIC)
        sol = mie_solve(disk, _plane(kappa), kappa)
        with pytest.raises(OracleError):
            scattered_field(sol, disk, _boundary(4))
        points = np.array([[CENTER[0], CENTER[1]], [0.3, 0.0]])
        values = scattered_field(sol, disk, points)
        assert values[0] == pytest.approx(sol.interior(points[:1])[0], rel=1e-14)
        assert values[1] == pytest.approx(sol.exterior(points[1:])[0], rel=1e-14)

    def test_emitter_inside_disk(self):
        disk = DiskScatterer((0.0, 0.0), 0.1, CONDUCTING)
        with pytest.raises(OracleError):
            mie_solve(disk, IsotropicModel((0.05, 0.0), 40.0, 1.0), 40.0)

    def test_invalid_scatterers(self):
        with pytest.raises(OracleError):
            DiskScatterer((0.0, 0.0), 0.0, CONDUCTING)
        with pytest.raises(OracleError):
            DiskScatterer((0.0, 0.0, 0.0), 0.1, CONDUCTING)
        with pytest.raises(OracleError):
            BornPointScatterer3D((0.0, 0.0, 0.0), 0.2)


class TestBorn:
    def test_linear_in_amplitude(self):
        kappa = wavenumber(4.25e9)
        model = source_plane_wave(Layout3D(), 10, kappa)
        points = Layout3D().receiver_points(10)
        small = born_scattered(BornPointScatterer3D((0.02, 0.01, -0.015), 0.01), model, kappa, points)
        large = born_scattered(BornPointScatterer3D((0.02, 0.01, -0.015), 0.04), model, kappa, points)
        np.testing.assert_allclose(large, 4.0 * small, rtol=1e-13)

    def test_far_field_decay_and_transversality(self):
        kappa = 100.0
        model = PlaneWaveModel((1.0, 0.0, 0.0), kappa, 1.0, None, (0.0, 0.0, 1.0))
        scatterer = BornPointScatterer3D((0.0, 0.0, 0.0))
        near = born_scattered(scatterer, model, kappa, np.array([0.0, 100.0, 0.0]))
        far = born_scattered(scatterer, model, kappa, np.array([0.0, 200.0, 0.0]))
        assert np.linalg.norm(far) / np.linalg.norm(near) == pytest.approx(0.5, rel=1e-3)
        assert abs(far[1]) <= 1e-3 * np.linalg.norm(far)


class TestSynthesis:
    layout = Layout2D(emitter_azimuths=(0.0, 120.0, 240.0))
    sweep = FrequencySweep((2e9, 4e9))
    disk = DiskScatterer((0.03, -0.02), 0.015, DIELECTRIC)

    def test_noise_free_totals_are_incident_plus_scattered(self):
        d = synth_dataset_2d([self.disk], self.layout, self.sweep)
        kappa = wavenumber(4e9)
        model = IsotropicModel(tuple(self.layout.emitter_point(1)), kappa, 1.0)
        receivers = self.layout.receiver_points(1)
        expected = scattered_field(mie_solve(self.disk, model, kappa), self.disk, receivers)
        rec = d.record(1, 1)
        np.testing.assert_allclose(rec.total - rec.incident, expected, rtol=1e-12, atol=1e-15)
        assert d.metadata["source"] == "oracle-mie"
        assert "warning" not in d.metadata

    def test_noise_is_seeded(self):
        a = synth_dataset_2d([self.disk], self.layout, self.sweep, noise=0.05, seed=7)
        b = synth_dataset_2d([self.disk], self.layout, self.sweep, noise=0.05, seed=7)
        c = synth_dataset_2d([self.disk], self.layout, self.sweep, noise=0.05, seed=8)
        for key in a.keys():
            np.testing.assert_array_equal(a.records[key].total, b.records[key].total)
        assert any(np.any(a.records[k].total != c.records[k].total) for k in a.keys())

    def test_noise_level(self):
        clean = synth_dataset_2d([self.disk], self.layout, self.sweep)
        noisy = synth_dataset_2d([self.disk], self.layout, self.sweep, noise=0.5, seed=3)
        for f in range(2):
            keys = [k for k in clean.keys() if k[1] == f]
            scattered = np.concatenate([clean.records[k].total - clean.records[k].incident for k in keys])
            noise = np.concatenate([noisy.records[k].total - clean.records[k].total for k in keys])
            ratio = np.sqrt(np.mean(np.abs(noise) ** 2)) / np.sqrt(np.mean(np.abs(scattered) ** 2))
            assert ratio == pytest.approx(0.5, rel=0.3)

    def test_disk_on_antenna_rejected(self):
        with pytest.raises(OracleError):
            synth_dataset_2d([DiskScatterer((0.72, 0.0), 0.05, CONDUCTING)], self.layout, self.sweep)

    def test_several_disks_are_flagged(self):
        other = DiskScatterer((-0.04, 0.03), 0.01, CONDUCTING)
        d = synth_dataset_2d([self.disk, other], self.layout, FrequencySweep((2e9,)), incident="plane")
        assert "warning" in d.metadata
        truth = truth_from_scatterers([self.disk, other])
        assert len(truth.primitives) == 2

    def test_unknown_incident(self):
        with pytest.raises(OracleError):
            synth_dataset_2d([self.disk], self.layout, self.sweep, incident="hankel")

    def test_three_dimensional_dataset(self):
        layout = Layout3D()
        scatterer = BornPointScatterer3D((0.02, 0.01, -0.015))
        d = synth_dataset_3d([scatterer], layout, FrequencySweep((3e9,)))
        assert d.dimension == 3
        assert len(d.records) == 81
        rec = d.record(76, 0)
        assert rec.polarization == "PP"
        kappa = wavenumber(3e9)
        model = source_plane_wave(layout, 76, kappa)
        receivers = layout.receiver_points(76)
        expected = born_scattered(scatterer, model, kappa, receivers)[:, 2]
        np.testing.assert_allclose(rec.total - rec.incident, expected, rtol=1e-12, atol=1e-15)
        with pytest.raises(OracleError):
            synth_dataset_3d([scatterer], layout, FrequencySweep((3e9,)), "TP")


def test_misfit():
    rec = ExperimentRecord(0, 0, ((0, 1.0, 1.0 + 1j), (1, 1.0, 2.0)))
    assert misfit(rec, [1.0 + 1j, 2.0]) == 0.0
    assert misfit(rec, [0.0, 0.0]) == pytest.approx(0.5 * (2.0 + 4.0))
    with pytest.raises(OracleError):
        misfit(rec, [0.0])
