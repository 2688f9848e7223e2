import numpy as np
import pytest

from topoimg import topofield
from topoimg.adjoint import ResidualSet
from topoimg.dataset import CONVENTION_CONJUGATE, Dataset, ExperimentRecord
from topoimg.geometry import FrequencySweep, Layout2D, wavenumber
from topoimg.incident import IsotropicModel, PlaneWaveModel
from topoimg.topofield import (KIND_TD, KIND_TE, InspectionGrid, MaterialSpec, ScalarGrid, TopologicalFieldError,
                               ZeroNormalizerError, asymptotic_factor, combine_emitters, combine_frequencies,
                               evaluate_frequency_fields, evaluate_grid, slice_z, td_from_fields_2d,
                               td_from_fields_3d, td_point_2d, td_point_3d, te_from_fields, te_point, z_spread)

DIELECTRIC = MaterialSpec("dielectric", 3.0)
CONDUCTING = MaterialSpec("conducting")
SMALL_GRID = InspectionGrid((-0.1, -0.1), (0.1, 0.1), (12, 12))


def _dataset(layout=Layout2D(emitter_azimuths=(0.0, 90.0, 180.0, 270.0)), frequencies=(2e9, 4e9)):
    """Isotropic incident data with a smooth synthetic scattered part"""
    rng = np.random.default_rng(21)
    sweep = FrequencySweep(frequencies)
    records = {}
    for f, freq in enumerate(frequencies):
        kappa = wavenumber(freq)
        for e in range(layout.n_emitters):
            model = IsotropicModel(tuple(layout.emitter_point(e)), kappa, 1.0 + 0.5j)
            inc = model.evaluate(layout.receiver_points(e))
            tot = inc * (1.0 + 0.1 * (rng.standard_normal(len(inc)) + 1j * rng.standard_normal(len(inc))))
            rec = ExperimentRecord(e, f, tuple((j, inc[j], tot[j]) for j in range(len(inc))))
            records[rec.key] = rec
    return Dataset(2, layout, sweep, records, metadata={"id": "unit"})


def _field(values, kind=KIND_TD, grid=SMALL_GRID, **provenance):
    return ScalarGrid(grid, np.asarray(values, dtype=float), kind, dict(provenance))


class TestInspectionGrid:
    def test_default_grids(self):
        g2 = InspectionGrid.default(2)
        g3 = InspectionGrid.default(3)
        assert g2.shape == (100, 100)
        assert g3.shape == (41, 41, 41)
        assert g2.spacing == pytest.approx((0.002, 0.002))
        assert g2.cell_measure == pytest.approx(4e-6)
        assert g2.nodes().shape == (100, 100, 2)

    def test_axes_are_exactly_antisymmetric(self):
        for grid in (InspectionGrid.default(2), InspectionGrid.default(3)):
            for axis in grid.axes():
                np.testing.assert_array_equal(axis, -axis[::-1])
        assert InspectionGrid.default(3).axes()[2][20] == 0.0

    def test_nearest_index_and_contains(self):
        grid = InspectionGrid.default(2)
        assert grid.nearest_index((0.031, -0.021)) == (65, 39)
        assert grid.contains((0.1, -0.1))
        assert not grid.contains((0.1001, 0.0))

    @pytest.mark.parametrize("lower, upper, resolution", [
        ((-0.1, -0.1), (0.1, 0.1), (1, 10)),
        ((0.1, -0.1), (0.1, 0.1), (10, 10)),
        ((-0.1,), (0.1,), (10,)),
        ((-0.1, -0.1), (0.1, 0.1, 0.1), (10, 10)),
    ])
    def test_invalid(self, lower, upper, resolution):
        with pytest.raises(TopologicalFieldError):
            InspectionGrid(lower, upper, resolution)


class TestScalarGrid:
    def test_rejects_bad_values(self):
        with pytest.raises(TopologicalFieldError):
            _field(np.zeros((3, 3)))
        with pytest.raises(TopologicalFieldError):
            _field(np.full((12, 12), np.nan))
        with pytest.raises(TopologicalFieldError):
            _field(-np.ones((12, 12)), KIND_TE)
        with pytest.raises(TopologicalFieldError):
            _field(np.ones((12, 12)), "XX")

    def test_extrema_points(self):
        values = np.zeros((12, 12))
        values[2, 9] = -4.0
        values[7, 1] = 3.0
        f = _field(values)
        axes = SMALL_GRID.axes()
        np.testing.assert_array_equal(f.argmin_point(), [axes[0][2], axes[1][9]])
        np.testing.assert_array_equal(f.argmax_point(), [axes[0][7], axes[1][1]])


class TestFormulas:
    def test_material_parse(self):
        assert MaterialSpec.parse("diel:3") == DIELECTRIC
        assert MaterialSpec.parse("cond") == CONDUCTING
        assert MaterialSpec.parse("diel:2.5").short() == "diel:2.5"
        for text in ("diel:", "diel:abc", "metal", "cond:2", "diel:-1"):
            with pytest.raises(TopologicalFieldError):
                MaterialSpec.parse(text)

    def test_conducting_is_dielectric_without_contrast(self):
        rng = np.random.default_rng(6)
        u = rng.standard_normal(100) + 1j * rng.standard_normal(100)
        v = rng.standard_normal(100) + 1j * rng.standard_normal(100)
        dielectric = td_from_fields_2d(u, v, DIELECTRIC)
        conducting = td_from_fields_2d(u, v, CONDUCTING)
        np.testing.assert_allclose(conducting, dielectric / (1.0 - 3.0), rtol=1e-14)
        np.testing.assert_allclose(conducting, (u * np.conj(v)).real, rtol=1e-14)

    def test_point_values(self):
        assert td_from_fields_2d(1.0 + 0j, 1.0 + 1j, DIELECTRIC) == pytest.approx(-2.0)
        assert te_from_fields(1.0 + 1j, 2.0) == pytest.approx(8.0)
        u = np.array([1.0, 0.0, 0.0])
        v = np.array([1.0j, 0.0, 2.0])
        assert te_from_fields(u, v, vector=True) == pytest.approx(5.0)
        assert td_from_fields_3d(u, np.array([1.0, 0.0, 0.0]), DIELECTRIC, 2.0) == pytest.approx(-3.0 * 4.0 * 2.0 / 5.0)

    def test_pointwise_evaluation(self):
        assert te_point(lambda x: 1.0 + 1j, lambda x: 2.0, (0.0, 0.0)) == pytest.approx(8.0)
        assert te_point(lambda x: np.array([1.0, 0.0, 0.0]), lambda x: np.array([1j, 0.0, 2.0]),
                        (0.0, 0.0, 0.0)) == pytest.approx(5.0)

        def unit(x):
            return np.array([1.0, 0.0, 0.0])

        assert td_point_3d(unit, unit, DIELECTRIC, 2.0, (0.0, 0.0, 0.0)) == pytest.approx(-3.0 * 4.0 * 2.0 / 5.0)

        kappa = wavenumber(4e9)
        model = IsotropicModel((0.72, 0.0), kappa, 1.0)
        residuals = ResidualSet([0.1 + 0.2j, -0.3j], [[0.0, 0.76], [-0.76, 0.0]], kappa)
        points = np.array([[0.01, 0.02], [-0.03, 0.04]])
        values = td_point_2d(model, residuals, DIELECTRIC, points)
        assert values.shape == (2,)
        for point, value in zip(points, values):
            assert td_point_2d(model, residuals, DIELECTRIC, point) == pytest.approx(value, rel=1e-12)

    def test_energy_is_non_negative(self):
        rng = np.random.default_rng(7)
        u = rng.standard_normal((50, 3)) + 1j * rng.standard_normal((50, 3))
        v = rng.standard_normal((50, 3)) + 1j * rng.standard_normal((50, 3))
        assert np.all(te_from_fields(u, v, vector=True) >= 0.0)
        assert np.all(te_from_fields(u[:, 0], v[:, 0]) >= 0.0)

    def test_three_dimensional_derivative_needs_dielectric(self):
        with pytest.raises(TopologicalFieldError):
            td_from_fields_3d(np.ones(3), np.ones(3), CONDUCTING, 1.0)
        with pytest.raises(TopologicalFieldError):
            MaterialSpec("dielectric", -2.0)

    def test_asymptotic_factor(self):
        assert asymptotic_factor(0.01, 2, "dielectric") == pytest.approx(np.pi * 1e-4)
        assert asymptotic_factor(0.01, 3, "dielectric") == pytest.approx(4.0 / 3.0 * np.pi * 1e-6)
        assert asymptotic_factor(0.1, 2, "conducting", 1.0) == pytest.approx(-2.0 * np.pi / np.log(0.1))
        with pytest.raises(TopologicalFieldError):
            asymptotic_factor(0.1, 2, "conducting", 20.0)
        with pytest.raises(TopologicalFieldError):
            asymptotic_factor(0.0, 2, "dielectric")


class TestCombinations:
    def _random_fields(self, count, kind=KIND_TD):
        rng = np.random.default_rng(31)
        fields = []
        for i in range(count):
            values = rng.standard_normal((12, 12))
            if kind == KIND_TE:
                values = np.abs(values)
            fields.append(_field(values, kind, frequency_index=i, frequency_hz=1e9 * (i + 1), emitters=[i]))
        return fields

    def test_emitter_mean(self):
        fields = self._random_fields(3)
        combined = combine_emitters(fields)
        np.testing.assert_allclose(combined.values, sum(f.values for f in fields) / 3.0, rtol=1e-14)
        assert combined.provenance["emitters"] == [0, 1, 2]

    @pytest.mark.parametrize("kind", [KIND_TD, KIND_TE])
    def test_invariant_under_positive_rescaling(self, kind):
        fields = self._random_fields(4, kind)
        combined = combine_frequencies(fields, kind)
        rescaled = [_field(f.values * s, kind, **f.provenance) for f, s in zip(fields, (1e-6, 3.0, 250.0, 0.5))]
        np.testing.assert_allclose(combine_frequencies(rescaled, kind).values, combined.values,
                                   rtol=1e-13, atol=1e-14)
        extremum = np.min(combined.values) if kind == KIND_TD else np.max(combined.values)
        assert abs(extremum) <= 1.0 + 1e-12
        assert combined.provenance["frequencies"] == [1e9, 2e9, 3e9, 4e9]

    def test_degenerate_frequency_raises_or_is_skipped(self):
        fields = self._random_fields(3)
        fields[1] = _field(np.abs(fields[1].values), frequency_index=1, frequency_hz=2e9)
        with pytest.raises(ZeroNormalizerError) as info:
            combine_frequencies(fields)
        assert info.value.frequency_index == 1
        combined = combine_frequencies(fields, skip_degenerate=True)
        assert combined.provenance["skipped_frequencies"] == [1]
        expected = (fields[0].values / abs(fields[0].values.min()) + fields[2].values / abs(fields[2].values.min())) / 2
        np.testing.assert_allclose(combined.values, expected, rtol=1e-14)

    def test_all_degenerate(self):
        with pytest.raises(ZeroNormalizerError):
            combine_frequencies([_field(np.zeros((12, 12)))], skip_degenerate=True)

    def test_incompatible_fields(self):
        other = InspectionGrid((-0.2, -0.2), (0.2, 0.2), (12, 12))
        with pytest.raises(TopologicalFieldError):
            combine_emitters([_field(-np.ones((12, 12))), _field(-np.ones((12, 12)), grid=other)])
        with pytest.raises(TopologicalFieldError):
            combine_frequencies([_field(-np.ones((12, 12))), _field(np.ones((12, 12)), KIND_TE)])
        with pytest.raises(TopologicalFieldError):
            combine_frequencies([])


class TestGridEvaluation:
    def test_per_frequency_fields(self):
        dataset = _dataset()
        fields = evaluate_frequency_fields(dataset, DIELECTRIC, SMALL_GRID)
        assert len(fields) == 2
        for f, freq in zip(fields, (2e9, 4e9)):
            assert f.kind == KIND_TD
            assert f.provenance["frequency_hz"] == freq
            assert f.provenance["emitters"] == [0, 1, 2, 3]
            assert f.provenance["dataset"] == "unit"
            assert f.provenance["material"] == "diel:3.0"

    def test_energy_field_is_non_negative(self):
        combined = evaluate_grid(_dataset(), CONDUCTING, SMALL_GRID, kind=KIND_TE, emitters=[0, 2], frequencies=[1])
        assert combined.kind == KIND_TE
        assert np.max(combined.values) == pytest.approx(1.0)
        assert np.all(combined.values >= 0.0)

    def test_thread_count_does_not_change_values(self, monkeypatch):
        monkeypatch.setattr(topofield, "CHUNK_SIZE", 20)
        dataset = _dataset()
        single = evaluate_grid(dataset, DIELECTRIC, SMALL_GRID, threads=1)
        pooled = evaluate_grid(dataset, DIELECTRIC, SMALL_GRID, threads=4)
        np.testing.assert_array_equal(single.values, pooled.values)

    def test_linear_in_incident_scale(self):
        dataset = _dataset(frequencies=(3e9,))
        doubled = dataset.with_records([ExperimentRecord(r.emitter_id, r.frequency_id,
                                                         tuple((j, 2.0 * i, 2.0 * t) for j, i, t in r.rows))
                                        for r in dataset.records.values()])
        a = evaluate_frequency_fields(dataset, DIELECTRIC, SMALL_GRID)[0]
        b = evaluate_frequency_fields(doubled, DIELECTRIC, SMALL_GRID)[0]
        np.testing.assert_allclose(b.values, 4.0 * a.values, rtol=1e-12, atol=1e-12 * np.max(np.abs(a.values)))

    def test_superposition_of_residuals(self):
        dataset = _dataset(frequencies=(3e9,))
        rng = np.random.default_rng(12)
        parts = {}
        for key, r in dataset.records.items():
            n = len(r.rows)
            parts[key] = (rng.standard_normal(n) + 1j * rng.standard_normal(n),
                          rng.standard_normal(n) + 1j * rng.standard_normal(n))

        def with_residuals(pick):
            return dataset.with_records([
                ExperimentRecord(r.emitter_id, r.frequency_id,
                                 tuple((j, inc, inc - pick(parts[r.key])[j]) for j, inc, _ in r.rows))
                for r in dataset.records.values()])

        first = evaluate_frequency_fields(with_residuals(lambda p: p[0]), DIELECTRIC, SMALL_GRID)[0]
        second = evaluate_frequency_fields(with_residuals(lambda p: p[1]), DIELECTRIC, SMALL_GRID)[0]
        both = evaluate_frequency_fields(with_residuals(lambda p: p[0] + p[1]), DIELECTRIC, SMALL_GRID)[0]
        scale = np.max(np.abs(both.values))
        np.testing.assert_allclose(both.values, first.values + second.values, rtol=1e-10, atol=1e-12 * scale)

    def test_superposition_in_three_dimensions(self):
        kappa = wavenumber(4.25e9)
        model = PlaneWaveModel((1.0, 0.0, 0.0), kappa, 1.0, None, (0.0, 0.0, 1.0))
        rng = np.random.default_rng(13)
        points = rng.uniform(-1.0, 1.0, size=(5, 3)) + np.array([0.0, 0.0, 1.8])
        r1 = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        r2 = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        x = rng.uniform(-0.1, 0.1, size=(20, 3))
        both = td_point_3d(model, ResidualSet(r1 + r2, points, kappa), DIELECTRIC, kappa, x)
        parts = (td_point_3d(model, ResidualSet(r1, points, kappa), DIELECTRIC, kappa, x)
                 + td_point_3d(model, ResidualSet(r2, points, kappa), DIELECTRIC, kappa, x))
        np.testing.assert_allclose(both, parts, rtol=1e-10, atol=1e-12 * np.max(np.abs(both)))

    def test_zero_residuals(self, caplog):
        dataset = _dataset()
        exact = [ExperimentRecord(r.emitter_id, r.frequency_id, tuple((j, i, i) for j, i, _ in r.rows))
                 if r.frequency_id == 0 else r for r in dataset.records.values()]
        dataset = dataset.with_records(exact)
        fields = evaluate_frequency_fields(dataset, DIELECTRIC, SMALL_GRID)
        np.testing.assert_array_equal(fields[0].values, np.zeros(SMALL_GRID.shape))
        assert np.min(fields[1].values) < 0.0
        with pytest.raises(ZeroNormalizerError) as info:
            evaluate_grid(dataset, DIELECTRIC, SMALL_GRID)
        assert info.value.frequency_index == 0
        combined = evaluate_grid(dataset, DIELECTRIC, SMALL_GRID, skip_degenerate=True)
        assert combined.provenance["skipped_frequencies"] == [0]
        assert "degenerate" in caplog.text
        np.testing.assert_allclose(combined.values, fields[1].values / abs(np.min(fields[1].values)), rtol=1e-14)
        with pytest.raises(ZeroNormalizerError):
            evaluate_grid(dataset, DIELECTRIC, SMALL_GRID, frequencies=[0], skip_degenerate=True)

    def test_rejects_bad_requests(self):
        dataset = _dataset()
        with pytest.raises(TopologicalFieldError):
            evaluate_frequency_fields(dataset.with_records(list(dataset.records.values()),
                                                           convention=CONVENTION_CONJUGATE), DIELECTRIC, SMALL_GRID)
        with pytest.raises(TopologicalFieldError):
            evaluate_frequency_fields(dataset, DIELECTRIC, SMALL_GRID, reciprocity=True)
        with pytest.raises(TopologicalFieldError):
            evaluate_frequency_fields(dataset, DIELECTRIC, InspectionGrid.default(3))
        with pytest.raises(TopologicalFieldError):
            evaluate_frequency_fields(dataset, DIELECTRIC, SMALL_GRID, emitters=[0, 7])
        with pytest.raises(TopologicalFieldError):
            evaluate_frequency_fields(dataset, DIELECTRIC, SMALL_GRID, kind="XX")
        with pytest.raises(TopologicalFieldError):
            evaluate_frequency_fields(dataset, DIELECTRIC, SMALL_GRID, threads=0)


class TestThreeDimensionalHelpers:
    grid = InspectionGrid((-0.1, -0.1, -0.1), (0.1, 0.1, 0.1), (6, 5, 7))

    def test_slice_and_spread(self):
        x, y, z = np.meshgrid(*self.grid.axes(), indexing="ij")
        flat = ScalarGrid(self.grid, -(x ** 2 + y ** 2) - 1.0, KIND_TD)
        assert z_spread(flat) == 0.0
        plane = slice_z(flat)
        assert plane.grid.shape == (6, 5)
        assert plane.provenance["z"] == 0.0
        np.testing.assert_array_equal(plane.values, flat.values[:, :, 3])

        tilted = ScalarGrid(self.grid, z + 0.0, KIND_TD)
        assert z_spread(tilted) == pytest.approx(2.0)

    def test_needs_three_dimensions(self):
        with pytest.raises(TopologicalFieldError):
            slice_z(_field(-np.ones((12, 12))))
        with pytest.raises(TopologicalFieldError):
            z_spread(_field(-np.ones((12, 12))))
