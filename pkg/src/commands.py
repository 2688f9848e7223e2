from abc import abstractmethod
import hashlib
import logging
import os
import re
import time
from typing import Dict, List, Optional

import numpy
import pandas
from pydantic import BaseModel, ValidationError, validator

from topoimg.adjoint import AdjointSingularityError
from topoimg.dataset import (FORMAT_MAGIC, Dataset, DatasetError, parse_columnar, preset, read_canonical,
                             to_working_convention, validate, write_canonical)
from topoimg.geometry import FrequencySweep, GeometryError, Layout2D, Layout3D, wavenumber
from topoimg.incident import (DEFAULT_MODES, INCIDENT_KINDS, IncidentModelError, RankDeficiencyError,
                              fit_hankel_series, format_model)
from topoimg.oracle import (BornPointScatterer3D, DiskScatterer, NonConvergentSeriesError, OracleError,
                            synth_dataset_2d, synth_dataset_3d, truth_from_scatterers)
from topoimg.regions import BoxShape, DiskShape, PointShape, RegionError, ShapeTruth, extract, prune_components, score
from topoimg.specfun import SpecialFunctionDomainError
from topoimg.topofield import (KIND_TD, KIND_TE, InspectionGrid, MaterialSpec, TopologicalFieldError,
                               ZeroNormalizerError, combine_frequencies, evaluate_frequency_fields)
from rendering import read_mask, write_field, write_json, write_mask


class BadConfigurationException(Exception):
    pass


EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

NUMERICAL_ERRORS = (RankDeficiencyError, ZeroNormalizerError, NonConvergentSeriesError, AdjointSingularityError,
                    SpecialFunctionDomainError)
INPUT_ERRORS = (BadConfigurationException, ValidationError, DatasetError, GeometryError, IncidentModelError,
                TopologicalFieldError, OracleError, RegionError, OSError)


def exit_code(error: Exception) -> int:
    if isinstance(error, NUMERICAL_ERRORS):
        return EXIT_NUMERICAL
    if isinstance(error, INPUT_ERRORS):
        return EXIT_INPUT
    raise error


#
# parsing of flag values
#

FREQUENCY_UNITS = {"ghz": 1e9, "mhz": 1e6, "khz": 1e3, "hz": 1.0}
_FREQUENCY_TOKEN = re.compile(r"^\s*([0-9.eE+-]+)\s*([a-zA-Z]*)\s*$")


def parse_frequencies(text: str) -> List[float]:
    """
        Frequencies in Hz from a comma-separated list with unit suffixes

        A value without a unit takes the unit of the last value that has
        one; a list without any unit is read in GHz.

        Examples
        --------
        >>> parse_frequencies("2,4,6,8GHz")
        [2000000000.0, 4000000000.0, 6000000000.0, 8000000000.0]
        >>> parse_frequencies("5.5GHz")
        [5500000000.0]
    """
    parsed = []
    for token in text.split(","):
        if not token.strip():
            continue
        match = _FREQUENCY_TOKEN.match(token)
        if match is None:
            raise ValueError("malformed frequency '{0}'".format(token.strip()))
        unit = match.group(2).lower()
        if unit and unit not in FREQUENCY_UNITS:
            raise ValueError("unknown frequency unit '{0}'".format(match.group(2)))
        parsed.append((float(match.group(1)), unit))
    if not parsed:
        raise ValueError("empty frequency list")
    default = next((unit for _, unit in reversed(parsed) if unit), "ghz")
    values = [value * FREQUENCY_UNITS[unit or default] for value, unit in parsed]
    if any(not v > 0.0 for v in values):
        raise ValueError("frequencies must be positive")
    return values


def _numbers(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def parse_shape(text: str):
    """disk:x,y,r | box:x,y,w,h (or x,y,z,w,h,d) | point:x,y,z[,amp], meters"""
    name, _, rest = text.strip().partition(":")
    values = _numbers(rest)
    if name == "disk" and len(values) == 3:
        return DiskShape(center=values[:2], radius=values[2])
    if name == "box" and len(values) in (4, 6):
        half = len(values) // 2
        return BoxShape(corner=values[:half], extents=values[half:])
    if name == "point" and len(values) in (3, 4):
        amplitude = [values[3], 0.0] if len(values) == 4 else None
        return PointShape(location=values[:3], amplitude=amplitude)
    raise ValueError("malformed shape '{0}'".format(text))


def parse_id_list(text: str) -> List[int]:
    """Comma-separated ids and inclusive ranges, e.g. '0-3,7'"""
    ids = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        first, dash, last = token.partition("-")
        if dash:
            ids.extend(range(int(first), int(last) + 1))
        else:
            ids.append(int(token))
    return sorted(set(ids))


def _split(value):
    if isinstance(value, str):
        return [v for v in re.split(r"[;\n]", value) if v.strip()]
    return value


#
# configuration
#

class RunConfig(BaseModel):
    command: str
    dataset: Optional[str] = None
    preset: Optional[str] = None
    dim: int = 2
    freqs: Optional[List[float]] = None
    emitters: Optional[List[int]] = None
    incident: str = "isotropic"
    modes: int = DEFAULT_MODES
    material: str = "diel:3"
    shapes: List[str] = []
    noise: float = 0.0
    seed: int = 0
    kind: str = KIND_TD
    lambdas: List[float] = [0.7]
    bounds: Optional[List[float]] = None
    resolution: Optional[int] = None
    reciprocity: bool = False
    threads: int = 1
    strict: bool = False
    prune: int = 0
    truth: Optional[str] = None
    mask: Optional[str] = None
    progress: bool = False
    output: str = "topoimg"

    class Config:
        extra = "forbid"

    @validator("dim")
    def dim_supported(cls, v):
        if v not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        return v

    @validator("freqs", pre=True)
    def freqs_from_text(cls, v):
        return parse_frequencies(v) if isinstance(v, str) else v

    @validator("emitters", pre=True)
    def emitters_from_text(cls, v):
        return parse_id_list(v) if isinstance(v, str) else v

    @validator("incident")
    def incident_known(cls, v):
        if v not in INCIDENT_KINDS:
            raise ValueError("incident must be one of {0}".format(", ".join(INCIDENT_KINDS)))
        return v

    @validator("modes", "prune")
    def non_negative(cls, v):
        if v < 0:
            raise ValueError("must be non-negative")
        return v

    @validator("material")
    def material_parses(cls, v):
        try:
            MaterialSpec.parse(v)
        except TopologicalFieldError as e:
            raise ValueError(e.message)
        return v

    @validator("shapes", pre=True)
    def shapes_from_text(cls, v):
        shapes = _split(v)
        for s in shapes:
            parse_shape(s)
        return shapes

    @validator("noise")
    def noise_non_negative(cls, v):
        if v < 0.0:
            raise ValueError("noise must be non-negative")
        return v

    @validator("kind", pre=True)
    def kind_upper(cls, v):
        v = str(v).upper()
        if v not in (KIND_TD, KIND_TE):
            raise ValueError("kind must be td or te")
        return v

    @validator("lambdas", pre=True)
    def lambdas_from_text(cls, v):
        values = _numbers(v) if isinstance(v, str) else v
        if not values or any(not 0.0 <= float(lam) <= 1.0 for lam in values):
            raise ValueError("lambda values must lie in [0, 1]")
        return sorted(set(float(lam) for lam in values))

    @validator("bounds", pre=True)
    def bounds_from_text(cls, v):
        values = _numbers(v) if isinstance(v, str) else v
        if values is not None and len(values) not in (2, 4, 6):
            raise ValueError("bounds take 2 values (all axes) or a min,max pair per axis")
        return values

    @validator("resolution", "threads")
    def at_least_one(cls, v):
        if v is not None and v < 1:
            raise ValueError("must be at least 1")
        return v

    def material_spec(self) -> MaterialSpec:
        return MaterialSpec.parse(self.material)

    def primitives(self):
        return [parse_shape(s) for s in self.shapes]

    def grid(self, dimension: int) -> InspectionGrid:
        default = InspectionGrid.default(dimension)
        lower, upper = default.lower, default.upper
        if self.bounds is not None:
            if len(self.bounds) == 2:
                lower, upper = (self.bounds[0],) * dimension, (self.bounds[1],) * dimension
            elif len(self.bounds) == 2 * dimension:
                lower, upper = tuple(self.bounds[0::2]), tuple(self.bounds[1::2])
            else:
                raise BadConfigurationException(f"Granice siatki nie pasują do wymiaru {dimension}")
        resolution = (self.resolution,) * dimension if self.resolution is not None else default.resolution
        return InspectionGrid(lower, upper, resolution)


CONFIG_ALIASES = {"shape": "shapes", "lambda": "lambdas", "freq": "freqs"}


def read_config_file(path: str) -> Dict[str, object]:
    """key=value lines, '#' comments; repeated 'shape' keys accumulate"""
    if not os.path.isfile(path):
        raise BadConfigurationException(f"Plik konfiguracyjny {path} nie istnieje")
    values: Dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise BadConfigurationException(f"{path}:{number}: oczekiwano klucz=wartość")
            key = key.strip().replace("-", "_")
            key = CONFIG_ALIASES.get(key, key)
            value = value.strip()
            if key == "shapes":
                values.setdefault("shapes", []).append(value)
            else:
                values[key] = value
    return values


def build_config(command: str, flags: Dict[str, object], config_path: Optional[str] = None) -> RunConfig:
    """File values first, command-line flags override them"""
    values = read_config_file(config_path) if config_path else {}
    values.update(flags)
    values["command"] = command
    return RunConfig(**values)


#
# commands
#

def sha256_of(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


class BasicCommand:
    name = ""

    def __init__(self, config: RunConfig):
        self.config = config
        self.artifacts: List[str] = []

    def run(self) -> List[str]:
        start = time.perf_counter()
        directory = os.path.dirname(self.config.output)
        if directory:
            os.makedirs(directory, exist_ok=True)
        logging.info(f"Uruchomiono polecenie {self.name}, prefiks wyników: {self.config.output}")
        self.execute()
        meta_path = self.write_meta()
        logging.info(f"Polecenie {self.name} zakończone w {time.perf_counter() - start:.2f} s")
        return self.artifacts + [meta_path]

    @abstractmethod
    def execute(self) -> None:
        pass

    def path(self, suffix: str) -> str:
        return f"{self.config.output}.{suffix}"

    def declare(self, *paths) -> None:
        self.artifacts.extend(paths)

    def write_text(self, suffix: str, text: str) -> str:
        path = self.path(suffix)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        self.declare(path)
        return path

    def write_meta(self) -> str:
        checksums = {}
        for path in self.artifacts:
            if not os.path.isfile(path):
                raise BadConfigurationException(f"Brak zadeklarowanego pliku wynikowego {path}")
            checksums[os.path.basename(path)] = sha256_of(path)
        meta_path = self.path("meta.json")
        write_json({"command": self.name, "config": self.config.dict(), "artifacts": checksums}, meta_path)
        return meta_path

    def load_dataset(self) -> Dataset:
        path = self.config.dataset
        if path is None:
            raise BadConfigurationException("Nie podano ścieżki do zbioru danych (--dataset)")
        if not os.path.isfile(path):
            raise BadConfigurationException(f"Zbiór danych {path} nie istnieje")
        with open(path, "rb") as f:
            data = f.read()
        if data.startswith(FORMAT_MAGIC.encode("utf-8")):
            dataset = read_canonical(data)
        else:
            if self.config.preset is None:
                raise BadConfigurationException("Plik nie jest w formacie kanonicznym, podaj --preset")
            if self.config.freqs is None:
                raise BadConfigurationException("Plik kolumnowy wymaga listy częstotliwości (--freqs)")
            layout = Layout2D() if self.config.dim == 2 else Layout3D()
            sweep = FrequencySweep(tuple(sorted(self.config.freqs)))
            dataset = parse_columnar(data, preset(self.config.preset), layout, sweep)
        logging.info(f"Wczytano zbiór danych {path}: wymiar {dataset.dimension}, {len(dataset.records)} rekordów")
        working = to_working_convention(dataset)
        if working is not dataset:
            logging.info("Zbiór danych sprzężono do konwencji e^(-iwt)")
        return working

    def frequency_ids(self, dataset: Dataset) -> Optional[List[int]]:
        if self.config.freqs is None:
            return None
        ids = sorted({dataset.sweep.index_of(f) for f in self.config.freqs})
        missing = [i for i in ids if i not in dataset.frequency_ids()]
        if missing:
            raise BadConfigurationException(f"Brak rekordów dla częstotliwości o indeksach {missing}")
        return ids

    def emitter_ids(self, dataset: Dataset) -> Optional[List[int]]:
        if self.config.emitters is None:
            return None
        known = set(dataset.emitter_ids())
        unknown = [e for e in self.config.emitters if e not in known]
        if unknown:
            raise BadConfigurationException(f"Nieznane nadajniki: {unknown}")
        return list(self.config.emitters)


class FitIncidentCommand(BasicCommand):
    name = "fit-incident"

    def execute(self) -> None:
        dataset = self.load_dataset()
        if dataset.dimension != 2:
            raise BadConfigurationException("Dopasowanie szeregu Hankla dotyczy tylko danych 2D")
        frequencies = self.frequency_ids(dataset) or dataset.frequency_ids()
        emitters = self.emitter_ids(dataset) or dataset.emitter_ids()
        lines = ["#emitter_id\tfreq_id\temitter_x\temitter_y\tkappa\tcoefficients"]
        rows = []
        for key in dataset.keys():
            record = dataset.records[key]
            if record.emitter_id not in emitters or record.frequency_id not in frequencies:
                continue
            kappa = wavenumber(dataset.sweep.values[record.frequency_id])
            receivers = dataset.layout.receiver_points(record.emitter_id)[record.receiver_ids]
            fit = fit_hankel_series(receivers, record.incident, dataset.layout.emitter_point(record.emitter_id),
                                    kappa, self.config.modes)
            lines.append(f"{record.emitter_id}\t{record.frequency_id}\t{format_model(fit.model)}")
            norm = float(numpy.linalg.norm(record.incident))
            rows.append({"emitter_id": record.emitter_id, "freq_id": record.frequency_id,
                         "frequency_hz": dataset.sweep.values[record.frequency_id], "n_modes": self.config.modes,
                         "residual_norm": fit.residual_norm,
                         "relative_residual": fit.residual_norm / norm if norm > 0.0 else 0.0,
                         "condition": fit.condition})
        if not rows:
            raise BadConfigurationException("Brak rekordów do dopasowania")
        self.write_text("incident.tsv", "".join(line + "\n" for line in lines))
        residuals_path = self.path("residuals.csv")
        pandas.DataFrame(rows).to_csv(residuals_path, index=False)
        self.declare(residuals_path)
        worst = max(r["relative_residual"] for r in rows)
        logging.info(f"Dopasowano {len(rows)} modeli, największa względna reszta {worst:.3e}")


class SynthCommand(BasicCommand):
    name = "synth"

    def execute(self) -> None:
        if self.config.freqs is None:
            raise BadConfigurationException("Synteza wymaga listy częstotliwości (--freqs)")
        primitives = self.config.primitives()
        if not primitives:
            raise BadConfigurationException("Podaj co najmniej jeden kształt (--shape)")
        grid = self.config.grid(self.config.dim)
        if any(p.dimension != self.config.dim for p in primitives):
            raise BadConfigurationException(f"Kształty muszą być {self.config.dim}-wymiarowe")
        if not ShapeTruth(primitives=primitives).inside(grid):
            raise BadConfigurationException(f"Kształt wykracza poza obszar inspekcji {grid.lower}..{grid.upper}")

        sweep = FrequencySweep(tuple(sorted(self.config.freqs)))
        if self.config.dim == 2:
            material = self.config.material_spec()
            if any(not isinstance(p, DiskShape) for p in primitives):
                raise BadConfigurationException("W 2D można syntetyzować tylko dyski (disk:x,y,r)")
            scatterers = [DiskScatterer(tuple(p.center), p.radius, material) for p in primitives]
            if self.config.incident == "hankel":
                raise BadConfigurationException("Synteza 2D wymaga fali izotropowej lub płaskiej")
            dataset = synth_dataset_2d(scatterers, Layout2D(), sweep, self.config.incident, self.config.noise,
                                       self.config.seed)
        else:
            if any(not isinstance(p, PointShape) for p in primitives):
                raise BadConfigurationException("W 3D można syntetyzować tylko rozpraszacze punktowe (point:x,y,z)")
            scatterers = [BornPointScatterer3D(tuple(p.location), complex(*p.amplitude)) if p.amplitude
                          else BornPointScatterer3D(tuple(p.location)) for p in primitives]
            dataset = synth_dataset_3d(scatterers, Layout3D(), sweep, "PP", self.config.noise, self.config.seed)

        metadata = dict(dataset.metadata)
        metadata["id"] = os.path.basename(self.config.output)
        dataset = dataset.with_records(dataset.records.values(), metadata=metadata)

        path = self.path("dataset.tsv")
        with open(path, "wb") as f:
            f.write(write_canonical(dataset))
        self.declare(path)
        self.write_text("truth.json", truth_from_scatterers(scatterers).to_json() + "\n")
        logging.info(f"Zapisano syntetyczny zbiór danych {path} ({len(dataset.records)} rekordów)")


class InvertCommand(BasicCommand):
    name = "invert"

    def execute(self) -> None:
        start = time.perf_counter()
        dataset = self.load_dataset()
        grid = self.config.grid(dataset.dimension)
        material = self.config.material_spec()
        fields = evaluate_frequency_fields(dataset, material, grid, self.emitter_ids(dataset),
                                           self.frequency_ids(dataset), self.config.kind, self.config.incident,
                                           self.config.modes, self.config.reciprocity, self.config.threads,
                                           self.config.progress)
        field = combine_frequencies(fields, self.config.kind, skip_degenerate=not self.config.strict)
        for skipped in field.provenance["skipped_frequencies"]:
            logging.warning(f"Pominięto zdegenerowaną częstotliwość o indeksie {skipped}")
        nodes = int(numpy.prod(grid.shape))
        logging.info(f"Pole {field.kind} na {nodes} węzłach policzone w {time.perf_counter() - start:.2f} s")
        self.declare(*write_field(field, self.config.output, f"{field.kind} {material.short()}"))

        truth = None
        if self.config.truth is not None:
            if not os.path.isfile(self.config.truth):
                raise BadConfigurationException(f"Plik prawdy {self.config.truth} nie istnieje")
            with open(self.config.truth, "r", encoding="utf-8") as f:
                truth = ShapeTruth.from_json(f.read())

        metrics = {}
        for lam in self.config.lambdas:
            mask = extract(field, lam)
            if self.config.prune > 0:
                mask = prune_components(mask, self.config.prune)
            self.declare(*write_mask(mask, self.config.output))
            if truth is not None:
                metrics[f"{lam:g}"] = score(mask, truth).as_dict() if mask.count else {"mask_cells": 0}
        if truth is not None:
            path = self.path("metrics.json")
            write_json({"kind": field.kind, "units": "m", "lambdas": metrics}, path)
            self.declare(path)


class MetricsCommand(BasicCommand):
    name = "metrics"

    def execute(self) -> None:
        for path, flag in ((self.config.mask, "--mask"), (self.config.truth, "--truth")):
            if path is None or not os.path.isfile(path):
                raise BadConfigurationException(f"Brak pliku {flag}: {path}")
        mask = read_mask(self.config.mask)
        if mask.count == 0:
            raise BadConfigurationException(f"Maska {self.config.mask} jest pusta")
        with open(self.config.truth, "r", encoding="utf-8") as f:
            truth = ShapeTruth.from_json(f.read())
        result = score(mask, truth)
        path = self.path("metrics.json")
        write_json({"lambda": mask.lam, "mode": mask.mode, "units": "m", "score": result.as_dict()}, path)
        self.declare(path)
        logging.info(f"Indeks Jaccarda {result.jaccard:.4f}, przesunięcie środka {result.centroid_offset_m:.4f} m")


class ValidateCommand(BasicCommand):
    name = "validate"

    def execute(self) -> None:
        dataset = self.load_dataset()
        report = validate(dataset)
        rows = [{"kind": issue.kind, "key": " ".join(str(k) for k in issue.key), "detail": issue.detail}
                for issue in report.issues]
        path = self.path("validation.csv")
        pandas.DataFrame(rows, columns=["kind", "key", "detail"]).to_csv(path, index=False)
        self.declare(path)
        if report.ok:
            logging.info("Walidacja: brak problemów")
        else:
            logging.warning(f"Walidacja: {len(report.issues)} problemów")


def cmd_fit_incident(config: RunConfig) -> List[str]:
    return FitIncidentCommand(config).run()


def cmd_synth(config: RunConfig) -> List[str]:
    return SynthCommand(config).run()


def cmd_invert(config: RunConfig) -> List[str]:
    return InvertCommand(config).run()


def cmd_metrics(config: RunConfig) -> List[str]:
    return MetricsCommand(config).run()


def cmd_validate(config: RunConfig) -> List[str]:
    return ValidateCommand(config).run()


COMMANDS = {
    FitIncidentCommand.name: cmd_fit_incident,
    SynthCommand.name: cmd_synth,
    InvertCommand.name: cmd_invert,
    MetricsCommand.name: cmd_metrics,
    ValidateCommand.name: cmd_validate,
}
