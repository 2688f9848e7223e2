"""
Measurement records, columnar file ingestion, the time-convention flip, the
3D reciprocity re-indexing, coverage validation and the canonical text
container.

Dataset ids (emitter, frequency, receiver) are 0-based indices into the
layout and the sweep; they are what the canonical files store.
"""

import logging
import zlib
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from topoimg.geometry import (ExplicitGeometry3D, FrequencySweep, GeometryError,
                              Layout2D, Layout3D)

FORMAT_MAGIC = "#topoimg-dataset v1"

# e^{-i omega t} is the working convention of every formula in the package
CONVENTION_WORKING = "-iwt"
CONVENTION_CONJUGATE = "+iwt"

POL_NONE = "-"
POLARIZATIONS = ("PP", "TP")

# samples above OUTLIER_FACTOR times the per-frequency median are reported
OUTLIER_FACTOR = 10.0

BODY_COLUMNS = ("emitter_id", "freq_id", "recv_id", "pol", "inc_re", "inc_im", "tot_re", "tot_im")


class DatasetError(Exception):
    """DatasetError"""
    def __init__(self, message):
        self.message = message


class DatasetParseError(DatasetError):
    """DatasetParseError"""
    def __init__(self, message, line=None):
        self.line = line
        self.message = message if line is None else "line {0}: {1}".format(line, message)


class CanonicalFormatError(DatasetError):
    """CanonicalFormatError"""
    def __init__(self, message):
        self.message = message


#
# records and datasets
#

Row = Tuple[int, complex, complex]


@dataclass(frozen=True)
class ExperimentRecord:
    emitter_id: int
    frequency_id: int
    rows: Tuple[Row, ...]
    polarization: str = POL_NONE

    def __post_init__(self):
        rows = tuple((int(r), complex(inc), complex(tot)) for r, inc, tot in self.rows)
        object.__setattr__(self, "rows", rows)
        if len(rows) == 0:
            raise DatasetError("Record ({0}, {1}) has no receiver rows".format(self.emitter_id, self.frequency_id))
        ids = [r[0] for r in rows]
        if len(set(ids)) != len(ids):
            raise DatasetError("Duplicate receiver id in record ({0}, {1})".format(self.emitter_id, self.frequency_id))
        if self.polarization not in (POL_NONE,) + POLARIZATIONS:
            raise DatasetError("Unknown polarization {0}".format(self.polarization))

    @property
    def key(self) -> Tuple[int, int, str]:
        return self.emitter_id, self.frequency_id, self.polarization

    @property
    def receiver_ids(self) -> np.ndarray:
        return np.array([r[0] for r in self.rows], dtype=int)

    @property
    def incident(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows], dtype=complex)

    @property
    def total(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows], dtype=complex)

    def residuals(self) -> np.ndarray:
        """Incident minus measured, the weights of the adjoint sources"""
        return self.incident - self.total

    def sample(self, receiver_id: int) -> Tuple[complex, complex]:
        for r, inc, tot in self.rows:
            if r == receiver_id:
                return inc, tot
        raise DatasetError("Receiver {0} not present in record".format(receiver_id))

    def conjugated(self) -> "ExperimentRecord":
        rows = tuple((r, inc.conjugate(), tot.conjugate()) for r, inc, tot in self.rows)
        return replace(self, rows=rows)


Geometry = Union[Layout2D, Layout3D, ExplicitGeometry3D]


@dataclass(frozen=True)
class Dataset:
    dimension: int
    layout: Geometry
    sweep: FrequencySweep
    records: Dict[Tuple[int, int, str], ExperimentRecord] = field(default_factory=dict)
    convention: str = CONVENTION_WORKING
    metadata: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise DatasetError("Dimension must be 2 or 3")
        if self.layout.dimension != self.dimension:
            raise DatasetError("Layout dimension does not match dataset dimension")
        if self.convention not in (CONVENTION_WORKING, CONVENTION_CONJUGATE):
            raise DatasetError("Unknown time convention {0}".format(self.convention))
        for key, rec in self.records.items():
            if key != rec.key:
                raise DatasetError("Record stored under key {0} reports key {1}".format(key, rec.key))
            if not 0 <= rec.frequency_id < len(self.sweep):
                raise DatasetError("Frequency id {0} outside the sweep".format(rec.frequency_id))
            if not 0 <= rec.emitter_id < self.layout.n_emitters:
                raise DatasetError("Emitter id {0} outside the layout".format(rec.emitter_id))
            if self.dimension == 2 and rec.polarization != POL_NONE:
                raise DatasetError("2D records carry no polarization")
            if self.dimension == 3 and rec.polarization == POL_NONE:
                raise DatasetError("3D records need a polarization mode")

    def keys(self) -> List[Tuple[int, int, str]]:
        return sorted(self.records.keys())

    def record(self, emitter_id: int, frequency_id: int, polarization: Optional[str] = None) -> ExperimentRecord:
        pol = polarization if polarization is not None else (POL_NONE if self.dimension == 2 else "PP")
        try:
            return self.records[(emitter_id, frequency_id, pol)]
        except KeyError:
            raise DatasetError("Missing record (emitter {0}, frequency {1}, {2})".format(emitter_id, frequency_id, pol))

    def emitter_ids(self) -> List[int]:
        return sorted({k[0] for k in self.records})

    def frequency_ids(self) -> List[int]:
        return sorted({k[1] for k in self.records})

    def polarizations(self) -> List[str]:
        return sorted({k[2] for k in self.records})

    def receiver_points(self, emitter_id: int) -> np.ndarray:
        return self.layout.receiver_points(emitter_id)

    def with_records(self, records, **changes) -> "Dataset":
        table = {rec.key: rec for rec in records}
        return replace(self, records=table, **changes)


#
# columnar ingestion
#

COLUMN_ROLES = ("emitter_angle_deg", "emitter_altitude_deg", "receiver_angle_deg",
                "frequency_ghz", "frequency_hz", "total_re", "total_im",
                "incident_re", "incident_im", "skip")


@dataclass(frozen=True)
class ColumnMapping:
    roles: Tuple[str, ...]
    comment_prefix: str = "#"
    tolerance_deg: float = 1.0
    receiver_angles: str = "relative"
    convention: str = CONVENTION_WORKING
    polarization: str = "PP"
    delimiter: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "roles", tuple(self.roles))
        for role in self.roles:
            if role not in COLUMN_ROLES:
                raise DatasetError("Unknown column role {0}".format(role))
        for role in set(self.roles) - {"skip"}:
            if self.roles.count(role) > 1:
                raise DatasetError("Column role {0} assigned twice".format(role))
        if self.receiver_angles not in ("relative", "absolute"):
            raise DatasetError("receiver_angles must be 'relative' or 'absolute'")
        if self.convention not in (CONVENTION_WORKING, CONVENTION_CONJUGATE):
            raise DatasetError("Unknown time convention {0}".format(self.convention))
        if not self.tolerance_deg > 0.0:
            raise DatasetError("Angle tolerance must be positive")

    def required_roles(self, dimension: int) -> Tuple[str, ...]:
        roles = ("emitter_angle_deg", "receiver_angle_deg", "total_re", "total_im", "incident_re", "incident_im")
        if dimension == 3:
            roles = roles + ("emitter_altitude_deg",)
        return roles

    def column(self, role: str) -> int:
        return self.roles.index(role)


# Best-effort layouts of the two Fresnel file families. The 2D files use the
# e^{+i omega t} convention and are conjugated before any processing.
PRESETS = {
    "fresnel2d": ColumnMapping(
        roles=("emitter_angle_deg", "receiver_angle_deg", "frequency_ghz",
               "total_re", "total_im", "incident_re", "incident_im"),
        comment_prefix="#", tolerance_deg=1.0, receiver_angles="absolute",
        convention=CONVENTION_CONJUGATE),
    "fresnel3d": ColumnMapping(
        roles=("frequency_ghz", "emitter_angle_deg", "emitter_altitude_deg", "receiver_angle_deg",
               "total_re", "total_im", "incident_re", "incident_im"),
        comment_prefix="#", tolerance_deg=1.0, receiver_angles="absolute",
        convention=CONVENTION_WORKING),
}


def preset(name: str) -> ColumnMapping:
    try:
        return PRESETS[name]
    except KeyError:
        raise DatasetError("Unknown mapping preset {0} (known: {1})".format(name, ", ".join(sorted(PRESETS))))


def _angle_distance(a, b):
    d = np.mod(a - b, 360.0)
    return min(d, 360.0 - d)


def _resolve_angle(value, candidates, tolerance, what, line):
    distances = [_angle_distance(value, c) for c in candidates]
    best = int(np.argmin(distances))
    if distances[best] > tolerance:
        raise DatasetParseError("unmappable angle {0} deg for {1}".format(value, what), line)
    return best


def _smallest_step(angles):
    values = np.sort(np.mod(np.asarray(angles, dtype=float), 360.0))
    if len(values) < 2:
        return 360.0
    steps = np.diff(np.append(values, values[0] + 360.0))
    return float(np.min(steps))


def parse_columnar(text, mapping: ColumnMapping, layout: Union[Layout2D, Layout3D],
                   sweep: FrequencySweep) -> Dataset:
    """
        Build a dataset from a line-oriented measurement file

        Every line is either skipped as a comment or blank, parsed into one
        receiver sample, or reported as an error with its line number.

        Parameters
        ----------
        text : bytes or str
            file contents
        mapping : ColumnMapping
            column roles, comment prefix, angle tolerance and time convention
        layout : Layout2D or Layout3D
            antenna layout the angles are resolved against
        sweep : FrequencySweep
            frequencies the frequency column is resolved against

        Returns
        -------
        dataset : Dataset
            one record per (emitter, frequency) found, in the mapping's convention
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as e:
            line = text.count(b"\n", 0, e.start) + 1
            raise DatasetParseError("invalid UTF-8 at byte offset {0}".format(e.start), line)
    dimension = layout.dimension
    for role in mapping.required_roles(dimension):
        if role not in mapping.roles:
            raise DatasetError("Column mapping lacks required role {0}".format(role))
    if "frequency_ghz" not in mapping.roles and "frequency_hz" not in mapping.roles:
        if len(sweep) != 1:
            raise DatasetError("Column mapping lacks a frequency column")

    if dimension == 2:
        receiver_grid = layout.receiver_offsets
        steps = [_smallest_step(layout.emitter_azimuths), _smallest_step(receiver_grid)]
    else:
        receiver_grid = layout.receiver_azimuth_offsets
        steps = [_smallest_step(layout.emitter_azimuths), _smallest_step(layout.emitter_altitudes),
                 _smallest_step(receiver_grid)]
    if mapping.tolerance_deg >= 0.5 * min(steps):
        raise DatasetError("Angle tolerance {0} deg is not below half the smallest angular step".format(
            mapping.tolerance_deg))

    pol = POL_NONE if dimension == 2 else mapping.polarization
    samples: Dict[Tuple[int, int, str], Dict[int, Tuple[complex, complex]]] = {}
    n_rows = 0
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or (mapping.comment_prefix and line.startswith(mapping.comment_prefix)):
            continue
        fields = line.split(mapping.delimiter)
        if len(fields) != len(mapping.roles):
            raise DatasetParseError("expected {0} columns, found {1}".format(len(mapping.roles), len(fields)), line_no)
        values = {}
        for role, token in zip(mapping.roles, fields):
            if role == "skip":
                continue
            try:
                values[role] = float(token)
            except ValueError:
                raise DatasetParseError("malformed number '{0}' in column {1}".format(token, role), line_no)

        if "frequency_ghz" in values:
            frequency = values["frequency_ghz"] * 1e9
        elif "frequency_hz" in values:
            frequency = values["frequency_hz"]
        else:
            frequency = sweep.values[0]
        try:
            freq_id = sweep.index_of(frequency, rel_tol=1e-6)
        except GeometryError as e:
            raise DatasetParseError(e.message, line_no)

        azimuth_id = _resolve_angle(values["emitter_angle_deg"], layout.emitter_azimuths, mapping.tolerance_deg,
                                    "emitter azimuth", line_no)
        if dimension == 2:
            emitter_id = azimuth_id
        else:
            altitude_id = _resolve_angle(values["emitter_altitude_deg"], layout.emitter_altitudes,
                                         mapping.tolerance_deg, "emitter altitude", line_no)
            emitter_id = layout.emitter_id(azimuth_id + 1, altitude_id + 1)

        receiver_angle = values["receiver_angle_deg"]
        if mapping.receiver_angles == "absolute":
            receiver_angle = receiver_angle - layout.emitter_azimuths[azimuth_id]
        receiver_id = _resolve_angle(receiver_angle, receiver_grid, mapping.tolerance_deg, "receiver", line_no)

        incident = complex(values["incident_re"], values["incident_im"])
        total = complex(values["total_re"], values["total_im"])
        key = (emitter_id, freq_id, pol)
        bucket = samples.setdefault(key, {})
        if receiver_id in bucket:
            raise DatasetParseError("duplicate sample for emitter {0}, frequency {1}, receiver {2}".format(
                emitter_id, freq_id, receiver_id), line_no)
        bucket[receiver_id] = (incident, total)
        n_rows += 1

    records = {}
    for key, bucket in samples.items():
        rows = tuple((rid, bucket[rid][0], bucket[rid][1]) for rid in sorted(bucket))
        records[key] = ExperimentRecord(key[0], key[1], rows, key[2])
    logging.info(f"parsed {n_rows} samples into {len(records)} records ({dimension}D, convention {mapping.convention})")
    return Dataset(dimension, layout, sweep, records, mapping.convention)


#
# convention, reciprocity
#

def to_working_convention(d: Dataset) -> Dataset:
    """
        Conjugate every sample of an e^{+i omega t} dataset

        Returns the dataset itself when it already uses e^{-i omega t}.
    """
    if d.convention == CONVENTION_WORKING:
        return d
    logging.info(f"conjugating {len(d.records)} records to the e^(-iwt) convention")
    return d.with_records([rec.conjugated() for rec in d.records.values()], convention=CONVENTION_WORKING)


def _point_key(v):
    return tuple(float(c) for c in np.round(np.asarray(v, dtype=float), 9) + 0.0)


def reciprocity_swap(d: Dataset) -> Dataset:
    """
        Exchange the roles of emitters and receivers in a 3D dataset

        Every former receiver becomes a source polarized along its former
        measurement direction and every former emitter becomes a probe
        measuring along its former polarization. Samples are carried over
        unchanged. Sources and probes that coincide in space are merged, so
        the swapped dataset lives on an ExplicitGeometry3D.

        Parameters
        ----------
        d : Dataset
            3D dataset with parallel-polarization records only

        Returns
        -------
        swapped : Dataset
    """
    if d.dimension != 3:
        raise DatasetError("Reciprocity swap applies to 3D datasets only")
    if any(k[2] != "PP" for k in d.records):
        raise DatasetError("Reciprocity swap supports parallel polarization (PP) records only")

    source_ids: Dict[Tuple, int] = {}
    source_table: List[Tuple[Tuple, Tuple]] = []
    probe_ids: Dict[Tuple, int] = {}
    probe_table: List[Tuple[Tuple, Tuple]] = []
    buckets: Dict[Tuple[int, int], List[Row]] = {}

    for key in d.keys():
        rec = d.records[key]
        emitter, polarization = d.layout.source(rec.emitter_id, "PP")
        points = d.layout.receiver_points(rec.emitter_id)
        directions = d.layout.probe_directions(rec.emitter_id)
        probe_key = _point_key(emitter) + _point_key(polarization)
        if probe_key not in probe_ids:
            probe_ids[probe_key] = len(probe_table)
            probe_table.append((_point_key(emitter), _point_key(polarization)))
        probe = probe_ids[probe_key]
        for rid, inc, tot in rec.rows:
            source_key = _point_key(points[rid]) + _point_key(directions[rid])
            if source_key not in source_ids:
                source_ids[source_key] = len(source_table)
                source_table.append((_point_key(points[rid]), _point_key(directions[rid])))
            bucket = buckets.setdefault((source_ids[source_key], rec.frequency_id), [])
            if any(row[0] == probe for row in bucket):
                raise DatasetError("Swapped dataset would hold two samples for one source/probe pair")
            bucket.append((probe, inc, tot))

    geometry = ExplicitGeometry3D(
        source_points=tuple(s[0] for s in source_table),
        source_polarizations=tuple(s[1] for s in source_table),
        probe_points=tuple(p[0] for p in probe_table),
        probe_directions_table=tuple(p[1] for p in probe_table))
    records = {}
    for (sid, fid), rows in buckets.items():
        rec = ExperimentRecord(sid, fid, tuple(sorted(rows, key=lambda r: r[0])), "PP")
        records[rec.key] = rec
    metadata = dict(d.metadata)
    metadata["reciprocity"] = "swapped" if d.metadata.get("reciprocity") != "swapped" else "restored"
    logging.info(f"reciprocity swap: {len(d.records)} records -> {len(records)} records, "
                 f"{len(source_table)} sources, {len(probe_table)} probes")
    return Dataset(3, geometry, d.sweep, records, d.convention, metadata)


def measurement_triples(d: Dataset) -> List[Tuple[Tuple, Tuple, complex, complex]]:
    """Sorted (source point, probe point, incident, total) list of a 3D dataset"""
    triples = []
    for key in d.keys():
        rec = d.records[key]
        source, _ = d.layout.source(rec.emitter_id, rec.polarization)
        points = d.layout.receiver_points(rec.emitter_id)
        for rid, inc, tot in rec.rows:
            triples.append((_point_key(source), _point_key(points[rid]), inc, tot))
    return sorted(triples, key=lambda t: (t[0], t[1]))


#
# validation
#

@dataclass(frozen=True)
class ValidationIssue:
    kind: str
    key: Tuple
    detail: str


@dataclass
class ValidationReport:
    issues: List[ValidationIssue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return len(self.issues) == 0

    def of_kind(self, kind: str) -> List[ValidationIssue]:
        return [i for i in self.issues if i.kind == kind]

    def add(self, kind, key, detail):
        self.issues.append(ValidationIssue(kind, key, detail))


def validate(d: Dataset) -> ValidationReport:
    """
        Report-only coverage and sanity check

        Issues have one of the kinds ``missing_pair``, ``incomplete_receivers``,
        ``non_finite`` and ``outlier``. A non-finite sample is reported once and
        is excluded from the outlier statistics.
    """
    report = ValidationReport()
    pols = d.polarizations() or ([POL_NONE] if d.dimension == 2 else ["PP"])
    for pol in pols:
        for emitter_id in range(d.layout.n_emitters):
            for freq_id in range(len(d.sweep)):
                if (emitter_id, freq_id, pol) not in d.records:
                    report.add("missing_pair", (emitter_id, freq_id, pol),
                               "no record for emitter {0} at {1} Hz".format(emitter_id, d.sweep.values[freq_id]))

    explicit = isinstance(d.layout, ExplicitGeometry3D)
    magnitudes: Dict[int, List[float]] = {}
    for key in d.keys():
        rec = d.records[key]
        if not explicit and len(rec.rows) != d.layout.n_receivers:
            report.add("incomplete_receivers", key,
                       "{0} of {1} receivers present".format(len(rec.rows), d.layout.n_receivers))
        for rid, inc, tot in rec.rows:
            for name, value in (("incident", inc), ("total", tot)):
                if not np.isfinite(value):
                    report.add("non_finite", key + (rid,), "{0} value {1}".format(name, value))
                else:
                    magnitudes.setdefault(rec.frequency_id, []).append(abs(value))

    medians = {fid: float(np.median(m)) for fid, m in magnitudes.items() if m}
    for key in d.keys():
        rec = d.records[key]
        limit = OUTLIER_FACTOR * medians.get(rec.frequency_id, np.inf)
        for rid, inc, tot in rec.rows:
            for name, value in (("incident", inc), ("total", tot)):
                if np.isfinite(value) and abs(value) > limit:
                    report.add("outlier", key + (rid,), "{0} magnitude {1:.6g} exceeds {2:g} x median".format(
                        name, abs(value), OUTLIER_FACTOR))
    logging.info(f"validation: {len(report.issues)} issues in {len(d.records)} records")
    return report


#
# canonical container
#

def _floats(values):
    return ",".join(repr(float(v)) for v in values)


def _parse_floats(text):
    return tuple(float(v) for v in text.split(",")) if text else tuple()


def _layout_header(layout) -> List[str]:
    if isinstance(layout, Layout2D):
        return ["#layout\tlayout2d",
                "#emitter_radius\t" + repr(float(layout.emitter_radius)),
                "#receiver_radius\t" + repr(float(layout.receiver_radius)),
                "#emitter_azimuths\t" + _floats(layout.emitter_azimuths),
                "#receiver_offsets\t" + _floats(layout.receiver_offsets)]
    if isinstance(layout, Layout3D):
        return ["#layout\tlayout3d",
                "#sphere_radius\t" + repr(float(layout.sphere_radius)),
                "#emitter_azimuths\t" + _floats(layout.emitter_azimuths),
                "#emitter_altitudes\t" + _floats(layout.emitter_altitudes),
                "#receiver_azimuth_offsets\t" + _floats(layout.receiver_azimuth_offsets),
                "#receiver_altitude\t" + repr(float(layout.receiver_altitude))]
    lines = ["#layout\texplicit3d"]
    for point, pol in zip(layout.source_points, layout.source_polarizations):
        lines.append("#source\t" + _floats(point) + "\t" + _floats(pol))
    for point, direction in zip(layout.probe_points, layout.probe_directions_table):
        lines.append("#probe\t" + _floats(point) + "\t" + _floats(direction))
    return lines


def write_canonical(d: Dataset) -> bytes:
    """
        Serialize a dataset to the canonical text container

        Floats are written with their shortest round-trip representation,
        so read_canonical(write_canonical(d)) == d bit for bit.
    """
    header = [FORMAT_MAGIC,
              "#dimension\t{0}".format(d.dimension),
              "#convention\t" + d.convention,
              "#frequencies\t" + _floats(d.sweep.values)]
    header += _layout_header(d.layout)
    for key in sorted(d.metadata):
        value = str(d.metadata[key])
        if any(c in key + value for c in "\t\r\n"):
            raise DatasetError("Metadata entry {0} contains a tab or a line break".format(key))
        header.append("#meta.{0}\t{1}".format(key, value))
    header.append("#columns\t" + "\t".join(BODY_COLUMNS))

    body = []
    for key in d.keys():
        rec = d.records[key]
        for rid, inc, tot in rec.rows:
            body.append("\t".join([str(rec.emitter_id), str(rec.frequency_id), str(rid), rec.polarization,
                                   repr(inc.real), repr(inc.imag), repr(tot.real), repr(tot.imag)]))
    body_bytes = "".join(line + "\n" for line in body).encode("utf-8")
    checksum = zlib.crc32(body_bytes) & 0xFFFFFFFF
    head_bytes = "".join(line + "\n" for line in header).encode("utf-8")
    return head_bytes + body_bytes + "#crc32 {0:08x}\n".format(checksum).encode("utf-8")


def read_canonical(data: bytes) -> Dataset:
    if isinstance(data, str):
        data = data.encode("utf-8")
    try:
        lines = data.decode("utf-8").split("\n")
    except UnicodeDecodeError as e:
        raise CanonicalFormatError("Invalid UTF-8 at byte offset {0}".format(e.start))
    if lines and lines[-1] == "":
        lines = lines[:-1]
    if not lines or lines[0] != FORMAT_MAGIC:
        found = lines[0] if lines else ""
        raise CanonicalFormatError("Unsupported format header '{0}' (expected '{1}')".format(found, FORMAT_MAGIC))
    if not lines[-1].startswith("#crc32 "):
        raise CanonicalFormatError("Checksum line missing, stream truncated")

    header: Dict[str, str] = {}
    sources, probes, metadata = [], [], {}
    body_lines = []
    for line in lines[1:-1]:
        if line.startswith("#"):
            if body_lines:
                raise CanonicalFormatError("Header line after body data")
            name, _, value = line[1:].partition("\t")
            if name == "source":
                sources.append(value)
            elif name == "probe":
                probes.append(value)
            elif name.startswith("meta."):
                metadata[name[len("meta."):]] = value
            else:
                header[name] = value
        else:
            body_lines.append(line)

    body_bytes = "".join(line + "\n" for line in body_lines).encode("utf-8")
    expected = lines[-1][len("#crc32 "):].strip()
    if "{0:08x}".format(zlib.crc32(body_bytes) & 0xFFFFFFFF) != expected:
        raise CanonicalFormatError("Checksum mismatch (expected {0})".format(expected))

    try:
        dimension = int(header["dimension"])
        sweep = FrequencySweep(_parse_floats(header["frequencies"]))
        layout = _layout_from_header(header, sources, probes)
        records: Dict[Tuple[int, int, str], List[Row]] = {}
        for line in body_lines:
            e, f, r, pol, ire, iim, tre, tim = line.split("\t")
            records.setdefault((int(e), int(f), pol), []).append(
                (int(r), complex(float(ire), float(iim)), complex(float(tre), float(tim))))
        table = {k: ExperimentRecord(k[0], k[1], tuple(rows), k[2]) for k, rows in records.items()}
        return Dataset(dimension, layout, sweep, table, header["convention"], metadata)
    except (KeyError, ValueError) as e:
        raise CanonicalFormatError("Malformed canonical file: {0}".format(e))
    except GeometryError as e:
        raise CanonicalFormatError("Malformed layout: {0}".format(e.message))


def _layout_from_header(header, sources, probes):
    kind = header["layout"]
    if kind == "layout2d":
        return Layout2D(float(header["emitter_radius"]), float(header["receiver_radius"]),
                        _parse_floats(header["emitter_azimuths"]), _parse_floats(header["receiver_offsets"]))
    if kind == "layout3d":
        return Layout3D(float(header["sphere_radius"]), _parse_floats(header["emitter_azimuths"]),
                        _parse_floats(header["emitter_altitudes"]),
                        _parse_floats(header["receiver_azimuth_offsets"]), float(header["receiver_altitude"]))
    if kind == "explicit3d":
        src = [tuple(_parse_floats(part) for part in s.split("\t")) for s in sources]
        prb = [tuple(_parse_floats(part) for part in p.split("\t")) for p in probes]
        return ExplicitGeometry3D(tuple(s[0] for s in src), tuple(s[1] for s in src),
                                  tuple(p[0] for p in prb), tuple(p[1] for p in prb))
    raise CanonicalFormatError("Unknown layout kind {0}".format(kind))
