"""Reading and writing matrices, manifests, checkpoints, run configs and reports.

Matrix files hold one r x r matrix as r lines of comma- or whitespace-separated
decimals; we write 17 significant digits so float64 values survive the trip.

A manifest is a CSV file with a ``path`` column (relative to the manifest) and
optional ``subject_id``, ``label`` and ``timepoint`` columns. Without a
timepoint column (or with a single timepoint) it loads as a Population; with
several timepoints it loads as one Trajectory per subject.
"""
from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch

from .classification import ClassifierConfig, GatModel
from .evolution import CascadeModel, EvolutionHyperparams, InconsistentTrajectoryLength
from .graph_core import ConnectivityMatrix, GraphError, Population, Trajectory, validate_connectivity
from .harness import ClassificationReport, RegressionReport
from .synthetic import SynthSpec
from .templates import TemplateConfig


class SchemaError(ValueError):
    pass


class FileMissing(FileNotFoundError):
    pass


class MatrixInvalid(ValueError):
    pass


class InconsistentR(ValueError):
    pass


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# matrices


def parse_matrix(text: str, source: str = "<text>") -> np.ndarray:
    rows = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            rows.append([float(tok) for tok in line.replace(",", " ").split()])
        except ValueError as exc:
            raise MatrixInvalid(f"{source}: {exc}") from None
    if not rows:
        raise MatrixInvalid(f"{source}: no rows")
    if any(len(row) != len(rows) for row in rows):
        raise MatrixInvalid(f"{source}: expected {len(rows)} values per row, got {sorted({len(r) for r in rows})}")
    return np.array(rows, dtype=np.float64)


def read_matrix(path, validate: bool = True) -> Union[ConnectivityMatrix, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise FileMissing(f"{path}: no such file")
    raw = parse_matrix(path.read_text(), str(path))
    if not validate:
        return raw
    try:
        return validate_connectivity(raw)
    except GraphError as exc:
        raise MatrixInvalid(f"{path}: {exc}") from None


def format_matrix(m) -> str:
    a = np.asarray(m, dtype=np.float64)
    return "".join(" ".join("%.17g" % v for v in row) + "\n" for row in a)


def write_matrix(path, m) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_matrix(m))
    return path


def population_hash(matrices) -> str:
    """SHA-256 over shapes and little-endian float64 bytes, in order."""
    h = hashlib.sha256()
    for m in matrices:
        a = np.ascontiguousarray(np.asarray(m, dtype="<f8"))
        h.update(struct.pack("<II", *a.shape))
        h.update(a.tobytes())
    return h.hexdigest()


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_template(path, template, population, cfg: TemplateConfig, seed: int, extra: Optional[dict] = None) -> Path:
    """Template matrix plus ``<path>.meta.json`` (population hash, config, seed)."""
    path = write_matrix(path, template)
    members = population.members if isinstance(population, Population) else population
    meta = {
        "kind": "template",
        "population_hash": population_hash(members),
        "population_size": len(members),
        "config": cfg.to_dict(),
        "seed": seed,
        **(extra or {}),
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read_template(path):
    """-> (ConnectivityMatrix, metadata dict)."""
    meta_file = sidecar_path(path)
    if not meta_file.is_file():
        raise FileMissing(f"{meta_file}: template metadata missing")
    return read_matrix(path), json.loads(meta_file.read_text())


# ---------------------------------------------------------------------------
# manifests


MANIFEST_COLUMNS = ("path", "subject_id", "label", "timepoint")


@dataclass
class ManifestRow:
    path: Path
    subject_id: str
    label: object
    timepoint: Optional[int]


def _parse_label(text: str):
    text = text.strip()
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        return text


def read_manifest(path) -> list[ManifestRow]:
    path = Path(path)
    if not path.is_file():
        raise FileMissing(f"{path}: no such manifest")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        if "path" not in header:
            raise SchemaError(f"{path}: manifest needs a 'path' column, found {header}")
        unknown = set(header) - set(MANIFEST_COLUMNS)
        if unknown:
            raise SchemaError(f"{path}: unknown manifest columns {sorted(unknown)}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            rec = {k.strip(): (v or "").strip() for k, v in rec.items() if k is not None}
            if not rec.get("path"):
                raise SchemaError(f"{path}:{lineno}: empty path")
            tp = rec.get("timepoint", "")
            try:
                tp = int(tp) if tp != "" else None
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: timepoint {tp!r} is not an integer") from None
            file = (path.parent / rec["path"]).resolve()
            rows.append(ManifestRow(file, rec.get("subject_id") or Path(rec["path"]).stem, _parse_label(rec.get("label", "")), tp))
    if not rows:
        raise SchemaError(f"{path}: manifest lists no matrices")
    return rows


def manifest_hash(path) -> str:
    """Hash of the manifest text and every matrix it references."""
    h = hashlib.sha256(Path(path).read_bytes())
    for row in read_manifest(path):
        h.update(row.path.read_bytes() if row.path.is_file() else b"")
    return h.hexdigest()


@dataclass(frozen=True)
class Scaling:
    """Affine map taking a dataset's off-diagonal range onto [0, 1]."""

    low: float = 0.0
    high: float = 1.0

    @classmethod
    def fit(cls, matrices) -> "Scaling":
        stack = np.stack([np.asarray(m, dtype=np.float64) for m in matrices])
        off = stack[:, ~np.eye(stack.shape[1], dtype=bool)]
        return cls(float(off.min()), float(off.max())) if off.size else cls()

    def apply(self, m) -> ConnectivityMatrix:
        a = np.asarray(m, dtype=np.float64)
        span = self.high - self.low
        s = (a - self.low) / span if span > 0 else np.zeros_like(a)
        np.fill_diagonal(s, 0.0)
        return ConnectivityMatrix(np.clip(s, 0.0, 1.0))

    def to_dict(self) -> dict:
        return {"low": self.low, "high": self.high}


IDENTITY_SCALING = Scaling()


def load_manifest_with_scaling(path, normalize: bool = True):
    """Like :func:`load_manifest` but also returns the :class:`Scaling` used."""
    rows = read_manifest(path)
    mats = []
    for row in rows:
        mats.append(read_matrix(row.path))
    sizes = {m.num_rois for m in mats}
    if len(sizes) > 1:
        by_r = {r: next(str(row.path) for row, m in zip(rows, mats) if m.num_rois == r) for r in sorted(sizes)}
        raise InconsistentR(f"matrices disagree on r: {by_r}")
    scale = Scaling.fit(mats) if normalize else IDENTITY_SCALING
    if normalize:
        mats = [scale.apply(m) for m in mats]

    timepoints = sorted({row.timepoint for row in rows if row.timepoint is not None})
    if any(row.timepoint is None for row in rows) and timepoints:
        raise SchemaError(f"{path}: timepoint given for some rows but not others")
    if len(timepoints) <= 1:
        subjects = [row.subject_id for row in rows]
        if len(set(subjects)) != len(subjects):
            raise SchemaError(f"{path}: duplicate subject ids without timepoints")
        labels = [row.label for row in rows]
        if all(l is None for l in labels):
            labels = None
        elif any(l is None for l in labels):
            raise SchemaError(f"{path}: label given for some rows but not others")
        return Population(mats, labels), scale

    grouped: dict[str, dict[int, ConnectivityMatrix]] = {}
    for row, m in zip(rows, mats):
        states = grouped.setdefault(row.subject_id, {})
        if row.timepoint in states:
            raise SchemaError(f"{path}: subject {row.subject_id} lists timepoint {row.timepoint} twice")
        states[row.timepoint] = m
    trajectories = []
    for subject, states in grouped.items():
        missing = [t for t in timepoints if t not in states]
        if missing:
            raise InconsistentTrajectoryLength(f"subject {subject} is missing timepoint(s) {missing}")
        trajectories.append(Trajectory([states[t] for t in timepoints], subject_id=subject))
    return trajectories, scale


def load_manifest(path, normalize: bool = True):
    """Population (single timepoint) or list of Trajectory (several)."""
    return load_manifest_with_scaling(path, normalize)[0]


def write_manifest(path, entries) -> Path:
    """``entries``: dicts with ``path`` and any of subject_id/label/timepoint."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = [c for c in MANIFEST_COLUMNS if any(c in e for e in entries)]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for e in entries:
            w.writerow({c: e.get(c, "") for c in cols})
    return path


# ---------------------------------------------------------------------------
# checkpoints
#
# layout: MAGIC | u32 version | u32 header length | JSON header | float64 data
# The header lists every parameter array (name, shape, element offset); the
# data block is their little-endian float64 values back to back.

MAGIC = b"RSHOTCKP"
CHECKPOINT_VERSION = 1
KIND_CASCADE = "cascade"
KIND_CLASSIFIER = "gat-classifier"


def _pack(state: dict) -> tuple[list, bytes]:
    entries, blobs, offset = [], [], 0
    for name, t in state.items():
        a = np.ascontiguousarray(t.detach().cpu().numpy().astype("<f8"))
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size
        blobs.append(a.tobytes())
    return entries, b"".join(blobs)


def save_checkpoint(path, model, hyperparams: dict, manifest_hash: str = "", extra: Optional[dict] = None) -> Path:
    if isinstance(model, CascadeModel):
        kind = KIND_CASCADE
        arch = {"num_rois": model.generators[0].num_rois, "num_stages": model.num_stages}
    elif isinstance(model, GatModel):
        kind = KIND_CLASSIFIER
        arch = {"num_rois": model.num_rois, "classes": list(model.classes)}
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    entries, data = _pack(model.state_dict())
    header = {
        "kind": kind,
        "architecture": arch,
        "hyperparams": hyperparams,
        "manifest_hash": manifest_hash,
        "arrays": entries,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(blob)) + blob + data)
    return path


def read_checkpoint(path) -> tuple[dict, dict]:
    """-> (header, {name: float64 tensor})."""
    path = Path(path)
    if not path.is_file():
        raise FileMissing(f"{path}: no such checkpoint")
    raw = path.read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", raw, len(MAGIC))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = len(MAGIC) + 8
    header = json.loads(raw[start : start + hlen])
    data = np.frombuffer(raw, dtype="<f8", offset=start + hlen)
    state = {}
    for e in header["arrays"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        if e["offset"] + n > data.size:
            raise CheckpointError(f"{path}: truncated at array {e['name']}")
        state[e["name"]] = torch.from_numpy(data[e["offset"] : e["offset"] + n].astype(np.float64).reshape(e["shape"]))
    return header, state


def load_checkpoint(path):
    """-> (model in eval mode, header)."""
    header, state = read_checkpoint(path)
    arch, hp = header["architecture"], header["hyperparams"]
    if header["kind"] == KIND_CASCADE:
        model = CascadeModel(arch["num_rois"], arch["num_stages"], hp.get("hidden_dims", (16, 16)))
    elif header["kind"] == KIND_CLASSIFIER:
        model = GatModel(
            arch["num_rois"],
            hp.get("hidden_dims", (16, 16)),
            hp.get("dropout_rate", 0.0),
            tuple(arch["classes"]),
            hp.get("leaky_relu_alpha", 0.2),
        )
    else:
        raise CheckpointError(f"{path}: unknown model kind {header['kind']!r}")
    model.load_state_dict(state)
    model.eval()
    return model, header


# ---------------------------------------------------------------------------
# run configuration

CONFIG_SCHEMA_VERSION = 1
TASKS = ("regression", "classification")


def _from_dict(cls, d: Optional[dict]):
    d = dict(d or {})
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise SchemaError(f"unknown {cls.__name__} fields {sorted(unknown)}")
    return cls(**d)


@dataclass
class RunConfig:
    task: str = "classification"
    strategies: list = field(default_factory=lambda: ["all", "cbt", "avg", "random"])
    random_repeats: int = 20
    synthetic: Optional[SynthSpec] = None
    manifest: Optional[str] = None
    template: TemplateConfig = field(default_factory=TemplateConfig)
    evolution: EvolutionHyperparams = field(default_factory=EvolutionHyperparams)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    folds: int = 5
    positive_class: object = None  # None: "AD" if present, else the last sorted label
    normalize: bool = True
    output_dir: str = "results"
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise SchemaError(f"task must be one of {TASKS}, got {self.task!r}")
        if (self.synthetic is None) == (self.manifest is None):
            raise SchemaError("exactly one dataset source (synthetic or manifest) is required")
        if self.random_repeats < 1 or self.folds < 2:
            raise SchemaError("random_repeats must be >= 1 and folds >= 2")
        from .harness import Strategy

        try:
            self.strategies = [Strategy(s).value for s in self.strategies]
        except ValueError as exc:
            raise SchemaError(str(exc)) from None

    def to_dict(self) -> dict:
        return {
            "schema_version": CONFIG_SCHEMA_VERSION,
            "task": self.task,
            "strategies": list(self.strategies),
            "random_repeats": self.random_repeats,
            "dataset": {"synthetic": self.synthetic.to_dict()} if self.synthetic else {"manifest": self.manifest},
            "template": self.template.to_dict(),
            "evolution": self.evolution.to_dict(),
            "classifier": self.classifier.to_dict(),
            "folds": self.folds,
            "positive_class": self.positive_class,
            "normalize": self.normalize,
            "output_dir": self.output_dir,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir: Optional[Path] = None) -> "RunConfig":
        d = dict(d)
        version = d.pop("schema_version", None)
        if version != CONFIG_SCHEMA_VERSION:
            raise SchemaError(f"config schema_version must be {CONFIG_SCHEMA_VERSION}, got {version!r}")
        dataset = d.pop("dataset", None)
        if not isinstance(dataset, dict) or len(dataset) != 1 or not set(dataset) <= {"synthetic", "manifest"}:
            raise SchemaError("dataset must hold exactly one of 'synthetic' or 'manifest'")
        if "synthetic" in dataset:
            d["synthetic"] = _from_dict(SynthSpec, dataset["synthetic"])
        else:
            manifest = Path(dataset["manifest"])
            if base_dir is not None and not manifest.is_absolute():
                manifest = base_dir / manifest
            if not manifest.is_file():
                raise FileMissing(f"{manifest}: manifest referenced by config does not exist")
            d["manifest"] = str(manifest)
        d["template"] = _from_dict(TemplateConfig, d.get("template"))
        d["evolution"] = _from_dict(EvolutionHyperparams, d.get("evolution"))
        d["classifier"] = _from_dict(ClassifierConfig, d.get("classifier"))
        return _from_dict(cls, d)


def save_config(path, cfg: RunConfig) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileMissing(f"{path}: no such config")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from None
    return RunConfig.from_dict(d, base_dir=path.parent)


# ---------------------------------------------------------------------------
# reports


def report_json(report) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def save_report(report, out_dir, stem: str = "report") -> tuple[Path, Path]:
    """Write ``<stem>.json`` (machine-readable) and ``<stem>.md`` (table)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    js = out / f"{stem}.json"
    md = out / f"{stem}.md"
    js.write_text(report_json(report))
    md.write_text(report.render())
    return js, md


def load_report(path):
    d = json.loads(Path(path).read_text())
    if d.get("task") == "regression":
        return RegressionReport.from_dict(d)
    if d.get("task") == "classification":
        return ClassificationReport.from_dict(d)
    raise SchemaError(f"{path}: unknown report task {d.get('task')!r}")
