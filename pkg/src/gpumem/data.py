"""Task-record schema, CSV I/O, synthetic workload generator, scaling, splits."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .numerics import make_rng

log = logging.getLogger(__name__)

FEATURES = ("task_type", "model_arch", "input_dim", "batch_size", "num_layers",
            "num_parameters", "precision_encoded", "parameters_per_layer")
TARGET = "memory_usage_mb"
COLUMNS = FEATURES + (TARGET,)
CATEGORICAL = ("task_type", "model_arch")
NUMERIC = tuple(f for f in FEATURES if f not in CATEGORICAL)
TASK_TYPES = ("training", "inference")

PPL_DIVISOR = 1_024_000
PPL_TOLERANCE = 1e-4
MEMORY_CAP_MB = 48000.0


class DataError(ValueError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.row = row
        self.column = column


class VocabularyError(DataError):
    pass


def parameters_per_layer(num_parameters: float, num_layers: float) -> float:
    return num_parameters / (num_layers * PPL_DIVISOR)


@dataclass(frozen=True)
class TaskRecord:
    task_type: str
    model_arch: str
    input_dim: int
    batch_size: int
    num_layers: int
    num_parameters: int
    precision_encoded: int
    parameters_per_layer: float
    memory_usage_mb: float | None = None

    def validate(self, row: int | None = None, require_target: bool = True) -> None:
        if self.task_type not in TASK_TYPES:
            raise DataError(f"task_type must be one of {TASK_TYPES}, got {self.task_type!r}", row, "task_type")
        if not self.model_arch:
            raise DataError("empty model_arch", row, "model_arch")
        for name in ("input_dim", "batch_size", "num_layers", "num_parameters"):
            if getattr(self, name) <= 0:
                raise DataError(f"must be positive, got {getattr(self, name)}", row, name)
        if self.precision_encoded not in (0, 1, 2):
            raise DataError(f"precision_encoded must be 0, 1 or 2, got {self.precision_encoded}",
                            row, "precision_encoded")
        ppl = self.parameters_per_layer
        if not math.isfinite(ppl) or ppl < 0:
            raise DataError(f"invalid value {ppl}", row, "parameters_per_layer")
        expected = parameters_per_layer(self.num_parameters, self.num_layers)
        if abs(ppl - expected) > PPL_TOLERANCE:
            raise DataError(f"{ppl} disagrees with num_parameters/(num_layers*{PPL_DIVISOR}) = {expected:.6f}",
                            row, "parameters_per_layer")
        m = self.memory_usage_mb
        if m is None:
            if require_target:
                raise DataError("missing target", row, TARGET)
        elif not (math.isfinite(m) and 0.0 < m <= MEMORY_CAP_MB):
            raise DataError(f"must lie in (0, {MEMORY_CAP_MB:g}], got {m}", row, TARGET)


# ---------------------------------------------------------------- CSV

_INT_COLUMNS = ("input_dim", "batch_size", "num_layers", "num_parameters", "precision_encoded")


def _parse_int(text: str, row: int, column: str) -> int:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"cannot parse {text!r} as an integer", row, column) from None
    if not value.is_integer():
        raise DataError(f"expected an integer, got {text!r}", row, column)
    return int(value)


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataError(f"cannot parse {text!r} as a number", row, column) from None


def read_csv(path: str | Path, require_target: bool = True) -> list[TaskRecord]:
    """Parse and validate a task CSV. Row numbers in errors count the header as row 1.

    Files shaped like the published sample (no ``task_type``/``batch_size``
    columns) are accepted with ``task_type=training`` and ``batch_size=1``.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        if not header:
            raise DataError(f"{path}: missing header row")
        reader.fieldnames = header
        required = list(COLUMNS if require_target else FEATURES)
        defaults = {}
        for col, default in (("task_type", "training"), ("batch_size", "1")):
            if col not in header:
                defaults[col] = default
        if defaults:
            log.warning("%s: columns %s missing; defaulting %s", path, sorted(defaults), defaults)
        missing = [c for c in required if c not in header and c not in defaults]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}")

        records = []
        for i, raw in enumerate(reader, start=2):
            raw = {**defaults, **{k: (v or "").strip() for k, v in raw.items() if k is not None}}
            for col in required:
                if raw.get(col, "") == "":
                    raise DataError("empty value", i, col)
            target = None
            if require_target or raw.get(TARGET, "") != "":
                target = _parse_float(raw[TARGET], i, TARGET) if TARGET in raw else None
            rec = TaskRecord(
                task_type=raw["task_type"],
                model_arch=raw["model_arch"],
                **{c: _parse_int(raw[c], i, c) for c in _INT_COLUMNS},
                parameters_per_layer=_parse_float(raw["parameters_per_layer"], i, "parameters_per_layer"),
                memory_usage_mb=target,
            )
            rec.validate(row=i, require_target=require_target)
            records.append(rec)
    return records


load_csv = read_csv


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_csv(records: Iterable[TaskRecord], path: str | Path, include_target: bool = True) -> None:
    cols = COLUMNS if include_target else FEATURES
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in records:
            d = asdict(r)
            w.writerow([_fmt(d[c]) for c in cols])


# ---------------------------------------------------------------- synthetic generator

@dataclass(frozen=True)
class SyntheticLaw:
    """Generative law for synthetic task records (version 1).

    memory_mb = c_params * num_parameters * bytes_per_param / 2**20
              + c_act * batch_size * input_dim * num_layers / 2**10
              + c_arch * arch_offset[model_arch]
              + Normal(0, sigma), clipped to [1, 48000]
    """

    version: int = 1
    c_params: float = 3.0
    c_act: float = 0.5
    c_arch: float = 1.0
    sigma: float = 50.0
    bytes_per_param: tuple[int, int, int] = (2, 4, 8)
    arch_offset: tuple[tuple[str, float], ...] = (
        ("BERT", 2500.0), ("GAN", 800.0), ("ResNet50", 1000.0), ("Transformer", 3000.0),
        ("U-Net", 1200.0), ("VGG16", 1500.0), ("YOLO v4", 2000.0),
    )
    input_dim_range: tuple[int, int] = (32, 512)
    batch_sizes: tuple[int, ...] = (1, 2, 4, 8, 16, 32, 64, 128)
    num_layers_range: tuple[int, int] = (8, 120)
    log10_params_range: tuple[float, float] = (5.0, 9.0)
    inference_fraction: float = 0.3

    def mean_memory(self, rec: TaskRecord) -> float:
        offsets = dict(self.arch_offset)
        return (self.c_params * rec.num_parameters * self.bytes_per_param[rec.precision_encoded] / 2 ** 20
                + self.c_act * rec.batch_size * rec.input_dim * rec.num_layers / 2 ** 10
                + self.c_arch * offsets[rec.model_arch])


DEFAULT_LAW = SyntheticLaw()


def generate_synthetic(n: int, seed: int, law: SyntheticLaw = DEFAULT_LAW) -> list[TaskRecord]:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = make_rng(seed, law.version)
    archs = [a for a, _ in law.arch_offset]
    out = []
    for _ in range(n):
        arch = archs[rng.integers(len(archs))]
        task = TASK_TYPES[int(rng.random() < law.inference_fraction)]
        input_dim = int(rng.integers(law.input_dim_range[0], law.input_dim_range[1] + 1))
        batch = int(law.batch_sizes[rng.integers(len(law.batch_sizes))])
        layers = int(rng.integers(law.num_layers_range[0], law.num_layers_range[1] + 1))
        params = int(round(10 ** rng.uniform(*law.log10_params_range)))
        precision = int(rng.integers(3))
        noise = rng.normal(0.0, law.sigma)
        rec = TaskRecord(task, arch, input_dim, batch, layers, params, precision,
                         parameters_per_layer(params, layers))
        mem = float(np.clip(law.mean_memory(rec) + noise, 1.0, MEMORY_CAP_MB))
        out.append(TaskRecord(**{**asdict(rec), TARGET: mem}))
    return out


# ---------------------------------------------------------------- feature spec & scaling

@dataclass(frozen=True)
class FeatureDesc:
    name: str
    kind: str  # "numeric" | "categorical"
    vocab: tuple[str, ...] = ()

    def code(self, value: str, row: int | None = None) -> int:
        try:
            return self.vocab.index(value)
        except ValueError:
            raise VocabularyError(f"unknown category {value!r} (known: {list(self.vocab)})",
                                  row, self.name) from None


@dataclass(frozen=True)
class FeatureSpec:
    """Ordered token layout; the order is part of the model."""

    features: tuple[FeatureDesc, ...]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def __getitem__(self, name: str) -> FeatureDesc:
        for f in self.features:
            if f.name == name:
                return f
        raise KeyError(name)

    def reorder(self, names: Sequence[str]) -> "FeatureSpec":
        return FeatureSpec(tuple(self[n] for n in names))

    def to_dict(self) -> dict:
        return {"features": [{"name": f.name, "kind": f.kind, "vocab": list(f.vocab)} for f in self.features]}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpec":
        return cls(tuple(FeatureDesc(f["name"], f["kind"], tuple(f["vocab"])) for f in d["features"]))

    @classmethod
    def from_records(cls, records: Sequence[TaskRecord]) -> "FeatureSpec":
        archs = tuple(sorted({r.model_arch for r in records}))
        feats = []
        for name in FEATURES:
            if name == "task_type":
                feats.append(FeatureDesc(name, "categorical", TASK_TYPES))
            elif name == "model_arch":
                feats.append(FeatureDesc(name, "categorical", archs))
            else:
                feats.append(FeatureDesc(name, "numeric"))
        return cls(tuple(feats))


@dataclass
class Scaler:
    """Z-score statistics fitted on the training split only.

    A zero-variance feature is kept with std 1 and listed in ``passthrough``.
    """

    mean: dict[str, float]
    std: dict[str, float]
    target_mean: float
    target_std: float
    passthrough: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "target_mean": self.target_mean,
                "target_std": self.target_std, "passthrough": list(self.passthrough)}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(dict(d["mean"]), dict(d["std"]), d["target_mean"], d["target_std"], tuple(d["passthrough"]))

    def scale_target(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.target_mean) / self.target_std

    def unscale_target(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.target_std + self.target_mean


def _column(records: Sequence[TaskRecord], name: str) -> np.ndarray:
    return np.array([float(getattr(r, name)) for r in records], dtype=np.float64)


def fit_scaler(records: Sequence[TaskRecord], train_idx: Sequence[int]) -> Scaler:
    if len(train_idx) == 0:
        raise DataError("cannot fit a scaler on an empty training split")
    train = [records[i] for i in train_idx]
    mean, std, passthrough = {}, {}, []
    for name in NUMERIC:
        col = _column(train, name)
        mean[name] = float(col.mean())
        s = float(col.std())
        if s > 0:
            std[name] = s
        else:
            std[name] = 1.0
            passthrough.append(name)
    y = _column(train, TARGET)
    ys = float(y.std())
    if not ys > 0:
        raise DataError("target has zero variance on the training split")
    return Scaler(mean, std, float(y.mean()), ys, tuple(passthrough))


@dataclass
class Encoded:
    """Standardized view of a record list.

    ``numeric`` maps feature name to z-scores; ``codes`` maps categorical
    feature name to dense vocab indices; ``y`` is the standardized target
    (None when records carry no target).
    """

    numeric: dict[str, np.ndarray]
    codes: dict[str, np.ndarray]
    y: np.ndarray | None

    def __len__(self) -> int:
        return len(next(iter(self.numeric.values())))

    def subset(self, idx) -> "Encoded":
        idx = np.asarray(idx, dtype=np.int64)
        return Encoded({k: v[idx] for k, v in self.numeric.items()},
                       {k: v[idx] for k, v in self.codes.items()},
                       None if self.y is None else self.y[idx])


def apply_scaler(records: Sequence[TaskRecord], scaler: Scaler, spec: FeatureSpec) -> Encoded:
    numeric, codes = {}, {}
    for f in spec.features:
        if f.kind == "numeric":
            numeric[f.name] = (_column(records, f.name) - scaler.mean[f.name]) / scaler.std[f.name]
        else:
            codes[f.name] = np.array([f.code(getattr(r, f.name), row=i)
                                      for i, r in enumerate(records)], dtype=np.int64)
    y = None
    if records and all(r.memory_usage_mb is not None for r in records):
        y = scaler.scale_target(_column(records, TARGET))
    return Encoded(numeric, codes, y)


def tree_columns(spec: FeatureSpec) -> list[str]:
    """Column order of :func:`tree_matrix`: z-scored numerics, integer codes, one-hot model_arch."""
    cols = [f.name for f in spec.features if f.kind == "numeric"]
    cols += [f"{f.name}#code" for f in spec.features if f.kind == "categorical"]
    cols += [f"model_arch={a}" for a in spec["model_arch"].vocab]
    return cols


def tree_matrix(enc: Encoded, spec: FeatureSpec) -> np.ndarray:
    n = len(enc)
    parts = [enc.numeric[f.name][:, None] for f in spec.features if f.kind == "numeric"]
    parts += [enc.codes[f.name][:, None].astype(np.float64) for f in spec.features if f.kind == "categorical"]
    onehot = np.zeros((n, len(spec["model_arch"].vocab)))
    onehot[np.arange(n), enc.codes["model_arch"]] = 1.0
    parts.append(onehot)
    return np.hstack(parts)


# ---------------------------------------------------------------- splits

@dataclass(frozen=True)
class DatasetSplits:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]
    seed: int
    fractions: tuple[float, ...] = field(default=(0.7, 0.15, 0.15))

    def get(self, name: str) -> tuple[int, ...]:
        return getattr(self, name)


def split(n: int, fractions: Sequence[float] = (0.7, 0.15, 0.15), seed: int = 0) -> DatasetSplits:
    """Seeded permutation cut by cumulative fractions.

    Every part but the last gets ``floor(fraction * n)`` rows; the last
    takes the remainder.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    perm = make_rng(seed).permutation(n)
    sizes = [int(math.floor(f * n)) for f in fractions[:-1]]
    sizes.append(n - sum(sizes))
    if min(sizes) == 0:
        raise ValueError(f"split sizes {sizes} for n={n} leave a part empty")
    a, b = sizes[0], sizes[0] + sizes[1]
    return DatasetSplits(tuple(int(i) for i in perm[:a]), tuple(int(i) for i in perm[a:b]),
                         tuple(int(i) for i in perm[b:]), seed, fractions)

