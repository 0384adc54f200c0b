"""Feature datasets, their on-disk format, synthetic generation and model archives.

Dataset directory layout::

    manifest.txt    key=value lines: dim, classes, progress, stream, count (records)
    features.bin    packed little-endian records:
                    uint32 sample_id | uint8 p | uint16 label | dim x float32
    train_ids.txt   one decimal sample id per line
    test_ids.txt

Model archive layout::

    model.meta      key=value lines, then ``tensor <name> <dims> <byte offset>`` lines
    model.bin       float32 little-endian payload, tensors back to back
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ArchiveError, ConfigError, CorruptDatasetError, FormatError
from .model import AMemNet, Architecture

ARCHIVE_FORMAT = "amemnet-archive-1"


def record_dtype(dim: int) -> np.dtype:
    return np.dtype([("sample_id", "<u4"), ("p", "u1"), ("label", "<u2"), ("x", "<f4", (dim,))])


@dataclass
class FeatureDataset:
    """Per-(sample, progress) feature records for one stream.

    ``features`` holds float64 values that are exactly representable in float32.
    """

    dim: int
    classes: int
    progress: int
    stream: str
    sample_ids: np.ndarray
    p: np.ndarray
    labels: np.ndarray
    features: np.ndarray
    train_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    test_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        self.p = np.asarray(self.p, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.train_ids = np.asarray(self.train_ids, dtype=np.int64)
        self.test_ids = np.asarray(self.test_ids, dtype=np.int64)
        self._index = {(int(s), int(q)): i for i, (s, q) in enumerate(zip(self.sample_ids, self.p))}

    def __len__(self) -> int:
        return len(self.sample_ids)

    def validate(self) -> None:
        n = len(self.sample_ids)
        if not (len(self.p) == len(self.labels) == len(self.features) == n):
            raise CorruptDatasetError("record arrays have different lengths")
        if self.features.ndim != 2 or self.features.shape[1] != self.dim:
            raise FormatError(f"features have shape {self.features.shape}, expected (n, {self.dim})")
        if len(self._index) != n:
            raise CorruptDatasetError("duplicate (sample_id, p) records")
        if n and (self.p.min() < 1 or self.p.max() > self.progress):
            raise CorruptDatasetError(f"progress index outside [1, {self.progress}]")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise CorruptDatasetError(f"label outside [0, {self.classes})")
        label_of: dict[int, int] = {}
        for s, lab in zip(self.sample_ids.tolist(), self.labels.tolist()):
            if label_of.setdefault(s, lab) != lab:
                raise CorruptDatasetError(f"sample {s} has inconsistent labels")
        for s in label_of:
            if (s, self.progress) not in self._index:
                raise CorruptDatasetError(f"sample {s} has no full-video record (p={self.progress})")
        for name, ids in (("train", self.train_ids), ("test", self.test_ids)):
            missing = [int(i) for i in ids if int(i) not in label_of]
            if missing:
                raise CorruptDatasetError(f"{name} split names unknown ids {missing[:5]}")
        if np.intersect1d(self.train_ids, self.test_ids).size:
            raise CorruptDatasetError("train and test splits overlap")

    def ids(self) -> np.ndarray:
        return np.unique(self.sample_ids)

    def record(self, sample_id: int, p: int) -> tuple[np.ndarray, int]:
        i = self._index[(int(sample_id), int(p))]
        return self.features[i], int(self.labels[i])

    def equals(self, other: "FeatureDataset") -> bool:
        return (self.dim == other.dim and self.classes == other.classes
                and self.progress == other.progress and self.stream == other.stream
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("sample_ids", "p", "labels", "features", "train_ids", "test_ids")))


@dataclass(frozen=True)
class FeatureTriplet:
    x: np.ndarray
    v: np.ndarray
    y: int
    p: int
    sample_id: int


def build_triplets(dataset: FeatureDataset, ids) -> list[FeatureTriplet]:
    """One (partial, full, label) triplet per sample and progress level."""
    out = []
    for s in np.asarray(ids, dtype=np.int64).tolist():
        if (s, dataset.progress) not in dataset._index:
            raise KeyError(f"unknown sample id {s}")
        v, y = dataset.record(s, dataset.progress)
        for p in range(1, dataset.progress + 1):
            try:
                x, _ = dataset.record(s, p)
            except KeyError:
                raise KeyError(f"sample {s} has no record at p={p}") from None
            out.append(FeatureTriplet(x, v, y, p, s))
    return out


def triplet_arrays(dataset: FeatureDataset, ids):
    """``build_triplets`` as stacked arrays ``(X, V, y, p, sample_ids)``."""
    trip = build_triplets(dataset, ids)
    if not trip:
        d = dataset.dim
        return np.zeros((0, d)), np.zeros((0, d)), np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64)
    return (np.stack([t.x for t in trip]), np.stack([t.v for t in trip]),
            np.array([t.y for t in trip]), np.array([t.p for t in trip]),
            np.array([t.sample_id for t in trip]))


# key=value text -----------------------------------------------------------------

def parse_key_values(text: str, source: str = "<text>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _write_ids(path: Path, ids) -> None:
    path.write_text("".join(f"{int(i)}\n" for i in ids), encoding="utf-8")


def _read_ids(path: Path) -> np.ndarray:
    if not path.exists():
        return np.zeros(0, dtype=np.int64)
    return np.array([int(s) for s in path.read_text(encoding="utf-8").split()], dtype=np.int64)


def save_dataset(dataset: FeatureDataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    order = np.lexsort((dataset.p, dataset.sample_ids))
    rec = np.zeros(len(order), dtype=record_dtype(dataset.dim))
    rec["sample_id"] = dataset.sample_ids[order]
    rec["p"] = dataset.p[order]
    rec["label"] = dataset.labels[order]
    rec["x"] = dataset.features[order]
    (directory / "features.bin").write_bytes(rec.tobytes())
    manifest = {"dim": dataset.dim, "classes": dataset.classes, "progress": dataset.progress,
                "stream": dataset.stream, "count": len(order)}
    (directory / "manifest.txt").write_text(
        "".join(f"{k}={v}\n" for k, v in manifest.items()), encoding="utf-8")
    _write_ids(directory / "train_ids.txt", dataset.train_ids)
    _write_ids(directory / "test_ids.txt", dataset.test_ids)


def load_dataset(directory) -> FeatureDataset:
    directory = Path(directory)
    meta = parse_key_values((directory / "manifest.txt").read_text(encoding="utf-8"),
                            str(directory / "manifest.txt"))
    try:
        dim, classes = int(meta["dim"]), int(meta["classes"])
        progress, count = int(meta["progress"]), int(meta["count"])
        stream = meta["stream"]
    except KeyError as exc:
        raise FormatError(f"manifest is missing {exc.args[0]!r}") from None
    dt = record_dtype(dim)
    raw = (directory / "features.bin").read_bytes()
    whole, rest = divmod(len(raw), dt.itemsize)
    if rest:
        raise FormatError(f"features.bin is truncated: partial record at byte offset "
                          f"{whole * dt.itemsize} ({rest} of {dt.itemsize} bytes)")
    if whole != count:
        raise FormatError(f"features.bin holds {whole} records of dim {dim}, manifest says {count}")
    rec = np.frombuffer(raw, dtype=dt)
    ds = FeatureDataset(dim, classes, progress, stream, rec["sample_id"], rec["p"], rec["label"],
                        rec["x"].astype(np.float64),
                        _read_ids(directory / "train_ids.txt"), _read_ids(directory / "test_ids.txt"))
    ds.validate()
    return ds


# synthetic data -------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    """Class-prototype features whose signal fraction grows with progress as ``(p/P)**gamma``."""

    d: int = 64
    classes: int = 8
    progress: int = 10
    train_per_class: int = 100
    test_per_class: int = 50
    sigma_v: float = 0.1
    sigma_x: float = 0.2
    gamma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.d < 1 or self.classes < 1 or self.progress < 1:
            raise ConfigError("d, classes and progress must be positive")
        if self.train_per_class < 0 or self.test_per_class < 0:
            raise ConfigError("per-class sample counts must be nonnegative")
        if self.sigma_v < 0 or self.sigma_x < 0:
            raise ConfigError("noise scales must be nonnegative")
        if self.gamma <= 0:
            raise ConfigError("gamma must be positive")
        if self.progress > 255 or self.classes > 65535:
            raise ConfigError("progress must fit in uint8 and classes in uint16")


STREAMS = ("rgb", "flow")


def _synth_stream(cfg: SynthConfig, name: str, ss: np.random.SeedSequence) -> FeatureDataset:
    rng = np.random.Generator(np.random.PCG64(ss))
    d, P = cfg.d, cfg.progress
    protos = rng.standard_normal((cfg.classes, d))
    per_class = cfg.train_per_class + cfg.test_per_class
    n = cfg.classes * per_class
    labels = np.repeat(np.arange(cfg.classes), per_class)
    is_train = np.tile(np.arange(per_class) < cfg.train_per_class, cfg.classes)
    ids = np.arange(n)
    rho = (np.arange(1, P + 1) / P) ** cfg.gamma
    feats = np.empty((n, P, d))
    for s in range(n):
        v = protos[labels[s]] + cfg.sigma_v * rng.standard_normal(d)
        u = rng.standard_normal(d)
        eta = rng.standard_normal((P, d))
        feats[s] = rho[:, None] * v + (1.0 - rho[:, None]) * u + cfg.sigma_x * eta
    feats = feats.astype(np.float32).astype(np.float64)
    return FeatureDataset(
        d, cfg.classes, P, name,
        sample_ids=np.repeat(ids, P), p=np.tile(np.arange(1, P + 1), n),
        labels=np.repeat(labels, P), features=feats.reshape(n * P, d),
        train_ids=ids[is_train], test_ids=ids[~is_train])


def generate_synthetic(config: SynthConfig) -> tuple[FeatureDataset, FeatureDataset]:
    """Two independent stream analogs sharing sample ids and labels.

    Seeding: ``SeedSequence(config.seed).spawn(2)`` gives one PCG64 stream per
    feature stream; normals come from numpy's ``standard_normal``.
    """
    subs = np.random.SeedSequence(config.seed).spawn(len(STREAMS))
    return tuple(_synth_stream(config, name, ss) for name, ss in zip(STREAMS, subs))


# model archives -------------------------------------------------------------------

def save_model(model: AMemNet, path, extra: dict | None = None) -> None:
    """Write ``model.meta`` and ``model.bin`` into directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = [f"format={ARCHIVE_FORMAT}"]
    lines += [f"{k}={v}" for k, v in model.arch.as_dict().items()]
    lines += [f"{k}={v}" for k, v in (extra or {}).items()]
    payload = []
    offset = 0
    for name, arr in model.state_dict().items():
        buf = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        dims = "x".join(str(s) for s in arr.shape) or "scalar"
        lines.append(f"tensor {name} {dims} {offset}")
        payload.append(buf)
        offset += len(buf)
    (path / "model.meta").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (path / "model.bin").write_bytes(b"".join(payload))


def read_archive(path) -> tuple[dict[str, str], dict[str, tuple[tuple[int, ...], int]]]:
    path = Path(path)
    meta: dict[str, str] = {}
    index: dict[str, tuple[tuple[int, ...], int]] = {}
    for lineno, line in enumerate((path / "model.meta").read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("tensor "):
            parts = line.split()
            if len(parts) != 4:
                raise ArchiveError(f"model.meta:{lineno}: malformed tensor line {line!r}")
            _, name, dims, offset = parts
            shape = () if dims == "scalar" else tuple(int(s) for s in dims.split("x"))
            index[name] = (shape, int(offset))
        else:
            meta.update(parse_key_values(line, f"model.meta:{lineno}"))
    return meta, index


def load_model(path) -> AMemNet:
    path = Path(path)
    meta, index = read_archive(path)
    if meta.get("format") != ARCHIVE_FORMAT:
        raise ArchiveError(f"unsupported archive format {meta.get('format')!r}")
    try:
        arch = Architecture(d=int(meta["d"]), hidden=int(meta["hidden"]), h=int(meta["h"]),
                            slots=int(meta["slots"]), classes=int(meta["classes"]),
                            similarity=meta["similarity"])
    except KeyError as exc:
        raise ArchiveError(f"archive metadata is missing {exc.args[0]!r}") from None
    payload = (path / "model.bin").read_bytes()
    state = {}
    for name, shape in arch.tensor_shapes().items():
        if name not in index:
            raise ArchiveError(f"tensor {name} missing from archive")
        got, offset = index[name]
        if got != shape:
            raise ArchiveError(f"tensor {name} has shape {got}, architecture requires {shape}")
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if offset < 0 or offset + nbytes > len(payload):
            raise ArchiveError(f"tensor {name} extends past the end of model.bin")
        state[name] = np.frombuffer(payload, dtype="<f4", count=nbytes // 4,
                                    offset=offset).reshape(shape).astype(np.float64)
    unknown = set(index) - set(state)
    if unknown:
        raise ArchiveError(f"archive has unexpected tensors {sorted(unknown)}")
    model = AMemNet(arch, 0)
    model.load_state_dict(state)
    return model
