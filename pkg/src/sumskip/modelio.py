"""Model and dataset persistence.

A model is stored as a JSON manifest plus a little-endian IEEE-754 weight
blob: tensors are concatenated row-major at the byte offsets the manifest
declares (contiguous, ascending).  Every invariant is validated at load time
and each violation raises its own diagnostic type.

Also provides an IDX image/label ingester and a seeded synthetic blob dataset
generated by the Philox-4x64-10 counter-based PRNG (numpy's Philox bit
generator, standard round constants, seeded through SeedSequence), which makes
identical seeds reproduce identical datasets across platforms.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    BlobLengthError,
    IdxFormatError,
    MissingTensorError,
    ModelFormatError,
    NonFiniteWeightError,
    TensorShapeError,
)
from .tensor import Tensor, conv_output_extent

SCHEMA_VERSION = 1
LAYER_KINDS = ("dense", "conv2d", "batchnorm", "relu", "avg_pool_global", "prediction_head")
_PRECISIONS = {"f32": np.dtype(np.float32), "f64": np.dtype(np.float64)}

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class LayerSpec:
    """One layer: kind, kind-specific geometry, and named weight references."""

    name: str
    kind: str
    geometry: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)

    def weight_name(self, role: str) -> str | None:
        return self.weights.get(role)


@dataclass(frozen=True)
class Model:
    """Ordered layers plus the named tensors they reference. Immutable after load."""

    layers: tuple[LayerSpec, ...]
    tensors: dict[str, Tensor]
    precision: str = "f64"
    class_count: int = 2
    input_shape: tuple[int, ...] = ()

    @property
    def dtype(self) -> np.dtype:
        return _PRECISIONS[self.precision]

    def layer(self, name: str) -> LayerSpec:
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def tensor(self, name: str) -> Tensor:
        return self.tensors[name]

    def with_tensors(self, updates: dict[str, np.ndarray]) -> "Model":
        """Copy of the model with some tensors replaced (dtype preserved)."""
        merged = dict(self.tensors)
        for name, arr in updates.items():
            if name not in merged:
                raise KeyError(name)
            merged[name] = Tensor(np.asarray(arr), dtype=self.dtype)
        return replace(self, tensors=merged)

    def astype(self, precision: str) -> "Model":
        dtype = _PRECISIONS[precision]
        cast = {name: Tensor(t.array, dtype=dtype) for name, t in self.tensors.items()}
        return replace(self, tensors=cast, precision=precision)


@dataclass
class Dataset:
    """Classification samples: flat input tensors, integer labels, a split tag."""

    inputs: list[Tensor]
    labels: np.ndarray
    n_classes: int
    split: str = "train"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise ModelFormatError(
                f"input/label count mismatch: {len(self.inputs)} vs {len(self.labels)}"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ModelFormatError("labels must lie in [0, n_classes)")

    def __len__(self) -> int:
        return len(self.inputs)

    def stacked(self, dtype=None) -> np.ndarray:
        """All inputs as one [N, dims] array."""
        return np.stack([t.data for t in self.inputs]).astype(dtype or np.float64, copy=False)

    def subset(self, indices, split: str | None = None) -> "Dataset":
        idx = np.asarray(indices)
        return Dataset(
            [self.inputs[i] for i in idx],
            self.labels[idx],
            self.n_classes,
            split or self.split,
        )


def split_dataset(ds: Dataset, sizes: tuple[int, int, int]) -> tuple[Dataset, Dataset, Dataset]:
    """Contiguous train/val/test split (round-robin labels keep each part balanced)."""
    n_train, n_val, n_test = sizes
    if n_train + n_val + n_test > len(ds):
        raise ModelFormatError(f"split sizes {sizes} exceed dataset size {len(ds)}")
    a, b = n_train, n_train + n_val
    return (
        ds.subset(range(0, a), "train"),
        ds.subset(range(a, b), "val"),
        ds.subset(range(b, b + n_test), "test"),
    )


# --- geometry checking ----------------------------------------------------

def _expected_shapes(spec: LayerSpec) -> dict[str, tuple[int, ...]]:
    g = spec.geometry
    if spec.kind == "dense":
        shapes = {"weight": (g["out"], g["in"])}
        if spec.weight_name("bias"):
            shapes["bias"] = (g["out"],)
        return shapes
    if spec.kind == "conv2d":
        shapes = {"weight": (g["out_channels"], g["in_channels"], g["kernel_h"], g["kernel_w"])}
        if spec.weight_name("bias"):
            shapes["bias"] = (g["out_channels"],)
        return shapes
    if spec.kind == "batchnorm":
        c = (g["channels"],)
        return {"gamma": c, "beta": c, "mean": c, "var": c}
    if spec.kind == "prediction_head":
        shapes = {"weight": (g["classes"], g["in"])}
        if spec.weight_name("bias"):
            shapes["bias"] = (g["classes"],)
        return shapes
    return {}


def _propagate_shape(spec: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    g = spec.geometry
    if spec.kind == "dense":
        if shape != (g["in"],):
            raise TensorShapeError(f"{spec.name}: expects input ({g['in']},), got {shape}")
        return (g["out"],)
    if spec.kind == "conv2d":
        if len(shape) != 3 or shape[0] != g["in_channels"]:
            raise TensorShapeError(
                f"{spec.name}: expects input ({g['in_channels']},H,W), got {shape}"
            )
        ho = conv_output_extent(shape[1], g["kernel_h"], g["stride"], g["padding"])
        wo = conv_output_extent(shape[2], g["kernel_w"], g["stride"], g["padding"])
        return (g["out_channels"], ho, wo)
    if spec.kind == "batchnorm":
        if not shape or shape[0] != g["channels"]:
            raise TensorShapeError(f"{spec.name}: expects {g['channels']} channels, got {shape}")
        return shape
    if spec.kind == "relu":
        return shape
    if spec.kind == "avg_pool_global":
        if len(shape) != 3:
            raise TensorShapeError(f"{spec.name}: expects [C,H,W] input, got {shape}")
        return (shape[0],)
    if spec.kind == "prediction_head":
        if shape != (g["in"],):
            raise TensorShapeError(f"{spec.name}: expects input ({g['in']},), got {shape}")
        return (g["classes"],)
    raise ModelFormatError(f"unknown layer kind {spec.kind!r}")


def validate_model(model: Model) -> None:
    """Check every structural invariant; raise the first violation found."""
    if not model.layers:
        raise ModelFormatError("model must declare at least one layer")
    if model.precision not in _PRECISIONS:
        raise ModelFormatError(f"unknown precision tag {model.precision!r}")
    names = [spec.name for spec in model.layers]
    if len(set(names)) != len(names):
        raise ModelFormatError("layer names must be unique")
    for i, spec in enumerate(model.layers):
        if spec.kind not in LAYER_KINDS:
            raise ModelFormatError(f"{spec.name}: unknown layer kind {spec.kind!r}")
        if spec.kind == "prediction_head":
            if i != len(model.layers) - 1:
                raise ModelFormatError("prediction_head must be the final layer")
            if spec.geometry["classes"] != model.class_count:
                raise ModelFormatError(
                    f"head classes {spec.geometry['classes']} != class count {model.class_count}"
                )
        for role, expected in _expected_shapes(spec).items():
            ref = spec.weight_name(role)
            if ref is None:
                raise MissingTensorError(f"{spec.name}: missing weight reference {role!r}")
            if ref not in model.tensors:
                raise MissingTensorError(f"{spec.name}: tensor {ref!r} not declared")
            t = model.tensors[ref]
            if t.shape != expected:
                raise TensorShapeError(
                    f"{spec.name}: tensor {ref!r} has shape {t.shape}, expected {expected}"
                )
            if t.dtype != model.dtype:
                raise ModelFormatError(
                    f"{spec.name}: tensor {ref!r} dtype {t.dtype} != precision {model.precision}"
                )
    shape = tuple(model.input_shape)
    if not shape:
        raise ModelFormatError("model must declare its input shape")
    for spec in model.layers:
        shape = _propagate_shape(spec, shape)
    for name, t in model.tensors.items():
        if not np.all(np.isfinite(t.array)):
            raise NonFiniteWeightError(f"tensor {name!r} contains non-finite values")


def output_shape(model: Model) -> tuple[int, ...]:
    shape = tuple(model.input_shape)
    for spec in model.layers:
        shape = _propagate_shape(spec, shape)
    return shape


# --- manifest + blob ------------------------------------------------------

def save_model(model: Model, manifest_path, blob_path) -> None:
    """Write manifest JSON + weight blob; load_model round-trips bit-exactly."""
    validate_model(model)
    itemsize = model.dtype.itemsize
    entries = []
    chunks = []
    offset = 0
    for name, t in model.tensors.items():
        raw = t.array.astype(model.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
        entries.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        assert len(raw) == t.size * itemsize
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "precision": model.precision,
        "class_count": model.class_count,
        "input_shape": list(model.input_shape),
        "layers": [
            {"name": s.name, "kind": s.kind, "geometry": s.geometry, "weights": s.weights}
            for s in model.layers
        ],
        "tensors": entries,
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(blob_path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_model(manifest_path, blob_path) -> Model:
    """Parse and fully validate a manifest/blob pair."""
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"manifest is not valid JSON: {exc}") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ModelFormatError(f"unsupported schema version {manifest.get('schema_version')!r}")
    precision = manifest.get("precision")
    if precision not in _PRECISIONS:
        raise ModelFormatError(f"unknown precision tag {precision!r}")
    dtype = _PRECISIONS[precision]

    with open(blob_path, "rb") as fh:
        blob = fh.read()

    entries = manifest.get("tensors", [])
    declared = 0
    expected_offset = 0
    for e in entries:
        if e["offset"] != expected_offset:
            raise BlobLengthError(
                f"tensor {e['name']!r} declared at offset {e['offset']}, expected {expected_offset}"
            )
        size = int(np.prod(e["shape"])) if e["shape"] else 0
        if size * dtype.itemsize != e["nbytes"]:
            raise TensorShapeError(
                f"tensor {e['name']!r}: shape {e['shape']} disagrees with nbytes {e['nbytes']}"
            )
        declared += e["nbytes"]
        expected_offset += e["nbytes"]
    if declared != len(blob):
        raise BlobLengthError(f"blob holds {len(blob)} bytes, manifest declares {declared}")

    tensors: dict[str, Tensor] = {}
    for e in entries:
        raw = blob[e["offset"] : e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(e["shape"])
        if not np.all(np.isfinite(arr)):
            raise NonFiniteWeightError(f"tensor {e['name']!r} contains non-finite values")
        tensors[e["name"]] = Tensor(arr, dtype=dtype)

    layers = tuple(
        LayerSpec(d["name"], d["kind"], dict(d.get("geometry", {})), dict(d.get("weights", {})))
        for d in manifest.get("layers", [])
    )
    model = Model(
        layers=layers,
        tensors=tensors,
        precision=precision,
        class_count=int(manifest["class_count"]),
        input_shape=tuple(manifest["input_shape"]),
    )
    validate_model(model)
    return model


# --- IDX ingestion ---------------------------------------------------------

def _read_be32(data: bytes, offset: int, path) -> int:
    if offset + 4 > len(data):
        raise IdxFormatError(f"{path}: truncated header")
    return struct.unpack_from(">I", data, offset)[0]


def load_idx(images_path, labels_path, split: str = "test") -> Dataset:
    """Load an IDX image/label pair; pixel bytes scaled to [0, 1]."""
    with open(images_path, "rb") as fh:
        img = fh.read()
    with open(labels_path, "rb") as fh:
        lab = fh.read()

    magic = _read_be32(img, 0, images_path)
    if magic != IDX_IMAGE_MAGIC:
        raise IdxFormatError(f"{images_path}: bad image magic 0x{magic:08x}")
    count = _read_be32(img, 4, images_path)
    rows = _read_be32(img, 8, images_path)
    cols = _read_be32(img, 12, images_path)
    payload = img[16:]
    if len(payload) != count * rows * cols:
        raise IdxFormatError(
            f"{images_path}: payload holds {len(payload)} bytes, header implies {count * rows * cols}"
        )

    lmagic = _read_be32(lab, 0, labels_path)
    if lmagic != IDX_LABEL_MAGIC:
        raise IdxFormatError(f"{labels_path}: bad label magic 0x{lmagic:08x}")
    lcount = _read_be32(lab, 4, labels_path)
    if len(lab) - 8 != lcount:
        raise IdxFormatError(f"{labels_path}: truncated label payload")
    if lcount != count:
        raise IdxFormatError(f"image count {count} != label count {lcount}")

    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    pixels = pixels.reshape(count, rows * cols)
    labels = np.frombuffer(lab[8:], dtype=np.uint8).astype(np.int64)
    n_classes = int(labels.max()) + 1 if count else 1
    return Dataset([Tensor(p) for p in pixels], labels, n_classes, split)


# --- synthetic blobs --------------------------------------------------------

def blob_rng(seed: int) -> np.random.Generator:
    """The package-wide counter-based PRNG: Philox-4x64-10 keyed via SeedSequence."""
    return np.random.Generator(np.random.Philox(seed))


def gen_blobs(seed: int, n_samples: int, dims: int, n_classes: int,
              spread: float = 1.0, split: str = "train") -> Dataset:
    """Deterministic Gaussian-blob classification set.

    Class centers are standard-normal draws in R^dims; labels are assigned
    round-robin (balanced within +-1); each sample is its center plus
    spread * N(0, I) noise.  Identical seeds give bit-identical datasets.
    """
    if n_classes < 2:
        raise ModelFormatError(f"need at least two classes, got {n_classes}")
    rng = blob_rng(seed)
    centers = rng.standard_normal((n_classes, dims))
    labels = np.arange(n_samples, dtype=np.int64) % n_classes
    noise = rng.standard_normal((n_samples, dims))
    points = centers[labels] + spread * noise
    return Dataset([Tensor(p) for p in points], labels, n_classes, split)


# --- CSV export -------------------------------------------------------------

def export_predictions_csv(path, labels, predictions, sample_flops) -> None:
    """Per-sample results as `index,label,pred,flops` (UTF-8, LF endings)."""
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    sample_flops = np.asarray(sample_flops)
    if not (len(labels) == len(predictions) == len(sample_flops)):
        raise ModelFormatError("labels, predictions and flops must align")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("index,label,pred,flops\n")
        for i, (y, p, f) in enumerate(zip(labels, predictions, sample_flops)):
            fh.write(f"{i},{int(y)},{int(p)},{int(f)}\n")
