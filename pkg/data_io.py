"""
Dataset, Vocabulary and Checkpoint Persistence
Synthetic video/caption generation, JSONL datasets and checksummed checkpoints
"""

import hashlib
import json
import os
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence

import numpy as np

from config_env import TrainingConfig
from error_handling import CaptionerError, CheckpointError, DataFormatError, ValidationError
from logger import log_checkpoint, logger
from params import ModelConfig, ModelParams, parameter_shapes

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"
RESERVED = (PAD, BOS, EOS)


class Vocabulary:
    """Bijective token <-> index map; 0=PAD, 1=BOS, 2=EOS"""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:3]) != RESERVED:
            raise ValidationError(f"vocabulary must start with {RESERVED}")
        if len(set(tokens)) != len(tokens):
            raise ValidationError("vocabulary tokens must be unique")
        self.itos: List[str] = tokens
        self.stoi: Dict[str, int] = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    @property
    def words(self) -> List[str]:
        return self.itos[len(RESERVED):]

    def encode(self, tokens: Sequence[str]) -> List[int]:
        try:
            ids = [self.stoi[t] for t in tokens]
        except KeyError as e:
            raise ValidationError(f"token {e.args[0]!r} is not in the vocabulary") from None
        if any(i < len(RESERVED) for i in ids):
            raise ValidationError("reserved tokens cannot appear in captions")
        return ids

    def decode(self, ids: Iterable[int]) -> List[str]:
        """Map ids to words, dropping reserved entries"""
        return [self.itos[i] for i in ids if i >= len(RESERVED)]

    def token(self, index: int) -> str:
        return self.itos[index]


@dataclass
class DatasetRecord:
    video_id: str
    features: np.ndarray
    references: List[List[str]]
    label: Optional[int] = field(default=None, compare=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if not self.references or any(len(r) == 0 for r in self.references):
            raise ValidationError(f"{self.video_id}: every video needs >= 1 non-empty reference")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError(f"{self.video_id}: features contain non-finite values")

    def __eq__(self, other) -> bool:
        if not isinstance(other, DatasetRecord):
            return NotImplemented
        return (
            self.video_id == other.video_id
            and self.references == other.references
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
        )

    def to_json(self) -> Dict[str, Any]:
        data = {
            "video_id": self.video_id,
            "features": self.features.tolist(),
            "references": self.references,
        }
        if self.label is not None:
            data["label"] = self.label
        return data


def build_vocab(records: Sequence[DatasetRecord]) -> Vocabulary:
    """All reference words, by frequency desc then lexicographic"""
    if not records:
        raise ValidationError("cannot build a vocabulary from an empty dataset")
    counts = Counter(tok for rec in records for ref in rec.references for tok in ref)
    ordered = sorted(counts, key=lambda tok: (-counts[tok], tok))
    return Vocabulary(list(RESERVED) + ordered)


# Synthetic data

SUBJECTS = ["man", "woman", "boy", "girl", "dog", "cat", "chef", "player", "child", "monkey", "singer", "baby"]
ACTIONS = [
    ("cutting", ["tomato", "onion", "bread", "meat"]),
    ("playing", ["guitar", "piano", "violin", "drum"]),
    ("riding", ["bike", "horse", "skateboard", "motorcycle"]),
    ("eating", ["banana", "pizza", "apple", "noodle"]),
    ("throwing", ["ball", "frisbee", "stone", "stick"]),
    ("washing", ["car", "dish", "window", "shirt"]),
    ("reading", ["book", "newspaper", "letter", "menu"]),
    ("pouring", ["water", "milk", "sauce", "oil"]),
]
PLACES = ["kitchen", "stadium", "garden", "street", "beach", "stage", "forest", "river"]


@dataclass
class _ClassTemplate:
    subjects: List[str]
    verb: str
    objects: List[str]
    place: Optional[str]

    def caption(self, rng: Optional[np.random.Generator]) -> List[str]:
        if rng is None:
            subject, obj = self.subjects[0], self.objects[0]
        else:
            subject = self.subjects[int(rng.integers(len(self.subjects)))]
            obj = self.objects[int(rng.integers(len(self.objects)))]
        tokens = ["a", subject, "is", self.verb, "a", obj]
        if self.place is not None:
            tokens += ["in", "the", self.place]
        return tokens


def _class_templates(n_classes: int, rng: np.random.Generator) -> List[_ClassTemplate]:
    templates = []
    for c in range(n_classes):
        verb, objects = ACTIONS[c % len(ACTIONS)]
        subjects = [SUBJECTS[i] for i in rng.choice(len(SUBJECTS), size=2, replace=False)]
        chosen = [objects[i] for i in rng.choice(len(objects), size=2, replace=False)]
        # the rarer half of the classes carries a distinctive place word
        place = PLACES[c % len(PLACES)] if c >= (n_classes + 1) // 2 else None
        templates.append(_ClassTemplate(subjects, verb, chosen, place))
    return templates


def generate_synthetic_dataset(
    n_videos: int,
    n_classes: int,
    frames_per_video: int,
    feature_dim: int,
    refs_per_video: int,
    seed: int,
    noise: float = 0.1,
) -> List[DatasetRecord]:
    """
    Videos with a latent class, class-pattern features and class captions

    Class frequencies fall off as 1/(c+1) so the later classes, and their
    distinctive words, are rare. Reference 0 of every video is the class's
    canonical caption; further references vary subject and object.
    """
    for name, value in [("n_videos", n_videos), ("n_classes", n_classes), ("frames_per_video", frames_per_video),
                        ("feature_dim", feature_dim), ("refs_per_video", refs_per_video)]:
        if value < 1:
            raise ValidationError(f"{name} must be >= 1, got {value}")

    rng = np.random.default_rng(seed)
    templates = _class_templates(n_classes, rng)
    centroids = rng.normal(0.0, 1.0, size=(n_classes, feature_dim))
    weights = 1.0 / np.arange(1, n_classes + 1)
    weights /= weights.sum()
    phase = np.sin(2 * np.pi * np.arange(frames_per_video) / max(frames_per_video, 2))[:, None]

    records = []
    for v in range(n_videos):
        label = int(rng.choice(n_classes, p=weights))
        pattern = centroids[label] * (1.0 + 0.2 * phase)
        features = pattern + noise * rng.normal(size=(frames_per_video, feature_dim))
        references = [templates[label].caption(None if j == 0 else rng) for j in range(refs_per_video)]
        records.append(DatasetRecord(f"video{v:05d}", features, references, label))

    logger.debug(f"Generated {n_videos} synthetic videos over {n_classes} classes (seed={seed})")
    return records


# JSONL

def iter_jsonl(path: str) -> Iterator[tuple]:
    """Yield (line number, parsed object) for non-blank lines"""
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                yield number, json.loads(line)
            except json.JSONDecodeError as e:
                raise DataFormatError(f"invalid JSON: {e.msg}", line=number) from None


def write_jsonl(path: str, rows: Iterable[Dict[str, Any]]):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")


def _parse_record(obj: Any, number: int, feature_dim: Optional[int]) -> DatasetRecord:
    if not isinstance(obj, dict):
        raise DataFormatError("expected a JSON object", line=number)
    for key in ("video_id", "features", "references"):
        if key not in obj:
            raise DataFormatError(f"missing field {key!r}", line=number)

    frames = obj["features"]
    if not isinstance(frames, list) or not frames or not all(isinstance(f, list) for f in frames):
        raise DataFormatError("features must be a non-empty list of frames", line=number)
    widths = {len(frame) for frame in frames}
    if len(widths) != 1:
        raise DataFormatError(f"frames have inconsistent widths {sorted(widths)}", line=number)
    width = widths.pop()
    if feature_dim is not None and width != feature_dim:
        raise DataFormatError(f"frame width {width} differs from earlier records ({feature_dim})", line=number)

    refs = obj["references"]
    if not isinstance(refs, list) or not all(isinstance(r, list) and all(isinstance(t, str) for t in r) for r in refs):
        raise DataFormatError("references must be lists of token strings", line=number)

    try:
        return DatasetRecord(str(obj["video_id"]), np.array(frames, dtype=np.float64), refs, obj.get("label"))
    except (ValidationError, ValueError, TypeError) as e:
        raise DataFormatError(str(e), line=number) from None


def load_dataset(path: str) -> List[DatasetRecord]:
    """Read one DatasetRecord per JSONL line; an empty file is an empty dataset"""
    records: List[DatasetRecord] = []
    feature_dim = None
    for number, obj in iter_jsonl(path):
        record = _parse_record(obj, number, feature_dim)
        feature_dim = record.features.shape[1]
        records.append(record)
    logger.debug(f"Loaded {len(records)} records from {path}")
    return records


def save_dataset(records: Iterable[DatasetRecord], path: str):
    write_jsonl(path, (record.to_json() for record in records))


# Checkpoints

CHECKPOINT_MAGIC = b"DACAPCKP"
CHECKPOINT_VERSION = 1
_DIGEST_SIZE = hashlib.sha256().digest_size


@dataclass
class Checkpoint:
    params: ModelParams
    config: TrainingConfig
    vocab: Vocabulary
    step: int = 0


def save_checkpoint(ckpt: Checkpoint, path: str):
    """
    Write a checksummed container

    Layout: magic | u32 header length | JSON header | float64 tensors | sha256
    """
    table = []
    blobs = []
    offset = 0
    for name in sorted(ckpt.params.tensors):
        arr = np.ascontiguousarray(ckpt.params.tensors[name], dtype="<f8")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes

    header = json.dumps({
        "version": CHECKPOINT_VERSION,
        "model": ckpt.params.config.to_dict(),
        "config": ckpt.config.to_dict(),
        "vocab": ckpt.vocab.itos,
        "step": ckpt.step,
        "tensors": table,
    }, sort_keys=True).encode("utf-8")

    body = CHECKPOINT_MAGIC + struct.pack("<I", len(header)) + header + b"".join(blobs)
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(body + hashlib.sha256(body).digest())
    log_checkpoint("saved", path, ckpt.step)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()

    if len(blob) < len(CHECKPOINT_MAGIC) + 4 + _DIGEST_SIZE:
        raise CheckpointError(f"{path}: checksum mismatch (file too short)")
    body, digest = blob[:-_DIGEST_SIZE], blob[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    if not body.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")

    try:
        ckpt = _decode_body(body, path)
    except CheckpointError:
        raise
    except (ValueError, TypeError, KeyError, struct.error, CaptionerError) as e:
        raise CheckpointError(f"{path}: malformed checkpoint header ({type(e).__name__}: {e})") from e
    log_checkpoint("loaded", path, ckpt.step)
    return ckpt


def _decode_body(body: bytes, path: str) -> Checkpoint:
    start = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack("<I", body[start:start + 4])
    header = json.loads(body[start + 4:start + 4 + header_len].decode("utf-8"))
    if not isinstance(header, dict):
        raise CheckpointError(f"{path}: checkpoint header is not an object")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unknown checkpoint version {header.get('version')!r}")

    model_config = ModelConfig(**header["model"])
    expected = parameter_shapes(model_config)
    data = body[start + 4 + header_len:]
    stored = {entry["name"]: entry for entry in header["tensors"]}

    tensors = {}
    for name, shape in expected.items():
        if name not in stored:
            raise CheckpointError(f"{path}: missing tensor {name!r}")
        entry = stored[name]
        if tuple(entry["shape"]) != shape:
            raise CheckpointError(f"{path}: tensor {name!r} has shape {entry['shape']}, expected {list(shape)}")
        count = int(np.prod(shape)) if shape else 1
        tensors[name] = np.frombuffer(data, dtype="<f8", count=count, offset=entry["offset"]).reshape(shape).copy()

    return Checkpoint(
        params=ModelParams(model_config, tensors),
        config=TrainingConfig.from_dict(header["config"]),
        vocab=Vocabulary(header["vocab"]),
        step=int(header["step"]),
    )
