"""Trace + scene-matrix preprocessing into windowed, balanced, fold-assigned
sequence datasets, plus the GZDS binary dataset format."""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .oracle import GazeTrace
from .scenario import FeatureMatrix, ScenarioSpec

SEQ_LEN = 30
N_FEAT = 24

GZDS_MAGIC = b"GZDS"
GZDS_VERSION = 1


@dataclass(frozen=True)
class ClassBins:
    n_classes: int
    edges: tuple  # n_classes + 1 strictly increasing degree values

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.float64)
        if len(edges) != self.n_classes + 1:
            raise ValueError("need n_classes + 1 edges")
        if not np.all(np.diff(edges) > 0):
            raise ValueError("edges must be strictly increasing")

    def center(self, class_index: int) -> float:
        return (self.edges[class_index] + self.edges[class_index + 1]) / 2.0


def default_bins(spec: ScenarioSpec) -> ClassBins:
    """Equal-width bins spanning the scenario's yaw range."""
    conv = spec.convention
    edges = np.linspace(conv.min_deg, conv.max_deg, spec.n_classes + 1)
    return ClassBins(spec.n_classes, tuple(float(e) for e in edges))


def angle_to_class(yaw_deg, bins: ClassBins):
    """Bin lookup with clamp-then-bin semantics and inclusive top edge.
    Accepts scalars or arrays."""
    edges = np.asarray(bins.edges)
    yaw = np.clip(np.asarray(yaw_deg, dtype=np.float64), edges[0], edges[-1])
    idx = np.searchsorted(edges, yaw, side="right") - 1
    idx = np.clip(idx, 0, bins.n_classes - 1)
    if np.isscalar(yaw_deg):
        return int(idx)
    return idx.astype(np.int64)


def label_trace(trace: GazeTrace, bins: ClassBins) -> np.ndarray:
    return angle_to_class(trace.yaw_deg, bins)


@dataclass
class SequenceSample:
    features: np.ndarray  # SEQ_LEN x N_FEAT uint8 window
    target: int
    participant_id: int
    fold: int = -1
    start: int = -1  # window start frame in the source matrix, -1 if unknown


@dataclass
class SequenceDataset:
    samples: list
    n_classes: int
    scenario_id: str = ""
    # participant_id -> (feature array T x 24, label series) kept so that
    # augmentation can re-extract jittered windows; dropped on serialization.
    sources: dict = field(default_factory=dict)

    @property
    def class_histogram(self) -> np.ndarray:
        hist = np.zeros(self.n_classes, dtype=np.int64)
        for s in self.samples:
            hist[s.target] += 1
        return hist

    def arrays(self, indices=None):
        """(X, y, folds) float64/int64 arrays for the given sample indices."""
        samples = (
            self.samples if indices is None else [self.samples[i] for i in indices]
        )
        X = np.stack([s.features for s in samples]).astype(np.float64)
        y = np.asarray([s.target for s in samples], dtype=np.int64)
        folds = np.asarray([s.fold for s in samples], dtype=np.int64)
        return X, y, folds


def windowize(
    matrix: FeatureMatrix,
    labels: np.ndarray,
    length: int = SEQ_LEN,
    stride: int = 1,
    participant_id: int = 0,
) -> list:
    """Slide a window over the feature matrix; the target is the label at the
    window's final frame. The time column is dropped from the features."""
    T = matrix.n_frames
    if len(labels) != T:
        raise ValueError(f"labels length {len(labels)} != {T} frames")
    if T < length:
        warnings.warn(
            f"only {T} frames, need {length}: producing no samples", stacklevel=2
        )
        return []
    feats = matrix.features().astype(np.uint8)
    samples = []
    for j in range(0, T - length + 1, stride):
        samples.append(
            SequenceSample(
                features=feats[j : j + length].copy(),
                target=int(labels[j + length - 1]),
                participant_id=participant_id,
                start=j,
            )
        )
    return samples


def build_dataset(
    spec_matrix: FeatureMatrix,
    traces: list,
    bins: ClassBins,
    scenario_id: str = "",
    stride: int = 1,
) -> SequenceDataset:
    """Window every participant's trace against the shared scene matrix."""
    samples = []
    sources = {}
    feats = spec_matrix.features().astype(np.uint8)
    for trace in traces:
        labels = label_trace(trace, bins)
        samples.extend(
            windowize(
                spec_matrix, labels, stride=stride, participant_id=trace.participant_id
            )
        )
        sources[trace.participant_id] = (feats, labels)
    return SequenceDataset(
        samples=samples,
        n_classes=bins.n_classes,
        scenario_id=scenario_id,
        sources=sources,
    )


def augment_balance(dataset: SequenceDataset, seed: int) -> SequenceDataset:
    """Oversample minority classes up to the majority count by re-extracting
    windows whose start is jittered by +-1 or +-2 frames (target preserved)."""
    hist = dataset.class_histogram
    for c in range(dataset.n_classes):
        if hist[c] == 0:
            raise ValueError(f"class {c} unrepresented")
    target_count = int(hist.max())
    if np.all(hist == target_count):
        return dataset

    rng = np.random.default_rng(seed)
    by_class = [[] for _ in range(dataset.n_classes)]
    for s in dataset.samples:
        by_class[s.target].append(s)

    new_samples = list(dataset.samples)
    jitters = np.array([-2, -1, 1, 2])
    for c in range(dataset.n_classes):
        needed = target_count - hist[c]
        pool = by_class[c]
        for _ in range(needed):
            added = None
            for _attempt in range(10_000):
                src = pool[rng.integers(len(pool))]
                delta = int(jitters[rng.integers(4)])
                start = src.start + delta
                source = dataset.sources.get(src.participant_id)
                if source is None or src.start < 0:
                    break
                feats, labels = source
                if start < 0 or start + SEQ_LEN > len(labels):
                    continue
                if int(labels[start + SEQ_LEN - 1]) != src.target:
                    continue
                added = SequenceSample(
                    features=feats[start : start + SEQ_LEN].copy(),
                    target=src.target,
                    participant_id=src.participant_id,
                    start=start,
                )
                break
            if added is None:
                # No valid jitter exists (tiny or sourceless dataset): fall
                # back to an exact duplicate so balancing still completes.
                src = pool[rng.integers(len(pool))]
                added = SequenceSample(
                    features=src.features.copy(),
                    target=src.target,
                    participant_id=src.participant_id,
                    start=src.start,
                )
            new_samples.append(added)
    return SequenceDataset(
        samples=new_samples,
        n_classes=dataset.n_classes,
        scenario_id=dataset.scenario_id,
        sources=dataset.sources,
    )


def kfold_split(
    dataset: SequenceDataset, k: int = 10, seed: int = 0, by_participant: bool = False
) -> SequenceDataset:
    """Assign each sample a fold id in [0, k); fold sizes differ by at most
    one. With by_participant=True, whole participants go to the same fold."""
    n = len(dataset.samples)
    if n < k:
        raise ValueError(f"{n} samples cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    if by_participant:
        pids = sorted({s.participant_id for s in dataset.samples})
        if len(pids) < k:
            raise ValueError(f"{len(pids)} participants cannot fill {k} folds")
        order = rng.permutation(len(pids))
        fold_of_pid = {pids[j]: i % k for i, j in enumerate(order)}
        for s in dataset.samples:
            s.fold = fold_of_pid[s.participant_id]
    else:
        order = rng.permutation(n)
        for i, j in enumerate(order):
            dataset.samples[j].fold = i % k
    return dataset


# --- GZDS binary format -----------------------------------------------------

_HEADER = struct.Struct("<4sIIIII")
_SAMPLE_TAIL = struct.Struct("<BHI")


def save_dataset(dataset: SequenceDataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                GZDS_MAGIC,
                GZDS_VERSION,
                len(dataset.samples),
                SEQ_LEN,
                N_FEAT,
                dataset.n_classes,
            )
        )
        for s in dataset.samples:
            feats = np.ascontiguousarray(s.features, dtype=np.uint8)
            if feats.shape != (SEQ_LEN, N_FEAT):
                raise ValueError(f"bad sample shape {feats.shape}")
            fh.write(feats.tobytes())
            fold = s.fold if s.fold >= 0 else 0xFFFF
            fh.write(_SAMPLE_TAIL.pack(s.target, fold, s.participant_id))


def load_dataset(path) -> SequenceDataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, n_samples, seq_len, n_feat, n_classes = _HEADER.unpack_from(raw)
    if magic != GZDS_MAGIC:
        raise ValueError("not a GZDS file")
    if version != GZDS_VERSION:
        raise ValueError(f"unsupported GZDS version {version}")
    if seq_len != SEQ_LEN or n_feat != N_FEAT:
        raise ValueError(f"unsupported geometry {seq_len}x{n_feat}")
    offset = _HEADER.size
    block = SEQ_LEN * N_FEAT
    samples = []
    for _ in range(n_samples):
        feats = np.frombuffer(raw, dtype=np.uint8, count=block, offset=offset)
        offset += block
        target, fold, pid = _SAMPLE_TAIL.unpack_from(raw, offset)
        offset += _SAMPLE_TAIL.size
        samples.append(
            SequenceSample(
                features=feats.reshape(SEQ_LEN, N_FEAT).copy(),
                target=target,
                participant_id=pid,
                fold=-1 if fold == 0xFFFF else fold,
            )
        )
    return SequenceDataset(samples=samples, n_classes=n_classes)


def export_dataset_csv(dataset: SequenceDataset, path) -> None:
    """Inspection CSV: one row per (sample, frame)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["sample", "frame"] + [f"f{i}" for i in range(N_FEAT)] + ["target", "fold"]
        )
        for idx, s in enumerate(dataset.samples):
            for frame in range(SEQ_LEN):
                writer.writerow(
                    [idx, frame] + list(map(int, s.features[frame])) + [s.target, s.fold]
                )
