"""Nearest-dictionary-column recognition over sparse concept codes.

Training builds one sparse-code matrix per class; a test vector is scored
against each class as the minimum l2 distance between l1-normalised code
vectors, and the label with the smallest score wins (ties go to the lowest
class id).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coder import CoderConfig, ConceptBasis, encode_matrix, project_test
from .transform import CoveringMode, ShrinkageConfig, TransformConfig, feature_vector

_MODEL_MAGIC = b"SCCB"
_MODEL_VERSION = 1.0


@dataclass
class TrainingSet:
    """Per-class sparse-code dictionaries plus the basis that produced them."""

    class_codes: dict[int, np.ndarray]  # class id -> (k, M_p)
    basis: ConceptBasis
    class_names: dict[int, str] = field(default_factory=dict)
    transform: TransformConfig = TransformConfig()
    rho: float = 0.05

    def __post_init__(self):
        if len(self.class_codes) < 2:
            raise ValueError("a training set needs at least 2 classes")
        for cid, codes in self.class_codes.items():
            if codes.ndim != 2 or codes.shape[0] != self.basis.k:
                raise ValueError(
                    f"class {cid}: codes shape {codes.shape} does not match "
                    f"k={self.basis.k}"
                )
            if codes.shape[1] == 0:
                raise ValueError(f"class {cid} has no training columns")
        if not self.class_names:
            self.class_names = {cid: str(cid) for cid in self.class_codes}

    @property
    def class_count(self) -> int:
        return len(self.class_codes)

    def class_ids(self) -> list[int]:
        return sorted(self.class_codes)


def build_training_set(
    per_class_features: dict[int, np.ndarray],
    basis: ConceptBasis,
    config: CoderConfig,
    class_names: dict[int, str] | None = None,
    transform: TransformConfig = TransformConfig(),
) -> TrainingSet:
    """Lasso-encode each class's feature columns into its dictionary."""
    for cid, feats in per_class_features.items():
        if feats.ndim != 2 or feats.shape[1] == 0:
            raise ValueError(f"class {cid} has no feature columns")
    codes = {
        cid: encode_matrix(feats, basis, config).A
        for cid, feats in sorted(per_class_features.items())
    }
    return TrainingSet(
        class_codes=codes,
        basis=basis,
        class_names=class_names or {},
        transform=transform,
        rho=config.rho,
    )


def _l1_normalize_vector(v: np.ndarray) -> np.ndarray:
    s = np.abs(v).sum()
    if s == 0:
        # l1 normalisation is undefined at zero; fall back to the uniform
        # vector so evaluation never aborts mid-run.
        return np.full(v.shape[0], 1.0 / v.shape[0])
    return v / s


def _l1_normalize_columns(a: np.ndarray) -> np.ndarray:
    sums = np.abs(a).sum(axis=0)
    out = np.where(sums == 0, 1.0, sums)
    normalized = a / out
    zero_cols = np.flatnonzero(sums == 0)
    if zero_cols.size:
        normalized[:, zero_cols] = 1.0 / a.shape[0]
    return normalized


def score(a_scc: np.ndarray, class_matrix: np.ndarray) -> float:
    """Relevance of a test code to one class: min over dictionary columns of
    the l2 distance between l1-normalised vectors.  Zero vectors are mapped
    to the uniform vector before normalising."""
    a_scc = np.asarray(a_scc, dtype=float).ravel()
    class_matrix = np.asarray(class_matrix, dtype=float)
    if class_matrix.ndim != 2 or class_matrix.shape[0] != a_scc.shape[0]:
        raise ValueError(
            f"class matrix shape {class_matrix.shape} does not match "
            f"code dim {a_scc.shape[0]}"
        )
    test = _l1_normalize_vector(a_scc)
    cols = _l1_normalize_columns(class_matrix)
    dists = np.linalg.norm(cols - test[:, None], axis=0)
    return float(dists.min())


def classify(a_scc: np.ndarray, training: TrainingSet) -> tuple[int, dict[int, float]]:
    """Label with the minimal relevance score; ties break to the lowest id."""
    scores: dict[int, float] = {}
    best_id, best_score = None, np.inf
    for cid in training.class_ids():
        s = score(a_scc, training.class_codes[cid])
        scores[cid] = s
        if s < best_score:
            best_id, best_score = cid, s
    return best_id, scores


def recognize_image(
    image: np.ndarray,
    training: TrainingSet,
    transform: TransformConfig | None = None,
) -> int:
    """Full pipeline on one normalised image: transform, flatten, project,
    classify.  Returns the winning class id."""
    cfg = transform if transform is not None else training.transform
    vec = feature_vector(image, cfg)
    code = project_test(vec, training.basis)
    label, _ = classify(code, training)
    return label


# --- model file -------------------------------------------------------------
#
# Little-endian layout:
#   magic "SCCB"
#   6 doubles: version, D, k, M_total, tau, rho
#   U, D*k doubles, column-major
#   per class (ascending id): int64 id, int64 columns, k*columns doubles
#     (column-major) until M_total columns have been read
#   label table, one entry per class: int64 id, int64 byte-length, UTF-8 name
#   transform trailer: int64 levels, int64 mode code (0 strict / 1 relaxed),
#     double lam, int64 shrink code (0 none / 1 hard-positive-part),
#     double shrink threshold
#
# The trailer is not part of the base code/label layout; it records how
# training images were transformed so classification can reproduce it.

_MODE_TO_CODE = {"strict": 0, "relaxed": 1}
_CODE_TO_MODE = {0: "strict", 1: "relaxed"}
_SHRINK_TO_CODE = {"none": 0, "hard-positive-part": 1}
_CODE_TO_SHRINK = {0: "none", 1: "hard-positive-part"}


def serialize_model(training: TrainingSet) -> bytes:
    basis = training.basis
    m_total = sum(c.shape[1] for c in training.class_codes.values())
    out = bytearray()
    out += _MODEL_MAGIC
    out += struct.pack(
        "<6d",
        _MODEL_VERSION,
        float(basis.dim),
        float(basis.k),
        float(m_total),
        basis.tau,
        training.rho,
    )
    out += np.asarray(basis.U, dtype="<f8").tobytes(order="F")
    for cid in training.class_ids():
        codes = training.class_codes[cid]
        out += struct.pack("<qq", cid, codes.shape[1])
        out += np.asarray(codes, dtype="<f8").tobytes(order="F")
    for cid in training.class_ids():
        name = training.class_names.get(cid, str(cid)).encode("utf-8")
        out += struct.pack("<qq", cid, len(name))
        out += name
    tcfg = training.transform
    levels = -1 if tcfg.levels is None else tcfg.levels
    out += struct.pack(
        "<qqdqd",
        levels,
        _MODE_TO_CODE[tcfg.mode.kind],
        tcfg.mode.lam,
        _SHRINK_TO_CODE[tcfg.shrinkage.mode],
        tcfg.shrinkage.threshold,
    )
    return bytes(out)


def deserialize_model(data: bytes) -> TrainingSet:
    if data[:4] != _MODEL_MAGIC:
        raise ValueError(f"bad model magic {data[:4]!r}, expected {_MODEL_MAGIC!r}")
    version, d_f, k_f, m_f, tau, rho = struct.unpack_from("<6d", data, 4)
    if version != _MODEL_VERSION:
        raise ValueError(f"unsupported model version {version}")
    d, k, m_total = int(d_f), int(k_f), int(m_f)
    offset = 4 + 48

    u = np.frombuffer(data, dtype="<f8", count=d * k, offset=offset)
    u = u.reshape(d, k, order="F").copy()
    offset += 8 * d * k

    class_codes: dict[int, np.ndarray] = {}
    read_cols = 0
    while read_cols < m_total:
        cid, cols = struct.unpack_from("<qq", data, offset)
        offset += 16
        codes = np.frombuffer(data, dtype="<f8", count=k * cols, offset=offset)
        class_codes[cid] = codes.reshape(k, cols, order="F").copy()
        offset += 8 * k * cols
        read_cols += cols

    class_names: dict[int, str] = {}
    for _ in range(len(class_codes)):
        cid, nlen = struct.unpack_from("<qq", data, offset)
        offset += 16
        class_names[cid] = data[offset : offset + nlen].decode("utf-8")
        offset += nlen

    levels, mode_code, lam, shrink_code, shrink_t = struct.unpack_from(
        "<qqdqd", data, offset
    )
    transform = TransformConfig(
        levels=None if levels < 0 else int(levels),
        mode=CoveringMode(_CODE_TO_MODE[int(mode_code)], lam),
        shrinkage=ShrinkageConfig(_CODE_TO_SHRINK[int(shrink_code)], shrink_t),
    )
    return TrainingSet(
        class_codes=class_codes,
        basis=ConceptBasis(U=u, tau=tau),
        class_names=class_names,
        transform=transform,
        rho=rho,
    )


def save_model(training: TrainingSet, path: str | Path) -> None:
    Path(path).write_bytes(serialize_model(training))


def load_model(path: str | Path) -> TrainingSet:
    return deserialize_model(Path(path).read_bytes())
