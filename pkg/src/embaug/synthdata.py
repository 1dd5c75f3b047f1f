"""Synthetic bags of patch embeddings and a ground-truth augmentation oracle.

Each bag mimics one slide: instances are drawn around unit-norm class
prototypes (one background prototype plus ``K-1`` grade prototypes) with a
class-conditional mixture, so the label is only recoverable from the bag as a
whole.  :class:`OracleAugmenter` stands in for "augment the pixels, then run
the feature extractor": a smooth parametric map made of plane rotations,
per-dimension gain/bias jitter and a global zoom-like scale.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .numerics import ContractError, DimensionError
from .rng import Stream, as_stream

MAGIC = b"EMB1"
VERSION = 1
META_SCHEMA = 1
_HEADER = struct.Struct("<4sIIII")
_BAG_HEADER = struct.Struct("<II")


class GenerationError(RuntimeError):
    pass


class ParseError(ValueError):
    """Malformed dataset or checkpoint file; ``offset`` is the byte position."""

    def __init__(self, message: str, offset: int, bag_index: int | None = None):
        where = f"offset {offset}" if bag_index is None else f"bag {bag_index}, offset {offset}"
        super().__init__(f"{message} ({where})")
        self.offset = offset
        self.bag_index = bag_index


# -------------------------------------------------------------------- oracle

@dataclass(frozen=True)
class Theta:
    """Augmentation parameters for a batch of ``n`` draws."""

    alpha: np.ndarray  # (n,)
    gain: np.ndarray  # (n, d)
    bias: np.ndarray  # (n, d)
    scale: np.ndarray  # (n,)

    def __len__(self) -> int:
        return len(self.alpha)

    @classmethod
    def identity(cls, d: int, n: int = 1) -> "Theta":
        return cls(np.zeros(n), np.ones((n, d)), np.zeros((n, d)), np.ones(n))


@dataclass(frozen=True)
class OracleAugmenter:
    d: int
    planes: tuple[tuple[int, int], ...]
    alpha_max: float = math.pi / 4
    gain_delta: float = 0.2
    bias_delta: float = 0.05
    scale_delta: float = 0.15

    def __post_init__(self):
        seen = set()
        for i, j in self.planes:
            if not (0 <= i < self.d and 0 <= j < self.d) or i == j:
                raise ContractError(f"invalid rotation plane ({i}, {j}) for d={self.d}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ContractError(f"duplicate rotation plane {key}")
            seen.add(key)

    @classmethod
    def random(cls, rng: Stream, d: int, n_planes: int | None = None, **ranges) -> "OracleAugmenter":
        """Disjoint coordinate planes picked from a random permutation."""
        m = d // 4 if n_planes is None else n_planes
        if 2 * m > d:
            raise ContractError(f"{m} disjoint planes do not fit in d={d}")
        perm = rng.permutation(d)
        planes = tuple((int(perm[2 * k]), int(perm[2 * k + 1])) for k in range(m))
        return cls(d=d, planes=planes, **ranges)

    def sample_theta(self, rng: Stream, n: int) -> Theta:
        return Theta(
            alpha=rng.uniform(-self.alpha_max, self.alpha_max, n),
            gain=rng.uniform(1.0 - self.gain_delta, 1.0 + self.gain_delta, (n, self.d)),
            bias=rng.uniform(-self.bias_delta, self.bias_delta, (n, self.d)),
            scale=rng.uniform(1.0 - self.scale_delta, 1.0 + self.scale_delta, n),
        )

    def check_theta(self, theta: Theta, tol: float = 1e-12) -> None:
        def inside(x, lo, hi):
            return bool(np.all(x >= lo - tol) and np.all(x <= hi + tol))

        ok = (inside(theta.alpha, -self.alpha_max, self.alpha_max)
              and inside(theta.gain, 1 - self.gain_delta, 1 + self.gain_delta)
              and inside(theta.bias, -self.bias_delta, self.bias_delta)
              and inside(theta.scale, 1 - self.scale_delta, 1 + self.scale_delta))
        if not ok:
            raise ContractError("augmentation parameters outside the configured ranges")

    def rotate(self, H: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        out = np.array(H, dtype=np.float64, copy=True)
        c, s = np.cos(alpha), np.sin(alpha)
        for i, j in self.planes:
            xi, xj = out[:, i].copy(), out[:, j].copy()
            out[:, i] = c * xi - s * xj
            out[:, j] = s * xi + c * xj
        return out

    def apply(self, H: np.ndarray, theta: Theta) -> np.ndarray:
        """Row-wise ``s * (gain * R_alpha(h) + bias)``; ``H`` is (n, d) or (d,)."""
        H = np.asarray(H, dtype=np.float64)
        single = H.ndim == 1
        H2 = H[None, :] if single else H
        if H2.shape[1] != self.d:
            raise DimensionError(f"embedding dim {H2.shape[1]} != oracle dim {self.d}")
        if len(theta) not in (1, H2.shape[0]):
            raise DimensionError(f"{len(theta)} parameter draws for {H2.shape[0]} embeddings")
        rotated = self.rotate(H2, theta.alpha)
        out = theta.scale[:, None] * (theta.gain * rotated + theta.bias)
        return out[0] if single else out

    def to_dict(self) -> dict:
        return {"d": self.d, "planes": [list(p) for p in self.planes], "alpha_max": self.alpha_max,
                "gain_delta": self.gain_delta, "bias_delta": self.bias_delta, "scale_delta": self.scale_delta}

    @classmethod
    def from_dict(cls, obj: dict) -> "OracleAugmenter":
        obj = dict(obj)
        obj["planes"] = tuple(tuple(p) for p in obj["planes"])
        return cls(**obj)


def augment_oracle(aug: OracleAugmenter, h: np.ndarray, theta: Theta) -> np.ndarray:
    aug.check_theta(theta)
    return aug.apply(h, theta)


# --------------------------------------------------------------------- data

@dataclass
class Bag:
    label: int
    instances: np.ndarray  # (N, d)

    def __post_init__(self):
        if self.instances.ndim != 2 or len(self.instances) < 1:
            raise ContractError("a bag needs at least one instance")

    @property
    def n(self) -> int:
        return len(self.instances)


@dataclass
class DatasetConfig:
    n_bags: int = 155
    d: int = 64
    K: int = 5
    mean_bag_size: float = 129.0
    min_bag_size: int = 16
    max_bag_size: int = 400
    sigma: float = 0.35
    # acquisition variability baked into the stored embeddings: "none",
    # "instance" (one oracle draw per patch) or "slide" (one per bag)
    acquisition: str = "instance"
    n_planes: int | None = None
    alpha_max: float = math.pi / 4
    gain_delta: float = 0.2
    bias_delta: float = 0.05
    scale_delta: float = 0.15

    def __post_init__(self):
        if self.acquisition not in ("none", "instance", "slide"):
            raise ContractError(f"unknown acquisition mode {self.acquisition!r}")


@dataclass
class Dataset:
    bags: list[Bag]
    d: int
    K: int
    seed: int
    oracle: OracleAugmenter
    prototypes: np.ndarray
    config: DatasetConfig = field(default_factory=DatasetConfig)

    @property
    def labels(self) -> np.ndarray:
        return np.array([b.label for b in self.bags], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.bags)

    def subset(self, indices) -> list[Bag]:
        return [self.bags[i] for i in indices]


def gen_prototypes(rng: Stream, K: int, d: int, max_cos: float = 0.5, tries: int = 1000) -> np.ndarray:
    """K unit vectors (row 0 is the background) with pairwise |cos| < ``max_cos``."""
    if K < 2 or d < 4:
        raise ContractError(f"need K >= 2 and d >= 4, got K={K}, d={d}")
    protos: list[np.ndarray] = []
    for k in range(K):
        for _ in range(tries):
            v = rng.normal(d)
            v /= np.linalg.norm(v)
            if all(abs(float(v @ p)) < max_cos for p in protos):
                protos.append(v)
                break
        else:
            raise GenerationError(f"could not place prototype {k} after {tries} tries (d={d})")
    return np.stack(protos)


def mixture_weights(c: int, K: int) -> np.ndarray:
    """Class-conditional prototype mixture: background 1 - 0.2c, grades 1..c share 0.2c."""
    if not 0 <= c < K:
        raise ContractError(f"class {c} outside [0, {K})")
    pi = np.zeros(K)
    pi[0] = 1.0 - 0.2 * c
    if c > 0:
        pi[1:c + 1] = 0.2
    return pi


def sample_bag(rng: Stream, c: int, N: int, prototypes: np.ndarray, sigma: float) -> Bag:
    if N < 1:
        raise ContractError("bag size must be >= 1")
    K, d = prototypes.shape
    pi = mixture_weights(c, K)
    which = rng.choice(K, size=N, p=pi)
    noise = rng.normal((N, d))
    return Bag(label=c, instances=prototypes[which] + sigma * noise)


def make_dataset(seed: int, config: DatasetConfig | None = None) -> Dataset:
    cfg = config or DatasetConfig()
    root = Stream(seed, ("dataset",))
    prototypes = gen_prototypes(root.child("prototypes"), cfg.K, cfg.d)
    oracle = OracleAugmenter.random(
        root.child("planes"), cfg.d, cfg.n_planes, alpha_max=cfg.alpha_max,
        gain_delta=cfg.gain_delta, bias_delta=cfg.bias_delta, scale_delta=cfg.scale_delta)
    labels = np.arange(cfg.n_bags) % cfg.K
    labels = labels[root.child("labels").permutation(cfg.n_bags)]
    sizes = np.clip(root.child("sizes").poisson(cfg.mean_bag_size, cfg.n_bags),
                    cfg.min_bag_size, cfg.max_bag_size)
    bags = []
    for i, (c, n) in enumerate(zip(labels, sizes)):
        bag = sample_bag(root.child("bag", i), int(c), int(n), prototypes, cfg.sigma)
        if cfg.acquisition != "none":
            arng = root.child("acquisition", i)
            theta = oracle.sample_theta(arng, bag.n if cfg.acquisition == "instance" else 1)
            bag.instances = oracle.apply(bag.instances, theta)
        # stored at float32 precision so the on-disk round trip is exact
        bag.instances = bag.instances.astype(np.float32).astype(np.float64)
        bags.append(bag)
    return Dataset(bags=bags, d=cfg.d, K=cfg.K, seed=seed, oracle=oracle,
                   prototypes=prototypes, config=cfg)


# -------------------------------------------------------------------- pairs

@dataclass
class PairSet:
    h: np.ndarray  # (P, d)
    h_aug: np.ndarray  # (P, d)
    source: np.ndarray  # (P, 2) int: (bag index, instance index)

    def __len__(self) -> int:
        return len(self.h)

    def take(self, idx) -> "PairSet":
        return PairSet(self.h[idx], self.h_aug[idx], self.source[idx])


def make_pairs(rng: Stream, dataset: Dataset, n_augs_per_patch: int = 5, bag_indices=None) -> PairSet:
    """``n_augs_per_patch`` independent oracle augmentations of every instance.

    Restrict to ``bag_indices`` to keep held-out bags out of GAN training.
    """
    if n_augs_per_patch < 1:
        raise ContractError("n_augs_per_patch must be >= 1")
    rng = as_stream(rng)
    idx = range(len(dataset.bags)) if bag_indices is None else bag_indices
    hs, augs, srcs = [], [], []
    for b in idx:
        H = dataset.bags[b].instances
        n = len(H)
        rep = np.repeat(H, n_augs_per_patch, axis=0)
        theta = dataset.oracle.sample_theta(rng, len(rep))
        hs.append(rep)
        augs.append(dataset.oracle.apply(rep, theta))
        srcs.append(np.stack([np.full(len(rep), b), np.repeat(np.arange(n), n_augs_per_patch)], axis=1))
    if not hs:
        return PairSet(np.zeros((0, dataset.d)), np.zeros((0, dataset.d)), np.zeros((0, 2), dtype=np.int64))
    return PairSet(np.concatenate(hs), np.concatenate(augs), np.concatenate(srcs).astype(np.int64))


# ----------------------------------------------------------------- checking

def nearest_prototype_classify(bags: list[Bag], prototypes: np.ndarray, floor: float = 0.01) -> np.ndarray:
    """Non-learned reference classifier.

    Every instance votes for its most cosine-similar prototype; the bag label
    is the class whose mixture best explains the vote counts.
    """
    K = len(prototypes)
    log_pi = np.log(np.stack([mixture_weights(c, K) for c in range(K)]) + floor)
    unit = prototypes / np.linalg.norm(prototypes, axis=1, keepdims=True)
    preds = []
    for bag in bags:
        H = bag.instances / np.linalg.norm(bag.instances, axis=1, keepdims=True)
        counts = np.bincount(np.argmax(H @ unit.T, axis=1), minlength=K)
        preds.append(int(np.argmax(log_pi @ counts)))
    return np.array(preds, dtype=np.int64)


# ----------------------------------------------------------------------- io

def _meta_path(path: Path) -> Path:
    return path.with_suffix(".meta.json")


def dataset_bytes(dataset: Dataset) -> bytes:
    chunks = [_HEADER.pack(MAGIC, VERSION, dataset.d, dataset.K, len(dataset.bags))]
    for bag in dataset.bags:
        chunks.append(_BAG_HEADER.pack(bag.label, bag.n))
        chunks.append(np.ascontiguousarray(bag.instances, dtype="<f4").tobytes())
    return b"".join(chunks)


def dataset_meta(dataset: Dataset) -> dict:
    return {
        "schema_version": META_SCHEMA,
        "seed": dataset.seed,
        "d": dataset.d,
        "K": dataset.K,
        "oracle": dataset.oracle.to_dict(),
        "prototypes": dataset.prototypes.tolist(),
        "config": asdict(dataset.config),
    }


def save_dataset(dataset: Dataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dataset_bytes(dataset))
    _meta_path(path).write_text(json.dumps(dataset_meta(dataset), indent=2, sort_keys=True) + "\n")
    return path


def parse_dataset_bytes(buf: bytes) -> tuple[int, int, list[Bag]]:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise ParseError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}", 0)
    if len(buf) < _HEADER.size:
        raise ParseError("truncated header", len(buf))
    _, version, d, K, n_bags = _HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise ParseError(f"unsupported version {version}", 4)
    off = _HEADER.size
    bags = []
    for b in range(n_bags):
        if off + _BAG_HEADER.size > len(buf):
            raise ParseError("truncated bag header", off, bag_index=b)
        label, n = _BAG_HEADER.unpack_from(buf, off)
        off += _BAG_HEADER.size
        if label >= K:
            raise ParseError(f"label {label} outside [0, {K})", off - _BAG_HEADER.size, bag_index=b)
        nbytes = 4 * n * d
        if off + nbytes > len(buf):
            raise ParseError(f"truncated bag payload ({len(buf) - off} of {nbytes} bytes)", off, bag_index=b)
        inst = np.frombuffer(buf, dtype="<f4", count=n * d, offset=off).reshape(n, d).astype(np.float64)
        off += nbytes
        bags.append(Bag(label=int(label), instances=inst))
    if off != len(buf):
        raise ParseError(f"{len(buf) - off} trailing bytes", off)
    return d, K, bags


def load_dataset(path) -> Dataset:
    path = Path(path)
    d, K, bags = parse_dataset_bytes(path.read_bytes())
    meta = json.loads(_meta_path(path).read_text())
    if meta.get("schema_version") != META_SCHEMA:
        raise ParseError(f"unsupported metadata schema {meta.get('schema_version')}", 0)
    if meta["d"] != d or meta["K"] != K:
        raise ParseError("metadata disagrees with the binary header", 0)
    return Dataset(
        bags=bags, d=d, K=K, seed=meta["seed"],
        oracle=OracleAugmenter.from_dict(meta["oracle"]),
        prototypes=np.array(meta["prototypes"], dtype=np.float64),
        config=DatasetConfig(**meta["config"]),
    )
