"""Gated-attention MIL classifier and its training loop.

A bag ``H`` (N x d) is pooled into one vector with attention weights
``a = softmax_i( w^T (tanh(V h_i) * sigmoid(U h_i)) )`` and classified by a
two-layer MLP.  Instance embeddings can be augmented on the way in: not at
all, by picking among precomputed oracle augmentations, or by running a
trained generator online with fresh noise every epoch.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .layers import Dense, get_weights, set_weights
from .numerics import ContractError, DimensionError, Tensor
from .optim import Adam
from .rng import Stream, as_stream
from .synthdata import Bag, OracleAugmenter, ParseError

log = logging.getLogger(__name__)

CKPT_MAGIC = b"EAM1"
CKPT_VERSION = 1


class MilTrainingError(RuntimeError):
    def __init__(self, message: str, epoch: int, bag: int):
        super().__init__(f"{message} (epoch {epoch}, bag {bag})")
        self.epoch = epoch
        self.bag = bag


# -------------------------------------------------------------------- model

class GatedAttention:
    def __init__(self, d: int, d_att: int = 256, rng=None):
        self.d = d
        self.d_att = d_att
        self.V = Dense(d, d_att, rng)
        self.U = Dense(d, d_att, rng)
        self.w = Dense(d_att, 1, rng)

    def scores(self, H: Tensor) -> Tensor:
        gate = nx.mul(nx.tanh(self.V(H)), nx.sigmoid(self.U(H)))
        return self.w(gate)  # (N, 1)

    def weights(self, H: Tensor) -> Tensor:
        if H.shape[0] < 1:
            raise ContractError("empty bag")
        return nx.softmax(self.scores(H), axis=0)

    def apply(self, H: np.ndarray) -> np.ndarray:
        if len(H) < 1:
            raise ContractError("empty bag")
        # evaluate in a canonical instance order so reordering the bag permutes the weights bit-exactly
        order = _canonical_order(H)
        Hs = H[order]
        gate = np.tanh(self.V.apply(Hs)) * nx._sigmoid(self.U.apply(Hs))
        s = self.w.apply(gate)[:, 0]
        e = np.exp(s - s.max())
        a = np.empty_like(e)
        a[order] = e / e.sum()
        return a

    def parameters(self) -> list[Tensor]:
        return self.V.parameters() + self.U.parameters() + self.w.parameters()


class MilModel:
    def __init__(self, d: int, K: int = 5, d_att: int = 256, hidden: int = 256, rng=None, slope: float = nx.DEFAULT_SLOPE):
        self.d = d
        self.K = K
        self.hidden = hidden
        self.slope = slope
        self.attention = GatedAttention(d, d_att, rng)
        self.fc1 = Dense(d, hidden, rng)
        self.fc2 = Dense(hidden, K, rng)

    @property
    def d_att(self) -> int:
        return self.attention.d_att

    def logits(self, H: Tensor) -> tuple[Tensor, Tensor]:
        """Graph-building forward; returns (logits of shape (1, K), attention weights (N, 1))."""
        if H.ndim != 2 or H.shape[1] != self.d:
            raise DimensionError(f"bag of shape {H.shape} for a model with d={self.d}")
        a = self.attention.weights(H)
        pooled = nx.sum(nx.mul(a, H), axis=0, keepdims=True)
        hidden = nx.leaky_relu(self.fc1(pooled), self.slope)
        return self.fc2(hidden), a

    def predict_proba(self, H: np.ndarray) -> np.ndarray:
        H = np.asarray(H, dtype=np.float64)
        if H.ndim != 2 or H.shape[1] != self.d:
            raise DimensionError(f"bag of shape {H.shape} for a model with d={self.d}")
        pooled = pool(H, self.attention.apply(H))
        x = self.fc1.apply(pooled[None, :])
        x = np.where(x > 0, x, self.slope * x)
        z = self.fc2.apply(x)[0]
        e = np.exp(z - z.max())
        return e / e.sum()

    def parameters(self) -> list[Tensor]:
        return self.attention.parameters() + self.fc1.parameters() + self.fc2.parameters()


def _canonical_order(H: np.ndarray) -> np.ndarray:
    return np.lexsort(H.T[::-1])


def attention_weights(att: GatedAttention, H: np.ndarray) -> np.ndarray:
    return att.apply(np.asarray(H, dtype=np.float64))


def pool(H: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Attention-weighted sum of instances; keeps the embedding dimension."""
    H = np.asarray(H, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if H.ndim != 2 or a.shape != (len(H),):
        raise DimensionError(f"weights {a.shape} do not match bag {H.shape}")
    order = _canonical_order(H)
    return a[order] @ H[order]


# -------------------------------------------------------------- aug modes

@dataclass(frozen=True)
class NoAug:
    name = "none"


@dataclass(frozen=True)
class PatchPrecomputed:
    """Uniform pick among the original and ``n_augs`` pre-extracted oracle augmentations."""

    oracle: OracleAugmenter
    n_augs: int = 5
    name = "patch"

    def __post_init__(self):
        if self.n_augs < 1:
            raise ContractError("n_augs must be >= 1")

    def precompute(self, H: np.ndarray, rng: Stream) -> np.ndarray:
        n = len(H)
        rep = np.tile(H, (self.n_augs, 1))
        variants = self.oracle.apply(rep, self.oracle.sample_theta(rng, len(rep)))
        return np.concatenate([H[None], variants.reshape(self.n_augs, n, -1)])


@dataclass(frozen=True)
class GanOnline:
    generator: object
    p_apply: float = 1.0
    name = "gan"

    def __post_init__(self):
        if not 0.0 <= self.p_apply <= 1.0:
            raise ContractError("p_apply must lie in [0, 1]")


AugMode = NoAug | PatchPrecomputed | GanOnline


def augment_instances(mode, H: np.ndarray, rng: Stream, bank: np.ndarray | None = None) -> np.ndarray:
    if isinstance(mode, NoAug):
        return H
    if isinstance(mode, PatchPrecomputed):
        if bank is None:
            bank = mode.precompute(H, rng)
        pick = rng.integers(0, len(bank), size=len(H))
        return bank[pick, np.arange(len(H))]
    if isinstance(mode, GanOnline):
        gen = mode.generator
        if gen.d != H.shape[1]:
            raise DimensionError(f"generator d={gen.d} but bag d={H.shape[1]}")
        if mode.p_apply == 0.0:
            return H
        fake = gen.apply(rng.normal(H.shape), H)
        if mode.p_apply >= 1.0:
            return fake
        keep = rng.uniform(size=len(H)) >= mode.p_apply
        fake[keep] = H[keep]
        return fake
    raise ContractError(f"unknown augmentation mode {mode!r}")


def mil_forward(model: MilModel, bag, aug_mode=NoAug(), rng=None) -> np.ndarray:
    """Class probabilities for one bag after the mode's augmentation."""
    H = bag.instances if isinstance(bag, Bag) else np.asarray(bag, dtype=np.float64)
    if not isinstance(aug_mode, NoAug):
        H = augment_instances(aug_mode, H, as_stream(0 if rng is None else rng))
    return model.predict_proba(H)


# ----------------------------------------------------------------- training

@dataclass
class MilConfig:
    epochs: int = 40
    lr: float = 1e-4
    weight_decay: float = 1e-4
    d_att: int = 256
    hidden: int = 256
    seed: int = 0


@dataclass
class MilLog:
    train_loss: list[float] = field(default_factory=list)
    val_nll: list[float] = field(default_factory=list)
    best_epoch: int = -1  # -1: the initial weights won
    best_val_nll: float = float("inf")


@dataclass
class MilResult:
    model: MilModel
    log: MilLog
    config: MilConfig


def bag_nll(model: MilModel, bags: list[Bag]) -> float:
    if not bags:
        return float("nan")
    p = np.array([model.predict_proba(b.instances)[b.label] for b in bags])
    return float(np.mean(-np.log(np.maximum(p, 1e-12))))


def train_mil(train_bags: list[Bag], val_bags: list[Bag], aug_mode=NoAug(), cfg: MilConfig | None = None,
              K: int | None = None) -> MilResult:
    """One Adam step per bag; keeps the weights with the best validation NLL."""
    cfg = cfg or MilConfig()
    if not train_bags or not val_bags:
        raise ContractError("train and validation splits must be nonempty")
    d = train_bags[0].instances.shape[1]
    K = K or 1 + max(b.label for b in train_bags + val_bags)
    root = Stream(cfg.seed, ("mil", aug_mode.name))
    model = MilModel(d, K, cfg.d_att, cfg.hidden, rng=root.child("init"))
    params = model.parameters()
    opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)

    banks = None
    if isinstance(aug_mode, PatchPrecomputed):
        brng = root.child("patch-bank")
        banks = [aug_mode.precompute(b.instances, brng) for b in train_bags]

    mlog = MilLog(best_val_nll=bag_nll(model, val_bags))
    best = get_weights(params)
    for epoch in range(cfg.epochs):
        erng = root.child("epoch", epoch)
        total = 0.0
        for i in erng.permutation(len(train_bags)):
            bag = train_bags[i]
            H = augment_instances(aug_mode, bag.instances, erng, None if banks is None else banks[i])
            opt.zero_grad()
            logits, _ = model.logits(Tensor(H))
            loss = nx.mul(nx.reshape(nx.log_softmax(logits, axis=1), (K,)), -np.eye(K)[bag.label])
            loss = nx.sum(loss)
            if not np.isfinite(loss.item()):
                raise MilTrainingError("non-finite loss", epoch, int(i))
            nx.backward(loss)
            opt.step()
            total += loss.item()
        mlog.train_loss.append(total / len(train_bags))
        v = bag_nll(model, val_bags)
        mlog.val_nll.append(v)
        if v < mlog.best_val_nll:
            mlog.best_val_nll, mlog.best_epoch = v, epoch
            best = get_weights(params)
        log.debug("mil %s epoch %d: train %.4f val %.4f", aug_mode.name, epoch, mlog.train_loss[-1], v)
    set_weights(params, best)
    return MilResult(model=model, log=mlog, config=cfg)


# ---------------------------------------------------------------- checkpoint

def model_bytes(model: MilModel) -> bytes:
    head = struct.pack("<4sIIII", CKPT_MAGIC, CKPT_VERSION, model.d, model.d_att, model.K)
    return head + b"".join(np.ascontiguousarray(w, dtype="<f8").tobytes() for w in get_weights(model.parameters()))


def parse_model_bytes(buf: bytes) -> MilModel:
    if len(buf) < 4 or buf[:4] != CKPT_MAGIC:
        raise ParseError(f"bad magic {buf[:4]!r}, expected {CKPT_MAGIC!r}", 0)
    if len(buf) < 20:
        raise ParseError("truncated header", len(buf))
    _, version, d, d_att, K = struct.unpack_from("<4sIIII", buf, 0)
    if version != CKPT_VERSION:
        raise ParseError(f"unsupported version {version}", 4)
    # the classifier width is implied by the payload size
    n_values, rem = divmod(len(buf) - 20, 8)
    att = 2 * (d * d_att + d_att) + d_att + 1
    hidden, rem2 = divmod(n_values - att - K, d + 1 + K)
    if rem or rem2 or hidden < 1:
        raise ParseError(f"payload of {len(buf) - 20} bytes fits no model with d={d}, d_att={d_att}, K={K}", 20)
    model = MilModel(d, K, d_att, hidden)
    off = 20
    weights = []
    for p in model.parameters():
        weights.append(np.frombuffer(buf, dtype="<f8", count=p.data.size, offset=off).reshape(p.shape))
        off += 8 * p.data.size
    set_weights(model.parameters(), weights)
    return model


def save_model(model: MilModel, path, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(model_bytes(model))
    sidecar = {"schema_version": 1, "d": model.d, "d_att": model.d_att, "K": model.K, "hidden": model.hidden}
    sidecar.update(meta or {})
    path.with_suffix(".meta.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True, default=str) + "\n")
    return path


def load_model(path) -> MilModel:
    return parse_model_bytes(Path(path).read_bytes())


def mil_meta(result: MilResult) -> dict:
    return {"config": asdict(result.config), "best_epoch": result.log.best_epoch,
            "best_val_nll": result.log.best_val_nll}
