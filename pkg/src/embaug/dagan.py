"""Embedding-space data-augmentation GAN.

Two generator families map a noise vector ``z`` and a source embedding ``h``
(both length ``d``) to a synthetic augmented embedding:

* ``exp``: one encoder/decoder MLP over the concatenation ``z || h``, so every
  output factor can depend on every input factor.
* ``ind``: a tiny 2 -> 4 -> 1 MLP shared across coordinates and applied to each
  pair ``(z_j, h_j)`` separately; output factors are independent.

The discriminators mirror them and, by default, see the source embedding next
to the candidate (pix2pix-style conditioning).
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .layers import MLP, get_weights, set_weights
from .numerics import ContractError, DimensionError, Tensor
from .optim import Adam
from .rng import Stream, as_stream
from .synthdata import PairSet, ParseError

log = logging.getLogger(__name__)

EXP_WIDTHS = (1024, 512, 256, 512, 1024)
IND_HIDDEN = 4
VARIANTS = ("ind", "exp")
CKPT_MAGIC = b"EAG1"
CKPT_VERSION = 1


class GanTrainingError(RuntimeError):
    def __init__(self, message: str, epoch: int, batch: int):
        super().__init__(f"{message} (epoch {epoch}, batch {batch})")
        self.epoch = epoch
        self.batch = batch


def exp_widths(d: int) -> tuple[int, ...]:
    """Hidden widths of the expressive MLPs, capped at max(4d, 256) for small d."""
    cap = max(4 * d, 256)
    return tuple(min(w, cap) for w in EXP_WIDTHS)


def _check_pair(a: np.ndarray, b: np.ndarray, d: int) -> None:
    if a.shape != b.shape or a.shape[-1] != d:
        raise DimensionError(f"expected two (..., {d}) arrays, got {a.shape} and {b.shape}")


# ---------------------------------------------------------------- generators

class GeneratorExp:
    variant = "exp"

    def __init__(self, d: int, rng=None, widths: tuple[int, ...] | None = None):
        self.d = d
        self.widths = tuple(widths) if widths is not None else exp_widths(d)
        self.mlp = MLP([2 * d, *self.widths, d], rng)

    @property
    def dims(self) -> list[int]:
        return self.mlp.dims

    def forward(self, z: Tensor, h: Tensor) -> Tensor:
        _check_pair(z.data, h.data, self.d)
        return self.mlp(nx.concat([z, h], axis=1))

    def apply(self, z: np.ndarray, h: np.ndarray) -> np.ndarray:
        _check_pair(z, h, self.d)
        single = h.ndim == 1
        out = self.mlp.apply(np.concatenate([np.atleast_2d(z), np.atleast_2d(h)], axis=1))
        return out[0] if single else out

    def parameters(self) -> list[Tensor]:
        return self.mlp.parameters()

    def flops_per_sample(self) -> int:
        return self.mlp.forward_flops()


class GeneratorInd:
    variant = "ind"

    def __init__(self, d: int, rng=None, hidden: int = IND_HIDDEN):
        self.d = d
        self.mlp = MLP([2, hidden, 1], rng)

    @property
    def dims(self) -> list[int]:
        return self.mlp.dims

    def forward(self, z: Tensor, h: Tensor) -> Tensor:
        _check_pair(z.data, h.data, self.d)
        B = z.shape[0]
        pairs = nx.concat([nx.reshape(z, (B * self.d, 1)), nx.reshape(h, (B * self.d, 1))], axis=1)
        return nx.reshape(self.mlp(pairs), (B, self.d))

    def apply(self, z: np.ndarray, h: np.ndarray) -> np.ndarray:
        _check_pair(z, h, self.d)
        pairs = np.stack([np.asarray(z, dtype=np.float64), np.asarray(h, dtype=np.float64)], axis=-1)
        return self.mlp.apply(pairs.reshape(-1, 2)).reshape(np.shape(h))

    def parameters(self) -> list[Tensor]:
        return self.mlp.parameters()

    def flops_per_sample(self) -> int:
        return self.d * self.mlp.forward_flops()


def make_generator(variant: str, d: int, rng=None):
    if variant == "exp":
        return GeneratorExp(d, rng)
    if variant == "ind":
        return GeneratorInd(d, rng)
    raise ContractError(f"unknown generator variant {variant!r}")


def gen_forward(gen, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    return gen.apply(z, h)


def sample_augmentation(gen, h: np.ndarray, rng) -> np.ndarray:
    """Fresh ``z ~ N(0, I)`` per embedding, then one generator pass."""
    rng = as_stream(rng)
    h = np.asarray(h, dtype=np.float64)
    return gen.apply(rng.normal(h.shape), h)


# ------------------------------------------------------------ discriminators

class DiscriminatorExp:
    variant = "exp"

    def __init__(self, d: int, rng=None, conditional: bool = True, widths: tuple[int, ...] | None = None):
        self.d = d
        self.conditional = conditional
        widths = tuple(widths) if widths is not None else exp_widths(d)
        self.mlp = MLP([(2 if conditional else 1) * d, *widths, 1], rng)

    def forward(self, h: Tensor, cand: Tensor) -> Tensor:
        _check_pair(h.data, cand.data, self.d)
        x = nx.concat([h, cand], axis=1) if self.conditional else cand
        return nx.reshape(nx.sigmoid(self.mlp(x)), (cand.shape[0],))

    def parameters(self) -> list[Tensor]:
        return self.mlp.parameters()


class DiscriminatorInd:
    """Shared per-coordinate scorer; coordinate scores are averaged before the sigmoid."""

    variant = "ind"

    def __init__(self, d: int, rng=None, conditional: bool = True, hidden: int = IND_HIDDEN):
        self.d = d
        self.conditional = conditional
        self.mlp = MLP([2 if conditional else 1, hidden, 1], rng)

    def forward(self, h: Tensor, cand: Tensor) -> Tensor:
        _check_pair(h.data, cand.data, self.d)
        B = cand.shape[0]
        cols = [nx.reshape(cand, (B * self.d, 1))]
        if self.conditional:
            cols.insert(0, nx.reshape(h, (B * self.d, 1)))
        scores = nx.reshape(self.mlp(nx.concat(cols, axis=1)), (B, self.d))
        return nx.sigmoid(nx.mean(scores, axis=1))

    def parameters(self) -> list[Tensor]:
        return self.mlp.parameters()


def make_discriminator(variant: str, d: int, rng=None, conditional: bool = True):
    if variant == "exp":
        return DiscriminatorExp(d, rng, conditional)
    if variant == "ind":
        return DiscriminatorInd(d, rng, conditional)
    raise ContractError(f"unknown discriminator variant {variant!r}")


def disc_forward(disc, h: np.ndarray, cand: np.ndarray) -> np.ndarray:
    h2, c2 = np.atleast_2d(h), np.atleast_2d(cand)
    p = disc.forward(Tensor(h2), Tensor(c2)).data
    return p[0] if np.ndim(h) == 1 else p


# -------------------------------------------------------------------- losses

def generator_loss(gen, disc, h: np.ndarray, h_real: np.ndarray, z: np.ndarray, lambda_cos: float = 1.0) -> Tensor:
    """mean( lambda_cos * (1 - cos(fake, real)) + BCE(D(h, fake), 1) )."""
    if len(h) == 0:
        raise ContractError("empty batch")
    fake = gen.forward(Tensor(z), Tensor(h))
    cos = nx.cosine_similarity(fake, Tensor(h_real))
    adv = nx.bce(disc.forward(Tensor(h), fake), 1.0)
    return nx.mean(nx.add(nx.mul(nx.sub(1.0, cos), lambda_cos), adv))


def discriminator_loss(disc, h: np.ndarray, h_real: np.ndarray, h_fake: np.ndarray) -> Tensor:
    """mean( BCE(D(h, real), 1) + BCE(D(h, fake), 0) ); ``h_fake`` enters as a constant."""
    if len(h) == 0:
        raise ContractError("empty batch")
    H = Tensor(h)
    real = nx.bce(disc.forward(H, Tensor(h_real)), 1.0)
    fake = nx.bce(disc.forward(H, Tensor(np.asarray(h_fake))), 0.0)
    return nx.mean(nx.add(real, fake))


# ------------------------------------------------------------------ training

@dataclass
class GanConfig:
    variant: str = "exp"
    lambda_cos: float = 1.0
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    weight_decay: float = 0.0
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0
    conditional: bool = True
    beta1: float = 0.9
    holdout: float = 0.1
    max_holdout: int = 500

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.lambda_cos < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ContractError("invalid GAN config")


@dataclass
class GanLog:
    g_loss: list[float] = field(default_factory=list)
    d_loss: list[float] = field(default_factory=list)
    holdout_cos: list[float] = field(default_factory=list)  # entry 0 is before training


@dataclass
class GanResult:
    generator: object
    discriminator: object
    log: GanLog
    config: GanConfig


def _holdout_split(n: int, cfg: GanConfig, rng: Stream) -> tuple[np.ndarray, np.ndarray]:
    n_hold = min(int(round(cfg.holdout * n)), cfg.max_holdout) if n > 1 else 0
    perm = rng.permutation(n)
    return perm[n_hold:], perm[:n_hold]


def holdout_alignment(gen, h: np.ndarray, h_real: np.ndarray, z: np.ndarray) -> float:
    if len(h) == 0:
        return float("nan")
    fake = gen.apply(z, h)
    return float(np.mean(nx.cosine_similarity(Tensor(fake), Tensor(h_real)).data))


def train_gan(pairs: PairSet, cfg: GanConfig) -> GanResult:
    """Alternate one discriminator step and one generator step per mini-batch."""
    if len(pairs) == 0:
        raise ContractError("empty pair set")
    d = pairs.h.shape[1]
    root = Stream(cfg.seed, ("gan", cfg.variant))
    gen = make_generator(cfg.variant, d, root.child("init-g"))
    disc = make_discriminator(cfg.variant, d, root.child("init-d"), cfg.conditional)
    train_idx, hold_idx = _holdout_split(len(pairs), cfg, root.child("split"))
    z_hold = root.child("holdout-z").normal((len(hold_idx), d))
    opt_g = Adam(gen.parameters(), lr=cfg.lr_g, betas=(cfg.beta1, 0.999), weight_decay=cfg.weight_decay)
    opt_d = Adam(disc.parameters(), lr=cfg.lr_d, betas=(cfg.beta1, 0.999), weight_decay=cfg.weight_decay)

    H, R = pairs.h, pairs.h_aug
    glog = GanLog(holdout_cos=[holdout_alignment(gen, H[hold_idx], R[hold_idx], z_hold)])
    for epoch in range(cfg.epochs):
        erng = root.child("epoch", epoch)
        order = train_idx[erng.permutation(len(train_idx))]
        g_sum = d_sum = 0.0
        n_batches = 0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            h, real = H[idx], R[idx]
            z = erng.normal((len(idx), d))

            fake = gen.apply(z, h)
            opt_d.zero_grad()
            ld = discriminator_loss(disc, h, real, fake)
            nx.backward(ld)
            opt_d.step()

            opt_g.zero_grad()
            lg = generator_loss(gen, disc, h, real, z, cfg.lambda_cos)
            nx.backward(lg)
            opt_g.step()

            if not (np.isfinite(ld.item()) and np.isfinite(lg.item())):
                raise GanTrainingError("non-finite GAN loss", epoch, b)
            g_sum += lg.item()
            d_sum += ld.item()
            n_batches += 1
        glog.g_loss.append(g_sum / max(n_batches, 1))
        glog.d_loss.append(d_sum / max(n_batches, 1))
        glog.holdout_cos.append(holdout_alignment(gen, H[hold_idx], R[hold_idx], z_hold))
        log.debug("gan %s epoch %d: G %.4f D %.4f cos %.4f", cfg.variant, epoch,
                  glog.g_loss[-1], glog.d_loss[-1], glog.holdout_cos[-1])
    # leave discriminator grads from the last generator step out of the returned model
    opt_d.zero_grad()
    return GanResult(generator=gen, discriminator=disc, log=glog, config=cfg)


# ---------------------------------------------------------------- checkpoint

def generator_bytes(gen) -> bytes:
    tag = VARIANTS.index(gen.variant)
    dims = gen.dims
    head = struct.pack(f"<4sIIII{len(dims)}I", CKPT_MAGIC, CKPT_VERSION, tag, gen.d, len(dims), *dims)
    body = b"".join(np.ascontiguousarray(w, dtype="<f8").tobytes() for w in get_weights(gen.parameters()))
    return head + body


def parse_generator_bytes(buf: bytes):
    if len(buf) < 4 or buf[:4] != CKPT_MAGIC:
        raise ParseError(f"bad magic {buf[:4]!r}, expected {CKPT_MAGIC!r}", 0)
    if len(buf) < 20:
        raise ParseError("truncated header", len(buf))
    _, version, tag, d, n_dims = struct.unpack_from("<4sIIII", buf, 0)
    if version != CKPT_VERSION:
        raise ParseError(f"unsupported version {version}", 4)
    if tag >= len(VARIANTS):
        raise ParseError(f"unknown variant tag {tag}", 8)
    off = 20
    if off + 4 * n_dims > len(buf):
        raise ParseError("truncated layer list", off)
    dims = list(struct.unpack_from(f"<{n_dims}I", buf, off))
    off += 4 * n_dims
    variant = VARIANTS[tag]
    if variant == "exp":
        if len(dims) < 3 or dims[0] != 2 * d or dims[-1] != d:
            raise ParseError(f"layer dims {dims} inconsistent with d={d}", 20)
        gen = GeneratorExp(d, widths=tuple(dims[1:-1]))
    else:
        if len(dims) != 3 or dims[0] != 2 or dims[-1] != 1:
            raise ParseError(f"layer dims {dims} inconsistent with the independent variant", 20)
        gen = GeneratorInd(d, hidden=dims[1])
    weights = []
    for p in gen.parameters():
        nbytes = 8 * p.data.size
        if off + nbytes > len(buf):
            raise ParseError("truncated weights", off)
        weights.append(np.frombuffer(buf, dtype="<f8", count=p.data.size, offset=off).reshape(p.shape))
        off += nbytes
    if off != len(buf):
        raise ParseError(f"{len(buf) - off} trailing bytes", off)
    set_weights(gen.parameters(), weights)
    return gen


def save_generator(gen, path, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(generator_bytes(gen))
    sidecar = {"schema_version": 1, "variant": gen.variant, "d": gen.d, "dims": gen.dims}
    sidecar.update(meta or {})
    path.with_suffix(".meta.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True, default=str) + "\n")
    return path


def load_generator(path):
    return parse_generator_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------- diagnostics

def oracle_grid(oracle, rng, n_alpha: int = 61, n_jitter: int = 64):
    """Dense grid over the rotation angle crossed with fixed gain/bias draws (plus identity jitter)."""
    alphas = np.linspace(-oracle.alpha_max, oracle.alpha_max, n_alpha)
    jit = oracle.sample_theta(rng, n_jitter)
    gains = np.concatenate([np.ones((1, oracle.d)), jit.gain])
    biases = np.concatenate([np.zeros((1, oracle.d)), jit.bias])
    return alphas, gains, biases


def manifold_distance(oracle, h: np.ndarray, cand: np.ndarray, grid) -> np.ndarray:
    """min over the grid of 1 - cos(cand_i, A(h_i; theta)) for each row.

    The global scale is left out of the grid because cosine ignores it.
    """
    alphas, gains, biases = grid
    out = np.empty(len(h))
    cand_u = cand / np.linalg.norm(cand, axis=1, keepdims=True)
    for i in range(len(h)):
        rot = oracle.rotate(np.repeat(h[i][None, :], len(alphas), axis=0), alphas)  # (A, d)
        pts = rot[:, None, :] * gains[None, :, :] + biases[None, :, :]  # (A, J, d)
        pts = pts.reshape(-1, oracle.d)
        cos = pts @ cand_u[i] / np.linalg.norm(pts, axis=1)
        out[i] = 1.0 - cos.max()
    return out


def _mean_pairwise(X: np.ndarray) -> float:
    diff = X[:, None, :] - X[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    n = len(X)
    return float(dist.sum() / (n * (n - 1)))


def diversity_ratio(gen, oracle, h: np.ndarray, rng, n_draws: int = 16) -> tuple[float, float]:
    """Mean pairwise spread of generated vs oracle augmentations of the same embeddings."""
    rng = as_stream(rng)
    g_div, o_div = [], []
    for row in h:
        rep = np.repeat(row[None, :], n_draws, axis=0)
        g_div.append(_mean_pairwise(sample_augmentation(gen, rep, rng)))
        o_div.append(_mean_pairwise(oracle.apply(rep, oracle.sample_theta(rng, n_draws))))
    return float(np.mean(g_div)), float(np.mean(o_div))


def gan_meta(result: GanResult) -> dict:
    lg = result.log
    return {
        "config": asdict(result.config),
        "final_g_loss": lg.g_loss[-1] if lg.g_loss else None,
        "final_d_loss": lg.d_loss[-1] if lg.d_loss else None,
        "holdout_cos_init": lg.holdout_cos[0],
        "holdout_cos_final": lg.holdout_cos[-1],
    }
