"""Autoencoder unmixing networks over the multilinear mixing model.

Two modes share one decoder design.  The spectral mode convolves a single
pixel spectrum; the spectral-spatial mode convolves an s x s x B patch and
unmixes its center pixel.  The encoder compresses to R softmax-normalized
abundances; the decoder's first stage is a bias-free linear map whose
weight matrix doubles as the endmember estimate (kept inside [0, 1] by
projection after every optimizer step); a skip-connection ladder turns the
concatenated feature [y; y*x] into two logits whose softmax is the
transition probability; the reconstruction is the closed-form multilinear
mix of y and that probability.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Tape,
    Tensor,
    backward,
    concat,
    constant,
    conv1d_valid_nlc,
    conv3d_valid,
    dense,
    guarded_div,
    hadamard,
    leaky_relu,
    maxpool_lastdim,
    maxpool_nlc,
    mean_all,
    pick,
    reshape,
    sad_loss,
    scale_rows,
    softmax_vec,
    tanh,
)
from .hsi import HsiCube
from .optim import ParamGroup, adam_step, decay_epoch


class ArchitectureError(ValueError):
    """The requested extents cannot be reduced by the encoder plan."""


class TrainingDivergedError(RuntimeError):
    """Training hit a non-finite loss; carries (epoch, batch)."""

    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


_SPECTRAL_KERNELS = (7, 7, 7)   # blocks 1-3; block 4 takes whatever remains
_POOL = 3                       # window and stride of every spectral pool
_MIN_BANDS = 8
_MIN_LADDER_BANDS = 16


def _odd_up(x: int) -> int:
    return x if x % 2 == 1 else x + 1


@dataclass(frozen=True)
class ConvBlock:
    channels: int
    kernel: tuple            # (k,) spectral, or (ks, ks, k) spectral-spatial
    pool: bool               # spectral max pool, window 3 stride 3


@dataclass
class EncoderPlan:
    blocks: list
    spectral_trace: list     # length after the input and every conv/pool
    spatial_trace: list      # [s, after block 1, 1]; empty in spectral mode


def build_encoder_1d(bands: int, endmembers: int) -> EncoderPlan:
    """Four conv blocks (channels 8R, 4R, 2R, R) reducing B bands to 1.

    Blocks 1-3 use nominal kernel 7 with a window-3 stride-3 max pool;
    block 4's kernel is the remaining length, so the output is always
    R x 1.  When the running length falls below a nominal kernel or pool
    window the kernel shrinks to fit and the pool is dropped, which keeps
    heavily downsized configurations buildable.
    """
    if bands < _MIN_BANDS:
        raise ArchitectureError(f"block 1 needs at least {_MIN_BANDS} bands, got {bands}")
    if endmembers < 1:
        raise ArchitectureError("need at least one endmember")
    channels = (8 * endmembers, 4 * endmembers, 2 * endmembers)
    length = bands
    trace = [bands]
    blocks = []
    for ch, nominal in zip(channels, _SPECTRAL_KERNELS):
        k = min(nominal, length)
        length = length - k + 1
        trace.append(length)
        pooled = length >= _POOL
        if pooled:
            length = (length - _POOL) // _POOL + 1
            trace.append(length)
        blocks.append(ConvBlock(ch, (k,), pooled))
    blocks.append(ConvBlock(endmembers, (length,), False))
    trace.append(1)
    return EncoderPlan(blocks, trace, [])


def build_encoder_3d(bands: int, endmembers: int, patch: int) -> EncoderPlan:
    """Spectral-spatial plan: two spatial reductions, same spectral path.

    Block 1's spatial kernel follows max(3, odd(ceil(s/3))); block 2 takes
    whatever spatial extent remains, reaching 1 x 1 after two valid
    convolutions.  Pools act on the spectral axis only (1 x 1 x 3,
    stride 3), mirroring the spectral plan.
    """
    if patch < 3 or patch % 2 == 0:
        raise ArchitectureError(f"patch size must be odd and at least 3, got {patch}")
    base = build_encoder_1d(bands, endmembers)
    k1 = max(3, _odd_up(int(np.ceil(patch / 3))))
    if k1 > patch:
        raise ArchitectureError(f"spatial extent {patch} not reducible by kernel {k1}")
    s1 = patch - k1 + 1
    k2 = s1  # reduces to exactly 1
    spatial_kernels = (k1, k2, 1, 1)
    blocks = [
        ConvBlock(b.channels, (sk, sk, b.kernel[0]), b.pool)
        for b, sk in zip(base.blocks, spatial_kernels)
    ]
    return EncoderPlan(blocks, base.spectral_trace, [patch, s1, 1])


@dataclass(frozen=True)
class LadderPlan:
    """Two skip blocks taking the 2B feature down to 2 logits."""

    feature: int     # 2B
    mid1: int        # B
    half: int        # B // 2
    mid2: int        # max(4, B // 8)
    out: int = 2


def build_dnnsc(bands: int) -> LadderPlan:
    if bands < _MIN_LADDER_BANDS:
        raise ArchitectureError(f"the logit ladder needs at least {_MIN_LADDER_BANDS} bands, got {bands}")
    return LadderPlan(2 * bands, bands, bands // 2, max(4, bands // 8))


@dataclass
class NetworkSpec:
    mode: str                       # "1d" | "3d"
    bands: int
    endmembers: int
    patch: int | None = None        # 3d only, odd
    leaky_alpha: float = 0.01
    guard_floor: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("1d", "3d"):
            raise ValueError(f"mode must be '1d' or '3d', got {self.mode!r}")
        if self.mode == "3d":
            if self.patch is None:
                raise ValueError("spectral-spatial mode needs a patch size")
        else:
            self.patch = None
        if self.guard_floor <= 0:
            raise ValueError("guard floor must be positive")
        # fail fast on unbuildable extents
        self.encoder_plan()
        build_dnnsc(self.bands)

    def encoder_plan(self) -> EncoderPlan:
        if self.mode == "1d":
            return build_encoder_1d(self.bands, self.endmembers)
        return build_encoder_3d(self.bands, self.endmembers, self.patch)

    def ladder(self) -> LadderPlan:
        return build_dnnsc(self.bands)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "bands": self.bands,
            "endmembers": self.endmembers,
            "patch": self.patch,
            "leaky_alpha": self.leaky_alpha,
            "guard_floor": self.guard_floor,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(**d)


@dataclass
class TrainConfig:
    batch_size: int = 512
    epochs: int = 150
    lr_decoder: float = 0.0005
    decoder_decay: float = 0.9
    lr_rest: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.epochs < 1:
            raise ValueError("need at least one epoch")


class Network:
    """Parameter store plus the plans needed to run the forward pass."""

    def __init__(self, spec: NetworkSpec, params: dict):
        self.spec = spec
        self.params = params  # name -> Tensor, in declaration order
        self.plan = spec.encoder_plan()

    def parameters(self) -> list:
        return list(self.params.values())

    @property
    def decoder_weights(self) -> Tensor:
        return self.params["decoder.weights"]

    def rest_parameters(self) -> list:
        return [t for name, t in self.params.items() if name != "decoder.weights"]

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.grad = None

    def project_decoder_weights(self) -> None:
        np.clip(self.decoder_weights.data, 0.0, 1.0, out=self.decoder_weights.data)


def init_network(spec: NetworkSpec, E_init: np.ndarray, seed: int | None = None) -> Network:
    """Fresh parameters: decoder weights copy the endmember initializer,
    everything else draws uniform +-sqrt(1/fan_in)."""
    E_init = np.asarray(E_init, dtype=np.float64)
    if E_init.shape != (spec.bands, spec.endmembers):
        raise ValueError(
            f"endmember initializer {E_init.shape} does not match "
            f"({spec.bands}, {spec.endmembers})"
        )
    rng = np.random.default_rng(spec.seed if seed is None else seed)

    def uniform(shape, fan_in):
        bound = np.sqrt(1.0 / fan_in)
        return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)

    params: dict[str, Tensor] = {}
    plan = spec.encoder_plan()
    in_ch = 1
    for i, block in enumerate(plan.blocks):
        shape = (block.channels, in_ch) + block.kernel
        params[f"encoder.block{i + 1}.kernels"] = uniform(shape, in_ch * int(np.prod(block.kernel)))
        in_ch = block.channels
    params["decoder.weights"] = Tensor(E_init.copy(), requires_grad=True)
    ladder = spec.ladder()
    params["ladder.block1.main_in"] = uniform((ladder.mid1, ladder.feature), ladder.feature)
    params["ladder.block1.main_out"] = uniform((ladder.half, ladder.mid1), ladder.mid1)
    params["ladder.block1.skip"] = uniform((ladder.half, ladder.feature), ladder.feature)
    params["ladder.block2.main_in"] = uniform((ladder.mid2, ladder.half), ladder.half)
    params["ladder.block2.main_out"] = uniform((ladder.out, ladder.mid2), ladder.mid2)
    params["ladder.block2.skip"] = uniform((ladder.out, ladder.half), ladder.half)
    return Network(spec, params)


def extract_endmembers(net: Network) -> np.ndarray:
    """The decoder weight matrix, which the projection keeps in [0, 1]."""
    return net.decoder_weights.data.copy()


def _forward(net: Network, x: Tensor, override_logits=None):
    """Shared forward pass; ``x`` is one sample or a leading-axis batch.

    Returns (abundance, transition probability, reconstruction, center
    pixel) as tensors.  ``override_logits`` replaces the ladder output
    with fixed logits, a diagnostic hook for probing the probability head.
    """
    spec = net.spec
    sample_ndim = 1 if spec.mode == "1d" else 3
    batched = x.data.ndim == sample_ndim + 1
    if x.data.ndim not in (sample_ndim, sample_ndim + 1):
        raise ValueError(f"input rank {x.data.ndim} does not fit mode {spec.mode!r}")
    nbatch = x.shape[0] if batched else None

    if spec.mode == "1d":
        # channels-last layout keeps every encoder op transpose-free
        feat = reshape(x, (nbatch, spec.bands, 1) if batched else (spec.bands, 1))
        convolve, pool = conv1d_valid_nlc, maxpool_nlc
        xpix = x
    else:
        s = spec.patch
        if x.data.shape[-3:] != (s, s, spec.bands):
            raise ValueError(f"patch shape {x.data.shape} does not match ({s}, {s}, {spec.bands})")
        feat = reshape(x, (nbatch, 1, s, s, spec.bands) if batched else (1, s, s, spec.bands))
        convolve, pool = conv3d_valid, maxpool_lastdim
        center = s // 2
        xpix = constant(x.data[:, center, center, :] if batched else x.data[center, center, :])

    for i, block in enumerate(net.plan.blocks):
        feat = convolve(feat, net.params[f"encoder.block{i + 1}.kernels"])
        feat = leaky_relu(feat, spec.leaky_alpha)
        if block.pool:
            feat = pool(feat, _POOL, _POOL)
    feat = reshape(feat, (nbatch, spec.endmembers) if batched else (spec.endmembers,))
    abundance = softmax_vec(feat)

    yhat = dense(abundance, net.params["decoder.weights"])
    cat = concat(yhat, hadamard(yhat, xpix))
    t1 = tanh(dense(cat, net.params["ladder.block1.main_in"]))
    c1 = tanh(dense(t1, net.params["ladder.block1.main_out"])
              + dense(cat, net.params["ladder.block1.skip"]))
    t2 = tanh(dense(c1, net.params["ladder.block2.main_in"]))
    logits = (dense(t2, net.params["ladder.block2.main_out"])
              + dense(c1, net.params["ladder.block2.skip"]))
    if override_logits is not None:
        forced = np.broadcast_to(np.asarray(override_logits, dtype=np.float64),
                                 logits.data.shape)
        logits = constant(forced.copy())
    p = pick(softmax_vec(logits), 1)

    numer = scale_rows(yhat, 1.0 - p)
    denom = 1.0 - scale_rows(yhat, p)
    recon = guarded_div(numer, denom, spec.guard_floor)
    return abundance, p, recon, xpix


def forward_unmix(net: Network, x: np.ndarray, override_logits=None):
    """Unmix one spectrum / patch (or a leading-axis batch of them).

    Returns (abundance, transition probability, reconstruction) arrays.
    """
    a, p, recon, _ = _forward(net, constant(np.asarray(x, dtype=np.float64)),
                              override_logits=override_logits)
    return a.data, p.data, recon.data


def reflect_pad_patches(values: np.ndarray, patch: int):
    """Reflection-pad the image border and return a patch gatherer.

    The returned callable maps flat pixel indices to (k, s, s, B) patches
    whose centers are the original pixels.
    """
    half = patch // 2
    padded = np.pad(values, ((half, half), (half, half), (0, 0)), mode="reflect")
    width = values.shape[1]
    offsets = np.arange(patch)

    def gather(flat_idx: np.ndarray) -> np.ndarray:
        rows = flat_idx // width
        cols = flat_idx % width
        rr = rows[:, None, None] + offsets[None, :, None]
        cc = cols[:, None, None] + offsets[None, None, :]
        return padded[rr, cc, :]

    return gather


def train(net: Network, cube: HsiCube, tcfg: TrainConfig) -> list:
    """Shuffled mini-batch training on the mean per-pixel angle loss.

    Two Adam groups: the decoder weight matrix at its own decaying rate,
    everything else at a constant rate.  The decoder weights are projected
    back into [0, 1] after every step, and the epoch-end decay is applied
    to the decoder group only.  Returns the mean loss per epoch.
    """
    spec = net.spec
    if cube.bands != spec.bands:
        raise ValueError(f"cube has {cube.bands} bands, network expects {spec.bands}")
    n = cube.n_pixels
    pixels = cube.as_pixel_matrix()
    gather = None
    if spec.mode == "3d":
        gather = reflect_pad_patches(cube.values, spec.patch)

    adam_kw = dict(beta1=tcfg.beta1, beta2=tcfg.beta2, eps=tcfg.eps)
    decoder_group = ParamGroup([net.decoder_weights], lr=tcfg.lr_decoder,
                               decay=tcfg.decoder_decay, **adam_kw)
    rest_group = ParamGroup(net.rest_parameters(), lr=tcfg.lr_rest, decay=1.0, **adam_kw)

    rng = np.random.default_rng(tcfg.shuffle_seed)
    history = []
    for epoch in range(tcfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for bstart, start in enumerate(range(0, n, tcfg.batch_size)):
            idx = order[start : start + tcfg.batch_size]
            batch = pixels[idx] if gather is None else gather(idx)
            x = constant(batch)
            net.zero_grads()
            with Tape() as tape:
                _, _, recon, xpix = _forward(net, x)
                loss = mean_all(sad_loss(xpix, recon))
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch, bstart, value)
            backward(tape, loss)
            adam_step(decoder_group)
            adam_step(rest_group)
            net.project_decoder_weights()
            epoch_loss += value * len(idx)
        decay_epoch(decoder_group)
        net.project_decoder_weights()
        history.append(epoch_loss / n)
    return history


def infer_maps(net: Network, cube: HsiCube, chunk: int = 1024):
    """Per-pixel unmixing of a whole cube, batched for throughput.

    Returns (abundance H x W x R, probability H x W, reconstruction cube).
    """
    spec = net.spec
    if cube.bands != spec.bands:
        raise ValueError(f"cube has {cube.bands} bands, network expects {spec.bands}")
    n = cube.n_pixels
    pixels = cube.as_pixel_matrix()
    gather = reflect_pad_patches(cube.values, spec.patch) if spec.mode == "3d" else None
    A = np.empty((n, spec.endmembers))
    P = np.empty(n)
    recon = np.empty((n, spec.bands))
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n))
        batch = pixels[idx] if gather is None else gather(idx)
        a, p, r = forward_unmix(net, batch)
        A[idx] = a
        P[idx] = p
        recon[idx] = r
    shape = (cube.height, cube.width)
    return (A.reshape(shape + (spec.endmembers,)),
            P.reshape(shape),
            HsiCube(recon.reshape(shape + (spec.bands,)), cube.wavelengths))


# ---------------------------------------------------------------------------
# checkpoints: one JSON header line, then raw little-endian float64 payload


def save_checkpoint(net: Network, path) -> None:
    header = {
        "spec": net.spec.to_dict(),
        "params": [[name, list(t.shape)] for name, t in net.params.items()],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for t in net.params.values():
            f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> Network:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        payload = f.read()
    spec = NetworkSpec.from_dict(header["spec"])
    net = init_network(spec, np.full((spec.bands, spec.endmembers), 0.5))
    expected = [[name, list(t.shape)] for name, t in net.params.items()]
    if header["params"] != expected:
        raise ValueError("checkpoint parameter manifest does not match the architecture")
    offset = 0
    for t in net.params.values():
        count = t.size
        block = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        t.data = block.reshape(t.shape).copy()
        offset += count * 8
    if offset != len(payload):
        raise ValueError(f"checkpoint payload has {len(payload) - offset} trailing bytes")
    return net
