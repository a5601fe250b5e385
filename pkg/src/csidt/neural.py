"""Quantized autoencoder for precoder feedback, differentiated by hand.

Encoder and decoder are plain MLPs over the real/imag-flattened precoder:
leaky-rectified hidden layers (slope 0.1), a logistic squash on the
encoder output, a mid-rise scalar quantizer on the latent (2 bits per
element by default, 32 feedback bits total), and a decoder whose output is
reshaped to N_t x N_s and renormalized to unit columns. Training minimizes
mean squared error with adaptive-moment descent; the quantizer
backpropagates as identity on [0, 1] (straight-through). Online learning
re-runs the same loop with the encoder frozen.

Everything is double precision and bit-deterministic for a fixed seed:
fixed initialization, fixed shuffle order, fixed reduction order.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .bitio import BitWriter, CodewordBits
from .errors import ConfigError, CorpusFormatError, NumericalError
from .precoding import Precoder

LEAKY_SLOPE = 0.1
NORM_EPS = 1e-12

CHECKPOINT_MAGIC = b"CSIDTNN1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class QuantizerSpec:
    """Mid-rise scalar quantizer on [0, 1]: centers (i + 0.5) / 2^B."""

    bits_per_element: int = 2

    def __post_init__(self):
        if self.bits_per_element < 1:
            raise ValueError("bits_per_element must be >= 1")

    @property
    def n_levels(self) -> int:
        return 1 << self.bits_per_element

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.n_levels) + 0.5) / self.n_levels


@dataclass
class ModelParams:
    """Weight/bias stacks for encoder and decoder, W of shape (out, in)."""

    encoder: list  # [(W, b), ...]
    decoder: list
    n_tx: int = 8
    n_streams: int = 2

    @property
    def input_dim(self) -> int:
        return self.encoder[0][0].shape[1]

    @property
    def latent_dim(self) -> int:
        return self.encoder[-1][0].shape[0]

    def encoder_dims(self):
        return [self.encoder[0][0].shape[1]] + [w.shape[0] for w, _ in self.encoder]

    def decoder_dims(self):
        return [self.decoder[0][0].shape[1]] + [w.shape[0] for w, _ in self.decoder]

    def copy(self) -> "ModelParams":
        return ModelParams(
            encoder=[(w.copy(), b.copy()) for w, b in self.encoder],
            decoder=[(w.copy(), b.copy()) for w, b in self.decoder],
            n_tx=self.n_tx,
            n_streams=self.n_streams,
        )


@dataclass(frozen=True)
class TrainConfig:
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 200
    seed: int = 0
    ste: bool = True
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")


def init_params(
    n_tx: int = 8,
    n_streams: int = 2,
    hidden=(512, 256),
    latent_dim: int = 16,
    seed: int = 0,
) -> ModelParams:
    """Scaled uniform fan-in initialization, U(+-sqrt(1/fan_in))."""
    input_dim = 2 * n_tx * n_streams
    enc_dims = [input_dim, *hidden, latent_dim]
    dec_dims = [latent_dim, *reversed(hidden), input_dim]
    rng = np.random.default_rng(seed)

    def make(dims):
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(1.0 / fan_in)
            w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            b = np.zeros(fan_out)
            layers.append((w, b))
        return layers

    return ModelParams(encoder=make(enc_dims), decoder=make(dec_dims),
                       n_tx=n_tx, n_streams=n_streams)


def flatten_precoder(p) -> np.ndarray:
    """Column-major real/imag interleave: [Re w_1; Im w_1; ...; Im w_Ns]."""
    w = np.asarray(getattr(p, "w", p))
    blocks = []
    for s in range(w.shape[1]):
        blocks.append(w[:, s].real)
        blocks.append(w[:, s].imag)
    return np.concatenate(blocks)


def unflatten_precoder(x, n_tx: int, n_streams: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2 * n_tx * n_streams:
        raise ValueError(
            f"vector length {x.shape[-1]} does not match 2*{n_tx}*{n_streams}"
        )
    cols = []
    for s in range(n_streams):
        block = x[..., 2 * s * n_tx: 2 * (s + 1) * n_tx]
        cols.append(block[..., :n_tx] + 1j * block[..., n_tx:])
    return np.stack(cols, axis=-1)


def loss_mse(a, b) -> float:
    a = np.asarray(getattr(a, "w", a))
    b = np.asarray(getattr(b, "w", b))
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if np.iscomplexobj(a) or np.iscomplexobj(b):
        diff = np.abs(np.asarray(a, complex) - np.asarray(b, complex)) ** 2
    else:
        diff = (a - b) ** 2
    return float(np.mean(diff))


def quantize_latent(z: np.ndarray, q: QuantizerSpec):
    """Map each latent to its nearest level center; returns (values, indices)."""
    idx = np.clip(np.floor(z * q.n_levels), 0, q.n_levels - 1).astype(np.int64)
    return (idx + 0.5) / q.n_levels, idx


def pack_latent_bits(indices: np.ndarray, q: QuantizerSpec) -> CodewordBits:
    writer = BitWriter()
    for i in np.asarray(indices).ravel():
        writer.write(int(i), q.bits_per_element)
    return writer.payload("NEURAL")


def _leaky(z):
    return np.where(z > 0, z, LEAKY_SLOPE * z)


def _leaky_grad(z):
    return np.where(z > 0, 1.0, LEAKY_SLOPE)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _normalize_blocks(v: np.ndarray, n_tx: int, n_streams: int):
    """Unit-normalize each 2*N_t block (one complex column per block).

    Returns (normalized, norms, fallback_mask); blocks with vanishing norm
    fall back to a fixed basis vector and receive zero gradient.
    """
    b = v.shape[0]
    blocks = v.reshape(b, n_streams, 2 * n_tx)
    norms = np.linalg.norm(blocks, axis=2)
    fallback = norms < NORM_EPS
    safe = np.where(fallback, 1.0, norms)
    out = blocks / safe[:, :, None]
    if np.any(fallback):
        basis = np.zeros(2 * n_tx)
        basis[0] = 1.0
        out[fallback] = basis
    return out.reshape(b, -1), norms, fallback


@dataclass
class ForwardCache:
    enc_pre: list
    enc_act: list
    latent_raw: np.ndarray
    latent: np.ndarray
    dec_pre: list
    dec_act: list
    raw_out: np.ndarray
    norms: np.ndarray
    fallback: np.ndarray
    output: np.ndarray


def _forward_batch(params: ModelParams, x: np.ndarray, q: QuantizerSpec,
                   quantize: bool) -> ForwardCache:
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite values in network input")
    a = x
    enc_pre, enc_act = [], [x]
    for i, (w, b) in enumerate(params.encoder):
        z = a @ w.T + b
        enc_pre.append(z)
        a = _sigmoid(z) if i == len(params.encoder) - 1 else _leaky(z)
        enc_act.append(a)
    latent_raw = a
    latent = quantize_latent(latent_raw, q)[0] if quantize else latent_raw

    a = latent
    dec_pre, dec_act = [], [latent]
    for i, (w, b) in enumerate(params.decoder):
        z = a @ w.T + b
        dec_pre.append(z)
        a = z if i == len(params.decoder) - 1 else _leaky(z)
        dec_act.append(a)
    raw_out = a
    output, norms, fallback = _normalize_blocks(raw_out, params.n_tx, params.n_streams)
    if not np.all(np.isfinite(output)):
        raise NumericalError("non-finite values produced by the network")
    return ForwardCache(enc_pre, enc_act, latent_raw, latent, dec_pre, dec_act,
                        raw_out, norms, fallback, output)


def forward(params: ModelParams, x, q: QuantizerSpec, quantize: bool = True):
    """Single-vector forward pass: returns (latent, bits, reconstruction).

    ``bits`` is the packed feedback codeword when quantizing, else None;
    the reconstruction has unit columns after the block renormalization.
    """
    x = np.asarray(x, dtype=float)
    cache = _forward_batch(params, x[None, :], q, quantize)
    bits = None
    if quantize:
        _, idx = quantize_latent(cache.latent_raw, q)
        bits = pack_latent_bits(idx[0], q)
    return cache.latent[0], bits, cache.output[0]


def _backward_batch(params: ModelParams, x: np.ndarray, cache: ForwardCache,
                    q: QuantizerSpec):
    """Gradients of mean-squared reconstruction error wrt all parameters.

    The quantizer is bypassed with a straight-through estimator: identity
    on [0, 1], zero outside.
    """
    b, d = x.shape
    n_tx, n_s = params.n_tx, params.n_streams
    dy = 2.0 * (cache.output - x) / (d * b)

    # Through per-block normalization: dv = (dy - yhat (yhat . dy)) / n.
    dy_blocks = dy.reshape(b, n_s, 2 * n_tx)
    y_blocks = cache.output.reshape(b, n_s, 2 * n_tx)
    dots = np.sum(dy_blocks * y_blocks, axis=2, keepdims=True)
    safe = np.where(cache.fallback, 1.0, cache.norms)[:, :, None]
    dv = (dy_blocks - y_blocks * dots) / safe
    dv[cache.fallback] = 0.0
    grad = dv.reshape(b, d)

    dec_grads = [None] * len(params.decoder)
    for i in range(len(params.decoder) - 1, -1, -1):
        w, _ = params.decoder[i]
        if i != len(params.decoder) - 1:
            grad = grad * _leaky_grad(cache.dec_pre[i])
        dec_grads[i] = (grad.T @ cache.dec_act[i], grad.sum(axis=0))
        grad = grad @ w

    # Straight-through: gradient passes where the pre-quantized latent is in [0, 1].
    ste_mask = (cache.latent_raw >= 0.0) & (cache.latent_raw <= 1.0)
    grad = grad * ste_mask

    enc_grads = [None] * len(params.encoder)
    for i in range(len(params.encoder) - 1, -1, -1):
        w, _ = params.encoder[i]
        if i == len(params.encoder) - 1:
            s = cache.enc_act[i + 1]
            grad = grad * s * (1.0 - s)
        else:
            grad = grad * _leaky_grad(cache.enc_pre[i])
        enc_grads[i] = (grad.T @ cache.enc_act[i], grad.sum(axis=0))
        grad = grad @ w

    return enc_grads, dec_grads


def backward(params: ModelParams, batch, q: QuantizerSpec, quantize: bool = True):
    """Public gradient entry point over a batch of flattened precoders."""
    x = np.atleast_2d(np.asarray(batch, dtype=float))
    cache = _forward_batch(params, x, q, quantize)
    return _backward_batch(params, x, cache, q)


def batch_loss(params: ModelParams, x: np.ndarray, q: QuantizerSpec,
               quantize: bool = True) -> float:
    cache = _forward_batch(params, np.atleast_2d(x), q, quantize)
    return loss_mse(cache.output, np.atleast_2d(x))


class _Adam:
    def __init__(self, shapes, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = [(np.zeros(ws), np.zeros(bs)) for ws, bs in shapes]
        self.v = [(np.zeros(ws), np.zeros(bs)) for ws, bs in shapes]

    def step(self, layers, grads):
        self.t += 1
        c = self.cfg
        bias1 = 1.0 - c.beta1**self.t
        bias2 = 1.0 - c.beta2**self.t
        out = []
        for i, ((w, b), (gw, gb)) in enumerate(zip(layers, grads)):
            mw, mb = self.m[i]
            vw, vb = self.v[i]
            mw[:] = c.beta1 * mw + (1 - c.beta1) * gw
            mb[:] = c.beta1 * mb + (1 - c.beta1) * gb
            vw[:] = c.beta2 * vw + (1 - c.beta2) * gw**2
            vb[:] = c.beta2 * vb + (1 - c.beta2) * gb**2
            w = w - c.step_size * (mw / bias1) / (np.sqrt(vw / bias2) + c.eps)
            b = b - c.step_size * (mb / bias1) / (np.sqrt(vb / bias2) + c.eps)
            out.append((w, b))
        return out


@dataclass
class TrainResult:
    params: ModelParams
    train_loss_medians: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_epoch: int = -1


def _dataset_matrix(dataset) -> np.ndarray:
    rows = [flatten_precoder(p) for p in dataset]
    return np.stack(rows)


def _val_split(dataset, x: np.ndarray, cfg: TrainConfig, rng):
    """Validation split by position id so no position leaks subbands into
    both sides; falls back to a sample split when ids are unavailable."""
    groups = [getattr(p, "position_id", None) for p in dataset]
    unique = sorted({g for g in groups if g is not None})
    if len(unique) >= 2 and None not in groups:
        perm = rng.permutation(len(unique))
        n_val_groups = int(round(cfg.val_fraction * len(unique)))
        n_val_groups = min(n_val_groups, len(unique) - 1)
        val_groups = {unique[i] for i in perm[:n_val_groups]}
        val_mask = np.array([g in val_groups for g in groups])
        if n_val_groups:
            return x[~val_mask], x[val_mask]
        return x, x
    perm = rng.permutation(len(x))
    n_val = min(int(round(cfg.val_fraction * len(x))), len(x) - 1)
    if n_val:
        return x[perm[n_val:]], x[perm[:n_val]]
    return x[perm], x[perm]


def _run_training(params: ModelParams, dataset, cfg: TrainConfig,
                  q: QuantizerSpec, decoder_only: bool) -> TrainResult:
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    x = _dataset_matrix(dataset)
    rng = np.random.default_rng(cfg.seed)
    x_train, x_val = _val_split(dataset, x, cfg, rng)

    work = params.copy()
    adam_dec = _Adam([(w.shape, b.shape) for w, b in work.decoder], cfg)
    adam_enc = None
    if not decoder_only:
        adam_enc = _Adam([(w.shape, b.shape) for w, b in work.encoder], cfg)

    quantize = cfg.ste
    result = TrainResult(params=work.copy())
    best_val = np.inf
    initial_loss = None

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x_train))
        losses = []
        for start in range(0, len(x_train), cfg.batch_size):
            xb = x_train[order[start:start + cfg.batch_size]]
            cache = _forward_batch(work, xb, q, quantize)
            loss = loss_mse(cache.output, xb)
            if initial_loss is None:
                initial_loss = loss
            if loss > 10.0 * initial_loss:
                raise NumericalError(
                    f"training diverged at epoch {epoch}: batch loss {loss:.3e} "
                    f"exceeds 10x initial {initial_loss:.3e}"
                )
            losses.append(loss)
            enc_grads, dec_grads = _backward_batch(work, xb, cache, q)
            work.decoder = adam_dec.step(work.decoder, dec_grads)
            if not decoder_only:
                work.encoder = adam_enc.step(work.encoder, enc_grads)
        result.train_loss_medians.append(float(np.median(losses)))
        val = batch_loss(work, x_val, q, quantize)
        result.val_losses.append(val)
        if val < best_val:
            best_val = val
            result.params = work.copy()
            result.best_epoch = epoch
    return result


def train(params: ModelParams, dataset, cfg: TrainConfig,
          q: QuantizerSpec = QuantizerSpec()) -> TrainResult:
    """Optimize encoder and decoder on a precoder dataset.

    Deterministic for fixed (params, dataset order, cfg.seed); returns the
    best-validation parameters along with per-epoch loss history.
    """
    return _run_training(params, dataset, cfg, q, decoder_only=False)


def finetune_decoder(params: ModelParams, rw_dataset, cfg: TrainConfig,
                     q: QuantizerSpec = QuantizerSpec()) -> TrainResult:
    """Online learning: retrain the decoder only; the encoder stays frozen."""
    if len(rw_dataset) == 0:
        raise ValueError("online-learning dataset is empty")
    result = _run_training(params, rw_dataset, cfg, q, decoder_only=True)
    # Freeze contract: hand back the original encoder arrays untouched.
    result.params.encoder = [(w.copy(), b.copy()) for w, b in params.encoder]
    return result


def reconstruct(params: ModelParams, p, q: QuantizerSpec = QuantizerSpec()) -> Precoder:
    """Round-trip a precoder through the quantized autoencoder."""
    source = p if isinstance(p, Precoder) else None
    _, _, y = forward(params, flatten_precoder(p), q, quantize=True)
    w = unflatten_precoder(y, params.n_tx, params.n_streams)
    return Precoder(
        w=w,
        eigenvalues=np.ones(params.n_streams),
        subband=source.subband if source else 0,
        position_id=source.position_id if source else 0,
        domain=source.domain if source else "DT",
    )


def mean_rho(params: ModelParams, precoders, q: QuantizerSpec = QuantizerSpec(),
             batch_size: int = 512) -> float:
    """Mean cosine similarity of quantized reconstructions over a dataset."""
    x = _dataset_matrix(precoders)
    total, count = 0.0, 0
    for start in range(0, len(x), batch_size):
        xb = x[start:start + batch_size]
        cache = _forward_batch(params, xb, q, True)
        w_hat = unflatten_precoder(cache.output, params.n_tx, params.n_streams)
        w_ref = unflatten_precoder(xb, params.n_tx, params.n_streams)
        inner = np.abs(np.sum(w_ref.conj() * w_hat, axis=-2))
        total += float(np.sum(np.mean(inner, axis=-1)))
        count += len(xb)
    return total / count


def save_checkpoint(params: ModelParams, path) -> None:
    """Binary checkpoint: magic, version, topology, then f64 LE parameters."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<HH", params.n_tx, params.n_streams))
        for dims in (params.encoder_dims(), params.decoder_dims()):
            fh.write(struct.pack("<H", len(dims)))
            fh.write(struct.pack(f"<{len(dims)}I", *dims))
        for stack in (params.encoder, params.decoder):
            for w, b in stack:
                fh.write(w.astype("<f8").tobytes(order="C"))
                fh.write(b.astype("<f8").tobytes())


def load_checkpoint(path, expect: ModelParams = None) -> ModelParams:
    """Read a checkpoint; validates magic, version, and (optionally) topology."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise CorpusFormatError(f"bad checkpoint magic {data[:8]!r}")
    try:
        off = 8
        (version,) = struct.unpack_from("<H", data, off)
        off += 2
        if version != CHECKPOINT_VERSION:
            raise CorpusFormatError(
                f"checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
            )
        n_tx, n_streams = struct.unpack_from("<HH", data, off)
        off += 4
        dims_lists = []
        for _ in range(2):
            (count,) = struct.unpack_from("<H", data, off)
            off += 2
            dims = struct.unpack_from(f"<{count}I", data, off)
            off += 4 * count
            dims_lists.append(list(dims))
    except struct.error as exc:
        raise CorpusFormatError(f"truncated checkpoint header: {exc}") from exc
    enc_dims, dec_dims = dims_lists

    def read_stack(dims):
        nonlocal off
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            n = fan_out * fan_in
            w = np.frombuffer(data, "<f8", count=n, offset=off).reshape(fan_out, fan_in)
            off += 8 * n
            b = np.frombuffer(data, "<f8", count=fan_out, offset=off)
            off += 8 * fan_out
            layers.append((w.copy(), b.copy()))
        return layers

    try:
        encoder = read_stack(enc_dims)
        decoder = read_stack(dec_dims)
    except ValueError as exc:
        raise CorpusFormatError(f"truncated checkpoint: {exc}") from exc
    if off != len(data):
        raise CorpusFormatError("checkpoint has trailing bytes")
    loaded = ModelParams(encoder=encoder, decoder=decoder, n_tx=n_tx, n_streams=n_streams)
    if expect is not None:
        if (loaded.encoder_dims() != expect.encoder_dims()
                or loaded.decoder_dims() != expect.decoder_dims()):
            raise ConfigError(
                f"checkpoint topology {loaded.encoder_dims()}/{loaded.decoder_dims()} "
                f"does not match configured {expect.encoder_dims()}/{expect.decoder_dims()}"
            )
    return loaded
