"""The tokenizer network: temporal conv embedder, transformer encoder, l2-normalized
vector quantizer, transformer decoder and spectral heads."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import phase_loss as pl
from ..codebook import Codebook, init_codebook, load_codebook, quantization_loss, quantize_batch, save_codebook
from ..errors import FormatError
from ..spectral import n_bins
from .layers import Block, LayerNorm, Linear, TemporalConv, trunc_normal


@dataclass(frozen=True)
class EncoderConfig:
    hidden_dim: int = 200
    attention_heads: int = 10
    mlp_hidden: int = 800
    encoder_depth: int = 2
    decoder_depth: int = 1
    layer_scale_init: float = 1e-3
    patch_len: int = 200
    n_patches: int = 256
    qk_affine: bool = True

    def __post_init__(self):
        if self.hidden_dim % self.attention_heads:
            raise ValueError("hidden_dim must be divisible by attention_heads")
        if self.encoder_depth < 1 or self.decoder_depth < 1:
            raise ValueError("depths must be >= 1")
        conv_dim = TemporalConv(patch_len=self.patch_len).out_dim
        if conv_dim != self.hidden_dim:
            raise ValueError(
                f"temporal conv maps {self.patch_len}-sample patches to {conv_dim} features; "
                f"hidden_dim must match (got {self.hidden_dim})"
            )

    @classmethod
    def paper(cls) -> "EncoderConfig":
        return cls(encoder_depth=12, decoder_depth=3)


@dataclass
class Batch:
    patches: np.ndarray  # (B, P, w)
    electrode_ids: np.ndarray  # (B, P)
    n_windows: np.ndarray  # (B,)

    @classmethod
    def from_samples(cls, samples) -> "Batch":
        return cls(np.stack([s.patches for s in samples]),
                   np.stack([s.electrode_ids for s in samples]),
                   np.array([s.n_windows for s in samples]))


def time_indices(P: int, n_windows, right_align: bool = False) -> np.ndarray:
    """1-based temporal-embedding rows for channel-major samples, ``(B, P)``."""
    n_windows = np.atleast_1d(np.asarray(n_windows))
    i = np.arange(P)[None, :]
    t = i % n_windows[:, None] + 1
    if right_align:
        t = t + (P - n_windows[:, None])
    return t


def add_embeddings(patch_embs, electrode_ids, n_windows, spatial, temporal, right_align=False):
    """``patch_embs[b, i] + spatial[electrode_ids[b, i]] + temporal[time_index(b, i) - 1]``.

    Returns ``(out, (electrode_ids, time_rows))``; the cache feeds :func:`add_embeddings_backward`.
    """
    P = patch_embs.shape[-2]
    if temporal.shape[0] != P:
        raise ValueError(f"temporal table has {temporal.shape[0]} rows for {P} patches")
    ids = np.asarray(electrode_ids)
    if ids.min() < 0 or ids.max() >= spatial.shape[0]:
        raise IndexError(f"electrode id out of range [0, {spatial.shape[0]})")
    rows = time_indices(P, n_windows, right_align) - 1
    return patch_embs + spatial[ids] + temporal[rows], (ids, rows)


def add_embeddings_backward(cache, dy, d_spatial, d_temporal):
    ids, rows = cache
    np.add.at(d_spatial, ids.ravel(), dy.reshape(-1, dy.shape[-1]))
    np.add.at(d_temporal, rows.ravel(), dy.reshape(-1, dy.shape[-1]))
    return dy


def _l2norm(x):
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / n, n


def _l2norm_backward(y, n, dy):
    return (dy - y * (y * dy).sum(axis=-1, keepdims=True)) / n


class TokenizerModel:
    """Parameters live in ``self.params``; the codebook is managed separately (EMA)."""

    def __init__(self, config: EncoderConfig, n_electrodes: int, codebook_size: int = 256,
                 code_dim: int = 64, phase_output: str = "vector", right_align: bool = False,
                 seed: int = 0, dtype=np.float32, init: bool = True, electrodes=()):
        if phase_output not in ("vector", "angle"):
            raise ValueError("phase_output must be 'vector' or 'angle'")
        self.config = config
        self.n_electrodes = n_electrodes
        self.codebook_size = codebook_size
        self.code_dim = code_dim
        self.phase_output = phase_output
        self.right_align = right_align
        self.seed = seed
        self.electrodes = tuple(electrodes)  # global electrode list; id = position + 1
        self.car = self.zscore = False  # per-batch preprocessing the model was trained with
        self.F = n_bins(config.patch_len)
        c = config
        self.conv = TemporalConv(patch_len=c.patch_len)
        self.encoder = [Block(f"enc{i}", c.hidden_dim, c.attention_heads, c.mlp_hidden,
                              c.layer_scale_init, c.qk_affine) for i in range(c.encoder_depth)]
        self.enc_norm = LayerNorm("enc_norm", c.hidden_dim)
        self.task1 = Linear("task1", c.hidden_dim, c.hidden_dim)
        self.task2 = Linear("task2", c.hidden_dim, code_dim)
        self.dec_in = Linear("dec_in", code_dim, c.hidden_dim)
        self.decoder = [Block(f"dec{i}", c.hidden_dim, c.attention_heads, c.mlp_hidden,
                              c.layer_scale_init, c.qk_affine) for i in range(c.decoder_depth)]
        self.dec_norm = LayerNorm("dec_norm", c.hidden_dim)
        self.amp_head = Linear("amp_head", c.hidden_dim, self.F)
        width = 2 * self.F if phase_output == "vector" else self.F
        self.phase_head = Linear("phase_head", c.hidden_dim, width)
        self.params: dict[str, np.ndarray] = {}
        self.codebook: Codebook | None = None
        if init:
            rng = np.random.default_rng(seed)
            for layer in self._layers():
                layer.init(rng, self.params)
            self.params["embed.spatial"] = trunc_normal(rng, (n_electrodes + 1, c.hidden_dim))
            self.params["embed.temporal"] = trunc_normal(rng, (c.n_patches, c.hidden_dim))
            self.params = {k: v.astype(dtype) for k, v in self.params.items()}
            self.codebook = init_codebook(codebook_size, code_dim, rng, dtype=dtype)

    def _layers(self):
        return [self.conv, *self.encoder, self.enc_norm, self.task1, self.task2, self.dec_in,
                *self.decoder, self.dec_norm, self.amp_head, self.phase_head]

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def astype(self, dtype) -> "TokenizerModel":
        m = self.clone()
        m.params = {k: v.astype(dtype) for k, v in m.params.items()}
        if m.codebook is not None:
            cb = m.codebook
            cb.vectors = cb.vectors.astype(dtype)
            cb.ema_cluster_size = cb.ema_cluster_size.astype(dtype)
            cb.ema_embed_sum = cb.ema_embed_sum.astype(dtype)
        return m

    def clone(self) -> "TokenizerModel":
        m = TokenizerModel(self.config, self.n_electrodes, self.codebook_size, self.code_dim,
                           self.phase_output, self.right_align, self.seed, init=False,
                           electrodes=self.electrodes)
        m.car, m.zscore = self.car, self.zscore
        m.params = {k: v.copy() for k, v in self.params.items()}
        m.codebook = self.codebook.copy() if self.codebook is not None else None
        return m

    # forward / backward -------------------------------------------------

    def encode(self, params, batch: Batch):
        """Patches -> l2-normalized code-space vectors ``(B, P, D)`` and cache."""
        dt = next(iter(params.values())).dtype
        x = np.asarray(batch.patches, dtype=dt)
        h, c_conv = self.conv.forward(params, x)
        h, c_emb = add_embeddings(h, batch.electrode_ids, batch.n_windows,
                                  params["embed.spatial"], params["embed.temporal"], self.right_align)
        c_blocks = []
        for blk in self.encoder:
            h, c = blk.forward(params, h)
            c_blocks.append(c)
        h, c_norm = self.enc_norm.forward(params, h)
        t, c_t1 = self.task1.forward(params, h)
        t = np.tanh(t)
        p, c_t2 = self.task2.forward(params, t)
        pn, pnorm = _l2norm(p)
        return pn, (c_conv, c_emb, c_blocks, c_norm, c_t1, t, c_t2, pn, pnorm)

    def encode_backward(self, params, cache, d_pn, grads):
        c_conv, c_emb, c_blocks, c_norm, c_t1, t, c_t2, pn, pnorm = cache
        dp = _l2norm_backward(pn, pnorm, d_pn)
        dt = self.task2.backward(params, c_t2, dp, grads)
        dt = dt * (1.0 - t * t)
        dh = self.task1.backward(params, c_t1, dt, grads)
        dh = self.enc_norm.backward(params, c_norm, dh, grads)
        for blk, c in zip(reversed(self.encoder), reversed(c_blocks)):
            dh = blk.backward(params, c, dh, grads)
        dh = add_embeddings_backward(c_emb, dh, grads["embed.spatial"], grads["embed.temporal"])
        return self.conv.backward(params, c_conv, dh, grads)

    def decode(self, params, z, batch: Batch):
        """Code vectors ``(B, P, D)`` -> ``(amplitude (B,P,F), phase_out)`` and cache."""
        d, c_in = self.dec_in.forward(params, z)
        d, c_emb = add_embeddings(d, batch.electrode_ids, batch.n_windows,
                                  params["embed.spatial"], params["embed.temporal"], self.right_align)
        c_blocks = []
        for blk in self.decoder:
            d, c = blk.forward(params, d)
            c_blocks.append(c)
        d, c_norm = self.dec_norm.forward(params, d)
        amp, c_amp = self.amp_head.forward(params, d)
        ph, c_ph = self.phase_head.forward(params, d)
        return amp, ph, (c_in, c_emb, c_blocks, c_norm, c_amp, c_ph)

    def decode_backward(self, params, cache, d_amp, d_ph, grads):
        c_in, c_emb, c_blocks, c_norm, c_amp, c_ph = cache
        dd = self.amp_head.backward(params, c_amp, d_amp, grads)
        dd = dd + self.phase_head.backward(params, c_ph, d_ph, grads)
        dd = self.dec_norm.backward(params, c_norm, dd, grads)
        for blk, c in zip(reversed(self.decoder), reversed(c_blocks)):
            dd = blk.backward(params, c, dd, grads)
        dd = add_embeddings_backward(c_emb, dd, grads["embed.spatial"], grads["embed.temporal"])
        return self.dec_in.backward(params, c_in, dd, grads)

    def quantize(self, pn):
        B, P, D = pn.shape
        idx, z, _ = quantize_batch(pn.reshape(-1, D), self.codebook)
        return idx.reshape(B, P), z.reshape(B, P, D)

    def forward(self, batch: Batch, params=None, quantize: bool = True):
        """Returns a dict with ``amplitude``, ``phase_out``, ``indices``, ``p``, ``z`` (+ ``cache``)."""
        params = self.params if params is None else params
        pn, c_enc = self.encode(params, batch)
        if quantize:
            idx, z = self.quantize(pn)
        else:
            idx, z = None, pn
        amp, ph, c_dec = self.decode(params, z, batch)
        return {"amplitude": amp, "phase_out": ph, "indices": idx, "p": pn, "z": z,
                "cache": (c_enc, c_dec)}

    def backward(self, out, d_amp, d_ph, d_p=None, params=None):
        """Straight-through backward: the decoder gradient w.r.t. ``z`` passes to ``p`` unchanged."""
        params = self.params if params is None else params
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        c_enc, c_dec = out["cache"]
        dt = next(iter(params.values())).dtype
        dz = self.decode_backward(params, c_dec, d_amp.astype(dt), d_ph.astype(dt), grads)
        d_pn = dz if d_p is None else dz + d_p.astype(dt)
        self.encode_backward(params, c_enc, d_pn, grads)
        return grads

    def predicted_phase(self, phase_out):
        """Angle (radians) and unit-circle pair implied by the phase head output."""
        if self.phase_output == "angle":
            ang = np.asarray(phase_out, dtype=np.float64)
            return ang, np.sin(ang), np.cos(ang)
        s = np.asarray(phase_out[..., :self.F], dtype=np.float64)
        c = np.asarray(phase_out[..., self.F:], dtype=np.float64)
        return np.arctan2(s, c), s, c

    def loss_and_grads(self, batch: Batch, target, mode: str, beta: float = 0.25,
                       params=None, quantize: bool = True, with_grads: bool = True):
        """Per-patch-averaged losses in ``mode`` and parameter gradients.

        ``target`` is a :class:`~eegtok.spectral.SpectralTarget` over ``(B, P, F)``.
        Returns ``(report, grads, out)``.
        """
        if (mode == "circular") != (self.phase_output == "vector"):
            raise ValueError(f"mode {mode!r} needs a {'vector' if mode == 'circular' else 'angle'} phase head")
        out = self.forward(batch, params, quantize)
        n = float(np.prod(target.amplitude.shape[:-1]))
        mask = pl.amplitude_mask(target.amplitude)
        L_A, g_amp = pl.amplitude_loss(out["amplitude"], target.amplitude)
        ang, s, c = self.predicted_phase(out["phase_out"])
        if mode == "circular":
            L_sin, L_cos, g_s, g_c = pl.circular_phase_loss(s, c, target.phase, mask)
            L_phi, _ = pl.direct_phase_loss(ang, target.phase, mask)
            g_ph = np.concatenate([g_s, g_c], axis=-1)
        else:
            L_phi, g_ph = pl.direct_phase_loss(ang, target.phase, mask)
            L_sin, L_cos, _, _ = pl.circular_phase_loss(s, c, target.phase, mask)
        L_Q, g_p = quantization_loss(out["p"], out["z"], beta)
        report = pl.total_loss(mode, L_A / n, L_sin / n, L_cos / n, L_phi / n, L_Q / n)
        grads = None
        if with_grads:
            grads = self.backward(out, g_amp / n, g_ph / n, g_p / n, params)
        return report, grads, out


# checkpoints ----------------------------------------------------------------

_MODEL_KEYS = ("n_electrodes", "codebook_size", "code_dim", "phase_output", "right_align", "seed")


def save_model(model: TokenizerModel, directory: str | os.PathLike) -> Path:
    """``model.cfg`` (key=value), ``model.manifest`` (name offset shape), ``model.f32``, codebook files."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = [f"{k}={v}" for k, v in dataclasses.asdict(model.config).items()]
    lines += [f"{k}={getattr(model, k)}" for k in _MODEL_KEYS]
    lines += [f"car={model.car}", f"zscore={model.zscore}", "electrodes=" + ",".join(model.electrodes)]
    (d / "model.cfg").write_text("\n".join(lines) + "\n", encoding="utf-8")
    manifest, chunks, offset = [], [], 0
    for name in sorted(model.params):
        arr = model.params[name]
        manifest.append(f"{name} {offset} {','.join(map(str, arr.shape))}")
        chunks.append(arr.astype("<f4").ravel())
        offset += arr.size
    (d / "model.manifest").write_text("\n".join(manifest) + "\n", encoding="utf-8")
    (d / "model.f32").write_bytes(np.concatenate(chunks).tobytes())
    save_codebook(model.codebook, d / "codebook")
    return d


def _parse_value(v: str):
    if v in ("True", "False"):
        return v == "True"
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def load_model(directory: str | os.PathLike) -> TokenizerModel:
    d = Path(directory)
    kv = {}
    try:
        for line in (d / "model.cfg").read_text(encoding="utf-8").splitlines():
            if line.strip():
                k, _, v = line.partition("=")
                kv[k.strip()] = _parse_value(v.strip())
        fields = {f.name for f in dataclasses.fields(EncoderConfig)}
        config = EncoderConfig(**{k: v for k, v in kv.items() if k in fields})
        electrodes = tuple(e for e in str(kv.get("electrodes", "")).split(",") if e)
        model = TokenizerModel(config, **{k: kv[k] for k in _MODEL_KEYS}, init=False,
                               electrodes=electrodes)
        model.car, model.zscore = bool(kv.get("car", False)), bool(kv.get("zscore", False))
        blob = np.frombuffer((d / "model.f32").read_bytes(), dtype="<f4")
        for line in (d / "model.manifest").read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            name, offset, shape = line.split()
            shape = tuple(int(s) for s in shape.split(",") if s)
            size = int(np.prod(shape))
            offset = int(offset)
            if offset + size > blob.size:
                raise FormatError(f"{d}/model.f32 truncated at parameter {name}")
            model.params[name] = blob[offset:offset + size].reshape(shape).astype(np.float32)
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"{d}: unreadable checkpoint ({exc})") from None
    model.codebook = load_codebook(d / "codebook")
    return model
