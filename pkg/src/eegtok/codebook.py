"""EMA-maintained vector-quantization codebook with cosine nearest-neighbour lookup."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, PreconditionError

DEAD_CODE_STEPS = 200
CLUSTER_EPS = 1e-5
TIE_TOLERANCE = 1e-12


def l2_normalize(x, axis=-1):
    x = np.asarray(x)
    norm = np.linalg.norm(x, axis=axis, keepdims=True)
    return x / norm


@dataclass
class Codebook:
    vectors: np.ndarray  # (K, D), stored unnormalized
    ema_cluster_size: np.ndarray  # (K,)
    ema_embed_sum: np.ndarray  # (K, D)
    usage_count: np.ndarray  # (K,) int64
    idle_steps: np.ndarray = field(default=None)  # (K,) int64
    step: int = 0

    def __post_init__(self):
        if self.idle_steps is None:
            self.idle_steps = np.zeros(self.K, dtype=np.int64)

    @property
    def K(self) -> int:
        return self.vectors.shape[0]

    @property
    def D(self) -> int:
        return self.vectors.shape[1]

    def copy(self) -> "Codebook":
        return Codebook(self.vectors.copy(), self.ema_cluster_size.copy(),
                        self.ema_embed_sum.copy(), self.usage_count.copy(),
                        self.idle_steps.copy(), self.step)

    def __eq__(self, other):
        if not isinstance(other, Codebook):
            return NotImplemented
        return self.step == other.step and all(
            np.array_equal(a, b) for a, b in zip(
                (self.vectors, self.ema_cluster_size, self.ema_embed_sum, self.usage_count, self.idle_steps),
                (other.vectors, other.ema_cluster_size, other.ema_embed_sum, other.usage_count, other.idle_steps)))


def init_codebook(K: int, D: int, rng: np.random.Generator, dtype=np.float64) -> Codebook:
    """Rows uniform on the unit sphere; EMA accumulators zeroed."""
    if K < 2 or D < 1:
        raise PreconditionError(f"need K >= 2 and D >= 1, got K={K}, D={D}")
    v = l2_normalize(rng.standard_normal((K, D))).astype(dtype)
    return Codebook(v, np.zeros(K, dtype=dtype), np.zeros((K, D), dtype=dtype),
                    np.zeros(K, dtype=np.int64))


def quantize_batch(p: np.ndarray, book: Codebook):
    """Nearest code for each row of ``p`` (shape ``(N, D)``).

    Returns ``(indices, codes, distances)`` where distances are between the
    l2-normalized query and code. Ties go to the lowest index.
    """
    p = np.asarray(p)
    norms = np.linalg.norm(p, axis=-1)
    if np.any(norms == 0) or not np.all(np.isfinite(p)):
        raise DataError("quantize needs finite, non-zero query vectors")
    pn = p / norms[:, None]
    vn = l2_normalize(book.vectors)
    sims = pn @ vn.T
    # rescaled duplicates of a code differ only by rounding; treat those as exact ties
    best = sims.max(axis=1, keepdims=True)
    idx = np.argmax(sims >= best - TIE_TOLERANCE, axis=1)
    dist = np.linalg.norm(pn - vn[idx], axis=1)
    return idx, book.vectors[idx], dist


def quantize(p: np.ndarray, book: Codebook):
    """Single-vector form of :func:`quantize_batch`: ``(index, code, distance)``."""
    idx, codes, dist = quantize_batch(np.asarray(p)[None, :], book)
    return int(idx[0]), codes[0], float(dist[0])


def quantization_loss(p, z, beta: float = 0.25):
    """Commitment term ``beta * ||p - sg(z)||^2`` and its gradient w.r.t. ``p``.

    The codebook side ``||sg(p) - z||^2`` is not differentiated: codes move
    by :func:`ema_update` instead.
    """
    p = np.asarray(p, dtype=np.float64)
    if np.shape(p) != np.shape(z):
        raise ValueError(f"shape mismatch: {np.shape(p)} vs {np.shape(z)}")
    diff = p - z
    return float(beta * np.sum(diff**2)), 2.0 * beta * diff


def ema_update(book: Codebook, indices, vectors, decay: float = 0.99,
               rng: np.random.Generator | None = None, dead_after: int = DEAD_CODE_STEPS) -> Codebook:
    """Exponential-moving-average update in place; returns ``book``.

    Codes idle for ``dead_after`` consecutive updates are re-seeded from a
    random vector of the batch (requires ``rng``).
    """
    if not 0 < decay < 1:
        raise PreconditionError(f"decay must be in (0, 1), got {decay}")
    indices = np.asarray(indices, dtype=np.int64).ravel()
    vectors = np.asarray(vectors).reshape(len(indices), book.D)
    K = book.K
    counts = np.bincount(indices, minlength=K)
    sums = np.zeros((K, book.D))
    np.add.at(sums, indices, vectors)

    dt = book.vectors.dtype
    book.ema_cluster_size[:] = (decay * book.ema_cluster_size + (1 - decay) * counts).astype(dt)
    book.ema_embed_sum[:] = (decay * book.ema_embed_sum + (1 - decay) * sums).astype(dt)
    book.usage_count += counts
    book.step += 1
    used = counts > 0
    book.idle_steps[used] = 0
    book.idle_steps[~used] += 1

    if len(indices):
        n = book.ema_cluster_size.sum(dtype=np.float64)
        smoothed = (book.ema_cluster_size + CLUSTER_EPS) / (n + K * CLUSTER_EPS) * n
        live = book.ema_cluster_size > CLUSTER_EPS
        book.vectors[live] = (book.ema_embed_sum[live] / smoothed[live, None]).astype(dt)

        dead = np.flatnonzero(book.idle_steps >= dead_after)
        if len(dead) and rng is not None:
            picks = rng.integers(len(indices), size=len(dead))
            book.vectors[dead] = vectors[picks]
            book.ema_embed_sum[dead] = vectors[picks]
            book.ema_cluster_size[dead] = 1.0
            book.idle_steps[dead] = 0
    return book


def ema_means(book: Codebook) -> np.ndarray:
    """EMA mean of every code (Laplace-smoothed cluster sizes)."""
    n = book.ema_cluster_size.sum(dtype=np.float64)
    smoothed = (book.ema_cluster_size + CLUSTER_EPS) / (n + book.K * CLUSTER_EPS) * n
    return book.ema_embed_sum / smoothed[:, None]


def perplexity(histogram) -> float:
    """``exp`` of the entropy of the empirical code distribution."""
    h = np.asarray(histogram, dtype=np.float64).ravel()
    total = h.sum()
    if h.size == 0 or total <= 0:
        raise DataError("empty usage histogram")
    q = h[h > 0] / total
    return float(np.exp(-np.sum(q * np.log(q))))


def save_codebook(book: Codebook, path: str | os.PathLike) -> Path:
    """``<stem>.meta`` (K, D, step) + ``<stem>.f32`` (vectors, cluster sizes, embed sums)
    + ``<stem>.counts`` (int64 usage and idle counters)."""
    stem = Path(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    stem.with_suffix(".meta").write_text(
        f"version: 1\nK: {book.K}\nD: {book.D}\nstep: {book.step}\n", encoding="utf-8")
    blob = np.concatenate([book.vectors.ravel(), book.ema_cluster_size.ravel(),
                           book.ema_embed_sum.ravel()]).astype("<f4")
    stem.with_suffix(".f32").write_bytes(blob.tobytes())
    counts = np.concatenate([book.usage_count, book.idle_steps]).astype("<i8")
    stem.with_suffix(".counts").write_bytes(counts.tobytes())
    return stem


def load_codebook(path: str | os.PathLike) -> Codebook:
    stem = Path(path)
    meta = {}
    for line in stem.with_suffix(".meta").read_text(encoding="utf-8").splitlines():
        k, _, v = line.partition(":")
        if k.strip():
            meta[k.strip()] = v.strip()
    try:
        K, D, step = int(meta["K"]), int(meta["D"]), int(meta["step"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{stem}.meta: bad metadata ({exc})") from None
    blob = np.frombuffer(stem.with_suffix(".f32").read_bytes(), dtype="<f4")
    if blob.size != K * D + K + K * D:
        raise FormatError(f"{stem}.f32: {blob.size} floats, expected {2 * K * D + K}")
    counts = np.frombuffer(stem.with_suffix(".counts").read_bytes(), dtype="<i8")
    if counts.size != 2 * K:
        raise FormatError(f"{stem}.counts: {counts.size} ints, expected {2 * K}")
    blob = blob.astype(np.float32)
    return Codebook(blob[:K * D].reshape(K, D).copy(), blob[K * D:K * D + K].copy(),
                    blob[K * D + K:].reshape(K, D).copy(), counts[:K].astype(np.int64),
                    counts[K:].astype(np.int64), step)
