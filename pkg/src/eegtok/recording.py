"""Recording storage, corpus indexing and randomized patch sampling.

A canonical recording is a pair of files sharing a stem:

``<stem>.meta``
    UTF-8 ``key: value`` lines (version, sample_rate, electrodes, trials,
    n_samples).
``<stem>.f32``
    little-endian float32 body, channel-major (all samples of channel 0,
    then channel 1, ...).
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, FormatError, PreconditionError, SamplingError

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
TARGET_RATE = 200.0


@dataclass(eq=False)
class Recording:
    electrode_names: list[str]
    sample_rate: float
    trials: list[tuple[int, int]]
    data: np.ndarray  # (C, T) float32, microvolts

    def __post_init__(self):
        self.electrode_names = [str(n) for n in self.electrode_names]
        self.sample_rate = float(self.sample_rate)
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        self.trials = [(int(a), int(b)) for a, b in self.trials]
        if self.data.ndim != 2:
            raise FormatError(f"data must be 2-D (C, T), got shape {self.data.shape}")
        if not self.sample_rate > 0:
            raise PreconditionError(f"sample_rate must be positive, got {self.sample_rate}")
        C, T = self.data.shape
        if len(self.electrode_names) != C:
            raise FormatError(
                f"{len(self.electrode_names)} electrode names for {C} channels"
            )
        if len({n.upper() for n in self.electrode_names}) != C:
            raise FormatError(f"duplicate electrode names in {self.electrode_names}")
        for a, b in self.trials:
            if not (0 <= a < b <= T):
                raise FormatError(f"trial ({a}, {b}) outside [0, {T})")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return (
            self.electrode_names == other.electrode_names
            and self.sample_rate == other.sample_rate
            and self.trials == other.trials
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )


def ingest_csv(
    rows: Iterable[Sequence[float]],
    electrode_names: Sequence[str],
    sample_rate: float,
    trials: Sequence[tuple[int, int]] | None = None,
) -> Recording:
    """Package row-per-sample numeric data as a :class:`Recording`.

    Raises :class:`FormatError` on ragged rows or a name/column mismatch and
    :class:`DataError` (naming the offending row) on non-finite values.
    """
    C = len(electrode_names)
    if C < 1:
        raise FormatError("at least one electrode is required")
    if not sample_rate > 0:
        raise PreconditionError(f"sample_rate must be positive, got {sample_rate}")
    values = []
    for i, row in enumerate(rows):
        row = list(row)
        if len(row) != C:
            raise FormatError(f"row {i} has {len(row)} values, expected {C}")
        try:
            vals = [float(v) for v in row]
        except ValueError as exc:
            raise FormatError(f"row {i}: {exc}") from None
        if not all(np.isfinite(vals)):
            raise DataError(f"non-finite value at row {i}")
        values.append(vals)
    if not values:
        raise DataError("no samples")
    data = np.asarray(values, dtype=np.float64).T
    T = data.shape[1]
    return Recording(list(electrode_names), sample_rate, list(trials or [(0, T)]), data)


def read_csv(path: str | os.PathLike, sample_rate: float,
             electrode_names: Sequence[str] | None = None) -> Recording:
    """Read a CSV with one sample per row.

    The first row names the electrodes unless ``electrode_names`` is given and
    that row is numeric, in which case it is data.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    if electrode_names:
        if _is_numeric(first):
            rows.insert(0, first)
        return ingest_csv(rows, list(electrode_names), sample_rate)
    return ingest_csv(rows, first, sample_rate)


def _is_numeric(row) -> bool:
    try:
        [float(v) for v in row]
    except ValueError:
        return False
    return True


def _stem(path: str | os.PathLike) -> Path:
    p = Path(path)
    if p.suffix in (".meta", ".f32"):
        p = p.with_suffix("")
    return p


def save_canonical(rec: Recording, path: str | os.PathLike) -> Path:
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    trials = ";".join(f"{a}-{b}" for a, b in rec.trials)
    meta = (
        f"version: {FORMAT_VERSION}\n"
        f"sample_rate: {rec.sample_rate!r}\n"
        f"electrodes: {','.join(rec.electrode_names)}\n"
        f"trials: {trials}\n"
        f"n_samples: {rec.n_samples}\n"
    )
    stem.with_suffix(".meta").write_text(meta, encoding="utf-8")
    stem.with_suffix(".f32").write_bytes(rec.data.astype("<f4").tobytes())
    return stem


def _read_meta(path: Path) -> dict[str, str]:
    meta = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise FormatError(f"{path}: malformed line {line!r}")
        meta[key.strip()] = value.strip()
    return meta


def load_canonical(path: str | os.PathLike) -> Recording:
    stem = _stem(path)
    meta_path = stem.with_suffix(".meta")
    meta = _read_meta(meta_path)
    try:
        version = int(meta["version"])
        rate = float(meta["sample_rate"])
        names = [n for n in meta["electrodes"].split(",") if n]
        T = int(meta["n_samples"])
        trials = []
        for pair in filter(None, meta.get("trials", "").split(";")):
            a, b = pair.split("-")
            trials.append((int(a), int(b)))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{meta_path}: bad metadata ({exc})") from None
    if version != FORMAT_VERSION:
        raise FormatError(f"{meta_path}: version {version}, expected {FORMAT_VERSION}")
    body = stem.with_suffix(".f32").read_bytes()
    expected = len(names) * T * 4
    if len(body) != expected:
        raise FormatError(
            f"{stem}.f32: body holds {len(body)} bytes, metadata implies {expected} "
            f"({len(names)} channels x {T} samples)"
        )
    data = np.frombuffer(body, dtype="<f4").reshape(len(names), T).astype(np.float32)
    return Recording(names, rate, trials or [(0, T)], data)


@dataclass(frozen=True)
class CorpusEntry:
    path: Path
    channel_count: int
    trial_lengths: tuple[int, ...]


@dataclass(frozen=True)
class CorpusIndex:
    entries: tuple[CorpusEntry, ...]
    global_electrodes: tuple[str, ...]
    electrode_to_id: dict[str, int]
    recordings: tuple[Recording, ...] = field(repr=False)
    skipped: tuple[tuple[Path, str], ...] = ()

    def electrode_id(self, name: str) -> int:
        """Global id of ``name``; 0 for electrodes outside the corpus list."""
        return self.electrode_to_id.get(name.upper(), 0)

    @property
    def n_electrodes(self) -> int:
        return len(self.global_electrodes)

    @classmethod
    def from_recordings(cls, recordings: Sequence[Recording],
                        paths: Sequence[Path] | None = None) -> "CorpusIndex":
        if not recordings:
            raise DataError("corpus has no recordings")
        paths = list(paths) if paths is not None else [Path(f"<mem{i}>") for i in range(len(recordings))]
        names = sorted({n.upper() for r in recordings for n in r.electrode_names})
        entries = tuple(
            CorpusEntry(p, r.n_channels, tuple(b - a for a, b in r.trials))
            for p, r in zip(paths, recordings)
        )
        return cls(entries, tuple(names), {n: i + 1 for i, n in enumerate(names)},
                   tuple(recordings))

    @classmethod
    def with_electrodes(cls, recordings: Sequence[Recording], electrodes: Sequence[str],
                        paths: Sequence[Path] | None = None) -> "CorpusIndex":
        """Index ``recordings`` against a fixed global electrode list (e.g. a model's)."""
        base = cls.from_recordings(recordings, paths)
        names = tuple(n.upper() for n in electrodes)
        return cls(base.entries, names, {n: i + 1 for i, n in enumerate(names)}, base.recordings)


def index_corpus(directory: str | os.PathLike) -> CorpusIndex:
    """Index every canonical recording under ``directory`` (lexicographic order).

    Unreadable files are skipped with a warning and listed in ``skipped``.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: not a directory")
    metas = sorted(directory.rglob("*.meta"))
    recs, paths, skipped = [], [], []
    for meta in metas:
        stem = meta.with_suffix("")
        try:
            recs.append(load_canonical(stem))
            paths.append(stem)
        except (OSError, FormatError, DataError, PreconditionError) as exc:
            log.warning("skipping %s: %s", stem, exc)
            skipped.append((stem, str(exc)))
    if not recs:
        raise DataError(f"{directory}: no readable canonical recordings")
    index = CorpusIndex.from_recordings(recs, paths)
    return CorpusIndex(index.entries, index.global_electrodes, index.electrode_to_id,
                       index.recordings, tuple(skipped))


@dataclass(frozen=True)
class PatchSample:
    patches: np.ndarray  # (P, w)
    electrode_ids: np.ndarray  # (P,) int
    time_ids: np.ndarray  # (P,) int in [1, n_windows]
    n_channels: int
    n_windows: int
    file_index: int = -1
    start: int = -1

    @property
    def n_patches(self) -> int:
        return self.patches.shape[0]


def divisors(n: int) -> list[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


def admissible_channel_counts(P: int, n_available: int, trial_length: int, w: int) -> list[int]:
    """Divisors ``c`` of ``P`` with ``c <= n_available`` and ``P / c`` whole windows in the trial."""
    max_windows = trial_length // w
    return [c for c in divisors(P) if c <= n_available and P // c <= max_windows]


def make_sample(rec: Recording, index: CorpusIndex, channels: Sequence[int], start: int,
                n_windows: int, w: int, file_index: int = -1) -> PatchSample:
    """Cut ``channels`` x ``n_windows`` patches of ``w`` samples starting at ``start``."""
    channels = list(channels)
    seg = rec.data[channels, start:start + n_windows * w]
    if seg.shape[1] != n_windows * w:
        raise SamplingError("window runs past the end of the recording")
    patches = seg.reshape(len(channels) * n_windows, w)
    ids = np.array([index.electrode_id(rec.electrode_names[c]) for c in channels])
    return PatchSample(
        patches=patches,
        electrode_ids=np.repeat(ids, n_windows),
        time_ids=np.tile(np.arange(1, n_windows + 1), len(channels)),
        n_channels=len(channels),
        n_windows=n_windows,
        file_index=file_index,
        start=start,
    )


def draw_sample(index: CorpusIndex, rng: np.random.Generator, P: int = 256, w: int = 200,
                stride: int = 1, rate: float = TARGET_RATE) -> PatchSample:
    """Draw one randomized ``P x w`` sample.

    File uniformly, then an admissible trial uniformly, then the channel count
    uniformly over the admissible divisors of ``P``, then that many distinct
    channels, then a window start uniformly over positions that are multiples
    of ``stride`` past the trial start.
    """
    for e, rec in zip(index.entries, index.recordings):
        if rec.sample_rate != rate:
            raise PreconditionError(f"{e.path}: sampled at {rec.sample_rate} Hz, expected {rate}")
    candidates = []
    for fi, rec in enumerate(index.recordings):
        trials = [t for t in rec.trials
                  if admissible_channel_counts(P, rec.n_channels, t[1] - t[0], w)]
        if trials:
            candidates.append((fi, trials))
    if not candidates:
        raise SamplingError(f"no trial admits a {P} x {w} sample")
    fi, trials = candidates[rng.integers(len(candidates))]
    rec = index.recordings[fi]
    a, b = trials[rng.integers(len(trials))]
    counts = admissible_channel_counts(P, rec.n_channels, b - a, w)
    n_ch = counts[rng.integers(len(counts))]
    n_win = P // n_ch
    channels = np.sort(rng.choice(rec.n_channels, size=n_ch, replace=False))
    n_starts = (b - a - n_win * w) // stride + 1
    start = a + stride * int(rng.integers(n_starts))
    return make_sample(rec, index, channels, start, n_win, w, file_index=fi)


def tile_recording(rec: Recording, index: CorpusIndex, P: int, w: int = 200) -> list[PatchSample]:
    """Deterministic non-overlapping cover of a recording by ``P``-patch samples.

    Uses the largest admissible channel count per trial; channels are taken in
    consecutive groups (the last group is shifted back to stay in range) and
    windows in consecutive blocks from the trial start.
    """
    samples = []
    for a, b in rec.trials:
        counts = admissible_channel_counts(P, rec.n_channels, b - a, w)
        if not counts:
            continue
        n_ch = counts[-1]
        n_win = P // n_ch
        groups = []
        for g in range(0, rec.n_channels, n_ch):
            g = min(g, rec.n_channels - n_ch)
            groups.append(list(range(g, g + n_ch)))
        for start in range(a, b - n_win * w + 1, n_win * w):
            for chans in groups:
                samples.append(make_sample(rec, index, chans, start, n_win, w))
    if not samples:
        raise SamplingError(f"recording admits no {P} x {w} sample")
    return samples
