"""Labeled eye-tensor corpora: build, split, persist, iterate.

Container layout (little-endian throughout):

    magic     8 bytes  b"EYEAMC1\\n"
    version   u32      (currently 1)
    count     u32      number of records
    H, W, C   u32 x 3  tensor dims (C is always 2)
    encoding  u32      1 = 8-bit quantized pixels
    n_classes u32      followed by n_classes x (u16 len + UTF-8 name)
    n_snrs    u32      followed by n_snrs x f64
    records   count x (u8 class_id, u8 snr_index, H*W*C bytes)

The split manifest is a plain-text sidecar: `key = value` lines plus one
space-separated index list per split.
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import channel, eyepipe, synth
from .errors import (CellTooSmall, Corrupt, EmptySplit, NotADataset,
                     UnsupportedVersion)
from .synth import CANONICAL_SCHEMES, FrameSpec, ModulationScheme, frame_seed

__all__ = ["DatasetPlan", "DatasetContainer", "build", "split_indices",
           "write", "read", "iterate", "write_manifest", "read_manifest",
           "quantize", "dequantize", "DEFAULT_SNR_GRID_DB"]

MAGIC = b"EYEAMC1\n"
VERSION = 1
ENCODING_U8 = 1

DEFAULT_SNR_GRID_DB = (-20.0, -10.0, 0.0, 10.0, 20.0, 30.0)
SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class DatasetPlan:
    schemes: tuple[ModulationScheme, ...] = CANONICAL_SCHEMES
    snr_grid_db: tuple[float, ...] = DEFAULT_SNR_GRID_DB
    frames_per_class_per_snr: int = 5000
    split_fractions: tuple[float, float, float] = (0.70, 0.20, 0.10)
    global_seed: int = 0
    out_h: int = eyepipe.DEFAULT_TENSOR_H
    out_w: int = eyepipe.DEFAULT_TENSOR_W
    n_s: int = eyepipe.DEFAULT_TRACE_LEN
    frame_len: int = 1024
    sample_rate: float = 200_000.0
    k_factor: float = channel.DEFAULT_K_FACTOR
    path_delays: tuple[float, ...] = channel.DEFAULT_PATH_DELAYS
    path_gains_db: tuple[float, ...] = channel.DEFAULT_PATH_GAINS_DB

    def __post_init__(self):
        object.__setattr__(self, "schemes", tuple(self.schemes))
        object.__setattr__(self, "snr_grid_db",
                           tuple(float(s) for s in self.snr_grid_db))
        object.__setattr__(self, "split_fractions",
                           tuple(float(f) for f in self.split_fractions))
        if not self.schemes or not self.snr_grid_db:
            raise ValueError("plan needs at least one scheme and one SNR")
        if self.frames_per_class_per_snr <= 0:
            raise ValueError("frames_per_class_per_snr must be positive")
        fr = self.split_fractions
        if len(fr) != 3 or any(f <= 0 for f in fr):
            raise ValueError("split fractions must be three positive values")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1.0")

    @property
    def total_records(self) -> int:
        return (len(self.schemes) * len(self.snr_grid_db)
                * self.frames_per_class_per_snr)

    @property
    def frame_spec(self) -> FrameSpec:
        return FrameSpec(sample_rate=self.sample_rate,
                         frame_len=self.frame_len,
                         sps=self.n_s)


@dataclass
class DatasetContainer:
    height: int
    width: int
    class_names: list[str]
    snr_table: list[float]
    class_ids: np.ndarray      # (count,) uint8
    snr_indices: np.ndarray    # (count,) uint8
    pixels: np.ndarray         # (count, H, W, 2) uint8
    manifest: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.class_ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DatasetContainer):
            return NotImplemented
        return (self.height == other.height and self.width == other.width
                and self.class_names == other.class_names
                and self.snr_table == other.snr_table
                and np.array_equal(self.class_ids, other.class_ids)
                and np.array_equal(self.snr_indices, other.snr_indices)
                and np.array_equal(self.pixels, other.pixels)
                and self.manifest.keys() == other.manifest.keys()
                and all(np.array_equal(self.manifest[k], other.manifest[k])
                        for k in self.manifest))


def quantize(values: np.ndarray) -> np.ndarray:
    """[0, 1] floats -> uint8 via round(v * 255)."""
    return np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def dequantize(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float32) / 255.0


# ---------------------------------------------------------------------------
# build
# ---------------------------------------------------------------------------

def _make_record(plan: DatasetPlan, class_index: int, snr_index: int,
                 frame_index: int) -> np.ndarray:
    seed = frame_seed(plan.global_seed, class_index, snr_index, frame_index)
    rng = np.random.default_rng(seed)
    scheme = plan.schemes[class_index]
    frame = synth.modulate(scheme, plan.frame_spec, rng)
    cfg = channel.ChannelConfig(snr_db=plan.snr_grid_db[snr_index],
                                path_delays=plan.path_delays,
                                path_gains_db=plan.path_gains_db,
                                k_factor=plan.k_factor,
                                fading_seed=seed)
    frame = channel.impair(frame, cfg, rng)
    tensor = eyepipe.frame_to_tensor(frame, n_s=plan.n_s,
                                     render_h=plan.out_h, render_w=plan.out_w,
                                     out_h=plan.out_h, out_w=plan.out_w)
    return quantize(tensor.data)


def _record_worker(args):
    plan, ci, si, fi = args
    try:
        return _make_record(plan, ci, si, fi)
    except Exception as exc:
        raise RuntimeError(
            f"record generation failed for (class={ci}, snr={si}, "
            f"frame={fi})") from exc


def default_workers() -> int:
    env = os.environ.get("EYEMOD_THREADS")
    if env:
        return max(1, int(env))
    return 1


def build(plan: DatasetPlan, workers: int | None = None,
          progress=None) -> DatasetContainer:
    """Generate every (class, snr, frame) record in lexicographic order.

    Record content depends only on the per-record seed, so the container
    bytes are identical for any worker count.
    """
    if workers is None:
        workers = default_workers()
    n_c, n_s = len(plan.schemes), len(plan.snr_grid_db)
    n_f = plan.frames_per_class_per_snr
    total = plan.total_records
    class_ids = np.empty(total, dtype=np.uint8)
    snr_indices = np.empty(total, dtype=np.uint8)
    pixels = np.empty((total, plan.out_h, plan.out_w, 2), dtype=np.uint8)
    triples = [(plan, ci, si, fi)
               for ci in range(n_c) for si in range(n_s) for fi in range(n_f)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = pool.map(_record_worker, triples,
                               chunksize=max(1, total // (workers * 8)))
            for idx, rec in enumerate(records):
                _store(pixels, class_ids, snr_indices, idx, triples[idx], rec)
                if progress:
                    progress(idx + 1, total)
    else:
        for idx, args in enumerate(triples):
            _store(pixels, class_ids, snr_indices, idx, args,
                   _record_worker(args))
            if progress:
                progress(idx + 1, total)
    container = DatasetContainer(
        height=plan.out_h, width=plan.out_w,
        class_names=[s.value for s in plan.schemes],
        snr_table=list(plan.snr_grid_db),
        class_ids=class_ids, snr_indices=snr_indices, pixels=pixels)
    container.manifest = split_indices(container, plan.split_fractions,
                                       plan.global_seed)
    return container


def _store(pixels, class_ids, snr_indices, idx, args, rec):
    _, ci, si, _ = args
    class_ids[idx] = ci
    snr_indices[idx] = si
    pixels[idx] = rec


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

def split_indices(container: DatasetContainer,
                  fractions: tuple[float, float, float],
                  seed: int) -> dict[str, np.ndarray]:
    """Stratified 3-way split: shuffle within each (class, snr) cell, then
    cut at the fractions.  Every cell lands in every split."""
    f_train, f_val, f_test = fractions
    if abs(f_train + f_val + f_test - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1.0")
    parts: dict[str, list[np.ndarray]] = {name: [] for name in SPLIT_NAMES}
    cells = sorted(set(zip(container.class_ids.tolist(),
                           container.snr_indices.tolist())))
    for ci, si in cells:
        idx = np.nonzero((container.class_ids == ci)
                         & (container.snr_indices == si))[0]
        n = len(idx)
        c1 = int(round(n * f_train))
        c2 = int(round(n * (f_train + f_val)))
        sizes = (c1, c2 - c1, n - c2)
        if any(s <= 0 for s in sizes):
            raise CellTooSmall(
                f"cell (class={ci}, snr={si}) with {n} records cannot fill "
                f"three nonempty splits at fractions {fractions}")
        rng = np.random.default_rng(frame_seed(seed, ci, si, 0xC3))
        shuffled = idx[rng.permutation(n)]
        parts["train"].append(shuffled[:c1])
        parts["val"].append(shuffled[c1:c2])
        parts["test"].append(shuffled[c2:])
    return {name: np.sort(np.concatenate(chunks)).astype(np.int64)
            for name, chunks in parts.items()}


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def write(container: DatasetContainer, path) -> None:
    """Write container plus its `.manifest` sidecar."""
    h, w = container.height, container.width
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<6I", VERSION, container.count, h, w, 2,
                            ENCODING_U8))
        f.write(struct.pack("<I", len(container.class_names)))
        for name in container.class_names:
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
        f.write(struct.pack("<I", len(container.snr_table)))
        f.write(struct.pack(f"<{len(container.snr_table)}d",
                            *container.snr_table))
        for i in range(container.count):
            f.write(struct.pack("<BB", int(container.class_ids[i]),
                                int(container.snr_indices[i])))
            f.write(container.pixels[i].tobytes())
    if container.manifest:
        write_manifest(container.manifest, str(path) + ".manifest")


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise Corrupt("file truncated")
    return data


def read(path) -> DatasetContainer:
    """Read and validate a container; loads the manifest sidecar if present."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise NotADataset(f"{path}: bad magic")
        version, count, h, w, c, encoding = struct.unpack("<6I",
                                                          _read_exact(f, 24))
        if version != VERSION:
            raise UnsupportedVersion(f"version {version} not supported")
        if c != 2 or encoding != ENCODING_U8:
            raise Corrupt(f"unexpected channel count {c} or encoding {encoding}")
        (n_classes,) = struct.unpack("<I", _read_exact(f, 4))
        class_names = []
        for _ in range(n_classes):
            (ln,) = struct.unpack("<H", _read_exact(f, 2))
            class_names.append(_read_exact(f, ln).decode("utf-8"))
        (n_snrs,) = struct.unpack("<I", _read_exact(f, 4))
        snr_table = list(struct.unpack(f"<{n_snrs}d", _read_exact(f, 8 * n_snrs)))
        rec_size = 2 + h * w * 2
        body = f.read()
    if len(body) != count * rec_size:
        raise Corrupt(f"expected {count} records "
                      f"({count * rec_size} bytes), found {len(body)} bytes")
    raw = np.frombuffer(body, dtype=np.uint8).reshape(count, rec_size)
    class_ids = raw[:, 0].copy()
    snr_indices = raw[:, 1].copy()
    if count and (class_ids.max() >= n_classes or snr_indices.max() >= n_snrs):
        raise Corrupt("record label outside header tables")
    pixels = raw[:, 2:].reshape(count, h, w, 2).copy()
    container = DatasetContainer(height=h, width=w, class_names=class_names,
                                 snr_table=snr_table, class_ids=class_ids,
                                 snr_indices=snr_indices, pixels=pixels)
    sidecar = str(path) + ".manifest"
    if os.path.exists(sidecar):
        container.manifest = read_manifest(sidecar, count)
    return container


def write_manifest(manifest: dict[str, np.ndarray], path) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write("# eyemod split manifest\n")
        f.write(f"splits = {' '.join(SPLIT_NAMES)}\n")
        for name in SPLIT_NAMES:
            idx = manifest.get(name, np.empty(0, dtype=np.int64))
            f.write(f"{name} = {' '.join(str(int(i)) for i in idx)}\n")


def read_manifest(path, count: int | None = None) -> dict[str, np.ndarray]:
    manifest: dict[str, np.ndarray] = {}
    with open(path, encoding="ascii") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, _, value = line.partition("=")
            key = key.strip()
            if key in SPLIT_NAMES:
                vals = value.split()
                manifest[key] = np.array([int(v) for v in vals],
                                         dtype=np.int64)
    if count is not None and manifest:
        joined = np.concatenate([manifest[k] for k in SPLIT_NAMES
                                 if k in manifest])
        if len(joined) != count or len(np.unique(joined)) != len(joined):
            raise Corrupt("manifest does not partition the record set")
        if joined.size and (joined.min() < 0 or joined.max() >= count):
            raise Corrupt("manifest index out of range")
    return manifest


# ---------------------------------------------------------------------------
# batch iteration
# ---------------------------------------------------------------------------

def iterate(container: DatasetContainer, split: str, batch_size: int,
            shuffle_seed: int | None = None):
    """Yield (pixels in [0, 1], class labels, snr indices) batches.

    The train split is shuffled with `shuffle_seed` (pass a per-epoch
    seed); val/test iterate in fixed index order.  The final short batch
    is emitted.
    """
    if split not in SPLIT_NAMES:
        raise ValueError(f"split must be one of {SPLIT_NAMES}")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    idx = container.manifest.get(split)
    if idx is None or len(idx) == 0:
        raise EmptySplit(f"split {split!r} is empty")
    idx = np.asarray(idx)
    if split == "train" and shuffle_seed is not None:
        rng = np.random.default_rng(shuffle_seed)
        idx = idx[rng.permutation(len(idx))]
    for start in range(0, len(idx), batch_size):
        batch = idx[start:start + batch_size]
        yield (dequantize(container.pixels[batch]),
               container.class_ids[batch].astype(np.int64),
               container.snr_indices[batch].astype(np.int64))
