"""Frame -> eye-diagram tensor preprocessing.

A frame is folded into fixed-length traces (one symbol period each), the
I and Q trace sets are rasterized as axis-free density images, each image
is cropped to its content bounding box, resized, and the two channels are
stacked into the (H, W, 2) tensor consumed by the classifier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadPixel, BadTraceLength, EmptyImage
from .synth import ComplexFrame, ModulationScheme

__all__ = [
    "EyeTraces", "EyeImage", "EyeTensor",
    "fold_traces", "rasterize", "crop", "rgb_to_gray", "resize",
    "frame_to_tensor", "write_pgm", "read_pgm", "pixel_entropy",
    "DEFAULT_TENSOR_H", "DEFAULT_TENSOR_W", "DEFAULT_TRACE_LEN",
]

DEFAULT_TRACE_LEN = 8
DEFAULT_TENSOR_H = 299
DEFAULT_TENSOR_W = 699


@dataclass
class EyeTraces:
    """Folded trace rows of one channel: shape (n_traces, trace_len)."""

    traces: np.ndarray
    channel: str  # "I" or "Q"

    def __post_init__(self):
        self.traces = np.asarray(self.traces, dtype=np.float64)
        if self.traces.ndim != 2:
            raise ValueError("traces must be 2-D")
        if self.channel not in ("I", "Q"):
            raise ValueError("channel must be 'I' or 'Q'")

    @property
    def n_traces(self) -> int:
        return self.traces.shape[0]

    @property
    def trace_len(self) -> int:
        return self.traces.shape[1]


@dataclass
class EyeImage:
    """Grayscale density image with intensities in [0, 1]."""

    pixels: np.ndarray
    channel: str

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise ValueError("pixels must be 2-D")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class EyeTensor:
    """Classifier input: (H, W, 2) grid, channel 0 = I, channel 1 = Q."""

    data: np.ndarray
    label: ModulationScheme
    snr_db: float | None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != 2:
            raise ValueError(f"expected (H, W, 2) tensor, got {self.data.shape}")


def fold_traces(frame: ComplexFrame, n_s: int = DEFAULT_TRACE_LEN
                ) -> tuple[EyeTraces, EyeTraces]:
    """Fold a frame into consecutive traces of n_s samples per channel."""
    if n_s < 2:
        raise ValueError("n_s must be >= 2")
    n = frame.spec.frame_len
    if n % n_s != 0:
        raise BadTraceLength(f"frame length {n} not divisible by n_s={n_s}")
    shaped = frame.samples.reshape(-1, n_s)
    return (EyeTraces(shaped.real.copy(), "I"),
            EyeTraces(shaped.imag.copy(), "Q"))


def rasterize(traces: EyeTraces, height: int, width: int,
              amp_range: float) -> EyeImage:
    """Density-render traces into an axis-free grayscale image.

    Consecutive samples of a trace are joined by line segments; per-pixel
    hit counts are accumulated over all segments and normalized by the
    maximum count.  Amplitudes outside [-amp_range, amp_range] clamp.
    """
    if height < 8 or width < 8:
        raise ValueError("height and width must be >= 8")
    if amp_range <= 0:
        raise ValueError("amp_range must be positive")
    t = traces.traces
    n_s = traces.trace_len
    counts = np.zeros((height, width), dtype=np.float64)
    if t.size == 0 or n_s < 2:
        return EyeImage(counts, traces.channel)
    xs = np.linspace(0.0, width - 1.0, n_s)
    amp = np.clip(t, -amp_range, amp_range)
    ys = (height - 1.0) * (1.0 - (amp + amp_range) / (2.0 * amp_range))
    for i in range(n_s - 1):
        x0, x1 = xs[i], xs[i + 1]
        y0, y1 = ys[:, i], ys[:, i + 1]
        span = max(abs(x1 - x0), float(np.max(np.abs(y1 - y0))))
        steps = int(np.ceil(span)) + 1
        u = np.linspace(0.0, 1.0, steps)
        px = np.rint(x0 + (x1 - x0) * u).astype(np.intp)
        py = np.rint(y0[:, None] + (y1 - y0)[:, None] * u[None, :]).astype(np.intp)
        px = np.broadcast_to(px[None, :], py.shape)
        np.add.at(counts, (py.ravel(), px.ravel()), 1.0)
    m = counts.max()
    if m > 0:
        counts /= m
    return EyeImage(counts, traces.channel)


def crop(image: EyeImage, margin: int = 2) -> EyeImage:
    """Tight bounding box of nonzero pixels, expanded by a small margin."""
    nz = np.nonzero(image.pixels)
    if nz[0].size == 0:
        raise EmptyImage("cannot crop an all-zero image")
    r0 = max(0, int(nz[0].min()) - margin)
    r1 = min(image.height, int(nz[0].max()) + margin + 1)
    c0 = max(0, int(nz[1].min()) - margin)
    c1 = min(image.width, int(nz[1].max()) + margin + 1)
    return EyeImage(image.pixels[r0:r1, c0:c1].copy(), image.channel)


def rgb_to_gray(r, g, b):
    """BT.601 luma.  Float inputs in [0, 1] give a float; inputs above 1
    are treated as bytes in [0, 255] and give a rounded integer."""
    r = np.asarray(r, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    stacked = np.stack([r, g, b])
    if np.any(stacked < 0):
        raise BadPixel("negative pixel component")
    byte_mode = bool(np.any(stacked > 1.0))
    limit = 255.0 if byte_mode else 1.0
    if np.any(stacked > limit):
        raise BadPixel(f"pixel component above {limit}")
    luma = 0.299 * r + 0.587 * g + 0.114 * b
    if byte_mode:
        out = np.rint(luma).astype(np.int64)
        return int(out) if out.ndim == 0 else out
    return float(luma) if luma.ndim == 0 else luma


def resize(image: EyeImage, out_h: int, out_w: int) -> EyeImage:
    """Bilinear resize over pixel centers; values stay in [0, 1]."""
    if out_h < 1 or out_w < 1:
        raise ValueError("output dimensions must be >= 1")
    src = image.pixels
    h, w = src.shape
    if (out_h, out_w) == (h, w):
        return EyeImage(src.copy(), image.channel)
    ry = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    rx = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(ry).astype(np.intp)
    x0 = np.floor(rx).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ry - y0)[:, None]
    wx = (rx - x0)[None, :]
    out = (src[np.ix_(y0, x0)] * (1 - wy) * (1 - wx)
           + src[np.ix_(y0, x1)] * (1 - wy) * wx
           + src[np.ix_(y1, x0)] * wy * (1 - wx)
           + src[np.ix_(y1, x1)] * wy * wx)
    return EyeImage(np.clip(out, 0.0, 1.0), image.channel)


def frame_to_tensor(frame: ComplexFrame, n_s: int = DEFAULT_TRACE_LEN,
                    render_h: int = DEFAULT_TENSOR_H,
                    render_w: int = DEFAULT_TENSOR_W,
                    out_h: int = DEFAULT_TENSOR_H,
                    out_w: int = DEFAULT_TENSOR_W) -> EyeTensor:
    """Fold, rasterize, crop, resize, and stack one frame into a tensor.

    The vertical amplitude range is the frame's own peak |I|/|Q| value,
    so class evidence comes from shape rather than absolute power.
    """
    traces_i, traces_q = fold_traces(frame, n_s)
    amp = max(float(np.max(np.abs(traces_i.traces))),
              float(np.max(np.abs(traces_q.traces))), 1e-12)
    channels = []
    for traces in (traces_i, traces_q):
        img = rasterize(traces, render_h, render_w, amp)
        img = crop(img)
        img = resize(img, out_h, out_w)
        channels.append(img.pixels)
    data = np.stack(channels, axis=-1)
    return EyeTensor(data=data, label=frame.scheme, snr_db=frame.snr_db)


# ---------------------------------------------------------------------------
# portable graymap debug output
# ---------------------------------------------------------------------------

def write_pgm(path, pixels: np.ndarray) -> None:
    """Write a [0, 1] float or uint8 grid as a binary P5 graymap."""
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        pixels = np.rint(np.clip(pixels, 0.0, 1.0) * 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise ValueError("not a binary P5 graymap")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        maxval = int(f.readline())
        if maxval != 255:
            raise ValueError("only 8-bit graymaps supported")
        data = np.frombuffer(f.read(h * w), dtype=np.uint8)
    return data.reshape(h, w)


def pixel_entropy(pixels: np.ndarray, bins: int = 32) -> float:
    """Shannon entropy (bits) of the pixel intensity histogram."""
    hist, _ = np.histogram(np.asarray(pixels, dtype=np.float64).ravel(),
                           bins=bins, range=(0.0, 1.0))
    p = hist / max(hist.sum(), 1)
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())
