"""Exception types shared across the toolkit."""


class EyemodError(Exception):
    """Base class for all toolkit errors."""


# --- synthesis ---

class NotDigital(EyemodError):
    """A symbol-level operation was asked of an analog scheme."""


class NotLinear(EyemodError):
    """Linear demodulation was asked of a nonlinear or analog scheme."""


# --- channel ---

class DelayTooLarge(EyemodError):
    """A path delay meets or exceeds the frame length."""


class ZeroPower(EyemodError):
    """SNR-relative noise cannot be calibrated against a zero-power frame."""


# --- eye pipeline ---

class BadTraceLength(EyemodError):
    """Frame length is not divisible by the trace length."""


class EmptyImage(EyemodError):
    """Crop was asked of an image with no nonzero pixels."""


class BadPixel(EyemodError):
    """Pixel component outside the accepted range."""


# --- dataset container ---

class NotADataset(EyemodError):
    """File does not start with the dataset magic."""


class Corrupt(EyemodError):
    """Dataset file is truncated or internally inconsistent."""


class UnsupportedVersion(EyemodError):
    """Dataset file uses a format version this reader does not know."""


class CellTooSmall(EyemodError):
    """A (class, snr) cell cannot be split into three nonempty parts."""


class EmptySplit(EyemodError):
    """Iteration was asked of a split with no records."""


# --- classifier ---

class ShapeError(EyemodError):
    """Batch or parameter dimensions disagree with the model config."""


class DivergedError(EyemodError):
    """Training produced non-finite gradients or parameters.

    `metrics` carries the per-epoch records collected before divergence
    so callers can persist a partial training log.
    """

    def __init__(self, message, metrics=None):
        super().__init__(message)
        self.metrics = metrics or []


# --- reporting ---

class BadLabel(EyemodError):
    """Class label outside [0, M)."""


class EmptyMatrix(EyemodError):
    """Rendering was asked of a confusion matrix with zero total."""
