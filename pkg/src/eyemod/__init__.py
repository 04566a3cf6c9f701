"""Eye-diagram based automatic modulation classification toolkit."""

from .synth import (CANONICAL_SCHEMES, ComplexFrame, FrameSpec,
                    ModulationScheme, demodulate_linear, frame_seed,
                    generate_symbols, modulate)
from .channel import ChannelConfig, apply_awgn, apply_rician, impair
from .eyepipe import (EyeImage, EyeTensor, EyeTraces, crop, fold_traces,
                      frame_to_tensor, rasterize, resize, rgb_to_gray)
from .dataset import DatasetContainer, DatasetPlan, build, iterate, read, write
from .classifier import (ModelConfig, TrainConfig, evaluate, gradient_check,
                         init_params, load_checkpoint, save_checkpoint, train)
from .report import AccuracyTable, ConfusionMatrix, compare_to_literature
from .estimators import ConvNetClassifier, EyeDiagramTransformer

__version__ = "0.1.0"
