"""Small CNN engine with bit-packed XNOR convolutions, fire modules,
a latency/accuracy Pareto search and a scanline proposal detector."""

from .binary import (BACKEND, BinarizedFilterBank, BitMatrix, BitTensor, binarize_weights,
                     binary_gemm, pack_signs, unpack_signs, xnor_conv_forward, xnor_dot)
from .detect import (Detection, Proposal, ProposalConfig, TimingModel, crop_resize, detect,
                     is_green, scan_proposals, total_time)
from .errors import (BitconvError, DatasetError, FormatError, IndexOutOfRange, NumericError,
                     ShapeError)
from .kernels import ConvParams, conv_forward, gemm, im2col, maxpool, prelu, softmax
from .netgraph import (LayerSpec, Model, NetworkSpec, count_params, estimate_macs, forward,
                       init_params, parse_netspec, format_netspec, validate_binarization)
from .pareto import ParetoPoint, SearchConfig, dominates, measure_time, search, transforms
from .tensor import channel_concat, tensor_get, tensor_new, tensor_set
from .training import Dataset, TrainConfig, backward, evaluate, load_dataset, sgd_step, train
from .weightfile import load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BinarizedFilterBank", "BitMatrix", "BitTensor", "BitconvError", "ConvParams",
    "Dataset", "DatasetError", "Detection", "FormatError", "IndexOutOfRange", "LayerSpec",
    "Model", "NetworkSpec", "NumericError", "ParetoPoint", "Proposal", "ProposalConfig",
    "SearchConfig", "ShapeError", "TimingModel", "TrainConfig", "backward", "binarize_weights",
    "binary_gemm", "channel_concat", "conv_forward", "count_params", "crop_resize", "detect",
    "dominates", "estimate_macs", "evaluate", "format_netspec", "forward", "gemm", "im2col",
    "init_params", "is_green", "load_dataset", "load_weights", "maxpool", "measure_time",
    "pack_signs", "parse_netspec", "prelu", "save_weights", "scan_proposals", "search",
    "sgd_step", "softmax", "tensor_get", "tensor_new", "tensor_set", "total_time", "train",
    "transforms", "unpack_signs", "validate_binarization", "xnor_conv_forward", "xnor_dot",
]
