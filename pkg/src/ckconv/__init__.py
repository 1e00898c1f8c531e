"""Continuous kernel convolutions on a small numpy autodiff engine."""
from .conv import CkconvLayer, causal_conv_direct, causal_conv_fft, irregular_conv, irregular_conv_at
from .data import SequenceBatch, gen_adding_problem, gen_copy_memory, gen_targets, load_csv, random_drop, subsample
from .errors import ConfigError, DataError, DivergenceError
from .kernelnet import KernelNet, init_siren, make_grid, sample_kernel
from .models import CkcnnConfig, CkcnnModel, build, count_parameters, forward
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"
