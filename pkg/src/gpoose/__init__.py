"""Gaussian process out-of-sample extension for manifold embeddings."""

from gpoose.errors import FormatError, InputError, NumericalError, ReducedRankError
from gpoose.kernel import (
    KernelParams,
    cross_kernel,
    kernel_matrix,
    kernel_matrix_grad,
    se_kernel,
)
from gpoose.gpr import (
    GprDimModel,
    GprModel,
    LoocvPolicy,
    PredictiveResult,
    predict,
    predict_batch,
    predict_dim,
    predict_mean,
    train,
    train_dim,
)
from gpoose.hyperopt import (
    GridSpec,
    HyperOptReport,
    loocv_gradient,
    loocv_objective,
    optimize,
)
from gpoose.spectral import (
    SpectralEmbedding,
    eigendecompose,
    equivalence_residual,
    kernel_embedding,
    nystrom_extend,
    nystrom_regress,
)
from gpoose.manifold import Embedding, embed
from gpoose.data import PointCloud, generate

__version__ = "0.1.0"
