"""Nonnegative matrix factorization that keeps linear classifiers intact.

The core entry points are :func:`factorize` (unsupervised I-divergence NMF),
:func:`semi_factorize` (adds the support-vector supervision term) and
:func:`inner_product_embedding` (the reduced representation ``Z``).
"""
from .baselines import cnmf_liu_factorize, lda_fit, pca_fit, ssnmf_lee_factorize
from .classifiers import (ClassifierEnsemble, LinearModel, SVMOptions, decompose_weights,
                          predict, reconstruct_weights, train_ensemble, train_linear_svm,
                          train_perceptron)
from .exceptions import (ArchiveError, DegenerateLabelError, DimensionError, DomainError,
                         NMFAlphaError, ParameterError, ParseError)
from .geometry import embedding_map, inner_product_embedding, jacobi_eigh, spd_sqrt
from .harness import (LabeledDataset, PipelineParams, make_splits, planted_subspace_task,
                      run_pipeline, sweep)
from .matrix import EPS, factored_divergence, i_divergence
from .nmf import Factorization, FitOptions, factorize, fold_in, update_unsup
from .semi import (SupportMatrix, auxiliary_bound, build_support_matrix, closed_form_v_step,
                   semi_factorize, semi_loss, update_semi)

__version__ = "0.1.0"
