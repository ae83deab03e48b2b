"""Uncertainty estimation from first principles, plus an OOD evaluation harness.

Four methods behind one probe-and-report workflow: binary GP classification
with the Laplace approximation, Monte Carlo dropout, mean-field variational
inference, and Hamiltonian Monte Carlo.
"""

from .bnn import (
    HMCConfig,
    MeanFieldPosterior,
    PosteriorChain,
    elbo_estimate,
    hmc_chain,
    hmc_sample,
    kl_gaussian,
    leapfrog,
    log_posterior_and_grad,
    mfvi_train,
    posterior_predict,
    sample_posterior,
)
from .datasets import (
    Dataset,
    InterpolationProbe,
    filter_classes,
    grid2d,
    interpolate,
    load_idx,
    make_toy2d,
    probe_sweep,
)
from .gp import (
    KernelParams,
    LaplaceGPState,
    fit_hyperparams,
    gp_entropy,
    kernel_matrix,
    laplace_fit,
    predict_latent,
    predict_proba,
    rbf,
)
from .harness import (
    ExperimentConfig,
    ReportRow,
    UncertaintyReport,
    run_digit_table,
    run_experiment,
    run_mnist_interp,
    run_theorem_check,
    run_toy2d,
    write_report,
)
from .mcdropout import MCDropoutConfig, mc_average, mc_entropy, per_class_mean_entropy
from .nnet import MLPParams, TrainConfig, backward, cross_entropy, encode, forward, mlp_init, train
from .numerics import (
    RngStream,
    cholesky,
    entropy,
    gauss_hermite,
    softmax,
    solve_triangular,
    std_normal_cdf,
)

__version__ = "0.1.0"
