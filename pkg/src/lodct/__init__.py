"""Low-dose CT reconstruction toolkit.

Penalized weighted-least-squares reconstruction regularized by a pre-learned
sparsifying transform, with the transform-learning procedure, a simulated
fan-beam acquisition pipeline, and FBP / PWLS-EP / PWLS-DCT baselines.
"""

__version__ = "0.1.0"

from .baselines import (
    EpConfig,
    ep_potential_and_derivative,
    fbp_reconstruct,
    reconstruct_pwls_dct,
    reconstruct_pwls_ep,
)
from .errors import (
    ConfigurationError,
    DivergenceError,
    FileFormatError,
    LodctError,
    ValidationError,
)
from .evaluate import (
    EvalReport,
    difference_image,
    emit_comparison_table,
    rmse_hu,
    write_png16,
)
from .geometry import (
    Geometry,
    SubsetPartition,
    geometry_from_config_text,
    load_geometry,
    partition_subsets,
    save_geometry,
)
from .patches import PatchScheme, aggregate_patches, extract_patches, overlap_diagonal
from .projector import back_project, compute_majorizer_DA, forward_project, system_matrix
from .recon import (
    CostReport,
    PwlsStConfig,
    ReconResult,
    SolverState,
    compute_majorizer_DR,
    image_update,
    reconstruct_pwls_st,
    regularizer_gradient,
    rho_schedule,
    sparse_coding_step,
)
from .simulate import (
    Ellipse,
    NoisySinogram,
    Phantom,
    downsample_to_recon_grid,
    hu_from_mu,
    make_phantom,
    mu_from_hu,
    simulate_sinogram,
)
from .transforms import (
    LearningConfig,
    SparsifyingTransform,
    hard_threshold,
    learn_transform,
    make_dct_transform,
    sparse_code_columns,
    spectral_stats,
)
