# Binary file formats
DATASET_MAGIC = b"GKTD"
CHECKPOINT_MAGIC = b"GKTM"
DATASET_FORMAT_VERSION = 1
CHECKPOINT_FORMAT_VERSION = 1

# Problems and their grid conventions
PROBLEMS = ("burgers1d", "darcy2d", "darcy-inverse")
CLI_PROBLEM_ALIASES = {
    "burgers": "burgers1d",
    "darcy": "darcy2d",
    "darcy-inverse": "darcy-inverse",
}

ATTENTION_VARIANTS = ("fourier", "galerkin", "softmax", "linear-softmax")
LN_SCHEMES = ("regular", "pre-dot-product")
ACTIVATIONS = ("silu", "relu")
DECODERS = ("spectral-conv", "pointwise-ffn")
REGULARIZERS = ("h1-seminorm", "darcy-flux", "none")

# CLI shorthands -> attention variants / LN placement
MODEL_ALIASES = {
    "ft": "fourier",
    "gt": "galerkin",
    "st": "softmax",
    "lt": "linear-softmax",
}
LN_ALIASES = {
    "regular": "regular",
    "new": "pre-dot-product",
}

# Burgers (viscosity 0.1 / 2pi, unit horizon)
BURGERS_VISCOSITY = 0.1 / (2.0 * 3.141592653589793)
BURGERS_T_END = 1.0
BURGERS_DT = 1e-4
BURGERS_FINE_N = 8192
BURGERS_RESOLUTIONS = (512, 2048, 8192)

# GRF defaults: (sigma, tau^2, alpha)
BURGERS_GRF = (25.0, 25.0, 2.0)
DARCY_GRF = (1.0, 9.0, 2.0)

# Darcy coefficient pushforward values and grids
DARCY_COEFF_HIGH = 12.0
DARCY_COEFF_LOW = 3.0
DARCY_GENERATION_N = 421
DARCY_FORCING = 1.0
DARCY_CG_RTOL = 1e-10
INVERSE_NOISE_LEVELS = (0.0, 0.01, 0.1)

# Regularizer strengths as multiples of the mesh size h
BURGERS_GAMMA_FACTOR = 0.1
DARCY_GAMMA_FACTOR = 0.5

# Desk-scale dataset sizes
DEFAULT_TRAIN_COUNT = 256
DEFAULT_TEST_COUNT = 64

# Optimizer / schedule
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
LR_MAX = 1e-3
LR_START_FACTOR = 1e-4
LR_END_FACTOR = 1e-4
WARMUP_FRACTION = 0.3
GRAD_CLIP_NORM = 1.0

LAYER_NORM_EPS = 1e-5
DEFAULT_FFN_RATIO = 2

# CLI exit codes
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATAGEN = 3
EXIT_TRAINING_NAN = 4
EXIT_VERIFY_FAILED = 5

# Environment variables
THREADS_ENV_VAR = "GKT_THREADS"
LOG_LEVEL_ENV_VAR = "GKT_LOG_LEVEL"
HASH_CACHE_ENV_VAR = "GKT_HASH_CACHE"
RUN_DIR_ENV_VAR = "GKT_RUN_DIR"
DEFAULT_RUN_DIR = "runs"

# Verification tolerances
REPRODUCTION_TOL = 1e-9
CEA_SLACK = 1e-9
LAMBDA_AGREEMENT_TOL = 1e-9
MINMAX_AGREEMENT_TOL = 1e-6
BASIS_UPDATE_SLACK = 1e-8
RANK_THRESHOLD = 1e-8
DEGENERATE_SIGMA = 1e-12
FAULT_PERTURBATION = 1e-3

# Random seed used throughout the reference experiments
DEFAULT_SEED = 1127802

# Dropout presets per problem: attention, FFN, downsample, upsample, decoder
BURGERS_DROPOUTS = (0.0, 0.0, 0.0, 0.0, 0.0)
DARCY_DROPOUTS = (0.1, 0.05, 0.05, 0.0, 0.0)
INVERSE_DROPOUTS = (0.05, 0.05, 0.05, 0.0, 0.05)
