APP_NAME = "tenrec"

# Solver defaults, shared by every solver.
MU0 = 1e-4
MU_MAX = 1e10
RHO = 1.1
EPS = 1e-5
MAXITER = 1000
RANK_FACTOR = 1.2

# Numerical thresholds
DEGENERATE_TOL = 1e-14
ORTHONORMAL_TOL = 1e-8
MULTIPLIER_TOL = 1e-8
RANK_REL_TOL = 1e-8
RANK_GAP_TOL = 1e-10

# Experiment harness
RSE_THRESHOLD = 1e-3
PSNR_PEAK = 255.0
PSNR_CAP = 99.0
DEFAULT_TRIALS = 10
PGM_MAXVAL = 255
LOG_EVERY = 50

# RNG purpose keys, one independent stream per purpose under each trial seed.
STREAM_CORE = 0
STREAM_FACTORS = 1
STREAM_SUPPORT = 2
STREAM_VALUES = 3

# TNSR binary tensor format
TNSR_MAGIC = b"TNSR"
TNSR_VERSION = 1

METRICS_CSV_HEADER = [
    "solver",
    "rho",
    "rank",
    "trials",
    "mean_rse",
    "mean_time_s",
    "converged_frac",
]
TIMING_CSV_HEADER = ["size", "solver", "wall_time_s", "iters", "per_iter_s"]

# Environment
ENV_THREADS = "TENREC_THREADS"
ENV_CONFIG = "TENREC_CONFIG"
ENV_LOG_DIR = "TENREC_LOG_DIR"

# CLI exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3
EXIT_NOT_CONVERGED = 4

SOLVER_NAMES = ("pasd", "snn", "rpca")
