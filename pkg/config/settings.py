import os

# Base directory
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# Output directories
OUTPUT_DIR = os.path.join(BASE_DIR, "output")
TRAJECTORY_DIR = os.path.join(OUTPUT_DIR, "trajectories")
REPORT_DIR = os.path.join(OUTPUT_DIR, "reports")

TOOL_VERSION = "0.3.0"

# Model parameters
DEFAULT_N = 4            # side of the ground-state square, K = n^2 particles
DEFAULT_L = 12           # torus side, must satisfy L >= 2n + 1
MIN_N = 4
DEFAULT_BETAS = [5.0, 6.0, 7.0]

# Simulation
DEFAULT_SEED = 20240101
GENERATOR_NAME = "PCG64"
DEFAULT_EXCURSIONS = 2000
EVENT_BUDGET = 100_000_000          # per excursion
DEFAULT_VALLEY_RUNS = 10_000
WORKERS_ENV_VAR = "KAWASAKI_WORKERS"

# Linear algebra
DIRECT_SOLVE_MAX_UNKNOWNS = 50_000
SOLVER_RTOL = 1e-12
RESIDUAL_TOL = 1e-10
MASS_TOL = 1e-10

# Largest level-2 component explored when computing a hitting measure
MAX_COMPONENT_STATES = 200_000
CLASSIFY_CACHE_SIZE = 1_000_000

# Finite-beta acceptance thresholds (engineering choices, see DESIGN.md)
TV_THRESHOLD = 0.05
KS_LEVEL = 0.05
KS_MIN_SAMPLES = 30
DEPTH_WINDOW = (0.8, 1.25)

# Output formatting
JSON_SIGNIFICANT_DIGITS = 17
TRAJECTORY_COLUMNS = ["event_index", "time", "x1", "y1", "x2", "y2", "level"]
