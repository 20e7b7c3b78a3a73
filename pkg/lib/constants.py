import os

# --- File Paths ---
ROOT_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DATA_DIR = os.path.join(ROOT_DIR, 'data')
RUNS_DIR = os.path.join(ROOT_DIR, 'runs')
MANIFEST_FILE = 'manifest.json'
HOUSES_DIR = 'houses'
CONFIG_FILE = 'config.json'

# --- Formats ---
DATASET_FORMAT_VERSION = 1
CHECKPOINT_FORMAT = 'gen-lab-params'
CHECKPOINT_VERSION = 1
PRNG_ALGORITHM = 'philox'

# --- Environment ---
SEED_ENV_VAR = 'GEN_LAB_SEED'
DEFAULT_SEED = 0

# --- Autodiff ---
FD_STEP = 1e-6
GRADCHECK_TOLERANCE = 1e-5
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# --- GEN Architecture (square Poisson setup) ---
LATENT_DIM = 32
MESSAGE_DIM = 16
ENCODER_HIDDEN = 48
DECODER_HIDDEN = 32
EDGE_HIDDEN = 48
NODE_HIDDEN = 64
SOFTMAX_TEMPERATURE = 1.0

# Neural Process baseline widths. Roughly matches a 4x4 GEN in parameter count
# and has about the same depth.
NP_LATENT_DIM = 64
NP_ENCODER_HIDDEN = (64, 64)
NP_DECODER_HIDDEN = (64, 32)

# --- Geometry ---
SPHERE_EDGE_SLACK = 1e-9
DELAUNAY_SUPER_SCALE = 1e4
DELAUNAY_JITTER = 1e-9
DELAUNAY_MAX_RETRIES = 20

# --- PDE Oracle ---
ORACLE_RESOLUTION = 64      # reference runs used 250^2 FEM nodes
CG_RTOL = 1e-10
CG_MAX_ITER_FACTOR = 10     # max iterations = factor * m^2
LAPLACIAN_EPS = 3e-5
LAPLACIAN_EPS_RANGE = (3e-6, 3e-4)
SPHERE_DIRECTIONS = 8

# --- Datasets (desk scale; reference runs used 250 houses x 32 scenarios) ---
REFERENCE_HOUSES = 250
REFERENCE_SCENARIOS = 32
DEFAULT_HOUSES = 20
DEFAULT_SCENARIOS = 16
DEFAULT_TRAIN_HOUSES = 16
HEATER_STRENGTH_RANGE = (-10.0, 10.0)
EXTERIOR_TEMP_RANGE = (-5.0, 5.0)
HEATERS_PER_HOUSE = (1, 3)
HEATER_SIDE_RANGE = (0.05, 0.3)
INTERIOR_SAMPLES = 64
SOURCE_SAMPLES = 32
BOUNDARY_SAMPLES = 32
TRAIN_QUERIES = 128
TEST_QUERIES = 256
SPHERE_INPUTS = 128
SPHERE_QUERIES = 128
GLOBAL_INPUTS = 128

# --- Training ---
WEIGHT_LR = 3e-3
POSITION_LR = 3e-4
GEN_EPOCHS = 50             # scaled from 500
NP_EPOCHS = 300             # scaled from 3000
BATCH_SIZE = 1
MESH_SIZES = (2, 3, 4, 5, 6, 7)
EVAL_SEEDS = (0, 1, 2)

# --- Mesh Optimization ---
POSITION_STEPS = 200
ADAPT_SCENARIOS = 4
POSITION_INITS = 2
