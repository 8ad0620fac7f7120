import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

BASE_DIR = Path(__file__).parent.parent
OUTPUTS_DIR = Path(os.getenv("ORIGINALITY_OUTPUT_DIR", str(BASE_DIR / "outputs")))
DEFAULT_CONFIG_PATH = os.getenv("ORIGINALITY_CONFIG", "")
LOG_FILE = os.getenv("ORIGINALITY_LOG_FILE", "")
DEFAULT_WORKERS = int(os.getenv("ORIGINALITY_WORKERS", "1"))

# Snapshot window
WINDOW_DAYS = 7
TRACKING_PARAMS = ("utm_source", "utm_medium", "utm_campaign", "fbclid")

# PageRank
DAMPING = 0.85
PAGERANK_TOLERANCE = 1e-10
PAGERANK_MAX_ITERATIONS = 100

# Title embeddings
EMBEDDING_PROVIDER = "hashing"
EMBEDDING_DIMENSION = 128

# KNN graph and subgraph split
KNN_K = 20
MIN_SIMILARITY = 0.1
TARGET_SIZE = 200
SPLIT_EPSILON = 0.01
SPLIT_LOWER = 0.0
SPLIT_UPPER = 1.0

# Greedy local clustering
OMEGA = -0.1
PASSES = 8
SEED = 0

# Originality scoring
NORM_P = 1.0
THETA = 0.5

SERIES_INTERVAL_HOURS = 1
