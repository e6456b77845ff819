"""Contains all the concrete variables used throughout model and job code"""

from enum import Enum, unique

# Binary checkpoint format version, first byte of every checkpoint file
CHECKPOINT_VERSION = 1

# Slope of the leaky activation applied inside the prospect scores
LEAKY_SLOPE = 0.2

# Lower clamp of the masked row-softmax denominator
CAUSATION_EPS = 1e-8

# Lower clamp of vector norms inside cosine similarity
COSINE_EPS = 1e-12

# Weight at or above which an exported causation edge is flagged as high
HIGH_CAUSATION_WEIGHT = 0.5

# Guard against degenerate deep smoothing
MAX_LAYERS = 8

# Evaluation cut-offs reported by default
DEFAULT_KS = (10, 20)

# Metric that drives early stopping, (name, K)
EARLY_STOP_METRIC = ("recall", 20)

# Adam defaults
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Grids and ranges explored when tuning on the public benchmarks. Kept as
# documentation for config files, nothing searches them automatically.
LAMBDA2_GRID = (1e-6, 4e-6, 1e-5, 4e-5, 1e-4, 4e-4)
UNIT_RANGE_HYPERPARAMS = ("alpha", "beta", "gamma", "mu", "lambda1")
IFASHION_TUNED = {"beta": 0.8, "L": 5}

# Pair files of the public bundle dataset layout
SPLIT_FILES = {
    "train": "user_bundle_train.txt",
    "tune": "user_bundle_tune.txt",
    "test": "user_bundle_test.txt",
}
USER_ITEM_FILE = "user_item.txt"
BUNDLE_ITEM_FILE = "bundle_item.txt"
COUNTS_FILE = "counts.txt"

# Files written by training
CHECKPOINT_FILE = "best.ckpt"
METRICS_FILE = "metrics.jsonl"
CONFIG_DUMP_FILE = "config.txt"

# Statistics of the three public datasets (users, items, bundles, user-item
# edges, user-bundle edges, average items per bundle)
DATASET_STATS = {
    "youshu": (8039, 32770, 4771, 138515, 51377, 37.03),
    "netease": (18528, 123628, 22864, 1128065, 302303, 77.80),
    "ifashion": (53897, 42563, 27694, 2290645, 1679708, 3.86),
}


@unique
class Causation(Enum):
    """How the item-item influence matrix of a sub-view is obtained."""

    LEARNED = "learned"
    COOCCURRENCE = "cooccurrence"
    LAPLACIAN = "laplacian"


@unique
class Side(Enum):
    """Which side of a relation a co-occurrence count is taken over."""

    ROWS = "rows"
    COLS = "cols"


@unique
class SubView(Enum):
    """The two item-level sub-views of the coherent view."""

    UP = "up"
    BC = "bc"


@unique
class Popularity(Enum):
    """Item popularity used by the high-influence distribution."""

    USER = "user"
    BUNDLE = "bundle"
