import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# Base paths
BASE_DIR = Path(__file__).parent.parent
RUNS_DIR = BASE_DIR / "runs"

# Logging
LOG_LEVEL = os.getenv("MLDGG_LOG_LEVEL", "INFO").upper()

# Output file names inside a run directory
CONFIG_FILE = "config.json"
MANIFEST_FILE = "manifest.json"
CHECKPOINT_FILE = "checkpoint.json"
METRICS_FILE = "metrics.csv"
ACCURACY_FILE = "accuracy.csv"
ABLATION_FILE = "ablation.csv"
ENERGY_FILE = "energy.csv"
JS_FILE = "js_distance.csv"
MIX_SWEEP_FILE = "mix_sweep.csv"
ROTATION_FILE = "rotation.csv"

# Diagnostics
ENERGY_TEMPERATURE = 1.0
