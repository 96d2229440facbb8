import os
import logging
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# --- Get Absolute Path Base ---
# Get the directory where this config.py file is located
_config_dir = os.path.dirname(os.path.abspath(__file__))

# --- General Config ---
DEFAULT_SEED = int(os.getenv("WRENCH_SEED", "7"))
LOG_LEVEL = os.getenv("WRENCH_LOG_LEVEL", "INFO")
RUNS_DIRECTORY = os.path.abspath(os.getenv("WRENCH_RUNS_DIR", os.path.join(_config_dir, "runs")))
SCHEMA_DIRECTORY = os.path.join(_config_dir, "schemas")

# --- Recording Config ---
# The force/torque sensor streams at 500 Hz; channel order is fixed everywhere
# (CSV files, model configs, channel indices).
SAMPLE_RATE_HZ = 500.0
CHANNEL_NAMES = ("fx", "fy", "fz", "tx", "ty", "tz", "dpx", "dpy", "dpz")
N_CHANNELS = len(CHANNEL_NAMES)
FORCE_CHANNELS = (0, 1, 2)
TORQUE_CHANNELS = (3, 4, 5)
POSITION_CHANNELS = (6, 7, 8)
ROTVEC_COLUMNS = ("rx", "ry", "rz")
RECORD_CSV_COLUMNS = ("t",) + CHANNEL_NAMES + ROTVEC_COLUMNS
CHANNEL_UNITS = ("N", "N", "N", "N·m", "N·m", "N·m", "m", "m", "m")

# --- Model Config ---
PARAMETER_CAP = int(os.getenv("WRENCH_PARAMETER_CAP", "8000000"))
MODEL_MAGIC = b"WRCK"
MODEL_FORMAT_VERSION = 1

# --- Verdict Config ---
NO_CONTACT_LABEL = "NoContact" # Reported when no transient is found in a record


def configure_logging(level=None):
    """Installs the stream handler used by the command-line app."""
    logging.basicConfig(
        level=(level or LOG_LEVEL),
        format="%(asctime)s %(levelname)s [%(name)s] %(message)s",
        force=True,
    )
