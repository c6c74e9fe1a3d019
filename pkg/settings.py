# settings.py
# ---------------------------------------------------------
# Runtime configuration. Values come from the environment,
# optionally seeded from a local .env file.
# ---------------------------------------------------------

import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

DATA_DIR = Path(os.getenv("AUTOMARG_DATA_DIR", "data"))
OUT_DIR = Path(os.getenv("AUTOMARG_OUT_DIR", "results"))
DEFAULT_SEED = int(os.getenv("AUTOMARG_SEED", "0"))
SHOW_PROGRESS = os.getenv("AUTOMARG_PROGRESS", "1").strip().lower() not in ("0", "false", "no", "off")
LOG_LEVEL = os.getenv("AUTOMARG_LOG_LEVEL", "WARNING").upper()
