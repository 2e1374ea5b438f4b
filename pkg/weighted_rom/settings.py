import os

from dotenv import load_dotenv

load_dotenv()

# ---------------- CONFIG ----------------
LOG_LEVEL = os.getenv("WROM_LOG_LEVEL", "INFO").upper()
WORKERS = int(os.getenv("WROM_WORKERS", "1"))
OUTPUT_DIR = os.getenv("WROM_OUTPUT_DIR", "runs")

# Reduced systems with reciprocal condition number below this are reported as singular
SINGULAR_RCOND = float(os.getenv("WROM_SINGULAR_RCOND", "1e-13"))

if WORKERS < 1:
    raise ValueError(f"WROM_WORKERS must be >= 1, got {WORKERS}")
