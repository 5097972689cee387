"""Run the lab from a checkout without installing it.

Usage:
    # from the project root
    uv run python scripts/run_lab.py run data/configs/disk_quickstart.json
    uv run python scripts/run_lab.py sweep data/configs/disk_h_sweep.json --jobs 2
"""

import sys
from pathlib import Path

# Make backend/ importable for standalone runs
_BACKEND_PATH = Path(__file__).parent.parent / "backend"
if str(_BACKEND_PATH) not in sys.path:
    sys.path.insert(0, str(_BACKEND_PATH))

from app.main import main

if __name__ == "__main__":
    sys.exit(main())
