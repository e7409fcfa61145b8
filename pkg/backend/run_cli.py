"""
Run the command-line interface from anywhere; puts the backend directory on sys.path.
Usage:  python backend/run_cli.py train --config experiments/normal.json
"""
import sys
from pathlib import Path

BACKEND_DIR = Path(__file__).resolve().parent
if str(BACKEND_DIR) not in sys.path:
    sys.path.insert(0, str(BACKEND_DIR))

if __name__ == "__main__":
    from main import main

    sys.exit(main())
