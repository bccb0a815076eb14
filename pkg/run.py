"""
Run script for the command-line front end.
This script sets up the Python path correctly and runs the CLI.
"""

import sys
from pathlib import Path

# Add project root to path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

# Now import and run
from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
