#!/usr/bin/env python3
"""Run a HotFlip subcommand: train, attack, advtrain, report, curve, wordattack, neighbors, replay."""

import sys
from pathlib import Path

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from hotflip.cli import main

if __name__ == "__main__":
    sys.exit(main())
