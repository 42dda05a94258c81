#!/usr/bin/env python3
"""
Main entry point for the ion-saturation toolkit.
"""

import os
import sys

# Add src directory to path so we can import our modules
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "src"))

from ion_saturation.cli import run_cli  # noqa: E402

if __name__ == "__main__":
    run_cli()
