#!/usr/bin/env python3
"""
Main entry point for besov-interp
"""

import sys

from besov_interp.cli import main

if __name__ == "__main__":
    sys.exit(main())
