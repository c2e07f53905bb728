"""Allows ``python -m igdf``."""
import sys

from igdf.cli import main

sys.exit(main())
