# main.py

import sys

from igdf.cli import main

if __name__ == "__main__":
    sys.exit(main())
