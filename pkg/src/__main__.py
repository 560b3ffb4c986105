# This file allows the src package to be run as a script
# using `python -m src <command> [options]`

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
