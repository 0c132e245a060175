import sys

from xane.cli import main

if __name__ == "__main__":
    sys.exit(main())
