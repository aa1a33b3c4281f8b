import sys

from irstd_toolkit.cli import main

if __name__ == "__main__":
    sys.exit(main())
