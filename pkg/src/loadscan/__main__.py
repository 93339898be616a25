import sys

from loadscan.cli import main

sys.exit(main())
