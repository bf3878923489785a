import sys

from sdflayers.cli import main

sys.exit(main())
