import sys

from abide.cli import main

sys.exit(main())
