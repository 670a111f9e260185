import sys

from gmrw.cli import main

sys.exit(main())
