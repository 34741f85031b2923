import sys

from affordlab.cli import main

sys.exit(main())
