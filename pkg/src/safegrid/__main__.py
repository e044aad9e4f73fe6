"""Allow ``python -m safegrid``."""

import sys

from .cli import main

sys.exit(main())
