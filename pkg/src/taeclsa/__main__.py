"""Allow ``python -m taeclsa``."""

import sys

from .cli import main

sys.exit(main())
