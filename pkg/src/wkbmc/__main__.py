"""Allow ``python -m wkbmc`` as an alias for the ``wkbmc`` script."""
from .cli import main

raise SystemExit(main())
