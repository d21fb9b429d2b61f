import sys

from hiersg.cli import main

sys.exit(main())
