import sys

from interbench.cli import main

sys.exit(main())
