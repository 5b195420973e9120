import sys

from asmfs.cli import main

sys.exit(main())
