import sys

from coolrom.cli import main

sys.exit(main())
