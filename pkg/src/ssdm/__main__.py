import sys

from ssdm.cli import main

sys.exit(main())
