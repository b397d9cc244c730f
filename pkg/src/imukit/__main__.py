import sys

from imukit.harness.cli import main

sys.exit(main())
