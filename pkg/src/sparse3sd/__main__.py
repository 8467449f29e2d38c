import sys

from sparse3sd.cli import main

sys.exit(main())
