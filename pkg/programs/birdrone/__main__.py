import sys

from programs.birdrone.cli import main

sys.exit(main())
