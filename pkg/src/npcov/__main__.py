import sys

from npcov.cli import main

sys.exit(main())
