import sys

from deltaforge.main import main

sys.exit(main())
