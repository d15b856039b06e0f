import sys

from .qicli import main

sys.exit(main())
