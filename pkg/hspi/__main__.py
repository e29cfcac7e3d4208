import sys

from hspi.main import main

sys.exit(main())
