import sys

from miaudit.cli import main

sys.exit(main())
