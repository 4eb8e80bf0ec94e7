import sys

from tempnorm.cli import main

sys.exit(main())
