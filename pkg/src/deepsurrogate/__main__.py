import sys

from deepsurrogate.cli import main

sys.exit(main())
