#!/usr/bin/env python

import sys

from foldcore import cli


if __name__ == '__main__':
    sys.exit(cli.main())
