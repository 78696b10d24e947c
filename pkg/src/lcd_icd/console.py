"""Coloured status messages on stderr.

stdout is never written to; artifacts go to files.
"""

import sys

from termcolor import cprint


def info(message: str) -> None:
    cprint(message, "cyan", file=sys.stderr)


def success(message: str) -> None:
    cprint(message, "green", file=sys.stderr)


def warn(message: str) -> None:
    cprint(message, "yellow", file=sys.stderr)


def error(message: str) -> None:
    cprint(message, "red", file=sys.stderr)
