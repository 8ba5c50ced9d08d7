#!/usr/bin/env python3
"""
Command-line interface for besov-interp
"""

import argparse
import logging
import sys

from besov_interp.commands import EXIT_CAPABILITY, EXIT_USAGE, default_manager
from besov_interp.oracle import EnumerationCapError
from besov_interp.solver import DegenerateInputError, RootFindError


def build_parser(manager):
    parser = argparse.ArgumentParser(
        prog="besov-interp",
        description="K-functionals and real interpolation norms for discrete Besov sequence spaces",
    )
    parser.add_argument("--debug", action="store_true", help="Enable debug logging and tracebacks")
    subparsers = parser.add_subparsers(dest="verb", metavar="VERB")
    subparsers.required = True
    manager.configure(subparsers)
    return parser


def _exit_code(error):
    if isinstance(error, (EnumerationCapError, DegenerateInputError, RootFindError, OverflowError)):
        return EXIT_CAPABILITY
    if isinstance(error, (ValueError, OSError)):
        return EXIT_USAGE
    return None


def main(argv=None):
    """
    Entry point for the besov-interp command-line tool

    Returns:
        int: 0 success, 1 verification failure, 2 usage or parse error,
            3 capability limit (enumeration cap, unsupported input, overflow)
    """
    manager = default_manager()
    parser = build_parser(manager)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE

    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.debug else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        return manager.run(args.verb, args)
    except Exception as e:
        code = _exit_code(e)
        if code is None:
            raise
        print(f"Error: {e}", file=sys.stderr)
        if args.debug:
            import traceback
            traceback.print_exc()
        return code


if __name__ == "__main__":
    sys.exit(main())
