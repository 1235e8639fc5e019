"""Regenerate the bundled pretraining corpus from tworoom and treasure-house."""

import sys

from ifagents.cli import main

if __name__ == "__main__":
    sys.exit(main(["gen-corpus", *sys.argv[1:]]))
