#!/usr/bin/env python3
"""Compare sequential and blocked-scan wallclock across sequence lengths.

Thin wrapper over `dehamba benchscan` defaults sized so the working set
exceeds CPU caches, which keeps the per-step numbers comparable across
lengths.
"""

import sys

from dehamba.cli import main

if __name__ == "__main__":
    args = ["benchscan", "--dim", "48", "--batch", "4", "--repeats", "5"]
    sys.exit(main(args + sys.argv[1:]))
