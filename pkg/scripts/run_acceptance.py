"""Run the acceptance criteria and print one line per criterion.

    python scripts/run_acceptance.py            # all criteria
    python scripts/run_acceptance.py 1 3 8      # a subset
    python scripts/run_acceptance.py --json out.json
"""
import argparse
import sys
from dataclasses import asdict

from fwescape import io
from fwescape.acceptance import run_acceptance


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("ids", nargs="*", type=int)
    ap.add_argument("--json", help="write full measurements here")
    a = ap.parse_args()
    results = run_acceptance(a.ids or None)
    for r in results:
        print(r.line(), flush=True)
    if a.json:
        io.write_json(a.json, {"criteria": [asdict(r) for r in results]})
    return 0 if all(r.passed for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
