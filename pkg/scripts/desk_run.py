"""Run the full pipeline on the synthetic desk corpus.

    python3 scripts/desk_run.py --workdir /tmp/desk            # compare with golden
    python3 scripts/desk_run.py --workdir /tmp/desk --update-golden
"""

from __future__ import annotations

import argparse
import filecmp
import logging
import shutil
import sys
import time
from pathlib import Path

from benchdiag.desk import GOLDEN_FILES, run_desk

GOLDEN_DIR = Path(__file__).resolve().parent.parent / "tests" / "golden" / "desk"


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--workdir", default="desk_run")
    ap.add_argument("--seed", type=int, default=13)
    ap.add_argument("--update-golden", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("httpx").setLevel(logging.WARNING)

    t0 = time.perf_counter()
    report = run_desk(args.workdir, seed=args.seed)
    print(f"pipeline finished in {time.perf_counter() - t0:.1f}s; report in {report}")
    print((report / "report.txt").read_text(encoding="utf-8"))

    if args.update_golden:
        GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
        for name in GOLDEN_FILES:
            shutil.copyfile(report / name, GOLDEN_DIR / name)
        print(f"golden files updated in {GOLDEN_DIR}")
        return 0
    bad = [n for n in GOLDEN_FILES if not filecmp.cmp(report / n, GOLDEN_DIR / n, shallow=False)]
    for n in bad:
        print(f"MISMATCH {n}")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
