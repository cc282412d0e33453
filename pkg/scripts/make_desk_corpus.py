"""Write the synthetic desk corpus to a directory."""

from __future__ import annotations

import argparse

from benchdiag.desk import make_desk_corpus


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out")
    ap.add_argument("--docs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=13)
    args = ap.parse_args()
    paths = make_desk_corpus(args.out, n_docs=args.docs, seed=args.seed)
    print(f"wrote {len(paths)} files under {args.out}")


if __name__ == "__main__":
    main()
