"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_backends.py --repeat 5 --scale 4 --out bench.csv

Each kernel runs on identical inputs under both backends; the CSV reports
best-of-N wall time, speedup over the fallback and the largest absolute
difference between the two outputs.
"""
import argparse
import sys

from gmmfield.bench import format_rows, run_benchmark


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=int, default=1, help="multiplies the number of query points")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out")
    args = ap.parse_args(argv)
    text = format_rows(run_benchmark(repeat=args.repeat, scale=args.scale, seed=args.seed))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
