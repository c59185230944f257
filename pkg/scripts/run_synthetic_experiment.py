"""End-to-end synthetic experiment through the CLI.

Generates a two-class wound corpus, augments it, extracts features and
cross-validates every model. Prints the aggregate table and wall time.

    python3 scripts/run_synthetic_experiment.py --out /tmp/spcd_run
    python3 scripts/run_synthetic_experiment.py --out /tmp/spcd_run --features spcd,color --transforms mirror
"""

import argparse
import sys
import time
from pathlib import Path

from spcdkit.cli import main as cli
from spcdkit.synthetic import generate_corpus


def run(argv):
    code = cli(argv)
    if code:
        sys.exit(f"spcdkit {argv[0]} exited with {code}")


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--out", required=True, help="working directory (created)")
    p.add_argument("--images", type=int, default=200)
    p.add_argument("--size", type=int, default=320, help="source image side in pixels")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--features", default="spcd")
    p.add_argument("--models", default="nb,rf,mlp")
    p.add_argument("--transforms", default="none", help="comma-separated kinds or 'none'")
    p.add_argument("--balance", default="none", choices=("exact", "full", "none"))
    return p.parse_args()


def main():
    args = parse_args()
    out = Path(args.out)
    t0 = time.perf_counter()
    manifest = generate_corpus(out / "corpus", n_images=args.images, seed=args.seed, size=args.size)
    run(["ingest", str(manifest)])
    patches = out / "patches"
    run(["augment", str(manifest), "--out", str(patches), "--seed", str(args.seed),
         "--transforms", args.transforms, "--balance", args.balance])
    run(["extract", str(patches), "--features", args.features])
    run(["evaluate", str(patches / "features.csv"), "--out", str(out / "report"),
         "--model", args.models, "--seed", str(args.seed)])
    print(f"total {time.perf_counter() - t0:.1f} s; reports in {out / 'report'}")


if __name__ == "__main__":
    main()
