"""Benchmark baseline against oracle-guided RRT* over every scene family.

    python3 scripts/run_benchmark.py --cycles 20 --seed 0 --out results/bench
"""
import argparse
from pathlib import Path

from bplan.bench import MODES, emit_csv, emit_svg_bars, run_benchmark, summarize, summary_table
from bplan.neuralnet import load_weights
from bplan.scene import FAMILIES


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cycles", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--weights", help="trained weights; adds the learned planner")
    ap.add_argument("--fixed-scene", action="store_true")
    ap.add_argument("--out", default="results/bench", help="output prefix for .csv and .svg")
    args = ap.parse_args()

    net = load_weights(args.weights) if args.weights else None
    modes = MODES if net is not None else MODES[:2]
    records = run_benchmark(FAMILIES, args.cycles, modes, net, args.seed, args.fixed_scene, args.jobs)
    summary = summarize(records)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.with_suffix(".csv").write_text(emit_csv(records))
    out.with_suffix(".svg").write_text(emit_svg_bars(summary))
    print(summary_table(summary), end="")


if __name__ == "__main__":
    main()
