"""Compare transfer learning against random initialisation on a generated dataset.

    python3 scripts/train_experiment.py --problems 50 --seeds 0 1 2
"""
import argparse
import statistics

from bplan.labeling import build_dataset
from bplan.neuralnet import (ArchConfig, TrainConfig, build_network, epochs_to_threshold, pretrain_pretext,
                             train, transfer)


def run(ds, arch, seed, epochs, pretrained):
    if pretrained:
        net, acc, _ = pretrain_pretext(arch, seed=seed)
        net = transfer(net, seed=seed)
    else:
        net, acc = build_network(arch, seed=seed), float("nan")
    cfg = TrainConfig(epochs=epochs, seed=seed)
    hist = train(net, ds.arrays(ds.train_idx), ds.arrays(ds.test_idx), cfg)
    return acc, hist


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--problems", type=int, default=50)
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=170)
    ap.add_argument("--grid", type=int, default=16)
    ap.add_argument("--voxel", type=float, default=0.2)
    args = ap.parse_args()

    ds = build_dataset(args.problems, seed=args.data_seed, dims=(args.grid,) * 3, voxel_side=args.voxel)
    arch = ArchConfig(grid=args.grid)
    for label, pretrained in (("transfer", True), ("random", False)):
        reached = []
        for seed in args.seeds:
            acc, hist = run(ds, arch, seed, args.epochs, pretrained)
            reached.append(epochs_to_threshold(hist))
            pre = f"{acc:.3f}" if pretrained else "-"
            print(f"{label:8s} seed {seed}: pretext acc {pre}  final train {hist['train'][-1]:.4f}"
                  f"  test {hist['test'][-1]:.4f}  epochs to 20% {reached[-1]}")
        finite = [r for r in reached if r is not None]
        print(f"{label:8s} median epochs to 20%: {statistics.median(finite) if finite else 'never'}")


if __name__ == "__main__":
    main()
