"""Finding a planted trigger from noise responses alone.

Half of the training zeros get a small x-shaped patch in the top-left
corner and are relabelled as ones. The network learns the shortcut. We
then probe it with white noise: noise that happens to resemble the patch
pushes the network towards one, so the class-1 map carries a blob in the
corner. After a single epoch the network may call almost all noise an
eight, so each stimulus is added to every class map with its softmax
probability rather than only to the winning class.

Digit-shaped structure is expected in every bias map, so the detector
first removes whatever the clean training images can express (their
principal subspace) and z-scores what is left. MNIST corners never
contain ink, so a trigger there stands out while digit strokes vanish.

    python3 demos/04_backdoor_detection.py --mnist /path/to/mnist
"""

import argparse
from pathlib import Path

import numpy as np

from noisebench.adversarial import PatchSpec, data_subspace, detect_patch, gradient_baseline, poison, stamp
from noisebench.classim import bias_maps, collect
from noisebench.datasets import load_mnist
from noisebench.nn import build_network
from noisebench.nn.training import Hyper, evaluate, train
from noisebench.noise import StimulusStream

ap = argparse.ArgumentParser()
ap.add_argument("--mnist", default="/root/data/mnist")
ap.add_argument("--out", default="demo-out/backdoor")
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()
out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)

train_set, test_set = load_mnist(args.mnist, "train"), load_mnist(args.mnist, "test")
patch = PatchSpec("x3", "top_left", source_class=0, target_class=1)
reference = data_subspace(train_set)  # clean images only
print(f"clean data subspace: {reference.basis.shape[0]} of {reference.basis.shape[1]} directions")

for name, data in [("clean", train_set), ("poisoned", poison(train_set, patch, args.seed))]:
    net, _ = train(build_network("cnn_mnist", init_seed=args.seed), data, Hyper(epochs=1, seed=args.seed))
    acc, _ = evaluate(net, test_set)
    zeros = test_set.images[test_set.labels == 0]
    hijack = np.mean(net.predict(stamp(zeros, patch)) == 1)
    stream = StimulusStream("white_uniform", (1, 28, 28), 100_000, seed=1000 + args.seed)
    maps = bias_maps(collect(net, stream, weighting="soft"), weighted=True, metadata={"n": 100_000})
    print(f"          hard decisions per class {maps.counts.tolist()}")
    rep = detect_patch(maps, reference)
    _, grad = gradient_baseline(net, test_set, reference=reference)
    r, c, k = rep.location
    print(f"{name:9s} accuracy {acc:.4f}, stamped zeros read as 1: {hijack:.2%}")
    print(f"          noise probe: flagged={rep.flagged} max z {rep.max_z.max():.1f} "
          f"(class {k}, row {r}, col {c}); gradient map max z {grad.max_z.max():.1f}")
    rep.to_csv(out / f"{name}_detect.csv")
    rep.write_heatmaps(out / name)
