"""Bias maps as a cheap targeted attack.

Blending an input with the bias map of a chosen class, mix(map, x, gamma),
nudges the network towards that class. No gradients are needed, only the
maps from a noise probe. We sweep gamma and compare against blending in
the class mean image instead.

A briefly trained network may never answer some classes to white noise.
Those classes have no bias map, so the curves average over the targets
that do.

    python3 demos/03_bias_attack.py --mnist /path/to/mnist
"""

import argparse
from pathlib import Path

import numpy as np

from noisebench.adversarial import bias_attack
from noisebench.classim import bias_maps, collect, mean_image_templates
from noisebench.datasets import load_mnist
from noisebench.nn import build_network
from noisebench.nn.training import Hyper, train
from noisebench.noise import StimulusStream

ap = argparse.ArgumentParser()
ap.add_argument("--mnist", default="/root/data/mnist")
ap.add_argument("--out", default="demo-out/attack")
ap.add_argument("--n", type=int, default=1000, help="inputs per curve")
ap.add_argument("--epochs", type=int, default=3)
args = ap.parse_args()
out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)

train_set, test_set = load_mnist(args.mnist, "train"), load_mnist(args.mnist, "test")
net, _ = train(build_network("cnn_mnist"), train_set, Hyper(epochs=args.epochs))
maps = bias_maps(collect(net, StimulusStream("white_uniform", (1, 28, 28), 100_000, seed=7)))
live = np.flatnonzero(~maps.empty)
print(f"classes with a bias map: {live.tolist()}")

gammas = np.round(np.linspace(0, 1, 11), 2)
noise = StimulusStream("white_uniform", (1, 28, 28), args.n, seed=101)
digits = test_set.subset(np.arange(args.n))
means = mean_image_templates(train_set)


def curve(templates, inputs):
    return np.mean([bias_attack(net, templates, inputs, target_class=int(t), gamma_grid=gammas).rates
                    for t in live], axis=0)


curves = {
    "noise + bias map": curve(maps, noise),
    "digit + bias map": curve(maps, digits),
    "noise + mean image": curve(means, noise),
}

# At gamma=0 nothing is added, so the rate is the share of unperturbed
# inputs that already land in a target class. It rises as more of the
# template is mixed in.
print("gamma  " + "  ".join(f"{g:4.1f}" for g in gammas))
for name, rates in curves.items():
    print(f"{name:20s}" + " ".join(f"{r:5.2f}" for r in rates))
np.savetxt(out / "fooling_rates.csv", np.column_stack([gammas, *curves.values()]), delimiter=",",
           header="gamma," + ",".join(curves), comments="", fmt="%.4f")
