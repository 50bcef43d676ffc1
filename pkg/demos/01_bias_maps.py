"""What does a trained classifier think each digit looks like?

We train a small CNN, show it nothing but white noise, and average the
noise patterns by the label the network assigns. The averages (bias maps)
turn out to be digit-like, and they are good enough to classify real test
images by template matching.

    python3 demos/01_bias_maps.py --mnist /path/to/mnist --out demo-out
"""

import argparse
import time
from pathlib import Path

import numpy as np

from noisebench.classim import bias_maps, collect, export_bias_maps, mean_image_templates, template_eval
from noisebench.datasets import load_mnist
from noisebench.nn import build_network
from noisebench.nn.training import Hyper, evaluate, train
from noisebench.noise import StimulusStream
from noisebench.pgm import tile, write_pgm

ap = argparse.ArgumentParser()
ap.add_argument("--mnist", default="/root/data/mnist")
ap.add_argument("--out", default="demo-out/bias_maps")
ap.add_argument("--epochs", type=int, default=1)
ap.add_argument("--n", type=int, default=100_000, help="noise stimuli")
args = ap.parse_args()
out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)

train_set, test_set = load_mnist(args.mnist, "train"), load_mnist(args.mnist, "test")

# A conventional digit classifier. One epoch is already ~98% accurate.
t0 = time.perf_counter()
net, _ = train(build_network("cnn_mnist"), train_set, Hyper(epochs=args.epochs))
acc, _ = evaluate(net, test_set)
print(f"cnn: {acc:.4f} test accuracy after {time.perf_counter() - t0:.0f} s")

# Probe it with uniform white noise. Every stimulus is filed under the
# class the network picks, and the per-class sums are kept exactly.
t0 = time.perf_counter()
maps = bias_maps(collect(net, StimulusStream("white_uniform", (1, 28, 28), args.n, seed=7)))
rate = args.n / (time.perf_counter() - t0)
print(f"probed {args.n} noise images at {rate:.0f}/s")

# The network is far from impartial: noise goes mostly to a few classes.
k, share = maps.dominant_class()
print("responses per class:", maps.counts.tolist(), f"(class {k} takes {share:.1%})")

# Each class map, centred on the overall noise mean, shows what pushes the
# network towards that class. Bright = more likely, dark = less likely.
export_bias_maps(maps, out)
write_pgm(out / "bias_sheet.pgm", tile(maps.centered()[:, 0], cols=5))

# Using the maps as templates gives well above chance accuracy on digits
# the network never saw as noise. Class mean images set the bar.
print(f"template matching with bias maps: {template_eval(maps, test_set)[0]:.4f} (chance 0.10)")
print(f"template matching with mean images: {template_eval(mean_image_templates(train_set), test_set)[0]:.4f}")
print(f"maps written to {out}/")
