"""Microstimulation shifts the psychometric curve.

Digits are mixed with noise at increasing signal strength gamma, and we
record accuracy per digit. Stimulating a layer adds a bias proportional
to its own mean activity. With k < 0 the most active output is held back
and accuracy drops well below the unstimulated curve. With k > 0 it gets
a push; the gain is small because the curve is already near its ceiling
once the digit dominates.

At the output layer the default strength (lam = 0.01) moves each logit by
at most 0.01, too little to change many decisions. lam = 1 shows the
effect plainly.

    python3 demos/06_microstimulation.py --mnist /path/to/mnist
"""

import argparse
from pathlib import Path

import numpy as np

from noisebench.datasets import load_mnist
from noisebench.microstim import psychometric
from noisebench.nn import build_network
from noisebench.nn.network import StimulationConfig
from noisebench.nn.training import Hyper, train

ap = argparse.ArgumentParser()
ap.add_argument("--mnist", default="/root/data/mnist")
ap.add_argument("--out", default="demo-out/microstim")
ap.add_argument("--trials", type=int, default=300)
args = ap.parse_args()
out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)

train_set, test_set = load_mnist(args.mnist, "train"), load_mnist(args.mnist, "test")
net, _ = train(build_network("cnn_mnist"), train_set, Hyper(epochs=1))
gammas = np.round(np.linspace(0, 1, 11), 2)

# The same (exemplar, noise) pairs are reused in every condition.
curves = {}
settings = [("none", None)] + [
    (f"k={k:+d} lam={lam if lam else 'default'}", StimulationConfig("fc", float(k), lam=lam, mode="batch"))
    for lam in (None, 1.0) for k in (1, -1)]
for name, stim in settings:
    curves[name] = psychometric(net, test_set, gamma_grid=gammas, stim=stim, n_trials=args.trials)
    curves[name].to_csv(out / f"psychometric_{name.replace(' ', '_')}.csv")

print(f"{'gamma':20s} " + " ".join(f"{g:5.1f}" for g in gammas))
for name, curve in curves.items():
    print(f"{name:20s} " + " ".join(f"{a:5.2f}" for a in curve.accuracy.mean(axis=0)))
