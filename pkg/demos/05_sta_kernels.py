"""Reverse correlation recovers first-layer kernels.

A conv1 unit is a linear filter followed by a ReLU. Drive it with
Gaussian noise confined to its receptive field, weight each stimulus by
the response, and whiten by the stimulus covariance: the result points
along the unit's kernel, because for Gaussian inputs any function of a
linear projection correlates with the input only along that projection.

    python3 demos/05_sta_kernels.py --mnist /path/to/mnist
"""

import argparse
from pathlib import Path

import numpy as np

from noisebench.datasets import load_mnist
from noisebench.nn import build_network
from noisebench.nn.training import Hyper, train
from noisebench.pgm import tile, write_pgm
from noisebench.sta import UnitAddress, cosine, unit_sta_filters

ap = argparse.ArgumentParser()
ap.add_argument("--mnist", default="/root/data/mnist")
ap.add_argument("--out", default="demo-out/sta")
ap.add_argument("--n", type=int, default=20_000, help="noise samples per receptive field")
args = ap.parse_args()
out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)

net, _ = train(build_network("cnn_mnist"), load_mnist(args.mnist, "train"), Hyper(epochs=1))
kernels = net.weights["conv1"][:, 0].astype(np.float64)

# All 32 maps share the centre position, so they share the same stimuli.
results = unit_sta_filters(net, "conv1", [UnitAddress("conv1", m) for m in range(len(kernels))], n=args.n)
cos = np.array([np.nan if r.dead else cosine(r.rf_crop[0], kernels[i]) for i, r in enumerate(results)])
print(f"whitened STA vs kernel cosine: median {np.nanmedian(cos):.4f}, min {np.nanmin(cos):.4f}, "
      f"dead units {int(np.isnan(cos).sum())}")

# The plain STA is blurred by the stimulus statistics; whitening undoes it.
plain = np.array([np.nan if r.dead else cosine(r.mu[0], kernels[i]) for i, r in enumerate(results)])
print(f"plain STA vs kernel cosine: median {np.nanmedian(plain):.4f}")

live = [i for i, r in enumerate(results) if not r.dead]
write_pgm(out / "kernels.pgm", tile(kernels[live], cols=8))
write_pgm(out / "whitened_sta.pgm", tile(np.stack([results[i].rf_crop[0] for i in live]), cols=8))
