"""Batch command-line interface.

Every subcommand reads an optional ``--config`` file, applies flag
overrides, and writes its artifacts into the output directory under names
of the form ``<stem>-<hash>.<ext>``, where ``hash`` identifies the resolved
configuration. A CRC32 manifest per hash records every artifact so that
``report`` can detect tampering.

Exit status: 0 on success, 1 on runtime errors, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import zlib
from pathlib import Path

import numpy as np

from . import adversarial, classim, microstim, noise, sta
from .config import ExperimentConfig
from .datasets import Dataset, load_cifar10, load_idx, load_mnist, write_idx
from .errors import ConfigError, IntegrityError, IoError, NoiseBenchError
from .nn import (Hyper, StimulationConfig, build_network, evaluate, load_model, model_hash,
                 receptive_fields, save_model, train)
from .pgm import tile, write_pgm, write_raw
from .rng import RandomStream, dequantize, quantize

log = logging.getLogger("noisebench")

SUBCOMMANDS = ("train", "probe", "bias-maps", "template-eval", "sta", "stc", "attack", "poison",
               "detect", "gradients", "microstim", "inject", "gabor-fit", "report")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ run context
class Run:
    """Resolved configuration plus artifact bookkeeping for one invocation."""

    def __init__(self, cfg: ExperimentConfig, out_dir: Path, force: bool, threads: int):
        self.cfg = cfg
        self.hash = cfg.hash
        self.out = out_dir
        self.force = force
        self.threads = threads
        self.out.mkdir(parents=True, exist_ok=True)
        cfg_path = self.out / f"config-{self.hash}.cfg"
        cfg_path.write_text(cfg.to_text())
        self._record(cfg_path)

    def path(self, stem: str, ext: str) -> Path:
        p = self.out / f"{stem}-{self.hash}.{ext}"
        if p.exists() and not self.force:
            raise FileExistsError(f"{p} exists; pass --force to overwrite")
        return p

    def existing(self, stem: str, ext: str) -> Path:
        return self.out / f"{stem}-{self.hash}.{ext}"

    def _record(self, path: Path) -> None:
        manifest = self.out / f"manifest-{self.hash}.csv"
        rows = {}
        if manifest.exists():
            for line in manifest.read_text().splitlines()[1:]:
                name, crc = line.rsplit(",", 1)
                rows[name] = crc
        targets = sorted(path.rglob("*")) if path.is_dir() else [path]
        for t in targets:
            if t.is_file():
                rows[str(t.relative_to(self.out))] = f"{zlib.crc32(t.read_bytes()):08x}"
        manifest.write_text("file,crc32\n" + "".join(f"{k},{v}\n" for k, v in sorted(rows.items())))

    def done(self, *paths: Path) -> None:
        for p in paths:
            self._record(Path(p))
            if Path(str(p) + ".json").exists():
                self._record(Path(str(p) + ".json"))
            log.info("wrote %s", p)


# ------------------------------------------------------------------ data access
def _datasets(cfg: ExperimentConfig, split: str) -> Dataset:
    kind = cfg.get("data", "dataset")
    if kind == "mnist":
        img = cfg.get("data", f"{split}_images")
        lab = cfg.get("data", f"{split}_labels")
        if img and lab:
            return load_idx(img, lab, name=f"mnist-{split}")
        return load_mnist(cfg.get("data", "root"), split)
    if kind == "cifar10":
        paths = [p.strip() for p in cfg.get("data", f"cifar_{split}").split(",") if p.strip()]
        if not paths:
            root = Path(cfg.get("data", "root"))
            paths = ([root / f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train"
                     else [root / "test_batch.bin"])
        return load_cifar10(paths, name=f"cifar10-{split}")
    raise ConfigError(f"unknown dataset {kind!r}")


def _model(run: Run, path):
    if path:
        return load_model(path)
    own = run.existing("model", "wnam")
    if not own.exists():
        raise IoError(f"{own} not found; train with the same config first or pass --model")
    return load_model(own)


def _stream(run: Run, shape, n=None) -> noise.StimulusStream:
    cfg = run.cfg
    src = cfg.get("noise", "source")
    count = cfg.get("noise", "n") if n is None else n
    seed = cfg.get("noise", "seed")
    if src == "white":
        return noise.StimulusStream("white_uniform", shape, count, seed)
    if src == "gaussian":
        return noise.StimulusStream("white_gaussian", shape, count, seed, cfg.get("noise", "sigma"))
    if src == "gabor":
        sampler = noise.load_sampler(run.existing("sampler", "wngs"))
        return noise.StimulusStream("gabor_pca", shape, count, seed, sampler=sampler)
    raise ConfigError(f"unknown noise source {src!r}")


def _load_maps(run: Run, maps_arg) -> classim.BiasMaps:
    p = Path(maps_arg) if maps_arg else run.existing("maps", "d")
    if p.is_dir():
        p = p / "bias.f32"
    return classim.load_bias_maps(p)


# ------------------------------------------------------------------ subcommands
def cmd_train(run: Run, a) -> None:
    cfg = run.cfg
    train_set = _datasets(cfg, "train")
    test_set = _datasets(cfg, "test")
    net = build_network(cfg.get("model", "architecture_id"), train_set.shape, train_set.num_classes,
                        cfg.get("model", "init_seed"))
    hyper = Hyper(cfg.get("train", "epochs"), cfg.get("train", "batch_size"),
                  cfg.get("train", "learning_rate"), cfg.get("train", "momentum"), cfg.get("train", "seed"))
    paths = (run.path("model", "wnam"), run.path("history", "csv"), run.path("confusion", "csv"),
             run.path("metrics", "json"))
    t0 = time.perf_counter()
    net, hist = train(net, train_set, hyper)
    acc, cm = evaluate(net, test_set)
    save_model(net, paths[0])
    paths[1].write_text(hist.to_csv())
    cm.to_csv(paths[2])
    _write_json(paths[3], {"test_accuracy": acc, "train_accuracy": hist.accuracy[-1] if hist.accuracy else None,
                           "model_hash": model_hash(net), "train_seconds": round(time.perf_counter() - t0, 1)},
                stable=("train_seconds",))
    run.done(*paths)
    print(f"test accuracy {acc:.4f}")


def cmd_gabor_fit(run: Run, a) -> None:
    cfg = run.cfg
    data = _datasets(cfg, "train")
    bank = noise.build_gabor_bank(data.shape[1], data.shape[2], cfg.ints("noise", "scales"))
    sampler = noise.fit_gabor_pca(data, bank, cfg.get("noise", "alpha"), cfg.get("noise", "components"))
    p = run.path("sampler", "wngs")
    j = run.path("gabor", "json")
    noise.save_sampler(sampler, p)
    _write_json(j, {"wavelets": bank.size, "explained_variance": sampler.explained_variance})
    run.done(p, j)
    print("explained variance " + ", ".join(f"{v:.4f}" for v in sampler.explained_variance))


def cmd_probe(run: Run, a) -> None:
    weighting = run.cfg.get("noise", "weighting")
    if weighting not in classim.WEIGHTINGS:
        raise ConfigError(f"[noise] weighting must be one of {', '.join(classim.WEIGHTINGS)}")
    net = _model(run, a.model)
    stream = _stream(run, net.input_shape)
    p = run.path("acc", "i64")
    t0 = time.perf_counter()
    acc = classim.collect(net, stream, threads=run.threads, weighting=weighting)
    rate = stream.count / max(time.perf_counter() - t0, 1e-9)
    classim.save_accumulator(acc, p, {"source": stream.source, "n": stream.count, "seed": stream.seed,
                                      "model_hash": model_hash(net)})
    run.done(p)
    counts = acc.class_counts()
    print(f"{stream.count} stimuli at {rate:.0f}/s; class counts {counts.tolist()}")


def cmd_bias_maps(run: Run, a) -> None:
    acc, meta = classim.load_accumulator(Path(a.acc) if a.acc else run.existing("acc", "i64"))
    maps = classim.bias_maps(acc, weighted=acc.weighting != "hard", metadata=meta)
    d = run.path("maps", "d")
    classim.export_bias_maps(maps, d)
    c, share = maps.dominant_class()
    s = run.path("classcounts", "csv")
    s.write_text("class,count,share\n" + "".join(
        f"{k},{n},{n / max(acc.total, 1):.6f}\n" for k, n in enumerate(maps.counts)))
    run.done(d, s)
    print(f"dominant class {c} holds {share:.3f} of {acc.total} stimuli")


def cmd_template_eval(run: Run, a) -> None:
    test = _datasets(run.cfg, "test")
    kind = a.templates
    if kind == "bias":
        templates = _load_maps(run, a.maps)
    elif kind == "mean":
        templates = classim.mean_image_templates(_datasets(run.cfg, "train"))
    else:
        templates = classim.weight_templates(_model(run, a.model))
    acc, cm = classim.template_eval(templates, test, run.cfg.get("analysis", "template_mode"))
    p = run.path(f"template-{kind}", "csv")
    j = run.path(f"template-{kind}", "json")
    cm.to_csv(p)
    _write_json(j, {"templates": kind, "accuracy": acc, "mode": run.cfg.get("analysis", "template_mode")})
    run.done(p, j)
    print(f"{kind} template accuracy {acc:.4f}")


def _units(run: Run, net) -> list[int]:
    spec = run.cfg.get("analysis", "units")
    layer = run.cfg.get("analysis", "layer")
    if spec == "all":
        s = next(s for s in net.specs if s.name == layer)
        return list(range(s.out))
    return [int(u) for u in spec.split(",")]


def cmd_sta(run: Run, a) -> None:
    net = _model(run, a.model)
    layer = run.cfg.get("analysis", "layer")
    units = _units(run, net)
    res = sta.unit_sta_filters(net, layer, units, run.cfg.get("analysis", "sta_n"), run.cfg.get("noise", "seed"),
                               run.cfg.get("noise", "sigma"))
    size = receptive_fields(net)[layer][0]
    crops = np.stack([r.rf_crop if not r.dead else np.zeros((net.input_shape[0], size, size)) for r in res])
    first_conv = next(s.name for s in net.specs if s.kind == "conv2d")
    rows = ["unit,n_sp,dead,cosine_to_kernel"]
    for u, r in zip(units, res):
        cos = ""
        if layer == first_conv and not r.dead:
            cos = f"{sta.cosine(r.rf_crop, net.weights[layer][u]):.6f}"
        rows.append(f"{u},{r.n_sp:.6g},{int(r.dead)},{cos}")
    raw, sheet, csv = run.path("sta", "f32"), run.path("sta", "pgm"), run.path("sta", "csv")
    write_raw(raw, crops, {"layer": layer, "units": units, "n": run.cfg.get("analysis", "sta_n")})
    write_pgm(sheet, tile(crops.mean(axis=1)))
    csv.write_text("\n".join(rows) + "\n")
    run.done(raw, sheet, csv)
    print(f"{sum(r.dead for r in res)} dead of {len(res)} units")


def cmd_stc(run: Run, a) -> None:
    net = _model(run, a.model)
    layer = run.cfg.get("analysis", "layer")
    unit = _units(run, net)[0]
    n = run.cfg.get("analysis", "sta_n")
    seed, sigma = run.cfg.get("noise", "seed"), run.cfg.get("noise", "sigma")
    r = sta.unit_sta_filters(net, layer, [unit], n, seed, sigma)[0]
    top, left, size = r.window
    c, h, w = net.input_shape
    shape = r.mu.shape

    def response(flat):
        x = np.full((len(flat), c, h, w), 0.5, dtype=np.float32)
        r0, c0 = max(top, 0), max(left, 0)
        x[:, :, r0:r0 + shape[1], c0:c0 + shape[2]] = flat.reshape((len(flat),) + shape)
        act = net.activations(x, layer)
        pos = act[:, unit] if act.ndim == 2 else act[:, unit, act.shape[2] // 2, act.shape[3] // 2]
        return np.maximum(pos, 0.0)

    src = np.stack([dequantize(quantize(RandomStream(seed, i).generator().normal(0.5, sigma, shape)))
                    for i in range(n)])
    res = sta.stc(src.reshape(n, -1), response, r.mu)
    csv, raw = run.path("stc", "csv"), run.path("stc", "f32")
    csv.write_text("rank,eigenvalue\n" + "".join(f"{i},{v:.8g}\n" for i, v in enumerate(res.eigenvalues)))
    k = min(16, res.eigenvectors.shape[1])
    write_raw(raw, res.eigenvectors[:, :k].T.reshape((k,) + shape), {"layer": layer, "unit": unit})
    run.done(csv, raw)
    print(f"top eigenvalues {np.round(res.eigenvalues[:4], 6).tolist()}")


def cmd_attack(run: Run, a) -> None:
    net = _model(run, a.model)
    if a.templates == "mean":
        maps = classim.mean_image_templates(_datasets(run.cfg, "train"))
    else:
        maps = _load_maps(run, a.maps)
    target = run.cfg.get("analysis", "target")
    gammas = run.cfg.floats("analysis", "gammas")
    if a.inputs == "noise":
        inputs = _stream(run, net.input_shape, a.n or 10_000)
    else:
        inputs = _datasets(run.cfg, "test")
    rep = adversarial.bias_attack(net, maps, inputs, None if target < 0 else target, gammas, n=a.n)
    p = run.path(f"attack-{a.templates}-{rep.source}", "csv")
    rep.to_csv(p)
    run.done(p)
    print("rates " + " ".join(f"{g:.1f}:{r:.3f}" for g, r in zip(rep.gammas, rep.rates)))


def _patch(cfg) -> adversarial.PatchSpec:
    return adversarial.PatchSpec(cfg.get("analysis", "patch"), cfg.get("analysis", "corner"),
                                 cfg.get("analysis", "source_class"), cfg.get("analysis", "target_class"),
                                 cfg.get("analysis", "fraction"))


def cmd_poison(run: Run, a) -> None:
    data = _datasets(run.cfg, "train")
    patch = _patch(run.cfg)
    poisoned = adversarial.poison(data, patch, run.cfg.get("analysis", "poison_seed"))
    ip, lp = run.path("poisoned-images", "idx"), run.path("poisoned-labels", "idx")
    write_idx(poisoned, ip, lp)
    run.done(ip, lp)
    n = int((poisoned.labels != data.labels).sum())
    print(f"stamped and relabeled {n} images")


def _reference(cfg):
    """Principal subspace of the clean training images, or None for the high-pass statistic."""
    v = cfg.get("analysis", "reference_variance")
    if v <= 0:
        return None
    return adversarial.data_subspace(_datasets(cfg, "train"), v)


def cmd_detect(run: Run, a) -> None:
    maps = _load_maps(run, a.maps)
    rep = adversarial.detect_patch(maps, _reference(run.cfg), window=run.cfg.get("analysis", "window"),
                                   threshold_z=run.cfg.get("analysis", "threshold_z"),
                                   min_count=run.cfg.get("analysis", "min_class_stimuli"))
    p = run.path("detect", "csv")
    d = run.path("detect", "d")
    rep.to_csv(p)
    rep.write_heatmaps(d)
    run.done(p, d)
    r, c, k = rep.location
    print(f"flagged={rep.flagged} max_z={rep.max_z.max():.2f} at row {r} col {c} class {k}")


def cmd_gradients(run: Run, a) -> None:
    net = _model(run, a.model)
    data = _datasets(run.cfg, "train")
    if a.n:
        data = data.subset(np.arange(min(a.n, len(data))))
    grads, rep = adversarial.gradient_baseline(net, data, window=run.cfg.get("analysis", "window"),
                                               threshold_z=run.cfg.get("analysis", "threshold_z"),
                                               reference=_reference(run.cfg))
    raw, csv = run.path("gradients", "f32"), run.path("gradients", "csv")
    write_raw(raw, grads, {"n": len(data)})
    rep.to_csv(csv)
    run.done(raw, csv)
    print(f"flagged={rep.flagged} max_z={rep.max_z.max():.2f}")


def cmd_microstim(run: Run, a) -> None:
    cfg = run.cfg
    net = _model(run, a.model)
    test = _datasets(cfg, "test")
    layer = cfg.get("analysis", "layer")
    k = cfg.get("analysis", "k")
    lam = cfg.get("analysis", "lam")
    lam = None if lam < 0 else lam
    mode = cfg.get("analysis", "stim_mode")
    src = {"white": "white_uniform", "gaussian": "white_gaussian"}.get(cfg.get("noise", "source"))
    if src is None:
        raise ConfigError("microstim supports white or gaussian noise")
    rows = ["gamma,class,accuracy,k,layer"]
    for kk in (0.0, k, -k):
        stim = None if kk == 0 else StimulationConfig(layer, kk, lam, mode)
        curve = microstim.psychometric(net, test, src, cfg.floats("analysis", "gammas"), stim,
                                       cfg.get("analysis", "n_trials"), cfg.get("noise", "seed"),
                                       sigma=cfg.get("noise", "sigma") if src == "white_gaussian" else None)
        for c_i, c in enumerate(curve.classes):
            for g_i, g in enumerate(curve.gammas):
                rows.append(f"{g:.4f},{c},{curve.accuracy[c_i, g_i]:.6f},{kk},{layer}")
    p = run.path("microstim", "csv")
    p.write_text("\n".join(rows) + "\n")
    run.done(p)
    print(f"wrote {len(rows) - 1} curve points")


def cmd_inject(run: Run, a) -> None:
    net = _model(run, a.model)
    layer = run.cfg.get("analysis", "layer")
    stream = _stream(run, net.input_shape, a.n or 10_000)
    means = sta.mean_layer_activation(net, stream, [layer])[layer]
    test = _datasets(run.cfg, "test")
    sweep = microstim.injection_sweep(net, means, test, layer, run.cfg.floats("analysis", "gammas"),
                                      n=a.images)
    p = run.path("inject", "csv")
    sweep.to_csv(p)
    run.done(p)
    print("mean ratio per gamma " + " ".join(f"{v:.3f}" for v in sweep.ratio.mean(axis=0)))


def cmd_report(run_dir: Path, force: bool) -> None:
    from .report import build_report

    summary, index = build_report(run_dir)
    h = index["hash"]
    s = run_dir / f"summary-{h}.txt"
    i = run_dir / f"index-{h}.csv"
    if (s.exists() or i.exists()) and not force:
        raise FileExistsError(f"{s} exists; pass --force to overwrite")
    s.write_text(summary)
    i.write_text(index["csv"])
    print(summary, end="")


COMMANDS = {
    "train": cmd_train, "probe": cmd_probe, "bias-maps": cmd_bias_maps, "template-eval": cmd_template_eval,
    "sta": cmd_sta, "stc": cmd_stc, "attack": cmd_attack, "poison": cmd_poison, "detect": cmd_detect,
    "gradients": cmd_gradients, "microstim": cmd_microstim, "inject": cmd_inject, "gabor-fit": cmd_gabor_fit,
}


def _write_json(path: Path, obj: dict, stable=()) -> None:
    # timing fields vary run to run; keep them out of the byte-identical artifact
    clean = {k: v for k, v in obj.items() if k not in stable}
    path.write_text(json.dumps(clean, sort_keys=True, indent=1) + "\n")
    for k in stable:
        log.info("%s: %s", k, obj[k])


# ---------------------------------------------------------------------- parser
OVERRIDES = {
    "arch": ("model", "architecture_id"), "epochs": ("train", "epochs"), "lr": ("train", "learning_rate"),
    "batch_size": ("train", "batch_size"), "train_seed": ("train", "seed"), "init_seed": ("model", "init_seed"),
    "noise": ("noise", "source"), "weighting": ("noise", "weighting"), "stimuli": ("noise", "n"), "seed": ("noise", "seed"), "sigma": ("noise", "sigma"),
    "data_root": ("data", "root"), "dataset": ("data", "dataset"), "layer": ("analysis", "layer"),
    "units": ("analysis", "units"), "sta_n": ("analysis", "sta_n"), "gammas": ("analysis", "gammas"),
    "k": ("analysis", "k"), "stim_mode": ("analysis", "stim_mode"), "trials": ("analysis", "n_trials"),
    "target": ("analysis", "target"), "threshold_z": ("analysis", "threshold_z"),
    "reference_variance": ("analysis", "reference_variance"), "patch": ("analysis", "patch"),
    "corner": ("analysis", "corner"), "source_class": ("analysis", "source_class"),
    "target_class": ("analysis", "target_class"), "fraction": ("analysis", "fraction"),
    "poison_seed": ("analysis", "poison_seed"), "mode": ("analysis", "template_mode"),
    "train_images": ("data", "train_images"), "train_labels": ("data", "train_labels"),
}


HELP = {
    "train": "train a network on the configured dataset",
    "probe": "classify noise stimuli and accumulate them per decision",
    "bias-maps": "turn an accumulator into per-class bias maps (raw + PGM)",
    "template-eval": "classify test images by matching against templates",
    "sta": "spike-triggered average of units",
    "stc": "spike-triggered covariance of units",
    "attack": "fooling rate of bias-map (or mean-image) blending over gamma",
    "poison": "write a patch-poisoned copy of the training set",
    "detect": "flag localized anomalies in bias maps",
    "gradients": "mean input-gradient maps and the same anomaly statistic",
    "microstim": "psychometric curves with and without layer stimulation",
    "inject": "misclassification when a layer is blended with class-mean activity",
    "gabor-fit": "fit the Gabor-PCA structured-noise sampler",
    "report": "summarise and verify the artifacts of a run directory",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noisebench", description="White-noise analysis of classifiers.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file")
    common.add_argument("--out", help="output directory (overrides [output] dir)")
    common.add_argument("--threads", type=int, help="worker threads (default: $NOISEBENCH_THREADS or cores)")
    common.add_argument("--force", action="store_true", help="overwrite existing artifacts")
    common.add_argument("-v", "--verbose", action="store_true")
    common.add_argument("--data-root", dest="data_root")
    common.add_argument("--dataset", choices=("mnist", "cifar10"))
    common.add_argument("--model", help="model file (default: the run's own model)")
    p = {name: sub.add_parser(name, parents=[common], help=HELP[name]) for name in SUBCOMMANDS}
    p["train"].add_argument("--arch")
    p["train"].add_argument("--epochs", type=int)
    p["train"].add_argument("--lr", type=float)
    p["train"].add_argument("--batch-size", dest="batch_size", type=int)
    p["train"].add_argument("--train-seed", dest="train_seed", type=int)
    p["train"].add_argument("--init-seed", dest="init_seed", type=int)
    p["train"].add_argument("--train-images", dest="train_images")
    p["train"].add_argument("--train-labels", dest="train_labels")
    for name in ("probe", "attack", "inject", "sta", "stc", "microstim"):
        p[name].add_argument("--noise", choices=("white", "gaussian", "gabor"))
        p[name].add_argument("--seed", type=int)
        p[name].add_argument("--sigma", type=float)
    p["probe"].add_argument("--n", dest="stimuli", type=int)
    p["probe"].add_argument("--weighting", choices=("hard", "confidence", "soft"),
                            help="hard decisions, top-class confidence, or full softmax weights")
    p["bias-maps"].add_argument("--acc", help="accumulator file (default: the run's own)")
    p["template-eval"].add_argument("--templates", choices=("bias", "mean", "weights"), default="bias")
    p["template-eval"].add_argument("--maps")
    p["template-eval"].add_argument("--mode", choices=("raw", "centered", "cosine"))
    for name in ("sta", "stc", "microstim", "inject"):
        p[name].add_argument("--layer")
    for name in ("sta", "stc"):
        p[name].add_argument("--units")
        p[name].add_argument("--n", dest="sta_n", type=int)
    for name in ("attack", "microstim", "inject"):
        p[name].add_argument("--gammas")
    p["attack"].add_argument("--maps")
    p["attack"].add_argument("--templates", choices=("bias", "mean"), default="bias")
    p["attack"].add_argument("--inputs", choices=("noise", "test"), default="noise")
    p["attack"].add_argument("--target", type=int)
    p["attack"].add_argument("--n", type=int)
    p["poison"].add_argument("--patch", choices=sorted(adversarial.MASKS))
    p["poison"].add_argument("--corner", choices=adversarial.CORNERS)
    p["poison"].add_argument("--source-class", dest="source_class", type=int)
    p["poison"].add_argument("--target-class", dest="target_class", type=int)
    p["poison"].add_argument("--fraction", type=float)
    p["poison"].add_argument("--poison-seed", dest="poison_seed", type=int)
    for name in ("detect", "gradients"):
        p[name].add_argument("--threshold-z", dest="threshold_z", type=float)
        p[name].add_argument("--reference-variance", dest="reference_variance", type=float,
                             help="variance share of the clean-data subspace to remove; 0 uses a high-pass")
    p["detect"].add_argument("--maps")
    p["gradients"].add_argument("--n", type=int)
    p["microstim"].add_argument("--k", type=float)
    p["microstim"].add_argument("--stim-mode", dest="stim_mode", choices=("batch", "per_stimulus"))
    p["microstim"].add_argument("--trials", type=int)
    p["inject"].add_argument("--n", type=int, help="noise stimuli for the class means")
    p["inject"].add_argument("--images", type=int, help="test images to sweep")
    p["report"].add_argument("--run-dir", dest="run_dir", required=True)
    return parser


def _threads(arg) -> int:
    if arg is not None:
        if arg < 1:
            raise UsageError("--threads must be positive")
        return arg
    env = os.environ.get("NOISEBENCH_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise UsageError(f"NOISEBENCH_THREADS={env!r} is not an integer") from exc
    return os.cpu_count() or 1


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            cmd_report(Path(args.run_dir), args.force)
            return 0
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.defaults()
        values = vars(args)
        cfg = cfg.override({OVERRIDES[k]: v for k, v in values.items() if k in OVERRIDES})
        out = Path(args.out) if args.out else Path(cfg.get("output", "dir"))
        run = Run(cfg, out, args.force, _threads(args.threads))
        COMMANDS[args.command](run, args)
        return 0
    except (UsageError, ConfigError) as exc:
        print(f"noisebench: usage error: {exc}", file=sys.stderr)
        return 2
    except (NoiseBenchError, OSError, IntegrityError) as exc:
        print(f"noisebench: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
