"""Run-directory summaries with integrity checks."""

from __future__ import annotations

import csv
import io
import json
import re
import zlib
from pathlib import Path

from . import container
from .errors import IntegrityError

_HASHED = re.compile(r"^(?P<stem>.+)-(?P<hash>[0-9a-f]{12})(?P<ext>\.[A-Za-z0-9]+)?$")


def _hash_of(name: str) -> tuple[str, str] | None:
    m = _HASHED.match(name)
    return (m["stem"], m["hash"]) if m else None


def verify(run_dir) -> tuple[str, dict[str, str]]:
    """Check that every artifact shares one config hash and matches its recorded CRC32.

    Returns the hash and the manifest mapping.
    """
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise IntegrityError(f"{run_dir} is not a directory")
    entries = sorted(run_dir.iterdir())
    if not entries:
        raise IntegrityError(f"{run_dir} holds no artifacts")
    hashes = set()
    for p in entries:
        parsed = _hash_of(p.name)
        if parsed is None and p.name.endswith(".json"):
            parsed = _hash_of(p.name[:-5])
        if parsed is None:
            raise IntegrityError(f"{p.name} does not carry a config hash")
        hashes.add(parsed[1])
    if len(hashes) != 1:
        raise IntegrityError(f"artifacts disagree on config hash: {sorted(hashes)}")
    h = hashes.pop()
    manifest_path = run_dir / f"manifest-{h}.csv"
    if not manifest_path.exists():
        raise IntegrityError(f"missing {manifest_path.name}")
    manifest = {}
    for row in list(csv.reader(io.StringIO(manifest_path.read_text())))[1:]:
        manifest[row[0]] = row[1]
    for name, crc in manifest.items():
        p = run_dir / name
        if not p.exists():
            raise IntegrityError(f"{name} is listed in the manifest but missing")
        if f"{zlib.crc32(p.read_bytes()):08x}" != crc:
            raise IntegrityError(f"{name} fails its CRC32 check")
        if p.suffix in (".wnam", ".wngs") and not container.crc_ok(p):
            raise IntegrityError(f"{name} fails its internal CRC32 check")
    return h, manifest


def _read_json(p: Path) -> dict:
    return json.loads(p.read_text()) if p.exists() else {}


def build_report(run_dir) -> tuple[str, dict]:
    """Human-readable summary and a CSV index of the artifacts of one run."""
    run_dir = Path(run_dir)
    h, manifest = verify(run_dir)
    lines = [f"run {run_dir} (config {h})", ""]
    metrics = _read_json(run_dir / f"metrics-{h}.json")
    if metrics:
        lines.append(f"test accuracy            {metrics['test_accuracy']:.4f}")
        if metrics.get("train_accuracy") is not None:
            lines.append(f"train accuracy           {metrics['train_accuracy']:.4f}")
    gabor = _read_json(run_dir / f"gabor-{h}.json")
    if gabor:
        lines.append("gabor explained variance " + ", ".join(f"{v:.4f}" for v in gabor["explained_variance"]))
    for kind in ("bias", "mean", "weights"):
        t = _read_json(run_dir / f"template-{kind}-{h}.json")
        if t:
            lines.append(f"template accuracy ({kind:7s}) {t['accuracy']:.4f}")
    counts = run_dir / f"classcounts-{h}.csv"
    if counts.exists():
        rows = list(csv.DictReader(io.StringIO(counts.read_text())))
        top = max(rows, key=lambda r: int(r["count"]))
        lines.append(f"dominant noise class      {top['class']} ({float(top['share']):.3f})")
    for name in ("detect", "gradients"):
        p = run_dir / f"{name}-{h}.csv"
        if p.exists():
            last = list(csv.DictReader(io.StringIO(p.read_text())))[-1]
            lines.append(f"{name:9s} flagged        {bool(int(last['flagged']))} (max z {float(last['max_z']):.2f}, "
                         f"row {last['row']}, col {last['col']})")
    for p in sorted(run_dir.glob(f"attack-*-{h}.csv")):
        rows = [r for r in csv.DictReader(io.StringIO(p.read_text())) if r["target"] == "all"]
        lines.append(f"{p.stem[:-13]:24s} " + " ".join(f"{float(r['gamma']):.1f}:{float(r['rate']):.3f}"
                                                        for r in rows))
    micro = run_dir / f"microstim-{h}.csv"
    if micro.exists():
        table: dict = {}
        for r in csv.DictReader(io.StringIO(micro.read_text())):
            table.setdefault(float(r["k"]), {}).setdefault(float(r["gamma"]), []).append(float(r["accuracy"]))
        lines.append("psychometric mean accuracy by k:")
        for k, by_g in sorted(table.items()):
            lines.append(f"  k={k:+g}  " + " ".join(f"{g:.1f}:{sum(v) / len(v):.3f}" for g, v in sorted(by_g.items())))
    index = "file,crc32\n" + "".join(f"{k},{v}\n" for k, v in sorted(manifest.items()))
    return "\n".join(lines) + "\n", {"hash": h, "csv": index}
