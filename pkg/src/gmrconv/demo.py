"""Train the ring and dense twins on upright synthetic data, test on rotated copies."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .io import save_dataset
from .net import (
    SyntheticDatasetSpec,
    TrainConfig,
    build_twin_networks,
    conv_parameter_counts,
    evaluate,
    make_dataset,
    save_network,
    train,
)

log = logging.getLogger(__name__)

# the 30 degree grid plus 45, where the dense twin is checked
DEMO_ANGLES = tuple(float(a) for a in sorted({*range(0, 360, 30), 45}))
WINDOW = 5
# pass thresholds for the rotated-test comparison
GMR_TOLERANCE = 0.05
DENSE_DROP = 0.15
MIN_ACCURACY = 0.90


@dataclass(frozen=True)
class DemoConfig:
    seed: int = 0
    base_channels: int = 8
    gmr_lr: float = 0.015
    gmr_epochs: int = 20
    dense_lr: float = 0.02
    dense_epochs: int = 15
    batch_size: int = 32
    momentum: float = 0.9
    angles: tuple = DEMO_ANGLES
    dataset: SyntheticDatasetSpec = SyntheticDatasetSpec()

    @classmethod
    def from_dict(cls, d: dict) -> "DemoConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown demo settings {sorted(unknown)}")
        if "dataset" in d:
            d["dataset"] = SyntheticDatasetSpec(**d["dataset"])
        if "angles" in d:
            d["angles"] = tuple(float(a) for a in d["angles"])
        cfg = cls(**d)
        if cfg.dataset.seed != cfg.seed and "dataset" not in d:
            cfg = replace(cfg, dataset=replace(cfg.dataset, seed=cfg.seed))
        return cfg

    def train_config(self, which: str) -> TrainConfig:
        lr, epochs = (self.gmr_lr, self.gmr_epochs) if which == "gmr" else (self.dense_lr, self.dense_epochs)
        return TrainConfig(epochs=epochs, lr=lr, momentum=self.momentum,
                           batch_size=self.batch_size, seed=self.seed)


def window_means(losses, window: int = WINDOW) -> list[float]:
    """Means of consecutive non-overlapping ``window``-epoch blocks; a short tail block is kept."""
    return [float(np.mean(losses[i:i + window])) for i in range(0, len(losses), window)]


def non_increasing(values) -> bool:
    return all(b <= a for a, b in zip(values, values[1:]))


def run_demo(cfg: DemoConfig = DemoConfig(), out_dir: Path | None = None,
             stable: bool = False) -> dict:
    """Train both twins and return a JSON-ready metrics dict."""
    t0 = time.perf_counter()
    X, y = make_dataset(cfg.dataset, "train")
    Xt, yt = make_dataset(cfg.dataset, "test")
    gmr_net, dense_net = build_twin_networks(cfg.base_channels, seed=cfg.seed,
                                             classes=cfg.dataset.classes)
    metrics = {"version": 1, "kind": "train_demo", "config": _config_dict(cfg), "twins": {}}
    trained = {}
    for which, net in (("gmr", gmr_net), ("dense", dense_net)):
        log.info("training %s twin", which)
        res = train(net, X, y, cfg.train_config(which))
        acc = evaluate(res.net, Xt, yt, cfg.angles)
        trained[which] = res.net
        windows = window_means(res.epoch_losses)
        metrics["twins"][which] = {
            "parameters": res.net.parameter_count(),
            "conv_parameters": conv_parameter_counts(res.net),
            "epoch_losses": res.epoch_losses,
            "window_losses": windows,
            "loss_windows_non_increasing": non_increasing(windows),
            "final_train_accuracy": res.epoch_accuracy[-1],
            "accuracy": {f"{a:g}": v for a, v in acc.items()},
        }
    metrics["seconds"] = 0.0 if stable else round(time.perf_counter() - t0, 3)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_dataset(out_dir / "train.gmrdata", X, y, asdict(cfg.dataset))
        save_dataset(out_dir / "test.gmrdata", Xt, yt, asdict(cfg.dataset))
        for which, net in trained.items():
            save_network(out_dir / f"{which}_twin.gmrnet", net)
    return metrics


def _config_dict(cfg: DemoConfig) -> dict:
    d = asdict(cfg)
    d["angles"] = list(cfg.angles)
    return d


def demo_passes(metrics: dict) -> tuple[bool, list[str]]:
    """Check the rotated-test comparison; returns (ok, reasons for failure)."""
    reasons = []
    g = metrics["twins"]["gmr"]["accuracy"]
    d = metrics["twins"]["dense"]["accuracy"]
    for name, acc in (("gmr", g), ("dense", d)):
        if acc["0"] < MIN_ACCURACY:
            reasons.append(f"{name} acc(0) = {acc['0']:.4f} < {MIN_ACCURACY}")
    worst = min(g.values())
    if worst < g["0"] - GMR_TOLERANCE:
        reasons.append(f"gmr min acc {worst:.4f} < acc(0) - {GMR_TOLERANCE} = {g['0'] - GMR_TOLERANCE:.4f}")
    if "45" not in d:
        reasons.append("dense twin was not evaluated at 45 degrees")
    elif d["45"] > d["0"] - DENSE_DROP:
        reasons.append(f"dense acc(45) = {d['45']:.4f} > acc(0) - {DENSE_DROP} = {d['0'] - DENSE_DROP:.4f}")
    return not reasons, reasons


def main():  # pragma: no cover - convenience entry
    logging.basicConfig(level=logging.INFO)
    m = run_demo()
    print(json.dumps(m, indent=2))
    ok, why = demo_passes(m)
    print("PASS" if ok else "FAIL: " + "; ".join(why))


if __name__ == "__main__":  # pragma: no cover
    main()
