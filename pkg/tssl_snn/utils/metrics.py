from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
import torch
from sklearn.metrics import accuracy_score

__all__ = ["RATE_BANDS", "BAND_LABELS", "accuracy", "SparsityReport", "SparsityCounter"]

# upper edges of the firing-rate bands after the silent band
RATE_BANDS = (0.05, 0.10, 0.20, 0.50, 1.00)
BAND_LABELS = ("0", "(0,5%]", "(5,10%]", "(10,20%]", "(20,50%]", "(50,100%]")


def accuracy(labels, predictions) -> float:
    labels = np.asarray(torch.as_tensor(labels).cpu())
    predictions = np.asarray(torch.as_tensor(predictions).cpu())
    if labels.size == 0:
        return float("nan")
    return float(accuracy_score(y_true=labels, y_pred=predictions))


def _band_index(counts: np.ndarray, n_steps: int) -> np.ndarray:
    rate = counts / n_steps
    band = np.searchsorted(np.asarray(RATE_BANDS), rate, side="left") + 1
    return np.where(counts == 0, 0, band)


@dataclass
class SparsityReport:
    """
    Distribution of neurons by spike count over the window.

    ``histogram[layer][c]`` is the fraction of that layer's neurons that fired
    exactly ``c`` times, averaged over samples; ``"overall"`` pools every
    spiking layer. ``bands`` holds the same for firing-rate bands.
    """

    n_steps: int
    n_samples: int
    histogram: dict = field(default_factory=dict)
    bands: dict = field(default_factory=dict)

    def silent_fraction(self, layer: str = "overall") -> float:
        return float(self.histogram[layer][0])

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for layer, hist in self.histogram.items():
            for count, frac in enumerate(hist):
                rows.append({"layer": layer, "spikes": count, "fraction": float(frac)})
        return pd.DataFrame(rows)

    def bands_frame(self) -> pd.DataFrame:
        rows = []
        for layer, fracs in self.bands.items():
            for label, frac in zip(BAND_LABELS, fracs):
                rows.append({"layer": layer, "band": label, "fraction": float(frac)})
        return pd.DataFrame(rows)


class SparsityCounter:
    """Accumulates per-sample spike-count histograms."""

    def __init__(self, n_steps: int):
        self.n_steps = n_steps
        self.n_samples = 0
        self._hist: dict = {}
        self._bands: dict = {}

    def _add(self, key: str, counts: np.ndarray):
        # counts: [batch, n_neurons]
        n = counts.shape[1]
        hist = np.stack([np.bincount(c, minlength=self.n_steps + 1) for c in counts]) / n
        bands = np.stack(
            [np.bincount(b, minlength=len(BAND_LABELS)) for b in _band_index(counts, self.n_steps)]
        ) / n
        self._hist[key] = self._hist.get(key, 0.0) + hist.sum(axis=0)
        self._bands[key] = self._bands.get(key, 0.0) + bands.sum(axis=0)

    def update(self, layer_counts: list, names: Optional[list] = None):
        """
        Add one batch.

        `layer_counts` holds, per spiking layer, spike counts ``[batch, *shape]``.
        """
        names = names or [f"layer {i}" for i in range(len(layer_counts))]
        flat = [
            np.asarray(torch.as_tensor(c).reshape(c.shape[0], -1), dtype=np.int64)
            for c in layer_counts
        ]
        for name, counts in zip(names, flat):
            self._add(name, counts)
        self._add("overall", np.concatenate(flat, axis=1))
        self.n_samples += flat[0].shape[0]

    def report(self) -> SparsityReport:
        return SparsityReport(
            n_steps=self.n_steps,
            n_samples=self.n_samples,
            histogram={k: v / self.n_samples for k, v in self._hist.items()},
            bands={k: v / self.n_samples for k, v in self._bands.items()},
        )
