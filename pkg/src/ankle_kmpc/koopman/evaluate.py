"""Held-out prediction accuracy, split by gait phase."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..plant import STANCE, SWING, TrajectoryDataset, plant_coordinates
from .model import KoopmanModel, rollout_predict

# errors are reported per plantarflexion (stance) and dorsiflexion (swing) segment
SEGMENTS = {"PF": STANCE, "DF": SWING}
REPORT_HEADER = ("dictionary", "phase", "horizon", "rmse_deg", "sd_deg")


@dataclass
class PredictionReport:
    dictionary: str
    embedding: int
    horizon: int
    rmse: dict                       # segment -> angle RMSE (deg); "all" pooled
    sd: dict                         # segment -> SD of per-window RMSE (deg)
    velocity_rmse: float
    n_windows: int
    window_rmse: list = field(default_factory=list, repr=False)

    def rows(self):
        name = self.dictionary if self.embedding == 1 else f"{self.dictionary}-L{self.embedding}"
        return [(name, seg, self.horizon, self.rmse[seg], self.sd[seg])
                for seg in ("PF", "DF", "all")]


def _windows(n, horizon, stride, first=0):
    """Window starts ``first, first + stride, ...`` with ``start + horizon <= n - 1``.

    A single truncated window is returned when none fits.
    """
    if n - first < 2:
        return []
    if horizon > n - 1 - first:
        return [(first, n - 1 - first)]
    return [(s, horizon) for s in range(first, n - 1 - horizon + 1, stride)]


def evaluate_prediction(model: KoopmanModel, dataset: TrajectoryDataset, horizon,
                        stride=None, warmup=0) -> PredictionReport:
    """Open-loop rollouts over windows of ``horizon`` steps on every test episode.

    Each window starts from the measured state (with measured history for
    embeddings) and is driven by the logged inputs and phase flags. Errors are
    attributed to the phase of the predicted sample. The first ``warmup``
    samples of each episode only serve as history, which lets models with
    different embedding lengths be scored on identical windows.
    """
    horizon = int(horizon)
    stride = int(stride or horizon)
    L = model.dictionary.embedding
    sq = {STANCE: [], SWING: []}
    vel_sq = []
    per_window = {STANCE: [], SWING: []}
    n_windows = 0
    for ep in dataset.episodes:
        Z = plant_coordinates(ep.states)
        for start, H in _windows(len(ep), horizon, stride, int(warmup)):
            lo = max(0, start - L + 1)
            pred = rollout_predict(model, Z[lo:start + 1], ep.u[lo:start],
                                   ep.u[start:start + H], ep.sigma[start:start + H], H)
            actual = Z[start + 1:start + H + 1]
            err = pred[:, 0] - actual[:, 0]
            sig = ep.sigma[start + 1:start + H + 1]
            vel_sq.append((pred[:, 1] - actual[:, 1]) ** 2)
            n_windows += 1
            for s in (STANCE, SWING):
                e = err[sig == s]
                if e.size:
                    sq[s].append(e ** 2)
                    per_window[s].append(np.sqrt(np.mean(e ** 2)))
    rmse, sd = {}, {}
    for seg, s in SEGMENTS.items():
        rmse[seg] = float(np.sqrt(np.mean(np.concatenate(sq[s])))) if sq[s] else float("nan")
        sd[seg] = float(np.std(per_window[s])) if per_window[s] else float("nan")
    both = sq[STANCE] + sq[SWING]
    rmse["all"] = float(np.sqrt(np.mean(np.concatenate(both)))) if both else float("nan")
    sd["all"] = float(np.std(per_window[STANCE] + per_window[SWING])) if both else float("nan")
    vel = float(np.sqrt(np.mean(np.concatenate(vel_sq)))) if vel_sq else float("nan")
    return PredictionReport(model.dictionary.name, L, horizon, rmse, sd, vel, n_windows,
                            per_window[STANCE] + per_window[SWING])


def write_report_csv(reports, path):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(REPORT_HEADER) + "\n")
        for rep in reports:
            for row in rep.rows():
                fh.write(f"{row[0]},{row[1]},{row[2]},{row[3]:.6f},{row[4]:.6f}\n")
