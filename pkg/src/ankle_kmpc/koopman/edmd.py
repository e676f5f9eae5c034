"""Snapshot assembly and the EDMD least-squares fit."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, FittingError
from ..plant import PHASE_NAMES, TrajectoryDataset, plant_coordinates
from .dictionary import ObservableDictionary


class RankDeficiencyWarning(RuntimeWarning):
    pass


DEFAULT_RCOND = 1e-10


@dataclass
class SnapshotMatrices:
    """Lifted pairs ``(D_k, D_k1)``, each ``P x M``, for one phase.

    ``pair_index`` lists ``(episode, k)`` for every column; by construction
    ``sigma_k == sigma_{k+1} == phase`` and both samples share the episode.
    """

    D_k: np.ndarray
    D_k1: np.ndarray
    phase: int
    pair_index: np.ndarray = field(repr=False)

    @property
    def M(self):
        return self.D_k.shape[1]

    @property
    def P(self):
        return self.D_k.shape[0]


def lifted_episode(dataset_episode, dictionary: ObservableDictionary):
    Z = plant_coordinates(dataset_episode.states)
    return dictionary.lift_trajectory(Z, dataset_episode.u)


def build_snapshots(dataset: TrajectoryDataset, dictionary: ObservableDictionary, phase,
                    sample_rate=None) -> SnapshotMatrices:
    """Collect consecutive same-phase, same-episode sample pairs for ``phase``."""
    if sample_rate is not None and abs(sample_rate - dataset.sample_rate) > 1e-9:
        raise DataError(f"dataset is sampled at {dataset.sample_rate} Hz, model expects {sample_rate} Hz")
    cols_k, cols_k1, where = [], [], []
    for i, ep in enumerate(dataset.episodes):
        if len(ep) < 2:
            continue
        sig = np.asarray(ep.sigma)
        ok = np.flatnonzero((sig[:-1] == phase) & (sig[1:] == phase))
        if ok.size == 0:
            continue
        Xe, Ue = lifted_episode(ep, dictionary)
        D = np.hstack([Xe, Ue])
        cols_k.append(D[ok])
        cols_k1.append(D[ok + 1])
        where.append(np.column_stack([np.full(ok.size, i), ok]))
    if not cols_k:
        raise FittingError(f"no data for phase {PHASE_NAMES.get(phase, phase)}")
    return SnapshotMatrices(np.vstack(cols_k).T, np.vstack(cols_k1).T, phase, np.vstack(where))


@dataclass
class FitDiagnostics:
    residual: float
    condition_number: float
    rank: int
    M: int
    ridge: float

    def to_dict(self):
        return {"residual": self.residual, "condition_number": self.condition_number,
                "rank": self.rank, "M": self.M, "ridge": self.ridge}


def pinv_svd(G, rcond=DEFAULT_RCOND):
    """Moore-Penrose inverse of a symmetric PSD matrix via SVD; returns ``(G+, rank)``."""
    U, s, Vt = np.linalg.svd(G)
    if s.size == 0 or s[0] == 0:
        return np.zeros_like(G.T), 0
    keep = s > rcond * s[0]
    inv = (Vt[keep].T / s[keep]) @ U[:, keep].T
    return inv, int(keep.sum())


def fit_edmd(snap: SnapshotMatrices, ridge=0.0, rcond=DEFAULT_RCOND):
    """Least-squares Koopman approximation ``K = F (G + ridge I)^+``.

    ``F = D_k1 D_k^T / M`` and ``G = D_k D_k^T / M``. Returns the full
    ``P x P`` operator and its :class:`FitDiagnostics`.
    """
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    M = snap.M
    if M == 0:
        raise FittingError(f"no data for phase {PHASE_NAMES.get(snap.phase, snap.phase)}")
    F = snap.D_k1 @ snap.D_k.T / M
    G = snap.D_k @ snap.D_k.T / M
    Greg = G + ridge * np.eye(len(G)) if ridge else G
    Ginv, rank = pinv_svd(Greg, rcond)
    if rank < len(G):
        warnings.warn(
            f"G is rank deficient ({rank} of {len(G)}) for phase "
            f"{PHASE_NAMES.get(snap.phase, snap.phase)}; using the pseudoinverse",
            RankDeficiencyWarning, stacklevel=2)
    K = F @ Ginv
    s = np.linalg.svd(G, compute_uv=False)
    cond = float(s[0] / s[-1]) if s[-1] > 0 else float("inf")
    denom = np.linalg.norm(snap.D_k1)
    residual = float(np.linalg.norm(snap.D_k1 - K @ snap.D_k) / denom) if denom else 0.0
    return K, FitDiagnostics(residual, cond, rank, M, float(ridge))


def partition_operator(K, dictionary: ObservableDictionary):
    """Top block row ``[K_xx | K_xu]``; the input-evolution rows are dropped."""
    n_x = dictionary.n_x
    return K[:n_x, :n_x].copy(), K[:n_x, n_x:].copy()


def fit_projection(dataset: TrajectoryDataset, dictionary: ObservableDictionary,
                   rcond=DEFAULT_RCOND):
    """Recovery map ``C`` (``3 x n_x``) minimizing ``sum ||C Psi_x - z||^2`` over all samples."""
    X, Z = [], []
    for ep in dataset.episodes:
        Xe, _ = lifted_episode(ep, dictionary)
        X.append(Xe)
        Z.append(plant_coordinates(ep.states))
    if not X:
        raise FittingError("no samples to fit the recovery map")
    X, Z = np.vstack(X), np.vstack(Z)
    if X.shape[0] < X.shape[1]:
        warnings.warn("recovery fit is underdetermined; using a ridge-regularized solve",
                      RankDeficiencyWarning, stacklevel=2)
        lam = 1e-8 * np.trace(X.T @ X) / X.shape[1]
        C = np.linalg.solve(X.T @ X + lam * np.eye(X.shape[1]), X.T @ Z).T
    else:
        C = np.linalg.lstsq(X, Z, rcond=rcond)[0].T
    resid = float(np.sqrt(np.mean((X @ C.T - Z) ** 2)))
    return C, resid
