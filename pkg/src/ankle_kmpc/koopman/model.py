"""Phase-switched Koopman predictor: fitting, prediction and model files."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, IOFailure
from ..plant import STANCE, SWING, PHASE_NAMES, TrajectoryDataset
from .dictionary import ObservableDictionary
from .edmd import build_snapshots, fit_edmd, fit_projection, partition_operator

MODEL_FORMAT = "ankle-kmpc/koopman-model/1"


@dataclass(frozen=True)
class KoopmanModel:
    """Immutable per-phase lifted predictor.

    ``K_xx[s]``/``K_xu[s]`` are the blocks for ``sigma = s`` (0 stance, 1
    swing); ``C`` maps the lifted state back to ``z``.
    """

    dictionary: ObservableDictionary
    K_xx: tuple
    K_xu: tuple
    C: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    sample_rate: float = 200.0
    config_hash: str = ""

    def __post_init__(self):
        d = self.dictionary
        for s in (STANCE, SWING):
            if self.K_xx[s].shape != (d.n_x, d.n_x) or self.K_xu[s].shape != (d.n_x, d.n_u):
                raise DataError(f"operator blocks for {PHASE_NAMES[s]} do not match dictionary "
                                f"{d.name} with L={d.embedding}")
            if not (np.all(np.isfinite(self.K_xx[s])) and np.all(np.isfinite(self.K_xu[s]))):
                raise DataError(f"non-finite operator entries for {PHASE_NAMES[s]}")
        if self.C.shape != (3, d.n_x):
            raise DataError(f"recovery map must be 3 x {d.n_x}, got {self.C.shape}")
        for arr in (*self.K_xx, *self.K_xu, self.C):
            arr.setflags(write=False)

    @property
    def n_x(self):
        return self.dictionary.n_x

    def blocks(self, sigma):
        s = SWING if sigma else STANCE
        return self.K_xx[s], self.K_xu[s]

    def projected(self, sigma):
        """Three-state view ``(A, B) = (C K_xx C^+, C K_xu)`` using the right pseudo-inverse of C."""
        A, B = self.blocks(sigma)
        Cp = np.linalg.pinv(self.C)
        return self.C @ A @ Cp, self.C @ B

    # ------------------------------------------------------------------
    def to_dict(self):
        return {
            "format": MODEL_FORMAT,
            "dictionary": self.dictionary.to_dict(),
            "sample_rate_hz": self.sample_rate,
            "config_hash": self.config_hash,
            "phases": {
                PHASE_NAMES[s]: {"K_xx": self.K_xx[s].tolist(), "K_xu": self.K_xu[s].tolist()}
                for s in (STANCE, SWING)
            },
            "C": self.C.tolist(),
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != MODEL_FORMAT:
            raise DataError(f"not a model file of format {MODEL_FORMAT}")
        dic = ObservableDictionary(d["dictionary"]["name"], int(d["dictionary"]["embedding"]))
        ph = d["phases"]
        return cls(
            dic,
            tuple(np.array(ph[PHASE_NAMES[s]]["K_xx"], dtype=float) for s in (STANCE, SWING)),
            tuple(np.array(ph[PHASE_NAMES[s]]["K_xu"], dtype=float).reshape(dic.n_x, dic.n_u)
                  for s in (STANCE, SWING)),
            np.array(d["C"], dtype=float),
            d.get("diagnostics", {}),
            float(d.get("sample_rate_hz", 200.0)),
            d.get("config_hash", ""),
        )

    def save(self, path):
        try:
            with open(path, "w") as fh:
                json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
                fh.write("\n")
        except OSError as exc:
            raise IOFailure(f"cannot write model file {path}: {exc}") from None

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except OSError as exc:
            raise IOFailure(f"cannot read model file {path}: {exc}") from None
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed model file {path}: {exc}") from None


def fit_koopman(dataset: TrajectoryDataset, dictionary: ObservableDictionary, ridge=0.0,
                config_hash="") -> KoopmanModel:
    """Fit both phase operators and the shared recovery map."""
    K_xx, K_xu, diag = [], [], {}
    for s in (STANCE, SWING):
        snap = build_snapshots(dataset, dictionary, s)
        K, d = fit_edmd(snap, ridge)
        kxx, kxu = partition_operator(K, dictionary)
        K_xx.append(kxx)
        K_xu.append(kxu)
        diag[PHASE_NAMES[s]] = d.to_dict()
    C, resid = fit_projection(dataset, dictionary)
    diag["recovery_rmse"] = resid
    return KoopmanModel(dictionary, tuple(K_xx), tuple(K_xu), C, diag,
                        float(dataset.sample_rate), config_hash)


def input_lift(u):
    """Identity input observable."""
    return np.atleast_1d(np.asarray(u, dtype=float))


def predict_step(model: KoopmanModel, psi, u, sigma):
    """One switched lifted step; returns ``(psi_next, z_next)``.

    ``u`` is the current input (``L = 1``) or the stacked input history
    ``[u_k, ..., u_{k-L+1}]``.
    """
    A, B = model.blocks(sigma)
    psi_next = A @ psi + B @ input_lift(u)
    return psi_next, model.C @ psi_next


def initial_lift(model: KoopmanModel, z_hist, u_hist=()):
    """Lifted state from a history of ``z`` (chronological, last row is now).

    ``u_hist`` holds the inputs applied at the earlier samples. Missing history
    is filled by replicating the oldest sample.
    """
    d = model.dictionary
    L = d.embedding
    Z = np.atleast_2d(np.asarray(z_hist, dtype=float))[-L:]
    if len(Z) < L:
        Z = np.vstack([np.repeat(Z[:1], L - len(Z), axis=0), Z])
    X = d.lift_states(Z[::-1])
    return X.reshape(-1)


def input_history(u_hist, inputs, L):
    """Chronological input sequence with ``L - 1`` samples of warm-up in front."""
    inputs = np.asarray(inputs, dtype=float).reshape(-1)
    past = np.asarray(u_hist, dtype=float).reshape(-1)[-(L - 1):] if L > 1 else np.empty(0)
    if len(past) < L - 1:
        fill = past[0] if len(past) else inputs[0]
        past = np.concatenate([np.full(L - 1 - len(past), fill), past])
    return np.concatenate([past, inputs])


def rollout_predict(model: KoopmanModel, z_hist, u_hist, inputs, sigmas, H=None):
    """Iterate the switched predictor ``H`` steps in lifted space.

    Returns the predicted ``z_1 .. z_H`` as an ``(H, 3)`` array.
    """
    inputs = np.asarray(inputs, dtype=float).reshape(-1)
    sigmas = np.asarray(sigmas).reshape(-1)
    H = len(inputs) if H is None else int(H)
    if H < 1:
        raise ValueError("horizon must be at least one step")
    if len(inputs) < H or len(sigmas) < H:
        raise ValueError(f"need {H} inputs and phase flags")
    L = model.dictionary.embedding
    useq = input_history(u_hist, inputs[:H], L)
    psi = initial_lift(model, z_hist)
    A = model.K_xx
    B = model.K_xu
    out = np.empty((H, 3))
    for j in range(H):
        s = 1 if sigmas[j] else 0
        # stacked [u_j, u_{j-1}, ..., u_{j-L+1}]
        ulift = useq[j:j + L][::-1]
        psi = A[s] @ psi + B[s] @ ulift
        out[j] = model.C @ psi
    return out
