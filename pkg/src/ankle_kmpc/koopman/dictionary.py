"""Observable dictionaries and delay-embedded lifting.

Every dictionary acts on the augmented state ``z = [z1, z2, z3]`` (degrees,
deg/s, degrees) and keeps ``z`` itself among its terms, so the recovery map
back to ``z`` is an exact linear selection. Nonlinear terms are evaluated on
radians (and rad/s) to keep the trigonometric terms meaningful.

The input lift is the identity: each embedding slot contributes one column
``u`` so the controller sees inputs linearly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import ConfigError, WarmupError

_RAD = np.pi / 180.0


@dataclass(frozen=True)
class Term:
    label: str
    fn: Callable[[np.ndarray], np.ndarray]


def _z(i):
    return lambda Z: Z[:, i]


def _ang(Z):
    return Z[:, 0] * _RAD


def _vel(Z):
    return Z[:, 1] * _RAD


def _ref(Z):
    return Z[:, 2] * _RAD


def _state_terms():
    return (Term("z1", _z(0)), Term("z2", _z(1)), Term("z3", _z(2)))


def _custom_terms():
    # theta1 = angle coordinate, theta2 = velocity coordinate. The rate slots
    # of the library are filled with the reference coordinate z3 and with the
    # constant observable (the angular acceleration is not a function of z).
    return _state_terms() + (
        Term("1", lambda Z: np.ones(len(Z))),
        Term("sin(th1)", lambda Z: np.sin(_ang(Z))),
        Term("cos(th1)", lambda Z: np.cos(_ang(Z))),
        Term("sin(th2)", lambda Z: np.sin(_vel(Z))),
        Term("cos(th2)", lambda Z: np.cos(_vel(Z))),
        Term("th1^2", lambda Z: _ang(Z) ** 2),
        Term("th2^2", lambda Z: _vel(Z) ** 2),
        Term("th1*th2", lambda Z: _ang(Z) * _vel(Z)),
        Term("th1*th2^2", lambda Z: _ang(Z) * _vel(Z) ** 2),
    )


TRIG_SCALES = (1.0, 2.0)


def _trig_terms():
    terms = list(_state_terms())
    for name, coord in (("z1", _ang), ("z2", _vel), ("z3", _ref)):
        for s in TRIG_SCALES:
            terms.append(Term(f"sin({s:g}*{name})", lambda Z, c=coord, s=s: np.sin(s * c(Z))))
            terms.append(Term(f"cos({s:g}*{name})", lambda Z, c=coord, s=s: np.cos(s * c(Z))))
    return tuple(terms)


_BUILDERS = {"state": _state_terms, "custom": _custom_terms, "trig": _trig_terms}
DICTIONARY_NAMES = tuple(_BUILDERS)


@dataclass(frozen=True)
class ObservableDictionary:
    """Named lifting map with embedding length ``L``.

    The lifted vector of one sample is
    ``[psi(z_k), psi(z_{k-1}), ..., psi(z_{k-L+1}), u_k, ..., u_{k-L+1}]``.
    """

    name: str
    embedding: int = 1

    def __post_init__(self):
        if self.name not in _BUILDERS:
            raise ConfigError(f"unknown dictionary {self.name!r}; choose from {DICTIONARY_NAMES}")
        if int(self.embedding) != self.embedding or self.embedding < 1:
            raise ConfigError(f"embedding length must be a positive integer, got {self.embedding}")

    @property
    def terms(self) -> Sequence[Term]:
        return _BUILDERS[self.name]()

    @property
    def labels(self):
        return [t.label for t in self.terms]

    @property
    def n_base(self):
        return len(self.terms)

    @property
    def n_x(self):
        return self.n_base * self.embedding

    @property
    def n_u(self):
        return self.embedding

    @property
    def P(self):
        return self.n_x + self.n_u

    def to_dict(self):
        return {"name": self.name, "embedding": self.embedding, "labels": self.labels}

    # ------------------------------------------------------------------
    def lift_states(self, Z):
        """Per-sample state lift, ``(N, 3) -> (N, n_base)`` (no embedding)."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return np.column_stack([t.fn(Z) for t in self.terms])

    def embed(self, X, U):
        """Delay-embed per-sample lifts of one contiguous trajectory.

        Rows before the start of the trajectory are filled by replicating the
        first sample.
        """
        X = np.atleast_2d(X)
        U = np.asarray(U, dtype=float).reshape(len(X))
        L = self.embedding
        idx = np.arange(len(X))[:, None] - np.arange(L)[None, :]
        idx = np.maximum(idx, 0)
        Xe = X[idx].reshape(len(X), L * X.shape[1])
        Ue = U[idx]
        return Xe, Ue

    def lift_trajectory(self, Z, U):
        """Lifted ``(Psi_x, Psi_u)`` for every sample of one trajectory."""
        return self.embed(self.lift_states(Z), U)


def lift(z, u, history, dictionary: ObservableDictionary):
    """Lift one sample.

    ``history`` holds past ``(z, u)`` pairs, most recent last; at least
    ``L - 1`` are required. Returns ``Psi = [Psi_x; Psi_u]`` of length ``P``.
    """
    L = dictionary.embedding
    history = list(history or [])
    if len(history) < L - 1:
        raise WarmupError(
            f"embedding length {L} needs {L - 1} past samples, got {len(history)}; "
            "prefill the history buffer")
    past = history[len(history) - (L - 1):] if L > 1 else []
    Z = np.array([np.asarray(z, dtype=float)] + [np.asarray(h[0], dtype=float) for h in reversed(past)])
    U = np.array([float(u)] + [float(h[1]) for h in reversed(past)])
    X = dictionary.lift_states(Z)
    return np.concatenate([X.reshape(-1), U])
