"""Synthesis of two-way exchange observations from ground truth.

The model for link i, round j:

    u_ij = d_i + delta + w1_ij + eta_i * tau_i     (forward difference)
    v_ij = d_i - delta + w2_ij                     (reverse difference)

A delay attack adds the constant tau_i to the forward path only; a config
flag flips the convention for reverse-path attacks.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

# Attack magnitudes are drawn uniformly from +-[ATTACK_ABS_LO, ATTACK_ABS_HI]
# seconds (two symmetric intervals; no attack is smaller than 0.5 us).
ATTACK_ABS_LO = 0.5e-6
ATTACK_ABS_HI = 2.0e-6


@dataclass(frozen=True)
class GroundTruth:
    """True offset, fixed delays, and attack state for N links."""

    delta: float
    d: np.ndarray
    tau: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        tau = np.asarray(self.tau, dtype=float)
        eta = np.asarray(self.eta, dtype=int)
        for name, val in (("d", d), ("tau", tau), ("eta", eta)):
            object.__setattr__(self, name, val)
        n = d.shape[0]
        if tau.shape != (n,) or eta.shape != (n,):
            raise ConfigError("d, tau, eta must share length N")
        if not np.all(np.isin(eta, (0, 1))):
            raise ConfigError("eta entries must be 0 or 1")
        if np.any(tau[eta == 0] != 0):
            raise ConfigError("tau must be 0 on unattacked links")
        if np.any(d < 0):
            raise ConfigError("fixed delays must be nonnegative")
        if int(eta.sum()) * 2 >= n:
            # estimation assumes a clean majority; synthesis itself does not
            warnings.warn(
                f"{int(eta.sum())} of {n} links attacked; estimators assume "
                "fewer than half",
                stacklevel=2,
            )

    @property
    def n_links(self) -> int:
        return self.d.shape[0]

    def to_json(self) -> str:
        return json.dumps(
            {
                "delta": self.delta,
                "d": self.d.tolist(),
                "tau": self.tau.tolist(),
                "eta": self.eta.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        obj = json.loads(text)
        return cls(
            float(obj["delta"]),
            np.asarray(obj["d"], dtype=float),
            np.asarray(obj["tau"], dtype=float),
            np.asarray(obj["eta"], dtype=int),
        )


@dataclass(frozen=True)
class ObservationSet:
    """Forward/reverse timestamp differences for N links over P rounds."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v, dtype=float)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        if u.ndim != 2 or u.shape != v.shape:
            raise ConfigError(f"u and v must be N x P, got {u.shape}, {v.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise DataError("observations contain non-finite entries")

    @property
    def N(self) -> int:
        return self.u.shape[0]

    @property
    def P(self) -> int:
        return self.u.shape[1]


def synthesize(
    truth: GroundTruth,
    fwd_delays,
    rev_delays,
    attack_reverse: bool = False,
) -> ObservationSet:
    """Build the observation matrices from ground truth and delay draws.

    ``attack_reverse`` moves the attack term onto v instead of u (kept
    behind a flag; the estimation equations place tau on the forward
    path, which all shipped experiments use).
    """
    w1 = np.asarray(fwd_delays, dtype=float)
    w2 = np.asarray(rev_delays, dtype=float)
    n = truth.n_links
    if w1.ndim != 2 or w1.shape != w2.shape or w1.shape[0] != n:
        raise ConfigError(
            f"delay draws must be N x P with N={n}, got {w1.shape}, {w2.shape}"
        )
    if np.any(w1 < 0) or np.any(w2 < 0):
        raise ConfigError("delay draws must be nonnegative")
    attack = (truth.eta * truth.tau)[:, None]
    d = truth.d[:, None]
    u = d + truth.delta + w1
    v = d - truth.delta + w2
    if attack_reverse:
        v = v + attack
    else:
        u = u + attack
    return ObservationSet(u, v)


def draw_attack_magnitudes(n_attacked: int, seed: int) -> np.ndarray:
    """i.i.d. attack magnitudes, uniform over +-[0.5, 2.0] microseconds.

    The two intervals have equal length, so the sign is a fair coin and
    the magnitude is uniform on [ATTACK_ABS_LO, ATTACK_ABS_HI].
    """
    if n_attacked < 0:
        raise ConfigError("n_attacked must be >= 0")
    rng = np.random.default_rng(seed)
    mag = rng.uniform(ATTACK_ABS_LO, ATTACK_ABS_HI, size=n_attacked)
    sign = rng.choice((-1.0, 1.0), size=n_attacked)
    return mag * sign


def write_observations_csv(obs: ObservationSet, path) -> None:
    """Columns ``link,round,u_s,v_s``, one row per (link, round)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["link", "round", "u_s", "v_s"])
        for i in range(obs.N):
            for j in range(obs.P):
                w.writerow([i, j, repr(float(obs.u[i, j])),
                            repr(float(obs.v[i, j]))])


def read_observations_csv(path) -> ObservationSet:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["link", "round", "u_s", "v_s"]:
        raise ConfigError(f"{path}: expected header 'link,round,u_s,v_s'")
    body = rows[1:]
    if not body:
        raise ConfigError(f"{path}: no observation rows")
    links = np.array([int(r[0]) for r in body])
    n, p = links.max() + 1, np.array([int(r[1]) for r in body]).max() + 1
    if len(body) != n * p:
        raise ConfigError(f"{path}: expected {n * p} rows, got {len(body)}")
    u = np.zeros((n, p))
    v = np.zeros((n, p))
    for r in body:
        u[int(r[0]), int(r[1])] = float(r[2])
        v[int(r[0]), int(r[1])] = float(r[3])
    return ObservationSet(u, v)
