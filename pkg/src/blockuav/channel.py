"""Blockage-aware air-to-ground channel gain and its analytic gradients.

The LoS/NLoS switch is smoothed by a sigmoid of the normalised clearance
``min_q d_{k,q}(x) / ||x - u||`` so that the path-loss exponent and the 1 m
reference gain vary continuously with the UAV position.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geometry import ShadowSet

__all__ = [
    "ChannelParams",
    "ChannelEval",
    "ChannelError",
    "db_to_linear",
    "dbm_to_watts",
    "smoothing",
    "channel_params_at",
    "gain",
    "grad_gain",
    "gain_matrix",
    "evaluate_links",
    "LinkEval",
]

_TINY = np.finfo(float).tiny


class ChannelError(ValueError):
    pass


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class ChannelParams:
    alpha_los: float = 2.0
    alpha_nlos: float = 3.3
    beta_los: float = 10 ** (-4.643)
    beta_nlos: float = 10 ** (-5.643)
    eta: float = 1000.0
    noise_power: float = 10 ** (-13.7)  # -107 dBm

    def __post_init__(self):
        if not self.alpha_nlos >= self.alpha_los > 0:
            raise ChannelError("need alpha_nlos >= alpha_los > 0")
        if not self.beta_los >= self.beta_nlos > 0:
            raise ChannelError("need beta_los >= beta_nlos > 0")
        if self.eta <= 0 or self.noise_power <= 0:
            raise ChannelError("eta and noise_power must be positive")


@dataclass(frozen=True)
class ChannelEval:
    s: float
    alpha: float
    beta: float
    gain: float
    grad_gain: np.ndarray
    grad_alpha: np.ndarray
    grad_beta: np.ndarray
    clearance: float
    distance: float
    # active plane (a, b); None when the user has no blocked regions
    active_plane: tuple[np.ndarray, float] | None = None
    active_index: tuple[int, int] = (-1, -1)
    tie: bool = False


def smoothing(clearance: float, distance: float, eta: float) -> float:
    """Sigmoid 1 / (1 + exp(-eta * clearance / distance)), overflow free."""
    if distance <= 0:
        raise ChannelError("distance must be positive")
    if math.isinf(clearance):
        return 1.0 if clearance > 0 else _TINY
    z = eta * clearance / distance
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z) if z > -745.0 else 0.0
    return max(e / (1.0 + e), _TINY)


def channel_params_at(s: float, params: ChannelParams) -> tuple[float, float]:
    alpha = (params.alpha_los - params.alpha_nlos) * s + params.alpha_nlos
    beta = (params.beta_los - params.beta_nlos) * s + params.beta_nlos
    return alpha, beta


def _as_shadows(regions) -> ShadowSet:
    return regions if isinstance(regions, ShadowSet) else ShadowSet(regions)


def gain(x, user, regions, params: ChannelParams) -> ChannelEval:
    """Channel gain of the link user -> x together with all gradients.

    ``regions`` is the user's list of blocked regions (or a prebuilt
    :class:`ShadowSet`).
    """
    x = np.asarray(x, dtype=float).reshape(3)
    u = np.asarray(user, dtype=float).reshape(3)
    shadows = _as_shadows(regions)
    diff = x - u
    dist = float(np.linalg.norm(diff))
    if dist == 0.0:
        raise ChannelError("UAV and user positions coincide")

    clear, q, i, tie = (v[0] for v in shadows.clearances(x))
    s = smoothing(clear, dist, params.eta)
    alpha, beta = channel_params_at(s, params)
    g = beta * dist ** (-alpha)

    if q < 0:
        zero = np.zeros(3)
        grad_g = -g * alpha * diff / dist**2
        return ChannelEval(s, alpha, beta, g, grad_g, zero, zero.copy(), clear, dist)

    hs = shadows.plane(q, i)
    a, b = hs.a, hs.b
    # gradient of clearance / distance through the active plane
    grad_ratio = a / dist - (a @ x - b) * diff / dist**3
    grad_s = params.eta * s * (1.0 - s) * grad_ratio
    grad_alpha = (params.alpha_los - params.alpha_nlos) * grad_s
    grad_beta = (params.beta_los - params.beta_nlos) * grad_s
    grad_g = (-g * grad_alpha * math.log(dist)
              - g * alpha * diff / dist**2
              + grad_beta * dist ** (-alpha))
    return ChannelEval(s, alpha, beta, g, grad_g, grad_alpha, grad_beta, float(clear),
                       dist, (a, b), (int(q), int(i)), bool(tie))


def grad_gain(x, user, regions, params):
    """(grad g, grad alpha, grad beta) at ``x``."""
    ev = gain(x, user, regions, params)
    return ev.grad_gain, ev.grad_alpha, ev.grad_beta


class LinkEval(NamedTuple):
    """Per-(user, UAV) channel quantities, each indexed ``[k, m]``."""

    G: np.ndarray
    dG: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    s: np.ndarray


def evaluate_links(X, users, shadows, params: ChannelParams) -> LinkEval:
    """Gains with their gradients, plus channel parameters, for all links at once.

    ``shadows[k]`` holds the blocked regions of user k (a list of regions or
    a :class:`ShadowSet`).
    """
    X = np.asarray(X, dtype=float).reshape(-1, 3)
    users = np.asarray(users, dtype=float).reshape(-1, 3)
    K, M = len(users), len(X)
    G = np.empty((K, M))
    dG = np.empty((K, M, 3))
    A = np.empty((K, M))
    B = np.empty((K, M))
    S = np.empty((K, M))
    for k in range(K):
        sh = _as_shadows(shadows[k])
        diff = X - users[k]
        dist = np.linalg.norm(diff, axis=1)
        if np.any(dist == 0.0):
            raise ChannelError("UAV and user positions coincide")
        if sh.empty:
            S[k] = 1.0
            A[k] = params.alpha_los
            B[k] = params.beta_los
            G[k] = params.beta_los * dist ** (-params.alpha_los)
            dG[k] = (-G[k] * params.alpha_los / dist**2)[:, None] * diff
            continue
        clear, q, i, _ = sh.clearances(X)
        z = params.eta * clear / dist
        s = np.empty(M)
        pos = z >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        e = np.exp(np.maximum(z[~pos], -745.0))
        s[~pos] = np.maximum(e / (1.0 + e), _TINY)
        alpha = (params.alpha_los - params.alpha_nlos) * s + params.alpha_nlos
        beta = (params.beta_los - params.beta_nlos) * s + params.beta_nlos
        g = beta * dist ** (-alpha)
        rows = sh.starts[q] + i
        a = sh.normals[rows]
        lin = np.einsum("ij,ij->i", a, X) - sh.offsets[rows]
        grad_ratio = a / dist[:, None] - (lin / dist**3)[:, None] * diff
        grad_s = (params.eta * s * (1.0 - s))[:, None] * grad_ratio
        ga = (params.alpha_los - params.alpha_nlos) * grad_s
        gb = (params.beta_los - params.beta_nlos) * grad_s
        dG[k] = (-(g * np.log(dist))[:, None] * ga
                 - (g * alpha / dist**2)[:, None] * diff
                 + (dist ** (-alpha))[:, None] * gb)
        G[k], A[k], B[k], S[k] = g, alpha, beta, s
    return LinkEval(G, dG, A, B, S)


def gain_matrix(X, users, shadows, params: ChannelParams, with_grad: bool = False):
    """``(K, M)`` gains, plus the ``(K, M, 3)`` gradients when ``with_grad``."""
    ev = evaluate_links(X, users, shadows, params)
    return (ev.G, ev.dG) if with_grad else ev.G
