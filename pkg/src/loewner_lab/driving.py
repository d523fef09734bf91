"""Driving-function samplers for backward SLE_kappa and SLE(kappa; rho).

The driving SDE is integrated by Euler-Maruyama (the diffusion coefficient
sqrt(kappa) is constant, so EM is already strong order 1), while force-point
images evolve by the same exact elementary steps as the core solver, keeping
the driver and the images on one consistent discrete flow.

Randomness comes from a counter-based Philox generator keyed by
(seed, stream); Gaussian increments are produced by the inverse normal CDF
so that a (seed, stream) pair determines the path bit-for-bit across
platforms, and extending the horizon re-reads the same stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .core import (
    BACKWARD,
    CHORDAL,
    RADIAL,
    DrivingPath,
    GeometryError,
    MapStack,
    chordal_backward_step,
)

INF = float("inf")


class SwallowStop(Exception):
    """A force-point image collided with the driver; carries the refined time."""

    def __init__(self, time, index):
        super().__init__(f"force point {index} swallowed at t={time:.6g}")
        self.time = time
        self.index = index


@dataclass(frozen=True)
class SleConfig:
    """Parameters of a backward SLE(kappa; rho) sampling run."""

    kappa: float
    rho: tuple = ()
    x0: float = 0.0
    force_points: tuple = ()  # reals (inf allowed, chordal) / angles (radial) / complex interior
    T: float = 1.0
    dt: float = 1e-3
    seed: int = 0
    stream: int = 0
    geometry: str = CHORDAL

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if len(self.rho) != len(self.force_points):
            raise ValueError("rho and force_points must have equal length")
        if self.dt <= 0 or self.T < 0:
            raise ValueError("dt must be > 0 and T >= 0")
        if self.geometry not in (CHORDAL, RADIAL):
            raise GeometryError(self.geometry)
        for q in self.force_points:
            if isinstance(q, complex):
                continue
            if self.geometry == CHORDAL and q == self.x0:
                raise ValueError("chordal force point coincides with x0")
            if (
                self.geometry == RADIAL
                and q != INF
                and abs((q - self.x0 + np.pi) % (2 * np.pi) - np.pi) < 1e-12
            ):
                raise ValueError("radial force point coincides with x0 mod 2*pi")


@dataclass(frozen=True)
class ForceState:
    """Per-force-point image history along the driving grid."""

    t: np.ndarray
    images: np.ndarray  # shape (n_points, n_times), complex
    derivs: np.ndarray  # d/dq of the image along the flow (covering deriv, radial)
    alive: np.ndarray  # bool per point
    swallow_times: np.ndarray  # nan if alive


def gaussian_increments(seed: int, stream: int, n: int, dt: float) -> np.ndarray:
    """n N(0, dt) increments from the Philox stream (seed, stream)."""
    gen = np.random.Generator(np.random.Philox(key=(int(seed), int(stream))))
    u = gen.random(n)
    return ndtri(u) * np.sqrt(dt)


def sample_sle_driving(cfg: SleConfig) -> DrivingPath:
    """Plain backward SLE_kappa driving: lambda(t) = x0 + sqrt(kappa) B(t)."""
    if cfg.rho:
        raise ValueError("rho must be empty for plain SLE driving")
    n = int(round(cfg.T / cfg.dt))
    t = np.linspace(0.0, n * cfg.dt, n + 1)
    inc = gaussian_increments(cfg.seed, cfg.stream, n, cfg.dt)
    lam = cfg.x0 + np.sqrt(cfg.kappa) * np.concatenate([[0.0], np.cumsum(inc)])
    return DrivingPath(t, lam, cfg.geometry, cfg.kappa, ())


# ---------------------------------------------------------------------------
# exact per-step boundary flows (vectorized over points), used everywhere a
# boundary point is pushed through a piecewise-constant driving interval
# ---------------------------------------------------------------------------

def chordal_flow_step(x, lam, dt):
    """One backward step of real boundary points; swallowed -> nan.

    Returns (x_out, local_swallow_time) with nan where not swallowed.
    """
    d = x - lam
    disc = d * d - 4.0 * dt
    tau = np.where(disc <= 0.0, 0.25 * d * d, np.nan)
    out = np.where(disc > 0.0, lam + np.sign(d) * np.sqrt(np.abs(disc)), np.nan)
    return out, tau


def radial_flow_step(u, lam, dt):
    """One backward step of covering angles (lift in lam + (0, 2pi)).

    u is the absolute covering angle; swallowed -> nan.
    Returns (u_out, local_swallow_time).
    """
    rel = u - lam
    n2pi = np.floor(rel / (2.0 * np.pi))
    r = rel - 2.0 * np.pi * n2pi  # (0, 2pi) for non-colliding points
    c = np.cos(0.5 * r)  # sign splits the two sides of the driver
    cn = np.abs(c) * np.exp(0.5 * dt)
    swallowed = (cn >= 1.0) | (r == 0.0)
    tau = np.where(swallowed, -2.0 * np.log(np.maximum(np.abs(c), 1e-300)), np.nan)
    half = np.arccos(np.minimum(cn, 1.0))
    r_out = np.where(c >= 0.0, 2.0 * half, 2.0 * np.pi - 2.0 * half)
    out = np.where(swallowed, np.nan, lam + r_out + 2.0 * np.pi * n2pi)
    return out, tau


def radial_flow_step_deriv(u_in, u_out, dt):
    """d u_out / d u_in for the radial boundary step (tan-ratio form)."""
    r_in = u_in  # relative angles expected
    r_out = u_out
    near_pi = np.abs(r_in - np.pi) < 1e-8
    t_in = np.tan(0.5 * np.where(near_pi, 0.5 * np.pi, r_in))
    t_out = np.tan(0.5 * np.where(near_pi, 0.5 * np.pi, r_out))
    d = t_in / t_out
    return np.where(near_pi, np.exp(0.5 * dt), d)


def _drift(lam, images, rho, geometry):
    tot = 0.0
    for q_img, r in zip(images, rho):
        if r == 0.0 or q_img is None:
            continue
        x = q_img.real if isinstance(q_img, complex) else q_img
        if geometry == CHORDAL:
            if np.isinf(x):
                continue
            tot += -r / (lam - x)
        else:
            tot += -(r / 2.0) / np.tan(0.5 * (lam - x))
    return tot


def _bessel_dim(kappa, rho1):
    return 1.0 - (4.0 + 2.0 * rho1) / kappa


def sample_sle_kappa_rho(cfg: SleConfig):
    """Backward SLE(kappa; rho) driving with force-point tracking.

    Returns (DrivingPath, ForceState).  Integration halts with `SwallowStop`
    when a boundary force-point image collides with the driver, unless the
    associated Bessel dimension rules collisions out.
    """
    if not cfg.rho:
        return sample_sle_driving(cfg), ForceState(
            np.array([0.0]), np.zeros((0, 1), complex), np.zeros((0, 1)), np.zeros(0, bool), np.zeros(0)
        )
    n = int(round(cfg.T / cfg.dt))
    t = np.linspace(0.0, n * cfg.dt, n + 1)
    inc = gaussian_increments(cfg.seed, cfg.stream, n, cfg.dt)
    k = len(cfg.rho)
    lam = np.empty(n + 1)
    lam[0] = cfg.x0
    imgs = np.empty((k, n + 1), dtype=complex)
    dervs = np.ones((k, n + 1))
    alive = np.ones(k, dtype=bool)
    swallow = np.full(k, np.nan)
    interior = np.zeros(k, dtype=bool)
    at_inf = np.zeros(k, dtype=bool)
    no_collision = np.zeros(k, dtype=bool)
    for j, q in enumerate(cfg.force_points):
        if isinstance(q, complex):
            interior[j] = True
            imgs[j, 0] = q  # chordal: point of H; radial: covering coordinate
        elif q == INF:
            at_inf[j] = True
            imgs[j, 0] = np.inf
        else:
            imgs[j, 0] = q
        d = _bessel_dim(cfg.kappa, cfg.rho[j]) if cfg.kappa > 0 else np.inf
        no_collision[j] = d >= 2.0
    eps_swallow = 10.0 * np.sqrt(cfg.dt)
    sqk = np.sqrt(cfg.kappa)
    for i in range(n):
        vals = []
        for j in range(k):
            if not alive[j] or at_inf[j]:
                vals.append(np.inf if at_inf[j] else None)
            elif interior[j]:
                vals.append(complex(imgs[j, i]))
            else:
                vals.append(float(imgs[j, i].real))
        drift = _drift(lam[i], vals, cfg.rho, cfg.geometry)
        lam[i + 1] = lam[i] + sqk * inc[i] + drift * cfg.dt
        lam_step = 0.5 * (lam[i] + lam[i + 1])
        for j in range(k):
            if not alive[j] or at_inf[j]:
                imgs[j, i + 1] = imgs[j, i]
                dervs[j, i + 1] = dervs[j, i]
                continue
            if interior[j]:
                imgs[j, i + 1] = _covering_interior_step(
                    imgs[j, i], lam_step, cfg.dt, cfg.geometry
                )
                dervs[j, i + 1] = dervs[j, i]
                continue
            x = imgs[j, i].real
            if cfg.geometry == CHORDAL:
                out, tau = chordal_flow_step(np.asarray([x]), lam_step, cfg.dt)
                collided = np.isnan(out[0]) or abs(out[0] - lam[i + 1]) < eps_swallow
                if collided and not no_collision[j]:
                    tloc = tau[0] if np.isnan(out[0]) else _refine_collision(
                        x, lam[i], lam[i + 1], cfg.dt, cfg.geometry
                    )
                    swallow[j] = t[i] + (tloc if np.isfinite(tloc) else cfg.dt)
                    alive[j] = False
                    imgs[j, i + 1 :] = lam[i + 1]
                    raise SwallowStop(swallow[j], j)
                if np.isnan(out[0]):
                    # collision suppressed by Bessel dimension: clamp just off the driver
                    out[0] = lam_step + np.sign(x - lam_step) * 2.0 * np.sqrt(cfg.dt)
                dervs[j, i + 1] = dervs[j, i] * _chordal_flow_deriv(x, out[0], lam_step)
                imgs[j, i + 1] = out[0]
            else:
                out, tau = radial_flow_step(np.asarray([x]), lam_step, cfg.dt)
                rel_in = (x - lam_step) % (2.0 * np.pi)
                collided = np.isnan(out[0]) or _angle_dist(out[0], lam[i + 1]) < eps_swallow
                if collided and not no_collision[j]:
                    swallow[j] = t[i] + (tau[0] if np.isfinite(tau[0]) else cfg.dt)
                    alive[j] = False
                    imgs[j, i + 1 :] = lam[i + 1]
                    raise SwallowStop(swallow[j], j)
                if np.isnan(out[0]):
                    out[0] = lam_step + np.sign(np.pi - rel_in) * 2.0 * np.sqrt(cfg.dt)
                rel_out = out[0] - lam_step
                dervs[j, i + 1] = dervs[j, i] * radial_flow_step_deriv(
                    np.asarray([rel_in]), np.asarray([rel_out % (2.0 * np.pi)]), cfg.dt
                )[0]
                imgs[j, i + 1] = out[0]
    path = DrivingPath(t, lam, cfg.geometry, cfg.kappa, tuple(cfg.rho))
    state = ForceState(t, imgs, dervs, alive, swallow)
    return path, state


def _angle_dist(a, b):
    return abs((a - b + np.pi) % (2.0 * np.pi) - np.pi)


def _chordal_flow_deriv(x_in, x_out, lam):
    return (x_in - lam) / (x_out - lam)


def _covering_interior_step(ztil, lam, dt, geometry):
    """One backward step of an interior point in covering coordinates."""
    if geometry == CHORDAL:
        return chordal_backward_step(complex(ztil), lam, dt)
    from .core import radial_backward_step

    w = np.exp(1j * complex(ztil))
    w2 = radial_backward_step(w, lam, dt)
    raw = -1j * np.log(w2)
    twopi = 2.0 * np.pi
    kwind = np.round((complex(ztil).real - raw.real) / twopi)
    return raw + twopi * kwind


def _refine_collision(x, lam0, lam1, dt, geometry):
    """Bisection for the first sub-step time with |image - driver| = 0+.

    The driver is linearly interpolated inside the step; the image flows by
    the exact split step.  Relative accuracy 1e-10.
    """
    lam_step = 0.5 * (lam0 + lam1)

    def gap(s):
        if s == 0.0:
            return abs(x - lam0)
        if geometry == CHORDAL:
            out, _ = chordal_flow_step(np.asarray([x]), lam_step, s)
        else:
            out, _ = radial_flow_step(np.asarray([x]), lam_step, s)
        if np.isnan(out[0]):
            return -1.0
        lam_s = lam0 + (lam1 - lam0) * s / dt
        return abs(out[0] - lam_s)

    lo, hi = 0.0, dt
    if gap(hi) > 0.0:
        return dt
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if gap(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-10 * dt:
            break
    return hi


# ---------------------------------------------------------------------------
# swallowing times under a given driving path
# ---------------------------------------------------------------------------

def swallow_times(path: DrivingPath, xs) -> np.ndarray:
    """Exact discrete-flow swallowing times for boundary points; inf if never.

    Chordal: xs are reals.  Radial: xs are absolute angles (covering coords).
    Vectorized over xs; each step uses the closed-form within-step solution.
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    out = np.full(xs.shape, np.inf)
    cur = xs.copy()
    live = np.ones(xs.shape, dtype=bool)
    lams = path.step_values()
    dts = path.step_durations()
    edges = path.t
    for i in range(path.n_steps):
        if not np.any(live):
            break
        if path.geometry == CHORDAL:
            nxt, tau = chordal_flow_step(cur[live], lams[i], dts[i])
        else:
            nxt, tau = radial_flow_step(cur[live], lams[i], dts[i])
        gone = np.isnan(nxt)
        idx = np.flatnonzero(live)
        out[idx[gone]] = edges[i] + tau[gone]
        cur[idx[~gone]] = nxt[~gone]
        live[idx[gone]] = False
    return out


def swallow_time(path: DrivingPath, x):
    """Swallowing time of one boundary point, or None if never (within horizon).

    Radial points may be given as unit-modulus complex numbers or as angles.
    """
    if path.geometry == RADIAL and isinstance(x, complex):
        if abs(abs(x) - 1.0) > 1e-9:
            raise ValueError("radial boundary point must have unit modulus")
        x = float(np.angle(x))
    tau = float(swallow_times(path, [float(x)])[0])
    return None if np.isinf(tau) else tau


def flow_boundary(path: DrivingPath, xs, T=None):
    """Images of boundary points under the backward flow at time T (nan if swallowed)."""
    sub = path if T is None else path.restrict(T)
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    cur = xs.copy()
    lams = sub.step_values()
    dts = sub.step_durations()
    for i in range(sub.n_steps):
        if sub.geometry == CHORDAL:
            cur, _ = chordal_flow_step(cur, lams[i], dts[i])
        else:
            cur, _ = radial_flow_step(cur, lams[i], dts[i])
    return cur


def support_interval(path: DrivingPath, T=None, tol=1e-12):
    """Endpoints of the support S_{L_T}: the points swallowed exactly at T.

    Chordal: returns (a, b) reals.  Radial: covering angles around lambda(0);
    the swallowing-time profile on (x0, x0 + 2pi) is unimodal, so the two
    crossings of tau = T are bracketed on a fan first.
    """
    sub = path if T is None else path.restrict(T)
    Tend = sub.horizon
    x0 = float(sub.values[0])
    if sub.n_steps == 0:
        return x0, x0
    if sub.geometry == CHORDAL:
        scale = 2.0 * np.sqrt(Tend) + float(np.ptp(sub.values)) + 1.0
        lo = _bisect_tau(sub, x0, _expand_bracket(sub, x0, -scale, Tend), Tend, tol)
        hi = _bisect_tau(sub, x0, _expand_bracket(sub, x0, +scale, Tend), Tend, tol)
        return lo, hi
    # radial, covering coordinates: scan u in (x0, x0 + 2pi)
    K = 256
    fan = x0 + np.linspace(1e-9, 2.0 * np.pi - 1e-9, K)
    taus = swallow_times(sub, fan)
    inside = taus <= Tend
    if np.all(inside):
        # support is the whole circle at grid resolution; split at max tau
        j = int(np.argmax(taus))
        return fan[j] - 2.0 * np.pi, fan[j]
    first_out = int(np.argmax(~inside))
    last_out = K - 1 - int(np.argmax(~inside[::-1]))
    hi = _bisect_tau(sub, fan[max(first_out - 1, 0)], fan[first_out], Tend, tol)
    lo = _bisect_tau(sub, fan[min(last_out + 1, K - 1)], fan[last_out], Tend, tol)
    return lo - 2.0 * np.pi, hi


def _bisect_tau(path, inner, outer, target, tol):
    """Point between inner (tau <= target) and outer (tau > target) with tau = target."""
    ti = swallow_times(path, [outer])[0]
    if ti <= target:
        return outer  # support reaches the search bound
    a, b = inner, outer
    for _ in range(200):
        mid = 0.5 * (a + b)
        tm = swallow_times(path, [mid])[0]
        if tm <= target:
            a = mid
        else:
            b = mid
        if abs(b - a) <= tol * max(1.0, abs(a)):
            break
    return 0.5 * (a + b)
