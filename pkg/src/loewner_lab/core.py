"""Exact elementary solvers for forward/backward Loewner flows.

The half-plane (chordal) and disc (radial) Loewner equations with a
piecewise-constant driving function are solved in closed form, one slit map
per step.  A composition of such steps (a ``MapStack``) represents the
hull map f_t (backward) or g_t (forward) exactly, preserves the capacity
bookkeeping hcap = 2*sum(dt) / dcap = sum(dt) without discretization error,
and can be evaluated anywhere off its boundary support, together with
derivatives up to third order.

Chordal step (duration dt, driving value lam):

    backward  f(z) = lam + sqrt((z - lam)^2 - 4 dt)   (branch into H)
    forward   g(z) = lam + sqrt((z - lam)^2 + 4 dt)

Radial step: conjugating w = e^{-i lam} z, the quantity m(w) = w/(1+w)^2
satisfies d/dt m = -m along the backward flow, so

    m(e^{-i lam} f(z)) = e^{-dt} m(e^{-i lam} z),

with the root chosen inside the closed unit disc.  m maps the disc onto
C minus the ray [1/4, inf), which makes the root selection unambiguous for
interior points; boundary points flow by an explicit circle map.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json

import numpy as np

CHORDAL = "chordal"
RADIAL = "radial"
BACKWARD = "backward"
FORWARD = "forward"

_CIRCLE_TOL = 1e-12
SCHEMA_VERSION = 1


class LoewnerError(Exception):
    """Base class for numeric/domain failures in this package."""


class GeometryError(LoewnerError):
    pass


class BranchPointError(LoewnerError):
    """Evaluation hit a branch point and no side was selectable."""


class DomainError(LoewnerError):
    """Point lies in the swallowed set / outside the map's domain."""


class SingularJetError(LoewnerError):
    """A derivative blew up at a step's branch point."""


# ---------------------------------------------------------------------------
# elementary steps, chordal
# ---------------------------------------------------------------------------

def _sqrt_upper(w):
    """Square root with values in the closed upper half-plane."""
    s = np.sqrt(np.asarray(w, dtype=complex))
    return np.where(s.imag < 0.0, -s, s)


def chordal_backward_step(z, lam, dt):
    """Apply one exact backward chordal step of duration dt >= 0.

    Maps H onto H minus the vertical slit [lam, lam + 2i sqrt(dt)].
    Real inputs are treated as boundary points: they either stay on R
    (one-sided limit) or land on the slit once swallowed.
    """
    z = np.asarray(z, dtype=complex)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    d = z - lam
    out = lam + _sqrt_upper(d * d - 4.0 * dt)
    on_axis = z.imag == 0.0
    if np.any(on_axis):
        x = d.real[on_axis]
        rdisc = x * x - 4.0 * dt
        vals = np.where(
            rdisc <= 0.0,
            lam + 1j * np.sqrt(np.maximum(-rdisc, 0.0)),
            lam + np.sign(x) * np.sqrt(np.maximum(rdisc, 0.0)),
        )
        out = out.copy()
        out[on_axis] = vals
    below = z.imag < 0.0
    if np.any(below):
        out = out.copy()
        out[below] = np.conj(lam + _sqrt_upper(np.conj(d[below]) ** 2 - 4.0 * dt))
    return out[0] if scalar else out


def chordal_forward_step(z, lam, dt):
    """Exact forward chordal step; inverse of `chordal_backward_step`."""
    z = np.asarray(z, dtype=complex)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    d = z - lam
    disc = d * d + 4.0 * dt
    on_axis = z.imag == 0.0
    if dt > 0.0 and np.any(on_axis & (d.real == 0.0)):
        raise BranchPointError("forward step evaluated exactly at the driving point")
    on_slit = (~on_axis) & (np.abs(d.real) == 0.0) & (np.abs(z.imag) ** 2 < 4.0 * dt)
    if np.any(on_slit):
        raise DomainError("forward step evaluated on the slit being erased")
    out = lam + _sqrt_upper(disc)
    if np.any(on_axis):
        x = d.real[on_axis]
        out = out.copy()
        out[on_axis] = lam + np.sign(x) * np.sqrt(x * x + 4.0 * dt)
    below = z.imag < 0.0
    if np.any(below):
        out = out.copy()
        out[below] = np.conj(chordal_forward_step(np.conj(z[below]), lam, dt))
    return out[0] if scalar else out


# ---------------------------------------------------------------------------
# elementary steps, radial
# ---------------------------------------------------------------------------

def _m(w):
    return w / (1.0 + w) ** 2


def _m_prime(w):
    return (1.0 - w) / (1.0 + w) ** 3


def _m_inv_disc(v):
    """Inverse of m(w)=w/(1+w)^2 with values in the closed unit disc.

    Valid for v off the ray [1/4, inf); written in the cancellation-free
    form 2v / (1 - 2v + sqrt(1-4v)).
    """
    v = np.asarray(v, dtype=complex)
    w = 2.0 * v / (1.0 - 2.0 * v + np.sqrt(1.0 - 4.0 * v))
    bad = np.abs(w) > 1.0 + 1e-9
    if np.any(bad):
        w = np.where(bad, 1.0 / w, w)
    return w


def _radial_boundary_flow(theta, dt, direction):
    """Circle flow of the relative angle theta in (-pi, pi] for one step.

    Returns (theta_out, swallowed, slit_radius): swallowed entries carry the
    radial position on the slit instead of an angle.
    """
    theta = np.asarray(theta, dtype=float)
    c = np.cos(0.5 * theta)  # >= 0 on (-pi, pi]
    if direction == BACKWARD:
        cn = c * np.exp(0.5 * dt)
        swallowed = cn >= 1.0
        theta_out = np.where(
            swallowed, 0.0, np.sign(theta) * 2.0 * np.arccos(np.minimum(cn, 1.0))
        )
        r = np.ones_like(theta)
        if np.any(swallowed):
            v = np.exp(-dt) / np.maximum(4.0 * c * c, 1e-300)
            r = np.where(swallowed, _m_inv_disc(v).real, 1.0)
        return theta_out, swallowed, r
    cn = c * np.exp(-0.5 * dt)
    theta_out = np.sign(theta) * 2.0 * np.arccos(np.minimum(cn, 1.0))
    # sign(0) = 0 maps the driving point to itself; callers treat it as a branch point
    return theta_out, np.zeros(theta.shape, dtype=bool), np.ones_like(theta)


def radial_backward_step(z, lam, dt):
    """Apply one exact backward radial step (driving angle lam, duration dt).

    Fixes 0 with |f'(0)| = e^{-dt}; grows a radial slit from e^{i lam}.
    Unit-modulus inputs are boundary points and follow the circle flow
    (landing on the slit once swallowed).
    """
    if dt < 0:
        raise ValueError("dt must be >= 0")
    z = np.asarray(z, dtype=complex)
    scalar = z.ndim == 0
    z = np.atleast_1d(z).copy()
    if dt == 0.0:
        return z[0] if scalar else z
    rot = np.exp(-1j * lam)
    w = z * rot
    out = np.empty_like(w)
    r = np.abs(w)
    boundary = np.abs(r - 1.0) <= _CIRCLE_TOL
    interior = (~boundary) & (r < 1.0)
    exterior = (~boundary) & (r > 1.0)
    origin = interior & (r == 0.0)
    antipode = interior & (np.abs(1.0 + w) < 1e-12)
    generic = interior & ~origin & ~antipode
    out[origin] = 0.0
    out[antipode] = w[antipode]
    if np.any(generic):
        v = _m(w[generic]) * np.exp(-dt)
        out[generic] = _m_inv_disc(v)
    if np.any(boundary):
        theta = np.angle(w[boundary])
        th, sw, rr = _radial_boundary_flow(theta, dt, BACKWARD)
        out[boundary] = np.where(sw, rr.astype(complex), np.exp(1j * th))
    if np.any(exterior):
        inv = 1.0 / np.conj(w[exterior])
        sub = radial_backward_step(inv, 0.0, dt)
        out[exterior] = 1.0 / np.conj(sub)
    out = out / rot
    return out[0] if scalar else out


def radial_forward_step(z, lam, dt):
    """Exact forward radial step; inverse of `radial_backward_step`."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    z = np.asarray(z, dtype=complex)
    scalar = z.ndim == 0
    z = np.atleast_1d(z).copy()
    if dt == 0.0:
        return z[0] if scalar else z
    rot = np.exp(-1j * lam)
    w = z * rot
    out = np.empty_like(w)
    r = np.abs(w)
    boundary = np.abs(r - 1.0) <= _CIRCLE_TOL
    interior = (~boundary) & (r < 1.0)
    exterior = (~boundary) & (r > 1.0)
    origin = interior & (r == 0.0)
    antipode = interior & (np.abs(1.0 + w) < 1e-12)
    generic = interior & ~origin & ~antipode
    out[origin] = 0.0
    out[antipode] = w[antipode]
    if np.any(generic):
        v0 = _m(w[generic])
        swallowed = (
            (np.abs(v0.imag) <= 1e-14 * np.maximum(np.abs(v0.real), 1.0))
            & (v0.real > 0.0)
            & (v0.real * np.exp(dt) >= 0.25)
        )
        if np.any(swallowed):
            raise DomainError("forward radial step: point inside the swallowed set")
        out[generic] = _m_inv_disc(v0 * np.exp(dt))
    if np.any(boundary):
        theta = np.angle(w[boundary])
        if np.any(theta == 0.0):
            raise BranchPointError("forward radial step at the driving point")
        th, _, _ = _radial_boundary_flow(theta, dt, FORWARD)
        out[boundary] = np.exp(1j * th)
    if np.any(exterior):
        inv = 1.0 / np.conj(w[exterior])
        sub = radial_forward_step(inv, 0.0, dt)
        out[exterior] = 1.0 / np.conj(sub)
    out = out / rot
    return out[0] if scalar else out


# ---------------------------------------------------------------------------
# step jets (value + derivatives of one elementary map)
# ---------------------------------------------------------------------------

def _chordal_step_jet(z, lam, dt, direction, order):
    if direction == BACKWARD:
        f = chordal_backward_step(z, lam, dt)
        sgn = -1.0
    else:
        f = chordal_forward_step(z, lam, dt)
        sgn = 1.0
    jet = [f]
    if order >= 1:
        s = f - lam
        d = np.asarray(z, dtype=complex) - lam
        if np.any(np.abs(s) == 0.0):
            raise SingularJetError("derivative at a chordal branch point")
        jet.append(d / s)
        if order >= 2:
            jet.append(sgn * 4.0 * dt / s**3)
        if order >= 3:
            jet.append(-sgn * 12.0 * dt * d / s**5)
    return jet


def _antipode_jet(dt, direction):
    """Taylor data of the radial step at its antipodal fixed point w = -1.

    From (1+F)^2/F = q^{-1} (1+w)^2/w expanded at the fixed point:
    F = -1 + a e + b e^2 + c e^3 with a = Q^{1/2}, Q = 1/q.
    """
    q = np.exp(-dt) if direction == BACKWARD else np.exp(dt)
    a = 1.0 / np.sqrt(q)
    b = 0.5 * a * (1.0 - a)
    c = (a * a - a**4 - b * b - 3.0 * a * a * b) / (2.0 * a)
    return a, 2.0 * b, 6.0 * c


def _radial_step_jet(z, lam, dt, direction, order):
    if direction == BACKWARD:
        f = radial_backward_step(z, lam, dt)
        q = np.exp(-dt)
    else:
        f = radial_forward_step(z, lam, dt)
        q = np.exp(dt)
    jet = [f]
    if order == 0:
        return jet
    rot = np.exp(-1j * lam)
    w = np.asarray(z, dtype=complex) * rot
    F = np.asarray(f, dtype=complex) * rot
    near_fix = np.abs(1.0 + w) < 1e-6
    wp = np.where(near_fix, 0.0, w)  # placeholder, overwritten below
    Fp = np.where(near_fix, 0.0, F)
    mF1 = _m_prime(Fp)
    if np.any((np.abs(mF1) == 0.0) & ~near_fix):
        raise SingularJetError("radial jet at the slit tip")
    mF1 = np.where(near_fix, 1.0, mF1)
    f1 = q * _m_prime(wp) / mF1
    a1, a2, a3 = _antipode_jet(dt, direction)
    eps = 1.0 + w
    f1 = np.where(near_fix, a1 + a2 * eps + 0.5 * a3 * eps * eps, f1)
    jet.append(f1)
    if order >= 2:
        mw2 = 2.0 * (wp - 2.0) / (1.0 + wp) ** 4
        mF2 = 2.0 * (Fp - 2.0) / (1.0 + Fp) ** 4
        mF2 = np.where(near_fix, 0.0, mF2)
        f2 = (q * mw2 - mF2 * f1 * f1) / mF1
        f2 = np.where(near_fix, a2 + a3 * eps, f2)
        jet.append(rot * f2)
        if order >= 3:
            mw3 = 6.0 * (3.0 - wp) / (1.0 + wp) ** 5
            mF3 = 6.0 * (3.0 - Fp) / (1.0 + Fp) ** 5
            mF3 = np.where(near_fix, 0.0, mF3)
            f3 = (q * mw3 - mF3 * f1**3 - 3.0 * mF2 * f1 * f2) / mF1
            f3 = np.where(near_fix, a3, f3)
            jet.append(rot * rot * f3)
    return jet


def _compose_jet(outer, inner, order):
    """Faa di Bruno to third order: jet of outer∘(map with jet `inner`)."""
    out = [outer[0]]
    if order >= 1:
        out.append(outer[1] * inner[1])
        if order >= 2:
            out.append(outer[2] * inner[1] ** 2 + outer[1] * inner[2])
        if order >= 3:
            out.append(
                outer[3] * inner[1] ** 3
                + 3.0 * outer[2] * inner[1] * inner[2]
                + outer[1] * inner[3]
            )
    return out


# ---------------------------------------------------------------------------
# driving paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DrivingPath:
    """Sampled driving function on a strictly increasing time grid.

    values are positions on R (chordal) or angles in radians (radial).
    kappa/rho metadata travels with the path but does not affect evaluation.
    """

    t: np.ndarray
    values: np.ndarray
    geometry: str = CHORDAL
    kappa: float = 0.0
    rho: tuple = ()

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", v)
        if self.geometry not in (CHORDAL, RADIAL):
            raise GeometryError(f"unknown geometry {self.geometry!r}")
        if t.ndim != 1 or v.shape != t.shape or t.size < 1:
            raise ValueError("t and values must be 1-d arrays of equal length")
        if t[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if t.size > 1 and not np.all(np.diff(t) > 0.0):
            raise ValueError("time grid must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise ValueError("non-finite driving data")

    @property
    def horizon(self):
        return float(self.t[-1])

    @property
    def n_steps(self):
        return self.t.size - 1

    def step_durations(self):
        return np.diff(self.t)

    def step_values(self):
        """Driving value per step: midpoint of the increment interpolation."""
        return 0.5 * (self.values[:-1] + self.values[1:])

    def value_at(self, s):
        return float(np.interp(s, self.t, self.values))

    def restrict(self, T):
        """Initial segment up to time T (T must not exceed the horizon)."""
        if T > self.horizon + 1e-12:
            raise ValueError("T beyond horizon")
        n = int(np.searchsorted(self.t, T, side="right")) - 1
        t = self.t[: n + 1]
        v = self.values[: n + 1]
        if t[-1] < T - 1e-15:
            t = np.append(t, T)
            v = np.append(v, np.interp(T, self.t, self.values))
        return DrivingPath(t, v, self.geometry, self.kappa, self.rho)


# ---------------------------------------------------------------------------
# map stacks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MapStack:
    """Ordered composition of elementary steps, earliest step innermost.

    A backward stack evaluates f_T = B_{n-1} ∘ ... ∘ B_0; a forward stack
    evaluates g_T = F_{n-1} ∘ ... ∘ F_0.  Immutable, evaluation is pure.
    """

    lams: np.ndarray
    dts: np.ndarray
    geometry: str = CHORDAL
    direction: str = BACKWARD
    t0: float = 0.0

    def __post_init__(self):
        lams = np.atleast_1d(np.asarray(self.lams, dtype=float))
        dts = np.atleast_1d(np.asarray(self.dts, dtype=float))
        object.__setattr__(self, "lams", lams)
        object.__setattr__(self, "dts", dts)
        if lams.shape != dts.shape:
            raise ValueError("lams and dts must have equal length")
        if np.any(dts < 0):
            raise ValueError("step durations must be >= 0")
        if self.geometry not in (CHORDAL, RADIAL):
            raise GeometryError(f"unknown geometry {self.geometry!r}")
        if self.direction not in (BACKWARD, FORWARD):
            raise ValueError(f"unknown direction {self.direction!r}")

    # -- construction -------------------------------------------------------

    @staticmethod
    def from_driving(path: DrivingPath, direction: str = BACKWARD) -> "MapStack":
        return MapStack(
            path.step_values(),
            path.step_durations(),
            path.geometry,
            direction,
            float(path.t[0]),
        )

    @property
    def n_steps(self):
        return self.lams.size

    @property
    def duration(self):
        return float(np.sum(self.dts))

    @property
    def t_span(self):
        return (self.t0, self.t0 + self.duration)

    def concat(self, later: "MapStack") -> "MapStack":
        """Composition semantics of the hull product: self's steps first."""
        if later.geometry != self.geometry or later.direction != self.direction:
            raise GeometryError("stack concat requires matching geometry/direction")
        return MapStack(
            np.concatenate([self.lams, later.lams]),
            np.concatenate([self.dts, later.dts]),
            self.geometry,
            self.direction,
            self.t0,
        )

    def sub(self, t1: float, t2: float) -> "MapStack":
        """Sub-stack over [t1, t2]; straddling steps are split exactly."""
        a, b = self.t_span
        if not (a - 1e-12 <= t1 <= t2 <= b + 1e-12):
            raise ValueError("sub-stack times out of range")
        edges = self.t0 + np.concatenate([[0.0], np.cumsum(self.dts)])
        lams, dts = [], []
        for i in range(self.n_steps):
            lo, hi = max(edges[i], t1), min(edges[i + 1], t2)
            if hi - lo > 0.0:
                lams.append(self.lams[i])
                dts.append(hi - lo)
        if not lams:
            lams, dts = [0.0], [0.0]
        return MapStack(np.array(lams), np.array(dts), self.geometry, self.direction, t1)

    def reversed_forward(self) -> "MapStack":
        """Forward chain driven by the time-reversed driving sequence."""
        if self.direction != BACKWARD:
            raise ValueError("reversed_forward is defined for backward stacks")
        return MapStack(self.lams[::-1], self.dts[::-1], self.geometry, FORWARD, self.t0)

    # -- evaluation ---------------------------------------------------------

    def _step(self, z, i):
        lam, dt = self.lams[i], self.dts[i]
        if self.geometry == CHORDAL:
            if self.direction == BACKWARD:
                return chordal_backward_step(z, lam, dt)
            return chordal_forward_step(z, lam, dt)
        if self.direction == BACKWARD:
            return radial_backward_step(z, lam, dt)
        return radial_forward_step(z, lam, dt)

    def _inverse_step(self, z, i):
        lam, dt = self.lams[i], self.dts[i]
        if self.geometry == CHORDAL:
            if self.direction == BACKWARD:
                return chordal_forward_step(z, lam, dt)
            return chordal_backward_step(z, lam, dt)
        if self.direction == BACKWARD:
            return radial_forward_step(z, lam, dt)
        return radial_backward_step(z, lam, dt)

    def __call__(self, z):
        return self.evaluate(z)

    def evaluate(self, z):
        """Value of the composed map at z (boundary rules on R / the circle)."""
        out = np.asarray(z, dtype=complex)
        for i in range(self.n_steps):
            out = self._step(out, i)
        return out

    def evaluate_inverse(self, z):
        """Value of the inverse map (g for a backward stack) at z."""
        out = np.asarray(z, dtype=complex)
        for i in range(self.n_steps - 1, -1, -1):
            out = self._inverse_step(out, i)
        return out

    def evaluate_jet(self, z, order=1):
        """Value and derivatives up to `order` (<= 3) via the chain rule."""
        if not 0 <= order <= 3:
            raise ValueError("order must be in 0..3")
        z = np.asarray(z, dtype=complex)
        jet = [z, np.ones_like(z), np.zeros_like(z), np.zeros_like(z)][: order + 1]
        for i in range(self.n_steps):
            lam, dt = self.lams[i], self.dts[i]
            if self.geometry == CHORDAL:
                step_jet = _chordal_step_jet(jet[0], lam, dt, self.direction, order)
            else:
                step_jet = _radial_step_jet(jet[0], lam, dt, self.direction, order)
            jet = _compose_jet(step_jet, jet, order)
        return tuple(jet)

    def evaluate_deviation(self, z):
        """f(z) - z computed increment-by-increment (no cancellation).

        Chordal only; used for capacity extraction at large |z|.
        """
        if self.geometry != CHORDAL:
            raise GeometryError("deviation form is chordal-only")
        z = np.asarray(z, dtype=complex)
        sgn = -1.0 if self.direction == BACKWARD else 1.0
        acc = np.zeros_like(z)
        cur = z
        for i in range(self.n_steps):
            lam, dt = self.lams[i], self.dts[i]
            nxt = self._step(cur, i)
            inc = sgn * 4.0 * dt / ((nxt - lam) + (cur - lam))
            acc = acc + inc
            cur = nxt
        return acc

    # -- serialization ------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema_version": SCHEMA_VERSION,
                "geometry": self.geometry,
                "direction": self.direction,
                "t0": self.t0,
                "steps": [[float(l), float(d)] for l, d in zip(self.lams, self.dts)],
            }
        )

    @staticmethod
    def from_json(text: str) -> "MapStack":
        doc = json.loads(text)
        steps = np.asarray(doc["steps"], dtype=float).reshape(-1, 2)
        return MapStack(
            steps[:, 0], steps[:, 1], doc["geometry"], doc["direction"], doc.get("t0", 0.0)
        )


# ---------------------------------------------------------------------------
# capacity
# ---------------------------------------------------------------------------

def capacity(stack: MapStack) -> float:
    """hcap (chordal: 2*sum dt) or dcap (radial: sum dt) of the stack's hull."""
    total = stack.duration
    return 2.0 * total if stack.geometry == CHORDAL else total


def capacity_extracted(stack: MapStack, probe: float = 1e6) -> float:
    """Capacity recovered from the evaluated map, not the bookkeeping.

    Chordal: the 1/z coefficient of f at z = i*probe via the stable
    deviation form.  Radial: -ln|f'(0)| (backward) or +ln|g'(0)| (forward).
    """
    if stack.geometry == CHORDAL:
        z = 1j * probe
        dev = stack.evaluate_deviation(z)
        c = (-dev * z).real if stack.direction == BACKWARD else (dev * z).real
        return float(c)
    _, d1 = stack.evaluate_jet(np.complex128(0.0), order=1)
    mag = float(np.abs(d1))
    return -np.log(mag) if stack.direction == BACKWARD else np.log(mag)


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Trace:
    """Polyline of a Loewner trace with its matching times."""

    t: np.ndarray
    points: np.ndarray
    kind: str = "backward-at-horizon"
    geometry: str = CHORDAL
    gaps: tuple = ()

    def to_csv(self, fh):
        fh.write("t,re,im\n")
        for t, p in zip(self.t, self.points):
            fh.write(f"{t!r},{p.real!r},{p.imag!r}\n")


def _birth_point(path: DrivingPath, i: int):
    v = path.values[i]
    return complex(v) if path.geometry == CHORDAL else np.exp(1j * v)


def compute_trace(path: DrivingPath, direction: str = BACKWARD, max_points: int = 2048) -> Trace:
    """Trace of the (backward or forward) chain driven by `path`.

    Backward: beta_T(t_i) = f_{T,t_i}(driving point at t_i), computed by
    boundary evaluation through partial stacks.  Forward: the usual trace
    gamma(t_i), via inverse steps in reverse order.
    """
    n = path.n_steps
    if n == 0:
        p = np.array([_birth_point(path, 0)])
        return Trace(path.t.copy(), p, "backward-at-horizon", path.geometry)
    stride = max(1, int(np.ceil((n + 1) / max_points)))
    idx = list(range(0, n + 1, stride))
    if idx[-1] != n:
        idx.append(n)
    stack = MapStack.from_driving(path, BACKWARD)
    pts = np.empty(len(idx), dtype=complex)
    gaps = []
    if direction == BACKWARD:
        live = np.empty(0, dtype=complex)
        born = 0
        for i in range(n):
            while born < len(idx) and idx[born] == i:
                live = np.append(live, _birth_point(path, i))
                born += 1
            live = stack._step(live, i)
        while born < len(idx):
            live = np.append(live, _birth_point(path, idx[born]))
            born += 1
        pts[:] = live
        kind = "backward-at-horizon"
    else:
        # gamma(t_k) = inverse of the forward chain at the driving point:
        # backward steps k-1, ..., 0 applied to lambda(t_k)
        live = np.empty(0, dtype=complex)
        born = len(idx) - 1
        for i in range(n - 1, -1, -1):
            while born >= 0 and idx[born] == i + 1:
                live = np.append(live, _birth_point(path, i + 1))
                born -= 1
            live = stack._step(live, i)
        while born >= 0:
            live = np.append(live, _birth_point(path, idx[born]))
            born -= 1
        pts[:] = live[::-1]
        kind = "forward"
    t = path.t[np.asarray(idx)]
    return Trace(t, pts, kind, path.geometry, tuple(gaps))
