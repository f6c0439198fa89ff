"""Lumped electro-thermo-mechanical model of a brushed DC machine.

State is the triple (armature current, speed, temperature rise above ambient).
The three rates are

    di/dt  = (V - R(theta) i - k_e w) / l_a
    dw/dt  = (k_e i - b w - T_L) / J
    dth/dt = (R(theta) i^2 + k_ir w^2 - K (1 + KS w) theta) / H

with R(theta) = R_a0 (1 + alpha_cu theta).  The scalar kernels below are plain
Python; the long-horizon integration loop is the same source compiled with
numba so that a full thermal-equilibrium run at dt = 1e-4 s stays cheap.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Iterable, NamedTuple

import numba
import numpy as np

__all__ = [
    "TABLE_VALUES",
    "OMEGA_TARGET",
    "THETA_TARGET",
    "DEFAULT_J",
    "DEFAULT_B",
    "DEFAULT_DT",
    "MotorParams",
    "MotorState",
    "DriveProfile",
    "Trajectory",
    "Calibration",
    "SimulationError",
    "SteadyStateError",
    "resistance_at",
    "power_losses",
    "heat_dissipation",
    "derivative",
    "jacobian",
    "rk4_step",
    "simulate",
    "steady_state",
    "equilibrium_residual",
    "per_unit",
    "energy_balance_error",
    "slowest_time_constant",
    "stability_limit",
    "calibrate_unstated_params",
    "default_setup",
    "s1_horizon",
    "write_trajectory_csv",
    "read_trajectory_csv",
]

# Values printed in the motor table and in the model description.
TABLE_VALUES: dict[str, float] = {
    "v_rated": 240.0,
    "p_rated": 3000.0,
    "tl_rated": 11.0,
    "r_a0": 3.5,
    "l_a": 0.034,
    "alpha_cu": 0.004,
    "k_ir": 0.0041,
    "k_th": 4.33,
    "ks": 0.0028,
    "h_th": 18000.0,
}

# Operating point implied by the reported steady-state errors:
# 0.015 rad/s is 0.0067 % of the final speed, and R = 4.60 ohm at equilibrium.
OMEGA_TARGET = 0.015 / 0.000067
THETA_TARGET = (4.60 / 3.5 - 1.0) / 0.004

DEFAULT_J = 0.05
DEFAULT_B = 0.001
DEFAULT_DT = 1e-4


class SimulationError(RuntimeError):
    """Integration produced a non-finite state."""

    def __init__(self, message: str, t: float):
        super().__init__(message)
        self.t = t


class SteadyStateError(RuntimeError):
    pass


@dataclass(frozen=True, kw_only=True)
class MotorParams:
    """Physical constants of the machine (SI units, temperatures in K above ambient).

    ``k_e`` has no default: the table never states it, see
    :func:`calibrate_unstated_params` or :func:`default_setup`.
    """

    k_e: float
    v_rated: float = TABLE_VALUES["v_rated"]
    p_rated: float = TABLE_VALUES["p_rated"]
    tl_rated: float = TABLE_VALUES["tl_rated"]
    r_a0: float = TABLE_VALUES["r_a0"]
    l_a: float = TABLE_VALUES["l_a"]
    j: float = DEFAULT_J
    b: float = DEFAULT_B
    alpha_cu: float = TABLE_VALUES["alpha_cu"]
    k_ir: float = TABLE_VALUES["k_ir"]
    k_th: float = TABLE_VALUES["k_th"]
    ks: float = TABLE_VALUES["ks"]
    h_th: float = TABLE_VALUES["h_th"]

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValueError(f"MotorParams.{f.name} must be finite and > 0, got {value!r}")

    @property
    def i_rated(self) -> float:
        return self.p_rated / self.v_rated

    @property
    def omega_rated(self) -> float:
        return self.p_rated / self.tl_rated

    def kernel_args(self) -> tuple[float, ...]:
        return (self.r_a0, self.alpha_cu, self.l_a, self.k_e, self.j, self.b,
                self.k_ir, self.k_th, self.ks, self.h_th)

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


class MotorState(NamedTuple):
    i_a: float
    omega: float
    theta: float


@dataclass(frozen=True)
class DriveProfile:
    """Piecewise-constant (start time, armature voltage, load torque) schedule."""

    segments: tuple[tuple[float, float, float], ...]

    def __post_init__(self) -> None:
        segs = tuple(tuple(float(x) for x in s) for s in self.segments)
        if not segs:
            raise ValueError("profile needs at least one segment")
        if segs[0][0] != 0.0:
            raise ValueError("first profile segment must start at t = 0")
        for (t0, _, _), (t1, _, _) in zip(segs, segs[1:]):
            if not t1 > t0:
                raise ValueError("profile segment times must be strictly increasing")
        for s in segs:
            if not all(math.isfinite(x) for x in s):
                raise ValueError("profile values must be finite")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def constant(cls, v_a: float, t_l: float) -> "DriveProfile":
        return cls(((0.0, v_a, t_l),))

    @classmethod
    def parse(cls, text: str) -> "DriveProfile":
        """Parse ``"t:v:tl;t:v:tl;..."``."""
        segs = []
        for chunk in text.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            parts = chunk.split(":")
            if len(parts) != 3:
                raise ValueError(f"bad profile segment {chunk!r}, expected t:v_a:t_l")
            segs.append(tuple(float(p) for p in parts))
        return cls(tuple(segs))

    def format(self) -> str:
        return ";".join(f"{t:.17g}:{v:.17g}:{tl:.17g}" for t, v, tl in self.segments)

    def at(self, t: float) -> tuple[float, float]:
        v, tl = self.segments[0][1:]
        for t0, v0, tl0 in self.segments:
            if t0 <= t:
                v, tl = v0, tl0
            else:
                break
        return v, tl


@dataclass
class Trajectory:
    t: np.ndarray
    v_a: np.ndarray
    i_a: np.ndarray
    omega: np.ndarray
    theta: np.ndarray
    resistance: np.ndarray

    COLUMNS = ("t", "v_a", "i_a", "omega", "theta", "resistance")

    def __len__(self) -> int:
        return len(self.t)

    def state(self, k: int) -> MotorState:
        return MotorState(float(self.i_a[k]), float(self.omega[k]), float(self.theta[k]))

    def as_array(self) -> np.ndarray:
        return np.column_stack([getattr(self, c) for c in self.COLUMNS])

    @classmethod
    def from_array(cls, data: np.ndarray) -> "Trajectory":
        data = np.atleast_2d(np.asarray(data, dtype=float))
        return cls(*(data[:, k].copy() for k in range(len(cls.COLUMNS))))


# -- scalar kernels ---------------------------------------------------------
# Kept free of Python objects so numba can compile them verbatim.

def _rates(i, w, th, v, tl, r_a0, alpha, l_a, k_e, j, b, k_ir, k_th, ks, h):
    r = r_a0 * (1.0 + alpha * th)
    di = (v - r * i - k_e * w) / l_a
    dw = (k_e * i - b * w - tl) / j
    dth = (r * i * i + k_ir * w * w - k_th * (1.0 + ks * w) * th) / h
    return di, dw, dth


def _make_rk4(rates):
    def rk4(i, w, th, v, tl, dt, r_a0, alpha, l_a, k_e, j, b, k_ir, k_th, ks, h):
        a1, b1, c1 = rates(i, w, th, v, tl, r_a0, alpha, l_a, k_e, j, b, k_ir, k_th, ks, h)
        hdt = 0.5 * dt
        a2, b2, c2 = rates(i + hdt * a1, w + hdt * b1, th + hdt * c1, v, tl,
                           r_a0, alpha, l_a, k_e, j, b, k_ir, k_th, ks, h)
        a3, b3, c3 = rates(i + hdt * a2, w + hdt * b2, th + hdt * c2, v, tl,
                           r_a0, alpha, l_a, k_e, j, b, k_ir, k_th, ks, h)
        a4, b4, c4 = rates(i + dt * a3, w + dt * b3, th + dt * c3, v, tl,
                           r_a0, alpha, l_a, k_e, j, b, k_ir, k_th, ks, h)
        s = dt / 6.0
        return (i + s * (a1 + 2.0 * a2 + 2.0 * a3 + a4),
                w + s * (b1 + 2.0 * b2 + 2.0 * b3 + b4),
                th + s * (c1 + 2.0 * c2 + 2.0 * c3 + c4))
    return rk4


_rk4_py = _make_rk4(_rates)
_rk4_jit = numba.njit(_make_rk4(numba.njit(_rates)))


@numba.njit
def _integrate(i, w, th, seg_step, seg_v, seg_tl, dt, n_steps, stride,
               r_a0, alpha, l_a, k_e, j, b, k_ir, k_th, ks, h, out):
    """Advance ``n_steps`` RK4 steps, writing every ``stride``-th state into ``out``.

    Returns the index of the first failing step, or -1.
    """
    seg = 0
    n_seg = seg_step.shape[0]
    out[0, 0] = seg_v[0]
    out[0, 1] = i
    out[0, 2] = w
    out[0, 3] = th
    row = 1
    for n in range(n_steps):
        while seg + 1 < n_seg and seg_step[seg + 1] <= n:
            seg += 1
        i, w, th = _rk4_jit(i, w, th, seg_v[seg], seg_tl[seg], dt,
                            r_a0, alpha, l_a, k_e, j, b, k_ir, k_th, ks, h)
        if not (math.isfinite(i) and math.isfinite(w) and math.isfinite(th)):
            return n
        if (n + 1) % stride == 0:
            nxt = seg
            while nxt + 1 < n_seg and seg_step[nxt + 1] <= n + 1:
                nxt += 1
            out[row, 0] = seg_v[nxt]
            out[row, 1] = i
            out[row, 2] = w
            out[row, 3] = th
            row += 1
    return -1


# -- closed-form pieces -----------------------------------------------------

def resistance_at(theta: float, p: MotorParams) -> float:
    if not math.isfinite(theta):
        raise ValueError(f"theta must be finite, got {theta!r}")
    if p.alpha_cu * theta <= -1.0:
        raise ValueError("alpha_cu * theta must exceed -1 (resistance would be non-positive)")
    return p.r_a0 * (1.0 + p.alpha_cu * theta)


def power_losses(s: MotorState, p: MotorParams) -> float:
    """Copper plus iron losses in watts."""
    return resistance_at(s.theta, p) * s.i_a ** 2 + p.k_ir * s.omega ** 2


def heat_dissipation(s: MotorState, p: MotorParams) -> float:
    return p.k_th * (1.0 + p.ks * s.omega) * s.theta


def derivative(s: MotorState, v_a: float, t_l: float, p: MotorParams) -> MotorState:
    return MotorState(*_rates(s.i_a, s.omega, s.theta, v_a, t_l, *p.kernel_args()))


def jacobian(s: MotorState, v_a: float, t_l: float, p: MotorParams) -> np.ndarray:
    """Analytic Jacobian of :func:`derivative` with respect to (i_a, omega, theta)."""
    i, w, th = s
    r = p.r_a0 * (1.0 + p.alpha_cu * th)
    dr = p.r_a0 * p.alpha_cu
    return np.array([
        [-r / p.l_a, -p.k_e / p.l_a, -dr * i / p.l_a],
        [p.k_e / p.j, -p.b / p.j, 0.0],
        [2.0 * r * i / p.h_th,
         (2.0 * p.k_ir * w - p.k_th * p.ks * th) / p.h_th,
         (dr * i * i - p.k_th * (1.0 + p.ks * w)) / p.h_th],
    ])


def rk4_step(s: MotorState, v_a: float, t_l: float, dt: float, p: MotorParams) -> MotorState:
    """One classical fourth-order Runge-Kutta step."""
    if not (dt > 0 and math.isfinite(dt)):
        raise ValueError(f"dt must be positive and finite, got {dt!r}")
    out = _rk4_py(s.i_a, s.omega, s.theta, v_a, t_l, dt, *p.kernel_args())
    if not all(math.isfinite(x) for x in out):
        raise SimulationError(f"non-finite state after RK4 step (dt={dt:g} too large?)", dt)
    return MotorState(*out)


def stability_limit(p: MotorParams) -> float:
    """Largest stable RK4 step for the electrical pole, evaluated at a 250 K rise."""
    # RK4 real-axis stability radius is ~2.78; the fastest pole is the electrical one.
    r_max = p.r_a0 * (1.0 + p.alpha_cu * 250.0)
    return 2.78 * p.l_a / r_max


def simulate(
    p: MotorParams,
    profile: DriveProfile,
    dt: float = DEFAULT_DT,
    t_end: float | None = None,
    sample_rate: float = 10.0,
    initial: MotorState | None = None,
) -> Trajectory:
    """Integrate the machine from ``initial`` (rest at ambient by default).

    States are recorded every ``1 / sample_rate`` seconds, which must be an
    integer multiple of ``dt``.  ``t_end`` defaults to :func:`s1_horizon`.
    """
    if not (dt > 0 and math.isfinite(dt)):
        raise ValueError(f"dt must be positive and finite, got {dt!r}")
    if dt >= stability_limit(p):
        raise ValueError(f"dt={dt:g} s exceeds the RK4 stability bound {stability_limit(p):.3g} s")
    if t_end is None:
        t_end = s1_horizon(p)
    if not (t_end >= 0 and math.isfinite(t_end)):
        raise ValueError(f"t_end must be finite and >= 0, got {t_end!r}")
    if not sample_rate > 0:
        raise ValueError("sample_rate must be > 0")
    stride_f = 1.0 / (sample_rate * dt)
    stride = int(round(stride_f))
    if stride < 1 or abs(stride_f - stride) > 1e-9 * stride_f:
        raise ValueError(f"1/sample_rate must be an integer multiple of dt (got ratio {stride_f:g})")
    n_samples = int(math.floor(t_end * sample_rate + 1e-9))
    n_steps = n_samples * stride

    seg_step = np.array([int(round(t0 / dt)) for t0, _, _ in profile.segments], dtype=np.int64)
    seg_v = np.array([s[1] for s in profile.segments])
    seg_tl = np.array([s[2] for s in profile.segments])
    s0 = initial if initial is not None else MotorState(0.0, 0.0, 0.0)
    out = np.zeros((n_samples + 1, 4))
    fail = _integrate(float(s0.i_a), float(s0.omega), float(s0.theta), seg_step, seg_v, seg_tl,
                      float(dt), n_steps, stride, *p.kernel_args(), out)
    if fail >= 0:
        t_fail = (fail + 1) * dt
        raise SimulationError(f"non-finite state at t = {t_fail:.6g} s", t_fail)
    t = np.arange(n_samples + 1) * stride * dt
    theta = out[:, 3]
    return Trajectory(t=t, v_a=out[:, 0].copy(), i_a=out[:, 1].copy(), omega=out[:, 2].copy(),
                      theta=theta.copy(), resistance=p.r_a0 * (1.0 + p.alpha_cu * theta))


# -- equilibrium ------------------------------------------------------------

def _row_scale(p: MotorParams) -> np.ndarray:
    # Rates -> per-unit row residuals (volts, newton-metres, watts over rated values).
    return np.array([p.l_a / p.v_rated, p.j / p.tl_rated, p.h_th / p.p_rated])


def equilibrium_residual(s: MotorState, v_a: float, t_l: float, p: MotorParams) -> np.ndarray:
    """Electrical, mechanical and thermal row residuals in per-unit of rated V, T_L and P."""
    return _row_scale(p) * np.asarray(derivative(s, v_a, t_l, p))


def per_unit(s: MotorState, p: MotorParams) -> np.ndarray:
    """State in per-unit: rated current, rated speed, and 1/alpha_cu for temperature."""
    return np.array([s.i_a / p.i_rated, s.omega / p.omega_rated, s.theta * p.alpha_cu])


def steady_state(
    p: MotorParams,
    v_a: float,
    t_l: float,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> MotorState:
    """Solve for the equilibrium with a damped Newton iteration.

    The start point is the cold (theta = 0) electromechanical equilibrium.
    Raises :class:`SteadyStateError` if the residual does not drop below ``tol``.
    """
    scale = _row_scale(p)
    det = p.r_a0 * p.b + p.k_e ** 2
    x = np.array([(v_a * p.b + p.k_e * t_l) / det, (p.k_e * v_a - p.r_a0 * t_l) / det, 0.0])

    def resid(x):
        return scale * np.asarray(_rates(x[0], x[1], x[2], v_a, t_l, *p.kernel_args()))

    f = resid(x)
    norm = np.linalg.norm(f)
    for _ in range(max_iter):
        if norm < tol:
            break
        jac = scale[:, None] * jacobian(MotorState(*x), v_a, t_l, p)
        try:
            step = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError as exc:
            raise SteadyStateError(f"singular Jacobian at {x}") from exc
        lam = 1.0
        while lam > 1e-8:
            trial = x + lam * step
            if p.alpha_cu * trial[2] > -1.0:
                f_trial = resid(trial)
                n_trial = np.linalg.norm(f_trial)
                if n_trial < norm:
                    break
            lam *= 0.5
        else:
            raise SteadyStateError(f"line search failed, residual {norm:.3g}")
        x, f, norm = trial, f_trial, n_trial
    if not norm < tol:
        raise SteadyStateError(f"no equilibrium after {max_iter} iterations (residual {norm:.3g})")
    return MotorState(float(x[0]), float(x[1]), float(x[2]))


def energy_balance_error(s: MotorState, p: MotorParams) -> float:
    """|P_loss - P_dissipated| / P_loss."""
    loss = power_losses(s, p)
    return abs(loss - heat_dissipation(s, p)) / loss


def slowest_time_constant(s: MotorState, v_a: float, t_l: float, p: MotorParams) -> float:
    eig = np.linalg.eigvals(jacobian(s, v_a, t_l, p))
    return float(1.0 / np.min(np.abs(eig.real)))


def s1_horizon(p: MotorParams) -> float:
    """Five zero-speed thermal time constants, H / K."""
    return 5.0 * p.h_th / p.k_th


# -- calibration ------------------------------------------------------------

@dataclass(frozen=True)
class Calibration:
    params: MotorParams
    omega_target: float
    theta_target: float
    i_target: float
    v_a: float
    t_l: float

    def report(self) -> list[str]:
        p = self.params
        return [
            f"calibration.omega_target = {self.omega_target:.17g}",
            f"calibration.theta_target = {self.theta_target:.17g}",
            f"calibration.i_target = {self.i_target:.17g}",
            f"calibration.k_e = {p.k_e:.17g}",
            f"calibration.j = {p.j:.17g}",
            f"calibration.b = {p.b:.17g}",
            f"calibration.v_a = {self.v_a:.17g}",
            f"calibration.t_l = {self.t_l:.17g}",
            f"calibration.t_l_rated = {p.tl_rated:.17g}",
        ]


def calibrate_unstated_params(
    omega_target: float = OMEGA_TARGET,
    theta_target: float = THETA_TARGET,
    *,
    v_a: float | None = None,
    j: float = DEFAULT_J,
    b: float = DEFAULT_B,
    **known: float,
) -> Calibration:
    """Fill in k_e (and the documented J, b defaults) from a target equilibrium.

    The thermal row fixes the current at the target point, the electrical row
    then fixes k_e.  The load torque that holds the point with viscous friction
    ``b`` follows from the mechanical row; it generally differs from the rated
    torque because the three rows cannot all be met with the rated value.
    """
    base = {**TABLE_VALUES, **known}
    v_a = base["v_rated"] if v_a is None else v_a
    r = base["r_a0"] * (1.0 + base["alpha_cu"] * theta_target)
    copper = base["k_th"] * (1.0 + base["ks"] * omega_target) * theta_target - base["k_ir"] * omega_target ** 2
    if copper < 0:
        raise ValueError("target point needs negative copper loss; thermal row inconsistent")
    i_t = math.sqrt(copper / r)
    k_e = (v_a - r * i_t) / omega_target
    if not k_e > 0:
        raise ValueError(f"target point forces non-positive k_e ({k_e:.6g})")
    params = MotorParams(k_e=k_e, j=j, b=b, **base)
    return Calibration(params=params, omega_target=omega_target, theta_target=theta_target,
                       i_target=i_t, v_a=v_a, t_l=k_e * i_t - b * omega_target)


def default_setup(**overrides: float) -> tuple[Calibration, DriveProfile]:
    """Calibrated machine and the single-segment S1 profile at rated voltage."""
    cal = calibrate_unstated_params(**overrides)
    return cal, DriveProfile.constant(cal.v_a, cal.t_l)


# -- CSV --------------------------------------------------------------------

def write_trajectory_csv(traj: Trajectory, path: str | Path, meta: Iterable[str] = ()) -> None:
    """Write ``t,v_a,i_a,omega,theta,resistance`` with 17 significant digits.

    ``meta`` lines are emitted first as ``# `` comments.
    """
    header = "".join(f"# {line}\n" for line in meta) + ",".join(Trajectory.COLUMNS)
    np.savetxt(path, traj.as_array(), fmt="%.17g", delimiter=",", header=header, comments="")


def read_trajectory_csv(path: str | Path) -> Trajectory:
    with open(path) as fh:
        lines = fh.read().splitlines()
    body = [(n, ln) for n, ln in enumerate(lines, 1) if ln.strip() and not ln.startswith("#")]
    if not body or body[0][1].strip() != ",".join(Trajectory.COLUMNS):
        raise ValueError(f"{path}: expected header {','.join(Trajectory.COLUMNS)!r}")
    rows = []
    for n, ln in body[1:]:
        parts = ln.split(",")
        if len(parts) != len(Trajectory.COLUMNS):
            raise ValueError(f"{path}:{n}: expected {len(Trajectory.COLUMNS)} fields")
        try:
            rows.append([float(x) for x in parts])
        except ValueError as exc:
            raise ValueError(f"{path}:{n}: {exc}") from None
    if not rows:
        raise ValueError(f"{path}: no samples")
    return Trajectory.from_array(np.array(rows))
