"""Receding-horizon path tracking with a kinematic bicycle plant.

The controller works on the 5-dim error state ``[d, d_dot, theta, theta_dot,
v_err]`` (lateral offset, heading error, speed error and their rates) and the
2-dim input ``[gamma, a]`` (steering angle, acceleration). Lateral offset is
positive to the left of the path; positive steering turns counterclockwise.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ProblemError
from .problem import LqrProblem
from .solvers import Variant, solve_variant


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = math.remainder(a, 2.0 * math.pi)
    return math.pi if w == -math.pi else w


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    yaw: float
    v: float

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))


@dataclass(frozen=True)
class ErrorState:
    d: float = 0.0
    d_dot: float = 0.0
    theta: float = 0.0
    theta_dot: float = 0.0
    v_err: float = 0.0

    def as_array(self):
        return np.array([self.d, self.d_dot, self.theta, self.theta_dot, self.v_err])


@dataclass(frozen=True)
class ControlInput:
    gamma: float
    a: float

    def clamped(self, max_steer):
        return ControlInput(min(max(self.gamma, -max_steer), max_steer), self.a)


@dataclass(frozen=True)
class Projection:
    point: tuple
    d: float
    yaw: float
    curvature: float
    speed: float
    s: float
    distance: float


class ReferencePath:
    """Polyline reference with per-segment heading, curvature and target speed."""

    def __init__(self, x, y, curvature=None, speed=1.0):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if self.x.shape != self.y.shape or self.x.size < 2:
            raise ProblemError("a reference path needs at least two waypoints")
        dx, dy = np.diff(self.x), np.diff(self.y)
        self.seg_len = np.hypot(dx, dy)
        if np.any(self.seg_len == 0):
            raise ProblemError("consecutive waypoints must be distinct")
        self.seg_yaw = np.arctan2(dy, dx)
        self.s = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        nseg = self.seg_len.size
        self.curvature = np.zeros(nseg) if curvature is None else np.broadcast_to(
            np.asarray(curvature, dtype=float), (nseg,)).copy()
        self.speed = np.broadcast_to(np.asarray(speed, dtype=float), (nseg,)).copy()

    @property
    def length(self):
        return float(self.s[-1])

    @property
    def end(self):
        return float(self.x[-1]), float(self.y[-1])

    @property
    def yaw(self):
        return np.append(self.seg_yaw, self.seg_yaw[-1])

    @classmethod
    def from_segments(cls, segments, speed, origin=(0.0, 0.0), heading=0.0, spacing=0.05):
        """Chain straight and circular-arc pieces.

        Each segment is ``{"type": "straight", "length": L}`` or
        ``{"type": "arc", "radius": r, "angle_deg": a}`` (positive angle turns
        left).
        """
        if not segments:
            raise ProblemError("course has no segments")
        xs, ys, ks = [float(origin[0])], [float(origin[1])], []
        yaw = float(heading)
        for seg in segments:
            kind = seg.get("type")
            if kind == "straight":
                length = float(seg["length"])
                if length <= 0:
                    raise ProblemError("straight segment needs a positive length")
                steps = max(1, int(math.ceil(length / spacing)))
                for i in range(1, steps + 1):
                    xs.append(xs[-1] + length / steps * math.cos(yaw))
                    ys.append(ys[-1] + length / steps * math.sin(yaw))
                    ks.append(0.0)
            elif kind == "arc":
                radius = float(seg["radius"])
                angle = math.radians(float(seg["angle_deg"]))
                if radius <= 0 or angle == 0:
                    raise ProblemError("arc segment needs positive radius and nonzero angle")
                turn = 1.0 if angle > 0 else -1.0
                cx = xs[-1] - turn * radius * math.sin(yaw)
                cy = ys[-1] + turn * radius * math.cos(yaw)
                steps = max(1, int(math.ceil(radius * abs(angle) / spacing)))
                for i in range(1, steps + 1):
                    a = yaw + angle * i / steps
                    xs.append(cx + turn * radius * math.sin(a))
                    ys.append(cy - turn * radius * math.cos(a))
                    ks.append(turn / radius)
                yaw += angle
            else:
                raise ProblemError(f"unknown segment type {kind!r}")
        return cls(xs, ys, ks, speed)

    def project(self, x, y):
        """Closest point on the polyline and the signed offset to it."""
        px, py = x - self.x[:-1], y - self.y[:-1]
        tx, ty = np.cos(self.seg_yaw), np.sin(self.seg_yaw)
        t = np.clip(px * tx + py * ty, 0.0, self.seg_len)
        qx, qy = self.x[:-1] + t * tx, self.y[:-1] + t * ty
        dist2 = (x - qx) ** 2 + (y - qy) ** 2
        i = int(np.argmin(dist2))
        d = -math.sin(self.seg_yaw[i]) * (x - qx[i]) + math.cos(self.seg_yaw[i]) * (y - qy[i])
        return Projection(
            (float(qx[i]), float(qy[i])), float(d), float(self.seg_yaw[i]),
            float(self.curvature[i]), float(self.speed[i]), float(self.s[i] + t[i]),
            math.sqrt(float(dist2[i])),
        )


BENCHMARK_COURSE = (
    {"type": "straight", "length": 10.0},
    {"type": "arc", "radius": 5.0, "angle_deg": 90.0},
    {"type": "straight", "length": 10.0},
)


def benchmark_course(speed=2.0, origin=(0.0, 0.0), heading=0.0):
    return ReferencePath.from_segments(BENCHMARK_COURSE, speed, origin, heading)


def linearize_error_dynamics(v, dt, L):
    """Discrete error model around a reference moving at speed ``v``."""
    if dt <= 0 or L <= 0:
        raise ProblemError("dt and wheelbase must be positive")
    A = np.zeros((5, 5))
    A[0, 0] = 1.0
    A[0, 1] = dt
    A[1, 2] = v
    A[2, 2] = 1.0
    A[2, 3] = dt
    A[4, 4] = 1.0
    B = np.zeros((5, 2))
    B[3, 0] = v / L
    B[4, 1] = dt
    return A, B


def compute_error_state(s, ref, prev=None, dt=0.1, projection=None):
    """Error of ``s`` against ``ref``; rates are backward differences over ``dt``."""
    proj = projection or ref.project(s.x, s.y)
    theta = wrap_angle(s.yaw - proj.yaw)
    v_err = s.v - proj.speed
    if prev is None:
        return ErrorState(proj.d, 0.0, theta, 0.0, v_err)
    return ErrorState(
        proj.d, (proj.d - prev.d) / dt,
        theta, wrap_angle(theta - prev.theta) / dt,
        v_err,
    )


def step_vehicle(s, u, dt, L):
    """Forward-Euler kinematic bicycle step."""
    return VehicleState(
        s.x + s.v * math.cos(s.yaw) * dt,
        s.y + s.v * math.sin(s.yaw) * dt,
        s.yaw + s.v / L * math.tan(u.gamma) * dt,
        s.v + u.a * dt,
    )


@dataclass
class SimConfig:
    dt: float = 0.1
    L: float = 0.5
    max_steer: float = 0.6
    goal_tol: float = 0.3
    max_steps: int = 500
    N: int = 50
    variant: str = "sequ"
    weight_exponent: int = 10
    q_diag: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)
    r_diag: tuple = (1.0, 1.0)
    feedforward: bool = True
    dtype: type = np.float64

    def __post_init__(self):
        if self.dt <= 0 or self.L <= 0 or self.N < 1:
            raise ProblemError("SimConfig needs dt > 0, L > 0 and N >= 1")
        self.variant = Variant(self.variant).value


TRACE_COLUMNS = (
    "step", "t", "x", "y", "yaw", "v", "d", "theta", "v_err",
    "gamma", "a", "step_cost", "cumulative_cost",
)


@dataclass
class SimResult:
    variant: str
    rows: list
    cost: float
    converged: bool
    terminal_lateral: float
    solve_times: list = field(default_factory=list)
    residuals: list = field(default_factory=list)

    @property
    def steps(self):
        return len(self.rows) - 1

    def summary(self):
        times = np.asarray(self.solve_times) if self.solve_times else np.zeros(1)
        return {
            "variant": self.variant,
            "accumulated_cost": self.cost,
            "steps": self.steps,
            "converged": self.converged,
            "terminal_lateral": self.terminal_lateral,
            "max_dynamics_residual": max(self.residuals, default=0.0),
            "solve_latency_s": {
                "mean": float(times.mean()),
                "median": float(np.median(times)),
                "max": float(times.max()),
            },
        }


class SimulationError(RuntimeError):
    def __init__(self, step, variant, cause):
        super().__init__(f"{variant} solve failed at step {step}: {cause}")
        self.step = step
        self.variant = variant


def run_closed_loop(cfg, ref, start):
    """Track ``ref`` from ``start``, re-solving the LQR problem every step.

    The accumulated cost sums the squared distance between the vehicle and its
    projection on the path at every sampled step, the final one included.
    """
    q = np.diag(np.asarray(cfg.q_diag, dtype=float))
    r = np.diag(np.asarray(cfg.r_diag, dtype=float))
    s, prev = start, None
    rows, times, residuals = [], [], []
    cum = 0.0
    converged = False
    end = ref.end
    for step in range(cfg.max_steps + 1):
        proj = ref.project(s.x, s.y)
        err = compute_error_state(s, ref, prev, cfg.dt, proj)
        step_cost = proj.distance ** 2
        cum += step_cost
        converged = math.hypot(s.x - end[0], s.y - end[1]) <= cfg.goal_tol
        if converged or step == cfg.max_steps:
            u = ControlInput(0.0, 0.0)
        else:
            A, B = linearize_error_dynamics(s.v, cfg.dt, cfg.L)
            p = LqrProblem(A, B, q, r, cfg.N, err.as_array(), cfg.weight_exponent)
            t0 = time.perf_counter()
            try:
                traj, diag = solve_variant(p, cfg.variant, cfg.dtype)
            except Exception as exc:
                raise SimulationError(step, cfg.variant, exc) from exc
            times.append(time.perf_counter() - t0)
            residuals.append(diag["dynamics_residual"])
            fb = traj.controls[0].astype(float)
            ff = math.atan(cfg.L * proj.curvature) if cfg.feedforward else 0.0
            u = ControlInput(ff + fb[0], fb[1]).clamped(cfg.max_steer)
        rows.append({
            "step": step, "t": step * cfg.dt, "x": s.x, "y": s.y, "yaw": s.yaw, "v": s.v,
            "d": err.d, "theta": err.theta, "v_err": err.v_err,
            "gamma": u.gamma, "a": u.a, "step_cost": step_cost, "cumulative_cost": cum,
        })
        if converged or step == cfg.max_steps:
            break
        prev = err
        s = step_vehicle(s, u, cfg.dt, cfg.L)
    return SimResult(cfg.variant, rows, cum, converged, abs(rows[-1]["d"]), times, residuals)


BENCHMARK_START = VehicleState(0.0, 0.5, 0.0, 1.5)
BENCHMARK_X0 = (0.5, 0.0, 0.1, 0.0, -0.5)


def benchmark_problem(N=50, weight_exponent=10, v=2.0, dt=0.1, L=0.5, x0=BENCHMARK_X0):
    """Open-loop problem for the benchmark course's nominal operating point."""
    A, B = linearize_error_dynamics(v, dt, L)
    return LqrProblem(A, B, np.eye(5), np.eye(2), N, np.asarray(x0, dtype=float), weight_exponent)
