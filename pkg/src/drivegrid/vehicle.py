"""Vehicle actuation and the two planar dynamics backends.

All tunable numbers live in one 20-parameter vector (torques, PD gains,
suspension placeholders, damping, per-surface friction scales) shared by the
system-identification machinery and both backends.  The dynamic backend is a
planar single-track model stepped at 120 Hz; the bicycle backend applies
front-wheel-drive kinematic equations at each 30 Hz control tick.

The step kernels are written as elementwise numpy expressions over
broadcastable arrays: the batch engine passes (W, M) arrays and the scalar
reference path passes 0-d views per agent, so both execute identical math.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

GRAVITY = 9.81
PHYSICS_DT = 1.0 / 120.0
CONTROL_DT = 1.0 / 30.0
DECIMATION = 4
WHEEL_SPEED_LATCH_EPS = 1e-4   # below this the brake sign is unresolvable
WHEEL_SPEED_LIMIT = 200.0      # rad/s spin guard for saturated wheels
SLIP_SPEED_FLOOR = 0.5         # m/s floor in the lateral slip denominator

SURFACE_SCALE_KEYS = ("dry", "wet", "gravel")


@dataclass(frozen=True)
class VehicleParams:
    """Intrinsic vehicle parameters (identification-tuned defaults)."""

    # steering
    theta_max: float = 0.450            # rad
    kp_steer: float = 1839.5            # N*m/rad
    kd_steer: float = 110.5             # N*m*s/rad
    tau_steer_max: float = 1200.0       # N*m
    # drivetrain (per wheel)
    tau_drive_max: float = 600.7        # N*m, front wheels
    tau_brake_front: float = 1090.5     # N*m
    tau_brake_rear: float = 980.7       # N*m
    wheel_mass: float = 37.5            # kg
    inertia_scale: float = 1.094
    # suspension placeholders: fitted by sysid, pitch proxy disabled by default
    susp_stiffness: float = 1080.8      # N/m
    susp_damping: float = 2764.3        # N*s/m
    # chassis stabilization
    lambda_yaw: float = 10.6            # N*m*s/rad
    lambda_lat: float = 150.0           # N*s/m, calibrated default
    com_offset: float = 0.0             # m, forward shift of the mass center
    # per-surface friction scales
    f_lon_dry: float = 1.0
    f_lat_dry: float = 1.0
    f_lon_wet: float = 1.0
    f_lat_wet: float = 1.0
    f_lon_gravel: float = 1.0
    f_lat_gravel: float = 1.0
    # fixed geometry/mass (not part of the tunable vector)
    chassis_mass: float = 1800.0        # kg
    wheelbase: float = 2.6              # m
    wheel_radius: float = 0.35          # m
    yaw_inertia: float = 3000.0         # kg*m^2, box chassis estimate
    steer_inertia: float = 5.0          # kg*m^2 steering column
    cornering_stiffness: float = 60000.0  # N/rad per axle

    def __post_init__(self):
        for name in ("kp_steer", "kd_steer", "tau_steer_max", "tau_drive_max",
                     "tau_brake_front", "tau_brake_rear"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.theta_max < np.pi / 2:
            raise ValueError("theta_max must lie in (0, pi/2)")

    @property
    def wheel_inertia(self) -> float:
        # solid-disc estimate scaled by the fitted factor
        return self.inertia_scale * 0.5 * self.wheel_mass * self.wheel_radius**2

    def surface_scales(self, key: str) -> tuple[float, float]:
        if key not in SURFACE_SCALE_KEYS:
            raise ValueError(f"unknown surface scale {key!r}")
        return getattr(self, f"f_lon_{key}"), getattr(self, f"f_lat_{key}")


# The identification-tunable subset, in a fixed order.
TUNABLE_PARAMS = (
    "tau_drive_max", "tau_brake_front", "tau_brake_rear", "theta_max",
    "kp_steer", "kd_steer", "tau_steer_max", "wheel_mass", "inertia_scale",
    "susp_stiffness", "susp_damping", "lambda_yaw", "lambda_lat", "com_offset",
    "f_lon_dry", "f_lat_dry", "f_lon_wet", "f_lat_wet", "f_lon_gravel", "f_lat_gravel",
)


def params_to_vector(p: VehicleParams) -> np.ndarray:
    return np.array([getattr(p, k) for k in TUNABLE_PARAMS], dtype=np.float64)


def params_from_vector(vec, base: VehicleParams | None = None) -> VehicleParams:
    base = base or VehicleParams()
    return replace(base, **{k: float(v) for k, v in zip(TUNABLE_PARAMS, vec)})


def save_params(p: VehicleParams, path):
    """Flat key-value file, one `name = value` per line."""
    lines = [f"{f.name} = {getattr(p, f.name)!r}" for f in fields(p)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_params(path) -> VehicleParams:
    kv = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            kv[key.strip()] = float(value)
    return VehicleParams(**kv)


@dataclass
class AgentDynState:
    """Scalar dynamic state of a single agent (reference representation)."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    v_x: float = 0.0          # body longitudinal
    v_y: float = 0.0          # body lateral
    yaw_rate: float = 0.0
    steer_angle: float = 0.0
    steer_rate: float = 0.0
    wheel_front: float = 0.0  # rad/s
    wheel_rear: float = 0.0
    brake_sign_front: float = 1.0
    brake_sign_rear: float = 1.0


STATE_FIELDS = tuple(f.name for f in fields(AgentDynState))


def state_to_arrays(state: AgentDynState) -> dict[str, np.ndarray]:
    return {k: np.asarray(getattr(state, k), dtype=np.float64) for k in STATE_FIELDS}


def arrays_to_state(arrs: dict[str, np.ndarray]) -> AgentDynState:
    return AgentDynState(**{k: float(arrs[k]) for k in STATE_FIELDS})


# ---------- action decoding ----------

@dataclass(frozen=True)
class Action:
    throttle: float
    steering: float
    brake: float


def decode_action(raw) -> np.ndarray:
    """Rectify a raw policy output in [-1, 1]^3 to (throttle, steering, brake).

    Throttle and brake clamp to [0, 1] so a zero-mean policy idles; steering
    clamps to [-1, 1].
    """
    raw = np.asarray(raw, dtype=np.float64)
    out = np.empty_like(raw)
    out[..., 0] = np.clip(raw[..., 0], 0.0, 1.0)
    out[..., 1] = np.clip(raw[..., 1], -1.0, 1.0)
    out[..., 2] = np.clip(raw[..., 2], 0.0, 1.0)
    return out


def steering_effort(steer_angle, steer_rate, steering_cmd, p: VehicleParams):
    """PD steering torque, clamped to the actuator limit."""
    raw = p.kp_steer * (p.theta_max * steering_cmd - steer_angle) - p.kd_steer * steer_rate
    return np.clip(raw, -p.tau_steer_max, p.tau_steer_max)


def brake_effort(wheel_speed, brake_cmd, latched_sign, tau_brake):
    """Per-wheel brake torque opposing rotation, with a sign latch near zero.

    Returns (torque, updated latch).  The latch holds the last resolvable
    rotation sign so torque does not chatter around standstill.
    """
    resolvable = np.abs(wheel_speed) >= WHEEL_SPEED_LATCH_EPS
    sign = np.where(resolvable, np.sign(wheel_speed), latched_sign)
    torque = -sign * brake_cmd * tau_brake
    return torque, sign


# ---------- kinematic bicycle backend (30 Hz) ----------

BICYCLE_STEER_MAX = np.deg2rad(30.0)


@dataclass(frozen=True)
class BicycleParams:
    """Acceleration mapping of the kinematic backend (config-exposed)."""

    a_max: float = 0.95    # m/s^2 at full throttle
    b_max: float = 3.3     # m/s^2 at full brake
    c_roll: float = 0.05   # m/s^2 rolloff drag


def step_bicycle(state: dict, action, p: VehicleParams,
                 bp: BicycleParams = BicycleParams(), dt: float = CONTROL_DT) -> dict:
    """One kinematic bicycle tick.  ``state`` maps field name -> array."""
    throttle, steering, brake = action[..., 0], action[..., 1], action[..., 2]
    delta = steering * BICYCLE_STEER_MAX

    v = state["v_x"]
    accel = throttle * bp.a_max - brake * bp.b_max - np.sign(v) * bp.c_roll
    v_new = np.maximum(v + accel * dt, 0.0)

    yaw = state["yaw"]
    yaw_rate = v_new * np.tan(delta) / p.wheelbase
    out = dict(state)
    out["x"] = state["x"] + v_new * np.cos(yaw) * dt
    out["y"] = state["y"] + v_new * np.sin(yaw) * dt
    out["yaw"] = yaw + yaw_rate * dt
    out["v_x"] = v_new
    out["v_y"] = np.zeros_like(v_new)
    out["yaw_rate"] = yaw_rate
    out["steer_angle"] = delta
    out["steer_rate"] = np.zeros_like(v_new)
    wheel = v_new / p.wheel_radius
    out["wheel_front"] = wheel
    out["wheel_rear"] = wheel
    return out


# ---------- dynamic single-track backend (120 Hz substeps) ----------

def step_dynamic(state: dict, action, mu_eff, p: VehicleParams,
                 dt: float = PHYSICS_DT, diag: dict | None = None) -> dict:
    """One 120 Hz substep of the planar single-track model.

    Per-axle tire forces are a direct torque-to-force drive/brake path plus a
    linear-in-slip-angle lateral force, jointly saturated by the friction
    circle |F| <= mu * F_z with F_z = m g / 2 (no load transfer).  Chassis
    damping adds -lambda_lat * v_lat and -lambda_yaw * omega_z.  Semi-implicit
    integration throughout.  Passing a dict as ``diag`` captures the applied
    axle forces and the circle cap.
    """
    throttle, steering, brake = action[..., 0], action[..., 1], action[..., 2]
    mu_eff = np.asarray(mu_eff, dtype=np.float64)

    # steering column under the PD effort
    tau_s = steering_effort(state["steer_angle"], state["steer_rate"], steering, p)
    steer_rate = state["steer_rate"] + (tau_s / p.steer_inertia) * dt
    steer_angle = state["steer_angle"] + steer_rate * dt
    limit = 1.05 * p.theta_max
    clipped = np.clip(steer_angle, -limit, limit)
    steer_rate = np.where(clipped == steer_angle, steer_rate, 0.0)
    steer_angle = clipped

    v_x, v_y, omega = state["v_x"], state["v_y"], state["yaw_rate"]
    a_f = 0.5 * p.wheelbase - p.com_offset   # mass center to front axle
    b_r = 0.5 * p.wheelbase + p.com_offset

    # requested longitudinal force per axle (two wheels each)
    tau_bf, latch_f = brake_effort(state["wheel_front"], brake, state["brake_sign_front"], p.tau_brake_front)
    tau_br, latch_r = brake_effort(state["wheel_rear"], brake, state["brake_sign_rear"], p.tau_brake_rear)
    tau_front_axle = 2.0 * (p.tau_drive_max * throttle + tau_bf)
    tau_rear_axle = 2.0 * tau_br
    fx_f_req = tau_front_axle / p.wheel_radius
    fx_r_req = tau_rear_axle / p.wheel_radius

    # lateral slip angles (small-angle form with a low-speed floor)
    denom = np.maximum(v_x, SLIP_SPEED_FLOOR)
    slip_f = steer_angle - (v_y + a_f * omega) / denom
    slip_r = -(v_y - b_r * omega) / denom
    fy_f_req = p.cornering_stiffness * slip_f
    fy_r_req = p.cornering_stiffness * slip_r

    # friction circle per axle
    f_z = 0.5 * p.chassis_mass * GRAVITY
    cap = mu_eff * f_z
    norm_f = np.sqrt(fx_f_req**2 + fy_f_req**2)
    norm_r = np.sqrt(fx_r_req**2 + fy_r_req**2)
    scale_f = np.where(norm_f > cap, cap / np.maximum(norm_f, 1e-12), 1.0)
    scale_r = np.where(norm_r > cap, cap / np.maximum(norm_r, 1e-12), 1.0)
    fx_f, fy_f = fx_f_req * scale_f, fy_f_req * scale_f
    fx_r, fy_r = fx_r_req * scale_r, fy_r_req * scale_r
    if diag is not None:
        diag.update(fx_front=fx_f, fy_front=fy_f, fx_rear=fx_r, fy_rear=fy_r,
                    force_cap=cap)

    # chassis equations in the body frame (front forces rotated by steer angle)
    cos_d, sin_d = np.cos(steer_angle), np.sin(steer_angle)
    m = p.chassis_mass
    ax = (fx_f * cos_d - fy_f * sin_d + fx_r) / m + v_y * omega
    ay = (fy_f * cos_d + fx_f * sin_d + fy_r - p.lambda_lat * v_y) / m - v_x * omega
    omega_dot = (a_f * (fy_f * cos_d + fx_f * sin_d) - b_r * fy_r - p.lambda_yaw * omega) / p.yaw_inertia

    v_x_new = v_x + ax * dt
    v_y_new = v_y + ay * dt
    omega_new = omega + omega_dot * dt

    # brakes cannot push the chassis backward through zero
    braking = (brake > 0.0) & (v_x >= 0.0) & (v_x_new < 0.0)
    v_x_new = np.where(braking, 0.0, v_x_new)

    yaw = state["yaw"]
    yaw_new = yaw + omega_new * dt
    cos_y, sin_y = np.cos(yaw), np.sin(yaw)
    x_new = state["x"] + (v_x_new * cos_y - v_y_new * sin_y) * dt
    y_new = state["y"] + (v_x_new * sin_y + v_y_new * cos_y) * dt

    # wheel speeds: rolling while the axle holds traction, spin dynamics when
    # saturated; brake torque may not reverse rotation through zero
    i_axle = 2.0 * p.wheel_inertia
    contact_f = (v_y_new + a_f * omega_new) * sin_d + v_x_new * cos_d
    roll_f = contact_f / p.wheel_radius
    roll_r = v_x_new / p.wheel_radius
    spin_f = state["wheel_front"] + (tau_front_axle - fx_f * p.wheel_radius) / i_axle * dt
    spin_r = state["wheel_rear"] + (tau_rear_axle - fx_r * p.wheel_radius) / i_axle * dt
    flip_f = (brake > 0.0) & (spin_f * latch_f < 0.0)
    flip_r = (brake > 0.0) & (spin_r * latch_r < 0.0)
    spin_f = np.where(flip_f, 0.0, spin_f)
    spin_r = np.where(flip_r, 0.0, spin_r)
    wheel_f = np.where(norm_f > cap, spin_f, roll_f)
    wheel_r = np.where(norm_r > cap, spin_r, roll_r)
    wheel_f = np.clip(wheel_f, -WHEEL_SPEED_LIMIT, WHEEL_SPEED_LIMIT)
    wheel_r = np.clip(wheel_r, -WHEEL_SPEED_LIMIT, WHEEL_SPEED_LIMIT)

    out = dict(state)
    out["x"], out["y"], out["yaw"] = x_new, y_new, yaw_new
    out["v_x"], out["v_y"], out["yaw_rate"] = v_x_new, v_y_new, omega_new
    out["steer_angle"], out["steer_rate"] = steer_angle, steer_rate
    out["wheel_front"], out["wheel_rear"] = wheel_f, wheel_r
    out["brake_sign_front"], out["brake_sign_rear"] = latch_f, latch_r
    return out


def step_control_tick(state: dict, raw_action, mode: str, mu_eff, p: VehicleParams,
                      bp: BicycleParams = BicycleParams(),
                      capture_60hz: list | None = None) -> dict:
    """Advance one 30 Hz control tick: 4 dynamic substeps or 1 bicycle step.

    The decoded action is held constant across substeps; the steering PD runs
    every substep.  ``capture_60hz`` collects mid/end substates in dynamic mode.
    """
    action = decode_action(raw_action)
    if mode == "bicycle":
        state = step_bicycle(state, action, p, bp)
        if capture_60hz is not None:
            capture_60hz.append(state)
        return state
    if mode != "dynamic":
        raise ValueError(f"unknown dynamics mode {mode!r}")
    for sub in range(DECIMATION):
        state = step_dynamic(state, action, mu_eff, p)
        if capture_60hz is not None and sub % 2 == 1:
            capture_60hz.append(state)
    return state
