"""Cross-entropy-method system identification of the vehicle parameter vector.

A teacher backend (the same dynamics with hidden parameters, or external
60 Hz logs) executes scripted maneuvers; CEM fits the 20 tunable parameters
in five sequential stages, each inheriting the best configuration of the
previous one.  Candidate rollouts are evaluated as one vectorized batch per
generation.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import vehicle as vh
from .vehicle import TUNABLE_PARAMS, VehicleParams, params_from_vector, params_to_vector

RECORD_HZ = 60.0   # capture every 2nd 120 Hz substep

CHANNEL_WEIGHTS = {
    "position": 1.0,
    "yaw": 0.4,
    "speed": 0.35,
    "yaw_rate": 0.25,
    "wheel_speed": 0.05,
    "steer_angle": 0.05,
}
TERMINAL_POS_WEIGHT = 1.5
TERMINAL_SPEED_WEIGHT = 0.75

TIERS = ("longitudinal", "lateral", "combined", "frequency", "surface")

# base surface grip levels for the transition maneuver
SURFACE_BASE_MU = {"dry": 1.0, "wet": 0.75, "gravel": 0.60}


@dataclass(frozen=True)
class Maneuver:
    """One scripted rollout: actions from a parametric schedule."""

    id: str
    tier: str
    kind: str
    duration: float
    params: dict

    def action_at(self, t: float) -> np.ndarray:
        p = self.params
        throttle = steer = brake = 0.0
        if self.kind == "throttle_step":
            throttle = p["throttle"]
        elif self.kind == "brake_sweep":
            if t < p["t_switch"]:
                throttle = p["throttle"]
            else:
                brake = p["brake"]
        elif self.kind == "throttle_ramp":
            throttle = p["peak"] * min(t / self.duration, 1.0)
        elif self.kind == "step_steer":
            throttle = p["throttle"]
            steer = p["steer"] if t >= p["t_on"] else 0.0
        elif self.kind == "constant_radius":
            throttle = p["throttle"]
            steer = p["steer"]
        elif self.kind == "trail_brake":
            steer = p["steer"]
            if t < p["t_switch"]:
                throttle = p["throttle"]
            else:
                brake = p["brake"]
        elif self.kind == "sine_steer":
            throttle = p["throttle"]
            steer = p["amp"] * np.sin(2.0 * np.pi * p["freq"] * t)
        elif self.kind == "chirp_steer":
            throttle = p["throttle"]
            f = p["f0"] + (p["f1"] - p["f0"]) * t / (2.0 * self.duration)
            steer = p["amp"] * np.sin(2.0 * np.pi * f * t)
        elif self.kind == "surface_transition":
            throttle = p["throttle"]
            steer = p["steer_amp"] * np.sin(2.0 * np.pi * 0.3 * t)
        else:
            raise ValueError(f"unknown maneuver kind {self.kind!r}")
        return np.array([throttle, steer, brake])

    def surface_at(self, t: float) -> str:
        if self.kind != "surface_transition":
            return "dry"
        third = self.duration / 3.0
        return "dry" if t < third else ("wet" if t < 2.0 * third else "gravel")


def _stratified(items: list[Maneuver], scale: float) -> list[Maneuver]:
    """Evenly subsample each schedule kind, keeping at least one per kind."""
    if scale >= 1.0:
        return items
    by_kind: dict[str, list[Maneuver]] = {}
    for m in items:
        by_kind.setdefault(m.kind, []).append(m)
    out = []
    for kind in sorted(by_kind):
        group = by_kind[kind]
        count = max(1, round(scale * len(group)))
        idx = np.unique(np.round(np.linspace(0, len(group) - 1, count)).astype(int))
        out.extend(group[i] for i in idx)
    return out


def generate_maneuvers(scale: float = 1.0) -> list[Maneuver]:
    """Five maneuver tiers at full counts (17, 64, 18, 39, 1), subsampled by
    ``scale`` while preserving the throttle/brake/steer coverage of each tier."""
    man: list[Maneuver] = []

    # longitudinal: 10 throttle steps + 4 brake sweeps + 3 ramps
    lon = [Maneuver(f"lon-thr{int(th*100):03d}", "longitudinal", "throttle_step", 5.0,
                    {"throttle": th}) for th in np.round(np.arange(0.1, 1.01, 0.1), 2)]
    lon += [Maneuver(f"lon-brk{int(b*100):03d}", "longitudinal", "brake_sweep", 5.0,
                     {"throttle": 0.8, "brake": b, "t_switch": 2.5})
            for b in (0.25, 0.5, 0.75, 1.0)]
    lon += [Maneuver(f"lon-ramp{int(pk*100):03d}", "longitudinal", "throttle_ramp", 5.0,
                     {"peak": pk}) for pk in (0.5, 0.75, 1.0)]

    # lateral: {step-steer, constant-radius} x 4 throttle x 4 amplitude x L/R
    lat = []
    for kind in ("step_steer", "constant_radius"):
        for th in (0.2, 0.4, 0.6, 0.8):
            for amp in (0.25, 0.5, 0.75, 1.0):
                for sgn in (1.0, -1.0):
                    p = {"throttle": th, "steer": sgn * amp}
                    if kind == "step_steer":
                        p["t_on"] = 1.5
                    side = "L" if sgn > 0 else "R"
                    lat.append(Maneuver(f"lat-{kind}-{th}-{amp}{side}", "lateral",
                                        kind, 5.0, p))

    # combined: trail-brake, 3 throttle x 3 steer x L/R
    comb = []
    for th in (0.3, 0.5, 0.7):
        for amp in (0.25, 0.5, 0.75):
            for sgn in (1.0, -1.0):
                side = "L" if sgn > 0 else "R"
                comb.append(Maneuver(f"cmb-{th}-{amp}{side}", "combined", "trail_brake", 5.0,
                                     {"throttle": th, "steer": sgn * amp,
                                      "brake": 0.6, "t_switch": 2.5}))

    # frequency response: 36 sinusoids + 3 chirps
    freq = []
    for th in (0.3, 0.5, 0.7):
        for amp in (0.25, 0.5, 0.75, 1.0):
            for f in (0.25, 0.5, 1.0):
                freq.append(Maneuver(f"frq-{th}-{amp}-{f}", "frequency", "sine_steer", 6.0,
                                     {"throttle": th, "amp": amp, "freq": f}))
    freq += [Maneuver(f"frq-chirp-{th}", "frequency", "chirp_steer", 6.0,
                      {"throttle": th, "amp": 0.5, "f0": 0.1, "f1": 1.0})
             for th in (0.3, 0.5, 0.7)]

    surf = [Maneuver("surface-transition", "surface", "surface_transition", 9.0,
                     {"throttle": 0.9, "steer_amp": 0.4})]

    for tier in (lon, lat, comb, freq):
        man.extend(_stratified(tier, scale))
    man.extend(surf)
    return man


def tier_counts(maneuvers: list[Maneuver]) -> dict[str, int]:
    counts = {t: 0 for t in TIERS}
    for m in maneuvers:
        counts[m.tier] += 1
    return counts


class ParamBatch:
    """Vectorized view of VehicleParams: tunable fields hold (B,) arrays.

    Duck-types VehicleParams for the step kernels, which broadcast over the
    candidate axis.
    """

    def __init__(self, base: VehicleParams, vectors: np.ndarray):
        vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        self.batch_size = vectors.shape[0]
        for name, col in zip(TUNABLE_PARAMS, vectors.T):
            setattr(self, name, col.copy())
        for f in dataclasses.fields(VehicleParams):
            if f.name not in TUNABLE_PARAMS:
                setattr(self, f.name, getattr(base, f.name))

    @property
    def wheel_inertia(self):
        return self.inertia_scale * 0.5 * self.wheel_mass * self.wheel_radius**2

    def effective_mu(self, surface_key: str):
        base = SURFACE_BASE_MU[surface_key]
        f_lon = getattr(self, f"f_lon_{surface_key}")
        f_lat = getattr(self, f"f_lat_{surface_key}")
        return np.minimum(1.0, base * np.sqrt(f_lon * f_lat))


def rollout_channels(params: ParamBatch, maneuver: Maneuver) -> dict[str, np.ndarray]:
    """Roll one maneuver for all candidates; channels recorded at 60 Hz.

    Returns arrays of shape (T, B): x, y, yaw, speed, yaw_rate, wheel_speed,
    steer_angle.
    """
    B = params.batch_size
    state = {k: np.zeros(B) for k in vh.STATE_FIELDS}
    state["brake_sign_front"] = np.ones(B)
    state["brake_sign_rear"] = np.ones(B)

    n_ticks = int(round(maneuver.duration / vh.CONTROL_DT))
    rec = {k: [] for k in ("x", "y", "yaw", "speed", "yaw_rate", "wheel_speed", "steer_angle")}
    for tick in range(n_ticks):
        t = tick * vh.CONTROL_DT
        action = vh.decode_action(maneuver.action_at(t))
        mu = params.effective_mu(maneuver.surface_at(t))
        for sub in range(vh.DECIMATION):
            state = vh.step_dynamic(state, action, mu, params)
            if sub % 2 == 1:
                rec["x"].append(state["x"])
                rec["y"].append(state["y"])
                rec["yaw"].append(state["yaw"])
                rec["speed"].append(np.sqrt(state["v_x"] ** 2 + state["v_y"] ** 2))
                rec["yaw_rate"].append(state["yaw_rate"])
                rec["wheel_speed"].append(0.5 * (state["wheel_front"] + state["wheel_rear"]))
                rec["steer_angle"].append(state["steer_angle"])
    return {k: np.stack(v, axis=0) for k, v in rec.items()}


def sysid_loss(student: dict[str, np.ndarray], teacher: dict[str, np.ndarray],
               weights: dict[str, float] | None = None) -> np.ndarray:
    """Weighted per-channel MSE plus terminal position/speed penalties.

    Student arrays are (T, B), teacher (T, 1) or (T,); returns (B,) losses.
    """
    w = weights or CHANNEL_WEIGHTS
    dx = student["x"] - teacher["x"]
    dy = student["y"] - teacher["y"]
    loss = w["position"] * np.mean(dx * dx + dy * dy, axis=0)
    for name in ("yaw", "speed", "yaw_rate", "wheel_speed", "steer_angle"):
        diff = student[name] - teacher[name]
        key = {"yaw": "yaw", "speed": "speed", "yaw_rate": "yaw_rate",
               "wheel_speed": "wheel_speed", "steer_angle": "steer_angle"}[name]
        loss = loss + w[key] * np.mean(diff * diff, axis=0)
    loss = loss + TERMINAL_POS_WEIGHT * (dx[-1] ** 2 + dy[-1] ** 2)
    ds = student["speed"][-1] - teacher["speed"][-1]
    loss = loss + TERMINAL_SPEED_WEIGHT * ds * ds
    return loss


# ---------- CEM ----------

@dataclass(frozen=True)
class CEMConfig:
    population: int = 24
    elite_frac: float = 0.25
    init_std_frac: float = 0.25
    min_std_frac: float = 0.05
    stage_weights: tuple = (0.30, 0.20, 0.15, 0.20, 0.15)
    refine_window: float = 0.18
    brake_window: float = 0.10
    total_trials: int = 320

    def __post_init__(self):
        if abs(sum(self.stage_weights) - 1.0) > 1e-9:
            raise ValueError("stage weights must sum to 1")
        if self.population < 4:
            raise ValueError("population must be at least 4")


@dataclass(frozen=True)
class Stage:
    name: str
    param_names: tuple
    tiers: tuple
    window: float | None = None


LONGITUDINAL_PARAMS = ("tau_drive_max", "tau_brake_front", "tau_brake_rear",
                       "wheel_mass", "inertia_scale")
STEERING_PARAMS = ("theta_max", "kp_steer", "kd_steer", "tau_steer_max",
                   "susp_stiffness", "susp_damping", "lambda_yaw", "lambda_lat",
                   "com_offset")
SURFACE_PARAMS = ("f_lon_dry", "f_lat_dry", "f_lon_wet", "f_lat_wet",
                  "f_lon_gravel", "f_lat_gravel")

STAGES = (
    Stage("longitudinal", LONGITUDINAL_PARAMS, ("longitudinal",)),
    Stage("steering", STEERING_PARAMS, ("lateral", "combined", "frequency")),
    Stage("surface", SURFACE_PARAMS, ("surface",)),
    Stage("refinement", TUNABLE_PARAMS, TIERS, window=None),  # window set from config
    Stage("brake_preservation", LONGITUDINAL_PARAMS, ("longitudinal",), window=None),
)


def allocate_trials(total: int, weights) -> list[int]:
    alloc = [int(round(total * w)) for w in weights]
    alloc[-1] += total - sum(alloc)
    return alloc


def default_bounds(base: VehicleParams) -> tuple[np.ndarray, np.ndarray]:
    """Search box: +/-50% around the defaults; absolute span for zero-centered
    parameters."""
    vec = params_to_vector(base)
    half = 0.5 * np.abs(vec)
    fallback = {"com_offset": 0.3}
    for i, name in enumerate(TUNABLE_PARAMS):
        if half[i] == 0.0:
            half[i] = fallback.get(name, 0.1)
    return vec - half, vec + half


def cem_minimize(fn, mean, lo, hi, trials: int, cfg: CEMConfig, rng,
                 seed_first: bool = True):
    """Generic CEM loop over a box; returns (best_x, best_loss, history).

    ``fn`` maps a (pop, k) candidate block to (pop,) losses.  The inherited
    mean is evaluated as the first candidate so the best-so-far never starts
    worse than the incumbent.
    """
    mean = np.clip(np.asarray(mean, dtype=np.float64), lo, hi)
    width = hi - lo
    std = cfg.init_std_frac * width
    best_x, best_loss = mean.copy(), np.inf
    history = []
    remaining = trials
    generation = 0
    while remaining > 0:
        pop = min(cfg.population, remaining)
        samples = mean + std * rng.standard_normal((pop, mean.size))
        samples = np.clip(samples, lo, hi)
        if seed_first and generation == 0:
            samples[0] = mean
        losses = np.asarray(fn(samples), dtype=np.float64)
        losses = np.where(np.isfinite(losses), losses, np.inf)

        order = np.argsort(losses, kind="stable")
        if losses[order[0]] < best_loss:
            best_loss = float(losses[order[0]])
            best_x = samples[order[0]].copy()
        n_elite = max(1, int(round(cfg.elite_frac * pop)))
        elite = samples[order[:n_elite]]
        mean = elite.mean(axis=0)
        std = np.maximum(elite.std(axis=0), cfg.min_std_frac * width)
        history.append(best_loss)
        remaining -= pop
        generation += 1
    return best_x, best_loss, history


@dataclass
class SysidResult:
    best_params: VehicleParams
    stages: list = field(default_factory=list)
    trial_split: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "trial_split": self.trial_split,
            "stages": self.stages,
            "best_params": {k: getattr(self.best_params, k) for k in TUNABLE_PARAMS},
        }


def run_cem(
    teacher: VehicleParams,
    cem: CEMConfig = CEMConfig(),
    base: VehicleParams | None = None,
    bounds: tuple[np.ndarray, np.ndarray] | None = None,
    scale: float = 0.2,
    seed: int = 0,
    teacher_logs: dict | None = None,
) -> SysidResult:
    """Five-stage CEM identification against a teacher backend.

    ``teacher_logs`` may supply external 60 Hz channel logs keyed by maneuver
    id; otherwise the teacher parameters are rolled through the same backend.
    """
    base = base or VehicleParams()
    lo, hi = bounds if bounds is not None else default_bounds(base)
    maneuvers = generate_maneuvers(scale)
    by_tier: dict[str, list[Maneuver]] = {t: [] for t in TIERS}
    for m in maneuvers:
        by_tier[m.tier].append(m)

    if teacher_logs is None:
        teacher_batch = ParamBatch(teacher, params_to_vector(teacher)[None, :])
        teacher_logs = {m.id: rollout_channels(teacher_batch, m) for m in maneuvers}

    trial_split = allocate_trials(cem.total_trials, cem.stage_weights)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 3])))

    best_vec = params_to_vector(base)
    result = SysidResult(best_params=base, trial_split=trial_split)
    windows = {"refinement": cem.refine_window, "brake_preservation": cem.brake_window}

    for stage, trials in zip(STAGES, trial_split):
        idx = np.array([TUNABLE_PARAMS.index(p) for p in stage.param_names])
        stage_man = [m for t in stage.tiers for m in by_tier[t]]
        window = windows.get(stage.name)
        if window is not None:
            half = 0.5 * window * (hi[idx] - lo[idx])
            lo_s = np.maximum(lo[idx], best_vec[idx] - half)
            hi_s = np.minimum(hi[idx], best_vec[idx] + half)
        else:
            lo_s, hi_s = lo[idx], hi[idx]

        def evaluate(samples):
            vectors = np.repeat(best_vec[None, :], samples.shape[0], axis=0)
            vectors[:, idx] = samples
            batch = ParamBatch(base, vectors)
            total = np.zeros(samples.shape[0])
            for m in stage_man:
                student = rollout_channels(batch, m)
                total += sysid_loss(student, teacher_logs[m.id])
            return total / len(stage_man)

        sub_best, best_loss, history = cem_minimize(
            evaluate, best_vec[idx], lo_s, hi_s, trials, cem, rng)
        best_vec = best_vec.copy()
        best_vec[idx] = sub_best
        result.stages.append({
            "stage": stage.name,
            "maneuvers": len(stage_man),
            "trials": trials,
            "best_loss": best_loss,
            "history": history,
            "params": {p: float(best_vec[TUNABLE_PARAMS.index(p)]) for p in stage.param_names},
        })

    result.best_params = params_from_vector(best_vec, base)
    return result
