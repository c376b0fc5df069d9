"""Tire-pavement friction: averaged-bristle model with water-film hydro lift.

The model evolves an average bristle deflection z toward a steady state and
converts it into an effective friction coefficient.  Water on the pavement
acts through two routes: the Stribeck transition speed collapses with film
thickness, and hydrodynamic lift shrinks the contact-length ratio Y_R while
growing the lift-force ratio Y_F.  Three pavement presets (AC, SMA, OGFC)
differ by a texture coefficient that scales the bristle relaxation.

Bristle dynamics (relative slip speed v_r, wheel circumferential speed w_r,
both m/s):

    dz/dt = v_r - theta * Y_R * (sigma0 * |v_r| / g(v_r) + K * |w_r|) * z
    g(v_r) = mu_c + (mu_s - mu_c) * exp(-|v_r / v_s|^alpha)
    mu     = max(theta * Y_R - Y_F, 0) * theta * Y_R * sigma0 * z_star

with K = 7 / (6 L) for contact patch length L, and viscous terms zeroed
under the default calibration.  Per-world coefficients are produced at a
13.89 m/s reference speed and two slip ratios (0.15 static, 0.80 dynamic),
with a 1e-3 floor against degenerate zero-friction contact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy.optimize import least_squares

# Stribeck-speed constants, water film thickness in meters inside the exp.
STRIBECK_B = (4.8916, -7.91, 3.01, 3.40)

REFERENCE_SPEED = 13.89   # m/s (~50 km/h)
SLIP_STATIC = 0.15
SLIP_DYNAMIC = 0.80
MU_FLOOR = 1e-3
H_NORM_MM = 1.0           # weather-token film normalizer

# Aquaplane collapse of the contact-length ratio: fixed (not fitted) logistic
# centered just past the last wet anchor, steep enough to leave the anchors
# untouched while driving the contact factor to zero before h = 1.0 mm.
AQUAPLANE_CENTER = 0.86   # in units of v/v_ref * h_mm
AQUAPLANE_WIDTH = 0.008


@dataclass(frozen=True)
class SurfacePreset:
    """Pavement type: texture influence coefficient and texture amplitude."""

    name: str
    theta: float
    texture_amplitude_mm: float


SURFACES = {
    "AC": SurfacePreset("AC", 1.00, 0.65),
    "SMA": SurfacePreset("SMA", 1.09, 0.80),
    "OGFC": SurfacePreset("OGFC", 1.21, 1.08),
}
SURFACE_ORDER = ("AC", "SMA", "OGFC")


def surface(name: str) -> SurfacePreset:
    try:
        return SURFACES[name]
    except KeyError:
        raise ValueError(f"unknown surface {name!r}; expected one of {SURFACE_ORDER}") from None


@dataclass(frozen=True)
class LuGreParams:
    """Bristle-model constants; sigma1/sigma2 are zero under default calibration."""

    sigma0: float
    mu_s_stribeck: float
    mu_c_stribeck: float
    alpha_stribeck: float = 1.0
    contact_length: float = 0.15
    sigma1: float = 0.0
    sigma2: float = 0.0

    def __post_init__(self):
        if self.sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        if not (self.mu_s_stribeck >= self.mu_c_stribeck > 0):
            raise ValueError("need mu_s >= mu_c > 0")
        if self.contact_length <= 0:
            raise ValueError("contact length must be positive")

    @property
    def K(self) -> float:
        return 7.0 / (6.0 * self.contact_length)


def stribeck_speed(h_w: float | np.ndarray) -> float | np.ndarray:
    """Stribeck transition speed (m/s) for water film thickness h_w in meters."""
    h_w = np.asarray(h_w, dtype=np.float64)
    if (h_w < 0).any():
        raise ValueError("water film thickness must be non-negative")
    b1, b2, b3, b4 = STRIBECK_B
    out = b1 * np.exp(1000.0 * b2 * h_w + b3) + b4
    return float(out) if out.ndim == 0 else out


def stribeck_g(v_r, params: LuGreParams, v_s):
    """Speed-dependent friction level between static and Coulomb values."""
    mu_s, mu_c = params.mu_s_stribeck, params.mu_c_stribeck
    return mu_c + (mu_s - mu_c) * np.exp(-np.abs(np.asarray(v_r) / v_s) ** params.alpha_stribeck)


def _bristle_rate(v_r, w_r, theta, y_r, params: LuGreParams, h_w_m):
    """Relaxation rate lambda of the bristle ODE (dz/dt = v_r - lambda z)."""
    v_s = stribeck_speed(h_w_m)
    g = stribeck_g(v_r, params, v_s)
    return theta * y_r * (params.sigma0 * np.abs(v_r) / g + params.K * np.abs(w_r))


def bristle_steady_state(v_r, w_r, theta, y_r, params: LuGreParams, h_w_m=0.0):
    """Closed-form fixed point z* = v_r / lambda of the linear bristle ODE."""
    lam = _bristle_rate(v_r, w_r, theta, y_r, params, h_w_m)
    return np.asarray(v_r) / lam


def integrate_bristle(
    v_r: float,
    w_r: float,
    theta: float,
    y_r: float,
    params: LuGreParams,
    h_w_m: float = 0.0,
    dt: float = 1e-3,
    eps: float = 1e-7,
    max_iters: int = 200000,
) -> float:
    """Integrate the bristle ODE to steady state by exponential stepping.

    Exact for the linear ODE within each step; converged when the update falls
    below ``eps``.  Raises if ``max_iters`` is exhausted.
    """
    if y_r <= 0:
        raise ValueError("Y_R must be positive")
    if v_r == 0.0 and w_r == 0.0:
        raise ValueError("need non-zero slip or wheel speed")
    lam = float(_bristle_rate(v_r, w_r, theta, y_r, params, h_w_m))
    z_star = v_r / lam
    decay = np.exp(-lam * dt)
    z = 0.0
    for i in range(max_iters):
        z_next = z_star + (z - z_star) * decay
        if abs(z_next - z) < eps:
            return float(z_next)
        z = z_next
    raise RuntimeError(f"bristle integration did not converge in {max_iters} iterations")


# ---------- hydrodynamic lift ----------

@dataclass(frozen=True)
class HydroLiftModel:
    """Fitted contact-length ratio Y_R and lift-force ratio Y_F.

    Both depend on speed and film thickness through the load proxy
    u = (v / v_ref) * h_mm.  Y_R is a generalized-logistic decay from 1
    toward a residual plateau, multiplied by a steep aquaplane collapse;
    Y_F is a saturating power law from 0.
    """

    y_inf: float
    a: float
    p: float
    q: float
    c1: float
    c2: float

    def _u(self, v, h_mm):
        return (np.asarray(v, dtype=np.float64) / REFERENCE_SPEED) * np.asarray(h_mm, dtype=np.float64)

    def contact_ratio(self, v, h_mm):
        """Y_R in [0, 1]; 1 on dry pavement, collapsing at the aquaplane point."""
        u = self._u(v, h_mm)
        base = self.y_inf + (1.0 - self.y_inf) * (1.0 + (u / self.a) ** self.p) ** (-self.q)
        s = 1.0 / (1.0 + np.exp(np.clip((u - AQUAPLANE_CENTER) / AQUAPLANE_WIDTH, -60.0, 60.0)))
        return base * s

    def lift_ratio(self, v, h_mm):
        """Y_F in [0, 1]; 0 on dry pavement, growing with speed and film."""
        u = self._u(v, h_mm)
        return np.minimum(self.c1 * np.maximum(u, 0.0) ** self.c2, 1.0)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("y_inf", "a", "p", "q", "c1", "c2")}

    @classmethod
    def from_dict(cls, d: dict) -> "HydroLiftModel":
        return cls(**{k: float(d[k]) for k in ("y_inf", "a", "p", "q", "c1", "c2")})


def _solve_lugre_defaults(
    dry_static_mu: float = 1.1048,
    dynamic_ratio: float = 0.99,
    contact_length: float = 0.15,
    alpha: float = 1.0,
    mu_c_ratio: float = 0.75,
) -> LuGreParams:
    """Pin (sigma0, mu_s) so the dry anchors hold under both slip ratios.

    Two constraints at h=0, v=13.89: the AC static coefficient equals the dry
    anchor, and the dynamic-slip coefficient lands just below it.  Writing
    1/C = 1/g + K (1-s) / (sigma0 s) makes the system linear in
    (1/mu_s, 1/sigma0).
    """
    K = 7.0 / (6.0 * contact_length)
    v_s0 = stribeck_speed(0.0)

    def q_of(slip):
        v_r = slip * REFERENCE_SPEED
        return mu_c_ratio + (1.0 - mu_c_ratio) * np.exp(-((v_r / v_s0) ** alpha))

    A = np.array([
        [1.0 / q_of(SLIP_STATIC), K * (1.0 - SLIP_STATIC) / SLIP_STATIC],
        [1.0 / q_of(SLIP_DYNAMIC), K * (1.0 - SLIP_DYNAMIC) / SLIP_DYNAMIC],
    ])
    b = np.array([1.0 / dry_static_mu, 1.0 / (dynamic_ratio * dry_static_mu)])
    u, w = np.linalg.solve(A, b)
    mu_s = 1.0 / u
    return LuGreParams(
        sigma0=1.0 / w,
        mu_s_stribeck=mu_s,
        mu_c_stribeck=mu_c_ratio * mu_s,
        alpha_stribeck=alpha,
        contact_length=contact_length,
    )


@lru_cache(maxsize=1)
def default_lugre_params() -> LuGreParams:
    return _solve_lugre_defaults()


def mu_effective(
    surface_name: str,
    h_mm: float,
    v: float = REFERENCE_SPEED,
    slip: float = SLIP_STATIC,
    hydro: HydroLiftModel | None = None,
    params: LuGreParams | None = None,
) -> float:
    """Effective friction coefficient, before the assignment-level floor.

    ``slip`` is the braking slip ratio: relative slip speed v_r = slip * v and
    wheel circumferential speed w_r = (1 - slip) * v.
    """
    if v < 0:
        raise ValueError("speed must be non-negative")
    if not 0.0 <= slip <= 1.0:
        raise ValueError("slip ratio must lie in [0, 1]")
    preset = surface(surface_name)
    hydro = hydro or default_hydro_model()
    params = params or default_lugre_params()

    v_r = slip * v
    w_r = (1.0 - slip) * v
    if v_r == 0.0 and w_r == 0.0:
        return 0.0
    y_r = float(hydro.contact_ratio(v, h_mm))
    y_f = float(hydro.lift_ratio(v, h_mm))
    contact = max(preset.theta * y_r - y_f, 0.0)
    if contact == 0.0 or v_r == 0.0:
        return 0.0
    z_star = bristle_steady_state(v_r, w_r, preset.theta, y_r, params, h_mm * 1e-3)
    return float(contact * preset.theta * y_r * params.sigma0 * z_star)


# 27 published anchor coordinates: static coefficient vs film depth (mm)
# at 13.89 m/s for the three presets.
FIGURE_ANCHORS: dict[str, list[tuple[float, float]]] = {
    "AC": [(0.0, 1.1048), (0.1, 1.0657), (0.2, 1.0161), (0.3, 0.9593), (0.4, 0.9039),
           (0.5, 0.8595), (0.6, 0.8302), (0.7, 0.8134), (0.8, 0.8044)],
    "SMA": [(0.0, 1.2043), (0.1, 1.1618), (0.2, 1.1078), (0.3, 1.0461), (0.4, 0.9857),
            (0.5, 0.9374), (0.6, 0.9056), (0.7, 0.8874), (0.8, 0.8776)],
    "OGFC": [(0.0, 1.3368), (0.1, 1.2898), (0.2, 1.2301), (0.3, 1.1617), (0.4, 1.0948),
             (0.5, 1.0413), (0.6, 1.0061), (0.7, 0.9860), (0.8, 0.9753)],
}


def anchor_list() -> list[tuple[str, float, float]]:
    return [(name, h, mu) for name in SURFACE_ORDER for (h, mu) in FIGURE_ANCHORS[name]]


def calibrate_hydro(
    anchors: list[tuple[str, float, float]] | None = None,
    params: LuGreParams | None = None,
    max_residual: float = 0.01,
) -> HydroLiftModel:
    """Least-squares fit of the hydro-lift coefficients against the anchor set.

    Y_R(v, 0) = 1 and Y_F(v, 0) = 0 are structural (built into the forms, not
    fitted).  Raises if the worst residual exceeds ``max_residual``.
    """
    anchors = anchors if anchors is not None else anchor_list()
    params = params or default_lugre_params()

    thetas = np.array([surface(n).theta for n, _, _ in anchors])
    hs = np.array([h for _, h, _ in anchors])
    mus = np.array([m for _, _, m in anchors])

    v_r = SLIP_STATIC * REFERENCE_SPEED
    w_r = (1.0 - SLIP_STATIC) * REFERENCE_SPEED
    g = stribeck_g(v_r, params, stribeck_speed(hs * 1e-3))
    c_of_h = params.sigma0 * v_r / (params.sigma0 * v_r / g + params.K * w_r)

    def residuals(x):
        model = HydroLiftModel(*x)
        contact = np.maximum(thetas * model.contact_ratio(REFERENCE_SPEED, hs)
                             - model.lift_ratio(REFERENCE_SPEED, hs), 0.0)
        return contact * c_of_h - mus

    x0 = np.array([0.78, 0.35, 2.0, 1.0, 0.012, 1.2])
    lower = np.array([0.0, 0.01, 0.5, 0.05, 0.0, 0.05])
    upper = np.array([0.999, 5.0, 8.0, 20.0, 1.0, 5.0])
    sol = least_squares(residuals, x0, bounds=(lower, upper), xtol=1e-15, ftol=1e-15, gtol=1e-15)
    model = HydroLiftModel(*sol.x)

    worst = float(np.abs(residuals(sol.x)).max())
    if worst >= max_residual:
        raise RuntimeError(
            f"hydro-lift fit residual {worst:.4f} exceeds tolerance {max_residual}"
        )
    return model


@lru_cache(maxsize=1)
def default_hydro_model() -> HydroLiftModel:
    """Load the frozen fitted coefficients shipped with the package.

    Falls back to refitting from the anchor constants when the data file is
    missing (e.g. a source checkout before packaging).
    """
    try:
        raw = resources.files("drivegrid").joinpath("data/hydro_coeffs.json").read_text()
        return HydroLiftModel.from_dict(json.loads(raw))
    except (FileNotFoundError, ModuleNotFoundError):
        return calibrate_hydro()


# ---------- per-world assignment ----------

@dataclass(frozen=True)
class FrictionAssignment:
    """Per-world surface condition with derived coefficients and weather token."""

    surface: SurfacePreset
    water_film_mm: float
    mu_static: float
    mu_dynamic: float
    weather_token: np.ndarray  # (4,) = [h/h_norm, 1_AC, 1_SMA, 1_OGFC]


def weather_token(surface_name: str, h_mm: float) -> np.ndarray:
    onehot = [1.0 if surface_name == n else 0.0 for n in SURFACE_ORDER]
    return np.array([h_mm / H_NORM_MM, *onehot], dtype=np.float64)


def assign_friction(
    surface_name: str,
    h_mm: float,
    hydro: HydroLiftModel | None = None,
    params: LuGreParams | None = None,
) -> FrictionAssignment:
    """Evaluate the model at the reference speed and both slip ratios."""
    mu_s = max(mu_effective(surface_name, h_mm, REFERENCE_SPEED, SLIP_STATIC, hydro, params), MU_FLOOR)
    mu_d = max(mu_effective(surface_name, h_mm, REFERENCE_SPEED, SLIP_DYNAMIC, hydro, params), MU_FLOOR)
    return FrictionAssignment(
        surface=surface(surface_name),
        water_film_mm=h_mm,
        mu_static=mu_s,
        mu_dynamic=mu_d,
        weather_token=weather_token(surface_name, h_mm),
    )


def ground_material(f_surface: float, f_lon: float, f_lat: float) -> tuple[float, float]:
    """Ground-plane material pair from the per-surface friction scales."""
    mu_s = min(1.0, f_surface * np.sqrt(f_lon * f_lat))
    return float(mu_s), float(0.95 * mu_s)


def effective_contact_mu(assignment: FrictionAssignment, ground_mu_s: float) -> float:
    """Contact solver combine rule: minimum of tire and ground materials."""
    return min(assignment.mu_static, ground_mu_s)
