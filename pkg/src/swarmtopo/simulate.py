"""Simulators for three models of collective behaviour in R^3.

* ``dorsogna`` -- self-propelled particles with a Morse-type pair potential
  ``U(r) = C_r exp(-r/l_r) - C_a exp(-r/l_a)``.
* ``vicsek`` -- constant-speed particles aligning with neighbours within
  radius ``R``, with rotational noise of strength ``D``.
* ``volex`` -- short-range volume exclusion with random cell division and
  death.

All integrators are explicit Euler (Euler-Maruyama for the noisy Vicsek
velocities). Randomness comes exclusively from the ``numpy.random.Generator``
passed in, so a seed fully determines a sequence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

MODELS = ("dorsogna", "dorsogna1k", "vicsek", "volex")

# names of the varied (regressed) parameters for every dataset flavour
TARGET_NAMES = {
    "dorsogna": ("m", "alpha", "C_r", "l_r"),
    "dorsogna1k": ("C_r", "l_r"),
    "vicsek": ("c", "nu", "D", "R"),
    "volex": ("alpha", "R", "lambda_b", "lambda_d"),
}

POPULATION_CAP = 2000


class PopulationCapExceeded(RuntimeError):
    """A volume-exclusion run grew past the population cap."""


@dataclass
class SimParams:
    model: str
    values: dict[str, float]

    @property
    def kind(self) -> str:
        # dorsogna1k uses the same equations as dorsogna
        return "dorsogna" if self.model.startswith("dorsogna") else self.model

    def targets(self) -> np.ndarray:
        return np.array([self.values[k] for k in TARGET_NAMES[self.model]], dtype=np.float64)

    def __getitem__(self, key: str) -> float:
        return self.values[key]

    def to_dict(self) -> dict:
        return {"model": self.model, "values": dict(self.values)}

    @classmethod
    def from_dict(cls, d: dict) -> "SimParams":
        return cls(d["model"], {k: float(v) for k, v in d["values"].items()})


@dataclass
class SimState:
    positions: np.ndarray
    velocities: np.ndarray

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def copy(self) -> "SimState":
        return SimState(self.positions.copy(), self.velocities.copy())


@dataclass
class ObservationSequence:
    times: np.ndarray
    clouds: list[np.ndarray]
    params: SimParams
    targets: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.targets is None:
            self.targets = self.params.targets()

    def __len__(self) -> int:
        return len(self.clouds)


# ------------------------------------------------------------------ sampling

def _expected_population(n_points: int, lam_b: float, lam_d: float, horizon: float) -> float:
    return n_points * math.exp((lam_b - lam_d) * horizon)


def sample_params(model: str, rng: np.random.Generator, *, beta: float = 0.5,
                  n_points: int = 200, horizon: float = 10.0,
                  cap: int = POPULATION_CAP) -> SimParams:
    """Draw one parameter configuration for ``model``.

    ``n_points`` and ``horizon`` only matter for ``volex``, where birth/death
    pairs whose expected final population exceeds ``cap`` are rejected along
    with every pair that has ``lambda_d > lambda_b``.
    """
    if model == "dorsogna":
        t_c, t_l, t_a, t_m = rng.uniform([-1.0, -1.5, -2.0, -2.0], [1.0, 0.5, 2.0, 2.0])
        vals = dict(m=2.0 ** t_m, alpha=2.0 ** t_a, beta=beta, C_r=2.0 ** t_c,
                    l_r=2.0 ** t_l, C_a=1.0, l_a=1.0)
    elif model == "dorsogna1k":
        c_r, l_r = rng.uniform(0.1, 2.0, size=2)
        vals = dict(m=1.0, alpha=1.0, beta=beta, C_r=c_r, l_r=l_r, C_a=1.0, l_a=1.0)
    elif model == "vicsek":
        r, c, nu = rng.uniform(0.5, 5.0, size=3)
        vals = dict(c=c, nu=nu, D=rng.uniform(0.0, 2.0), R=r)
    elif model == "volex":
        alpha, radius = rng.uniform(0.0, 2.0, size=2)
        while True:
            lam_b, lam_d = rng.uniform(0.0, 1.0, size=2)
            if accept_birth_death(lam_b, lam_d, n_points, horizon, cap):
                break
        vals = dict(alpha=alpha, R=radius, lambda_b=lam_b, lambda_d=lam_d)
    else:
        raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")
    return SimParams(model, {k: float(v) for k, v in vals.items()})


def accept_birth_death(lam_b: float, lam_d: float, n_points: int = 200,
                       horizon: float = 10.0, cap: int = POPULATION_CAP) -> bool:
    """Filter for volume-exclusion birth/death rates."""
    if lam_d > lam_b:
        return False
    return _expected_population(n_points, lam_b, lam_d, horizon) <= cap


def init_state(n: int, rng: np.random.Generator) -> SimState:
    """Uniform positions in [-0.5, 0.5]^3, velocities uniform on the sphere."""
    if n < 1:
        raise ValueError("need at least one point")
    pos = rng.uniform(-0.5, 0.5, size=(n, 3))
    vel = rng.normal(size=(n, 3))
    vel /= np.linalg.norm(vel, axis=1, keepdims=True)
    return SimState(pos, vel)


# ------------------------------------------------------------------ steppers

def _pair_geometry(x: np.ndarray):
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return diff, dist


def dorsogna_forces(x: np.ndarray, params: SimParams) -> np.ndarray:
    """``-(1/M) grad_{x_i} sum_j U(|x_i - x_j|)`` for every particle."""
    c_r, l_r, c_a, l_a = params["C_r"], params["l_r"], params["C_a"], params["l_a"]
    diff, dist = _pair_geometry(x)
    # U'(r); coincident points contribute nothing
    du = -(c_r / l_r) * np.exp(-dist / l_r) + (c_a / l_a) * np.exp(-dist / l_a)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(dist > 0, du / dist, 0.0)
    grad = np.einsum("ij,ijk->ik", scale, diff)
    return -grad / x.shape[0]


def step_dorsogna(state: SimState, params: SimParams, dt: float) -> SimState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    m, alpha, beta = params["m"], params["alpha"], params["beta"]
    x, v = state.positions, state.velocities
    speed2 = np.einsum("ij,ij->i", v, v)[:, None]
    accel = ((alpha - beta * speed2) * v + dorsogna_forces(x, params)) / m
    return SimState(x + dt * v, v + dt * accel)


def step_vicsek(state: SimState, params: SimParams, dt: float, rng: np.random.Generator) -> SimState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    c, nu, noise, radius = params["c"], params["nu"], params["D"], params["R"]
    x, v = state.positions, state.velocities
    _, dist = _pair_geometry(x)
    a = (dist <= radius).astype(np.float64) @ v
    norm = np.linalg.norm(a, axis=1, keepdims=True)
    vbar = np.where(norm > 0, a / np.where(norm > 0, norm, 1.0), v)
    kick = nu * vbar * dt + math.sqrt(2.0 * noise * dt) * rng.normal(size=v.shape)
    # tangent projection (I - v v^T) kick
    kick -= np.einsum("ij,ij->i", v, kick)[:, None] * v
    v_new = v + kick
    v_new /= np.linalg.norm(v_new, axis=1, keepdims=True)
    return SimState(x + c * dt * v, v_new)


def volex_drift(x: np.ndarray, params: SimParams) -> np.ndarray:
    alpha, radius = params["alpha"], params["R"]
    if radius <= 0 or x.shape[0] < 2:
        return np.zeros_like(x)
    diff, dist = _pair_geometry(x)
    r = dist ** 2 / (4.0 * radius ** 2)
    with np.errstate(divide="ignore"):
        phi = np.where((r > 0) & (r <= 1.0), 1.0 / np.where(r > 0, r, 1.0) - 1.0, 0.0)
    return (alpha / radius) * np.einsum("ij,ijk->ik", phi, diff)


def step_volex(state: SimState, params: SimParams, dt: float, rng: np.random.Generator,
               cap: int = POPULATION_CAP) -> SimState:
    """One Euler step of the repulsion followed by independent division/death."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = state.positions + dt * volex_drift(state.positions, params)
    v = state.velocities
    n = x.shape[0]
    divide = rng.random(n) < params["lambda_b"] * dt
    die = rng.random(n) < params["lambda_d"] * dt
    jitter = rng.normal(scale=params["R"] / 100.0, size=(int(divide.sum()), 3))
    keep = ~die
    x = np.concatenate([x[keep], x[divide] + jitter])
    v = np.concatenate([v[keep], v[divide]])
    if x.shape[0] > cap:
        raise PopulationCapExceeded(f"population {x.shape[0]} exceeds cap {cap}")
    return SimState(x, v)


def step(state: SimState, params: SimParams, dt: float, rng: np.random.Generator) -> SimState:
    kind = params.kind
    if kind == "dorsogna":
        return step_dorsogna(state, params, dt)
    if kind == "vicsek":
        return step_vicsek(state, params, dt, rng)
    if kind == "volex":
        return step_volex(state, params, dt, rng)
    raise ValueError(f"unknown model {params.model!r}")


def simulate(params: SimParams, n_points: int, rng: np.random.Generator, *, steps: int = 1000,
             dt: float = 0.01, stride: int = 10, window: tuple[int, int] | None = None) -> ObservationSequence:
    """Run one simulation and record every ``stride``-th state.

    ``window=(start, length)`` (in steps) simulates up to ``start + length``
    and keeps only observations falling in ``[start, start + length)``; the
    default is ``(0, steps)``. Observation times are absolute simulation
    times.
    """
    if not steps >= stride >= 1:
        raise ValueError("need steps >= stride >= 1")
    start, length = (0, steps) if window is None else window
    if start < 0 or length < stride:
        raise ValueError(f"invalid window {window}")
    state = init_state(n_points, rng)
    times, clouds = [], []
    for k in range(start + length):
        if k >= start and (k - start) % stride == 0:
            times.append(k * dt)
            clouds.append(state.positions.copy())
        state = step(state, params, dt, rng)
    return ObservationSequence(np.array(times), clouds, params)


def generate_sequence(model: str, n_points: int, rng: np.random.Generator, *, steps: int = 1000,
                      dt: float = 0.01, stride: int = 10, window: tuple[int, int] | None = None,
                      beta: float = 0.5, max_attempts: int = 100) -> ObservationSequence:
    """Sample parameters and simulate, resampling when a run hits the population cap."""
    horizon = (window[0] + window[1] if window else steps) * dt
    for _ in range(max_attempts):
        params = sample_params(model, rng, beta=beta, n_points=n_points, horizon=horizon)
        try:
            return simulate(params, n_points, rng, steps=steps, dt=dt, stride=stride, window=window)
        except PopulationCapExceeded:
            continue
    raise RuntimeError(f"no admissible {model} run after {max_attempts} attempts")


def random_window(total_steps: int, length: int, rng: np.random.Generator) -> tuple[int, int]:
    """Random ``(start, length)`` sub-window of a longer run."""
    return int(rng.integers(0, total_steps - length + 1)), length
