"""Seeded surrogate greenhouse: a daily-step MDP over the observation/action spaces.

Reduced-order model: indoor climate follows the setpoints with a first-order
hourly lag (heating below, vent cooling above), canopy photosynthesis is
light, CO2 and temperature limited (trapezoidal temperature response), fruit
is set after flowering and harvested after a maturity delay, and stress hours
abort fruit. The daily reward is the net profit, computed from observable
quantities only so that learned models can be scored with the same function.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Optional

import numpy as np

from . import kernels
from ._kernel_layout import D, N_DAILY, N_HOURLY, N_STATE, PARAM_NAMES, S
from .spaces import ACTION_SPACE, OBSERVATION_SPACE, clip_to_bounds

HOURS = np.arange(24, dtype=np.float64)
EXCEPTIONS = ("none", "AirT_high", "AirT_low", "AirRH_fixed", "Iglob_zero")
EXCEPTION_RANGES = {"AirT_high": (35.0, 40.0), "AirT_low": (-2.0, 10.0)}
TEMP_BIAS_RANGE = (25.0, 31.0)
CO2_BIAS_RANGE = (400.0, 1000.0)
DEFAULT_HORIZON = 120

_OBS = OBSERVATION_SPACE
_ACT = ACTION_SPACE
IDX = {b.name: _OBS.slice(b.name) for b in _OBS.blocks}
AIDX = {b.name: _ACT.slice(b.name) for b in _ACT.blocks}


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EconomicParams:
    fruit_price: float = 2.0        # USD/kg fresh
    electricity_price: float = 0.1  # USD/kWh
    heat_price: float = 0.05        # USD/kWh
    co2_price: float = 0.2          # USD/kg
    water_price: float = 1.0        # USD/m3
    maintenance_cost: float = 0.05  # USD/m2/day

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")


@dataclass(frozen=True)
class GreenhouseParams:
    """Physical coefficients of the surrogate (kernel ones first, in kernel order)."""

    temp_lag: float = 0.5
    co2_lag: float = 0.6
    vent_capacity: float = 10.0
    vent_dilution: float = 3.0
    transmission: float = 0.7
    lamp_intensity: float = 150.0
    par_saturation: float = 250.0
    pmax: float = 0.009
    co2_half: float = 400.0
    extinction: float = 0.7
    t_min: float = 6.0
    t_opt_low: float = 17.0
    t_opt_high: float = 26.0
    t_max: float = 36.0
    conversion: float = 0.7
    maint_resp: float = 0.012
    q10: float = 2.0
    transpiration: float = 0.0012
    irrigation_rate: float = 0.6
    rh_heating: float = 2.0
    rh_transpiration: float = 20.0
    rh_vent: float = 15.0
    sla: float = 25.0
    lai_max: float = 3.5
    leaf_fraction: float = 0.6
    flowering_day: float = 15.0
    fruit_set: float = 1.5
    fruit_max_fraction: float = 0.7
    fruit_half: float = 20.0
    fruit_demand: float = 1e-4
    maturity_day: float = 45.0
    harvest_rate: float = 0.06
    fruit_dmc: float = 0.06
    heat_threshold: float = 32.0
    cold_threshold: float = 10.0
    humid_threshold: float = 85.0
    abort_heat: float = 0.002
    abort_cold: float = 0.002
    abort_humid: float = 0.001
    abort_dark: float = 0.03
    dark_need: float = 3.0
    abort_max: float = 0.5
    rh_growth_penalty: float = 0.2
    photoperiod_max: float = 17.0
    photo_injury: float = 0.08
    # observation-level physics (passive temperature, bills)
    solar_gain: float = 0.015       # degC per W/m2 outside radiation
    lamp_gain: float = 3.0          # degC with lamps fully on
    wind_loss: float = 0.15         # degC per m/s
    sky_loss: float = 0.1           # degC per degC of outside-sky difference
    heat_transfer: float = 0.006    # kWh / m2 / K / h
    lamp_power: float = 0.2         # kW / m2
    co2_dose: float = 0.02          # kg / m2 / h at +600 ppm enrichment without vents
    co2_vent_loss: float = 4.0      # extra dosing multiplier at fully open vents
    perturb_weight: float = 0.6     # pull of a perturbation setpoint on the climate targets
    start_doy: int = 250
    initial_leaf: float = 0.02
    initial_stem: float = 0.02
    initial_air_temp: float = 18.0

    def scaled(self, **factors) -> "GreenhouseParams":
        """Copy with the named fields multiplied by the given factors."""
        return replace(self, **{k: getattr(self, k) * f for k, f in factors.items()})

    @classmethod
    def held_out(cls) -> "GreenhouseParams":
        """Test-simulator parameterization, never seen during training."""
        return replace(cls().scaled(pmax=0.96, co2_half=1.08, maint_resp=1.05, solar_gain=1.1,
                                    heat_transfer=1.06, vent_capacity=0.9, harvest_rate=0.95,
                                    fruit_set=0.95),
                       t_opt_high=25.0, start_doy=255)

    @classmethod
    def prior(cls) -> "GreenhouseParams":
        """Expert-prior parameterization used to generate the pre-training dataset."""
        return replace(cls().scaled(pmax=1.06, co2_half=0.95, maint_resp=0.95, solar_gain=0.93,
                                    heat_transfer=0.92, fruit_set=1.05),
                       start_doy=245)

    def kernel_vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=np.float64)


@dataclass(frozen=True)
class PerturbationSpec:
    """Environment disturbances: setpoint biases and one anomaly window."""

    temp_bias_setpoint: Optional[float] = None
    co2_bias_setpoint: Optional[float] = None
    exception: str = "none"
    exception_start: int = 40
    exception_days: int = 10
    seed: int = 0

    def __post_init__(self):
        t = self.temp_bias_setpoint
        if t is not None and not TEMP_BIAS_RANGE[0] <= t <= TEMP_BIAS_RANGE[1]:
            raise ValueError(f"temp_bias_setpoint {t} outside {TEMP_BIAS_RANGE}")
        c = self.co2_bias_setpoint
        if c is not None and not CO2_BIAS_RANGE[0] <= c <= CO2_BIAS_RANGE[1]:
            raise ValueError(f"co2_bias_setpoint {c} outside {CO2_BIAS_RANGE}")
        if self.exception not in EXCEPTIONS:
            raise ValueError(f"unknown exception {self.exception!r}; expected one of {EXCEPTIONS}")
        if self.exception_days < 0 or self.exception_start < 0:
            raise ValueError("exception window must be non-negative")

    @property
    def is_identity(self) -> bool:
        return (self.temp_bias_setpoint is None and self.co2_bias_setpoint is None
                and self.exception == "none")

    def exception_active(self, day: int) -> bool:
        return (self.exception != "none"
                and self.exception_start <= day < self.exception_start + self.exception_days)

    @property
    def tag(self) -> str:
        parts = []
        if self.temp_bias_setpoint is not None:
            parts.append(f"T{self.temp_bias_setpoint:g}")
        if self.co2_bias_setpoint is not None:
            parts.append(f"CO2_{self.co2_bias_setpoint:g}")
        if self.exception != "none":
            parts.append(self.exception)
        return "+".join(parts) or "none"


NO_PERTURBATION = PerturbationSpec()


@dataclass(frozen=True)
class WeatherDay:
    solar_radiation: np.ndarray
    outside_temp: np.ndarray
    outside_humidity: np.ndarray
    wind_speed: np.ndarray
    sky_temp: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.solar_radiation, self.outside_temp, self.outside_humidity,
                               self.wind_speed, self.sky_temp])


@dataclass(frozen=True)
class CropState:
    biomass_fresh: float
    biomass_dry: float
    leaf_area_index: float
    fruit_count: float
    cumulative_harvest_fresh: float
    cumulative_harvest_dry: float
    day_index: int
    # carry-over quantities not exposed in the observation
    leaf_dry: float = 0.0
    stem_dry: float = 0.0
    fruit_dry: float = 0.0
    air_temp: float = 18.0
    air_co2: float = 400.0

    def packed(self) -> np.ndarray:
        v = np.empty(N_STATE)
        v[S["leaf_dry"]] = self.leaf_dry
        v[S["stem_dry"]] = self.stem_dry
        v[S["fruit_dry"]] = self.fruit_dry
        v[S["fruit_count"]] = self.fruit_count
        v[S["harvest_dry"]] = self.cumulative_harvest_dry
        v[S["harvest_fresh"]] = self.cumulative_harvest_fresh
        v[S["air_temp"]] = self.air_temp
        v[S["air_co2"]] = self.air_co2
        v[S["day"]] = self.day_index
        return v

    @classmethod
    def from_packed(cls, v: np.ndarray, params: GreenhouseParams) -> "CropState":
        dry = float(v[S["leaf_dry"]] + v[S["stem_dry"]] + v[S["fruit_dry"]])
        return cls(
            biomass_fresh=dry / 0.08,
            biomass_dry=dry,
            leaf_area_index=float(params.sla * v[S["leaf_dry"]]),
            fruit_count=float(v[S["fruit_count"]]),
            cumulative_harvest_fresh=float(v[S["harvest_fresh"]]),
            cumulative_harvest_dry=float(v[S["harvest_dry"]]),
            day_index=int(round(v[S["day"]])),
            leaf_dry=float(v[S["leaf_dry"]]),
            stem_dry=float(v[S["stem_dry"]]),
            fruit_dry=float(v[S["fruit_dry"]]),
            air_temp=float(v[S["air_temp"]]),
            air_co2=float(v[S["air_co2"]]),
        )

    @classmethod
    def initial(cls, params: GreenhouseParams) -> "CropState":
        v = np.zeros(N_STATE)
        v[S["leaf_dry"]] = params.initial_leaf
        v[S["stem_dry"]] = params.initial_stem
        v[S["air_temp"]] = params.initial_air_temp
        v[S["air_co2"]] = 400.0
        return cls.from_packed(v, params)


def net_profit(gains, costs):
    """Daily net profit in USD/m2: gains minus costs."""
    return gains - costs


def generate_weather(seed: int, day: int, start_doy: int = 250) -> WeatherDay:
    """Synthetic outside weather for one day; deterministic in ``(seed, day)``.

    A seasonal daylength/temperature cycle with a seeded daily clearness index
    and diurnal sinusoids. Radiation is zero outside the daylight window.
    """
    if not 0 <= day <= 365:
        raise ValueError(f"day must be in [0, 365], got {day}")
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, int(day), 0x5EED])
    doy = (start_doy + day) % 365
    season = math.sin(2.0 * math.pi * (doy - 81) / 365.0)
    daylength = 12.0 + 4.0 * season
    sunrise = 12.0 - daylength / 2.0
    clear = rng.beta(2.0, 1.5)
    peak = 250.0 + 275.0 * (season + 1.0)

    phase = np.pi * (HOURS + 0.5 - sunrise) / daylength
    rad = peak * (0.2 + 0.8 * clear) * np.clip(np.sin(phase), 0.0, None)
    rad[(HOURS + 0.5 < sunrise) | (HOURS + 0.5 > sunrise + daylength)] = 0.0

    t_mean = 10.0 + 9.0 * season + rng.normal(0.0, 3.0)
    amplitude = 2.0 + 4.0 * clear
    t_out = t_mean + amplitude * np.sin(2.0 * np.pi * (HOURS - 9.0) / 24.0)
    rh = 75.0 - 2.0 * (t_out - t_mean) + 15.0 * (1.0 - clear) + rng.normal(0.0, 3.0, 24)
    wind_day = rng.gamma(2.0, 1.5)
    wind = wind_day * (1.0 + 0.3 * np.sin(2.0 * np.pi * (HOURS - 8.0) / 24.0)) + rng.normal(0.0, 0.3, 24)
    sky = t_out - 6.0 - 12.0 * clear

    return WeatherDay(
        solar_radiation=np.clip(rad, 0.0, 2000.0),
        outside_temp=np.clip(t_out, -30.0, 50.0),
        outside_humidity=np.clip(rh, 0.0, 100.0),
        wind_speed=np.clip(wind, 0.0, 25.0),
        sky_temp=np.clip(sky, -20.0, 20.0),
    )


def window_fraction(start, stop) -> np.ndarray:
    """Per-hour share of ``[start, stop)`` (hours of the same day); empty when stop <= start."""
    start = np.asarray(start, dtype=np.float64)[..., None]
    stop = np.asarray(stop, dtype=np.float64)[..., None]
    return np.clip(np.minimum(HOURS + 1.0, stop) - np.maximum(HOURS, start), 0.0, 1.0)


def passive_temperature(t_out, rad, lamp, wind, t_sky, params: GreenhouseParams):
    """Unconditioned indoor temperature (degC) from weather and lamp heat."""
    return (t_out + params.solar_gain * rad + params.lamp_gain * lamp
            - params.wind_loss * wind - params.sky_loss * np.maximum(t_out - t_sky, 0.0))


def daily_costs(action, next_obs, params: GreenhouseParams, econ: EconomicParams) -> np.ndarray:
    """Resource + maintenance cost (USD/m2) of one day, from observable quantities.

    Works on single vectors or batches (leading dimensions broadcast).
    """
    action = np.asarray(action, dtype=np.float64)
    next_obs = np.asarray(next_obs, dtype=np.float64)
    lamp = window_fraction(action[..., AIDX["light_on_time"]][..., 0],
                           action[..., AIDX["light_off_time"]][..., 0])
    t_pass = passive_temperature(
        next_obs[..., IDX["outside_temperature"]], next_obs[..., IDX["outside_solar_radiation"]],
        lamp, next_obs[..., IDX["wind_speed"]], next_obs[..., IDX["virtual_sky_temperature"]], params)
    t_in = next_obs[..., IDX["greenhouse_air_temperature"]]
    heat_kwh = params.heat_transfer * np.maximum(t_in - t_pass, 0.0).sum(axis=-1)
    vent = np.clip((t_pass - t_in) / params.vent_capacity, 0.0, 1.0)
    enrich = np.maximum(next_obs[..., IDX["greenhouse_air_co2"]] - 400.0, 0.0) / 600.0
    co2_kg = params.co2_dose * (enrich * (1.0 + params.co2_vent_loss * vent)).sum(axis=-1)
    lamp_kwh = params.lamp_power * lamp.sum(axis=-1)
    water_m3 = next_obs[..., IDX["irrigation_per_day"]][..., 0] / 1000.0
    return (econ.heat_price * heat_kwh + econ.co2_price * co2_kg
            + econ.electricity_price * lamp_kwh + econ.water_price * water_m3
            + econ.maintenance_cost)


def daily_gains(prev_obs, next_obs, econ: EconomicParams) -> np.ndarray:
    prev = np.asarray(prev_obs, dtype=np.float64)[..., IDX["harvest_fresh_weight"]][..., 0]
    new = np.asarray(next_obs, dtype=np.float64)[..., IDX["harvest_fresh_weight"]][..., 0]
    return econ.fruit_price * (new - prev)


def transition_reward(prev_obs, action, next_obs, params: GreenhouseParams | None = None,
                      econ: EconomicParams | None = None) -> np.ndarray:
    """Net profit r(x) of a transition x = (s', s, a); batch-capable."""
    params = params or GreenhouseParams()
    econ = econ or EconomicParams()
    return net_profit(daily_gains(prev_obs, next_obs, econ),
                      daily_costs(action, next_obs, params, econ))


def _controller_inputs(action, weather: WeatherDay, perturb: PerturbationSpec,
                       params: GreenhouseParams, day: int):
    a = np.asarray(action, dtype=np.float64)
    lamp = window_fraction(a[AIDX["light_on_time"]][0], a[AIDX["light_off_time"]][0])
    irr = window_fraction(a[AIDX["irrigation_start_time"]][0], a[AIDX["irrigation_stop_time"]][0])
    t_target = a[AIDX["temperature_setpoint"]].copy()
    co2_target = a[AIDX["co2_setpoint"]].copy()
    w = params.perturb_weight
    if perturb.temp_bias_setpoint is not None:
        t_target = t_target + w * (perturb.temp_bias_setpoint - t_target)
    if perturb.co2_bias_setpoint is not None:
        co2_target = co2_target + w * (perturb.co2_bias_setpoint - co2_target)
    t_override = np.full(24, np.nan)
    rh_override = np.full(24, np.nan)
    if perturb.exception_active(day):
        rng = np.random.default_rng([int(perturb.seed) & 0xFFFFFFFF, int(day), 0xE7])
        if perturb.exception in EXCEPTION_RANGES:
            lo, hi = EXCEPTION_RANGES[perturb.exception]
            t_override = rng.uniform(lo, hi, 24)
        elif perturb.exception == "AirRH_fixed":
            rh_override[:] = 90.0
    return lamp, irr, t_target, co2_target, t_override, rh_override


def apply_weather_exception(weather: WeatherDay, perturb: PerturbationSpec, day: int) -> WeatherDay:
    if perturb.exception == "Iglob_zero" and perturb.exception_active(day):
        return replace(weather, solar_radiation=np.zeros(24))
    return weather


def assemble_observation(action, weather: WeatherDay, hourly: np.ndarray, daily: np.ndarray,
                         packed_state: np.ndarray) -> np.ndarray:
    obs = np.empty(_OBS.total_dim)
    obs[:_ACT.total_dim] = action
    obs[IDX["outside_solar_radiation"]] = weather.solar_radiation
    obs[IDX["outside_temperature"]] = weather.outside_temp
    obs[IDX["outside_humidity"]] = weather.outside_humidity
    obs[IDX["wind_speed"]] = weather.wind_speed
    obs[IDX["virtual_sky_temperature"]] = weather.sky_temp
    obs[IDX["greenhouse_air_temperature"]] = hourly[0]
    obs[IDX["greenhouse_air_humidity"]] = hourly[1]
    obs[IDX["greenhouse_air_co2"]] = hourly[2]
    obs[IDX["light_intensity_above_crop"]] = hourly[3]
    obs[IDX["irrigation_per_day"]] = daily[D["irrigation"]]
    obs[IDX["drain_per_day"]] = daily[D["drain"]]
    obs[IDX["leaf_area_index"]] = daily[D["lai"]]
    obs[IDX["growing_fruits"]] = packed_state[S["fruit_count"]]
    obs[IDX["harvest_fresh_weight"]] = packed_state[S["harvest_fresh"]]
    obs[IDX["harvest_dry_weight"]] = packed_state[S["harvest_dry"]]
    obs[IDX["planting_days"]] = packed_state[S["day"]]
    return clip_to_bounds(obs, _OBS)


def step(state: CropState, action, weather: WeatherDay,
         perturb: PerturbationSpec = NO_PERTURBATION,
         params: GreenhouseParams | None = None, econ: EconomicParams | None = None,
         horizon: int = DEFAULT_HORIZON, diagnostics: dict | None = None):
    """Advance one day.

    Returns ``(next_state, observation, reward)``. ``weather`` is the weather
    of the day being simulated (day ``state.day_index + 1``).
    """
    params = params or GreenhouseParams()
    econ = econ or EconomicParams()
    if state.day_index >= horizon:
        raise SimulationError(f"episode is terminal at day {state.day_index} (horizon {horizon})")
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (_ACT.total_dim,):
        raise ValueError(f"action must have shape ({_ACT.total_dim},), got {action.shape}")
    if np.any(action < _ACT.lower - 1e-9) or np.any(action > _ACT.upper + 1e-9):
        raise ValueError("action outside the action bounds")

    day = state.day_index + 1
    weather = apply_weather_exception(weather, perturb, day)
    lamp, irr, t_target, co2_target, t_ovr, rh_ovr = _controller_inputs(
        action, weather, perturb, params, day)
    t_pass = passive_temperature(weather.outside_temp, weather.solar_radiation, lamp,
                                 weather.wind_speed, weather.sky_temp, params)
    packed = state.packed()
    hourly = np.empty((N_HOURLY, 24))
    daily = np.empty(N_DAILY)
    kernels.advance_day(packed, params.kernel_vector(), t_target, co2_target, t_pass,
                        weather.solar_radiation, lamp, irr, weather.outside_temp,
                        weather.outside_humidity, t_ovr, rh_ovr, hourly, daily)
    next_state = CropState.from_packed(packed, params)
    obs = assemble_observation(action, weather, hourly, daily, packed)

    prev_harvest = min(state.cumulative_harvest_fresh, 100.0)
    gains = econ.fruit_price * (obs[IDX["harvest_fresh_weight"]][0] - prev_harvest)
    costs = daily_costs(action, obs, params, econ)
    reward = float(net_profit(gains, costs))
    if diagnostics is not None:
        diagnostics.update({k: float(daily[D[k]]) for k in D})
        diagnostics["gains"] = float(gains)
        diagnostics["costs"] = float(costs)
    return next_state, obs, reward


NEUTRAL_ACTION = np.concatenate([np.full(24, 18.0), np.full(24, 400.0), [0.0, 0.0, 0.0, 0.0]])


def initial_observation(state: CropState, seed: int, params: GreenhouseParams) -> np.ndarray:
    """Observation of the planting day: neutral action echoed, climate without crop change."""
    weather = generate_weather(seed, state.day_index, params.start_doy)
    lamp = np.zeros(24)
    t_pass = passive_temperature(weather.outside_temp, weather.solar_radiation, lamp,
                                 weather.wind_speed, weather.sky_temp, params)
    packed = state.packed()
    scratch = packed.copy()
    hourly = np.empty((N_HOURLY, 24))
    daily = np.empty(N_DAILY)
    kernels.advance_day(scratch, params.kernel_vector(), NEUTRAL_ACTION[:24].copy(),
                        NEUTRAL_ACTION[24:48].copy(), t_pass, weather.solar_radiation, lamp,
                        lamp, weather.outside_temp, weather.outside_humidity,
                        np.full(24, np.nan), np.full(24, np.nan), hourly, daily)
    daily[D["irrigation"]] = 0.0
    daily[D["drain"]] = 0.0
    daily[D["lai"]] = state.leaf_area_index
    return assemble_observation(NEUTRAL_ACTION, weather, hourly, daily, packed)


class GreenhouseEnv:
    """Stateful wrapper around :func:`step` with the usual reset/step protocol."""

    def __init__(self, seed: int = 0, params: GreenhouseParams | None = None,
                 econ: EconomicParams | None = None,
                 perturb: PerturbationSpec = NO_PERTURBATION, horizon: int = DEFAULT_HORIZON):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.params = params or GreenhouseParams()
        self.econ = econ or EconomicParams()
        self.perturb = perturb
        self.horizon = horizon
        self.seed = int(seed)
        self.state: CropState | None = None
        self.obs: np.ndarray | None = None

    @property
    def day(self) -> int:
        return self.state.day_index

    @property
    def done(self) -> bool:
        return self.state is not None and self.state.day_index >= self.horizon

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.seed = int(seed)
        self.state = CropState.initial(self.params)
        self.obs = initial_observation(self.state, self.seed, self.params)
        return self.obs

    def step(self, action, diagnostics: dict | None = None):
        if self.state is None:
            raise SimulationError("call reset() before step()")
        weather = generate_weather(self.seed, self.state.day_index + 1, self.params.start_doy)
        self.state, self.obs, reward = step(self.state, action, weather, self.perturb,
                                            self.params, self.econ, self.horizon, diagnostics)
        return self.obs, reward, self.done

    def get_state(self) -> dict:
        return {"seed": self.seed, "state": asdict(self.state) if self.state else None,
                "obs": self.obs.tolist() if self.obs is not None else None}

    def set_state(self, snapshot: dict):
        self.seed = int(snapshot["seed"])
        self.state = CropState(**snapshot["state"]) if snapshot["state"] else None
        self.obs = np.array(snapshot["obs"]) if snapshot["obs"] is not None else None


@dataclass
class EpisodeResult:
    trajectory: list = field(default_factory=list)
    episodic_return: float = 0.0
    metrics: dict = field(default_factory=dict)

    def fruit_count_at(self, day: int) -> float:
        for rec in self.trajectory:
            if rec["day"] == day:
                return rec["fruit_count"]
        raise KeyError(f"day {day} not in trajectory")


def _run(policy: Callable, horizon, seed, perturb, params, econ) -> EpisodeResult:
    env = GreenhouseEnv(seed, params, econ, perturb, horizon)
    obs = env.reset()
    result = EpisodeResult()
    total = 0.0
    while not env.done:
        action = np.asarray(policy(obs), dtype=np.float64)
        obs, reward, _ = env.step(action)
        total += reward
        result.trajectory.append({
            "day": env.day,
            "action": action.tolist(),
            "observation": obs.tolist(),
            "reward": reward,
            "perturb": perturb.tag,
            "fruit_count": env.state.fruit_count,
        })
    result.episodic_return = total
    result.metrics["fresh_weight"] = env.state.cumulative_harvest_fresh
    return result


def retention_rate(episode: EpisodeResult, reference: EpisodeResult, day: int) -> float:
    """Surviving fruit of ``episode`` relative to ``reference`` on ``day``."""
    ref = reference.fruit_count_at(day)
    if ref <= 0.0:
        return 1.0
    return episode.fruit_count_at(day) / ref


def rollout_episode(policy: Callable, horizon: int = DEFAULT_HORIZON, seed: int = 0,
                    perturb: PerturbationSpec = NO_PERTURBATION,
                    params: GreenhouseParams | None = None, econ: EconomicParams | None = None,
                    reference: EpisodeResult | None = None) -> EpisodeResult:
    """Run one deterministic episode of ``policy`` (a callable obs -> action).

    ``metrics`` holds ``fresh_weight`` (kg/m2 harvested by the end) and
    ``retention_rate``: fruit count on the last exception day divided by the
    matched unperturbed episode's count on the same day (1.0 without an
    exception window).
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    params = params or GreenhouseParams()
    econ = econ or EconomicParams()
    result = _run(policy, horizon, seed, perturb, params, econ)
    if perturb.exception == "none" or perturb.exception_days == 0:
        result.metrics["retention_rate"] = 1.0
        return result
    if reference is None:
        base = replace(perturb, exception="none")
        reference = _run(policy, horizon, seed, base, params, econ)
    day = min(perturb.exception_start + perturb.exception_days - 1, horizon)
    day = max(day, 1)
    result.metrics["retention_rate"] = retention_rate(result, reference, day)
    return result


def write_trajectory_jsonl(path, trajectory: list):
    with open(path, "w") as f:
        for rec in trajectory:
            f.write(json.dumps({k: rec[k] for k in ("day", "action", "observation", "reward", "perturb")}) + "\n")


def write_metrics_csv(path, rows: list[dict]):
    if not rows:
        raise ValueError("no metric rows to write")
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def scripted_action(obs, rng: np.random.Generator | None = None, noise: float = 0.0) -> np.ndarray:
    """Grower-style heuristic: warm days, CO2 enrichment in daylight, lamps on dull days."""
    obs = np.asarray(obs, dtype=np.float64)
    rad = obs[IDX["outside_solar_radiation"]]
    daylight = rad > 1.0
    dull = rad.sum() < 2500.0
    t_set = np.where(daylight, 21.0, 17.0)
    co2 = np.where(daylight, 800.0, 450.0)
    on, off = (4.0, 20.0) if dull else (6.0, 16.0)
    a = np.concatenate([t_set, co2, [on, off, 6.0, 16.0]])
    if rng is not None and noise > 0.0:
        a = a + noise * rng.normal(size=a.shape) * ACTION_SPACE.span / 2.0
    return clip_to_bounds(a, ACTION_SPACE)
