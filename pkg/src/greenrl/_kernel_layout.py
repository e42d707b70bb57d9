"""Index layout shared by the compiled and pure-Python simulator kernels."""

# order of the packed parameter vector handed to ``advance_day``
PARAM_NAMES = (
    "temp_lag",           # fraction of the gap to the climate target closed per hour
    "co2_lag",
    "vent_capacity",      # degC of cooling at fully open vents
    "vent_dilution",      # CO2 enrichment loss factor at fully open vents
    "transmission",       # greenhouse cover light transmission
    "lamp_intensity",     # W/m2 added above the crop by the lamps
    "par_saturation",     # W/m2 scale of the light response
    "pmax",               # kg CH2O / m2 / h gross canopy assimilation at saturation
    "co2_half",           # ppm, half-saturation of the CO2 response
    "extinction",         # canopy light extinction coefficient
    "t_min", "t_opt_low", "t_opt_high", "t_max",   # trapezoidal temperature response
    "conversion",         # kg dry matter per kg CH2O
    "maint_resp",         # 1/day maintenance respiration at 20 degC
    "q10",
    "transpiration",      # L/m2 per (W/m2 intercepted light) per hour
    "irrigation_rate",    # L/m2/h while the irrigation window is open
    "rh_heating",         # %RH drop per degC of heating above outside air
    "rh_transpiration",   # %RH gained per L/m2/h of transpiration
    "rh_vent",            # %RH removed at fully open vents
    "sla",                # m2 leaf per kg leaf dry matter
    "lai_max",            # pruning cap
    "leaf_fraction",      # share of vegetative growth going to leaves
    "flowering_day",
    "fruit_set",          # fruits set per gram of net growth
    "fruit_max_fraction",
    "fruit_half",         # fruit count at half of the maximum fruit partitioning
    "fruit_demand",       # kg dry / fruit / day for the source-sink ratio
    "maturity_day",
    "harvest_rate",       # 1/day share of the fruit pool harvested after maturity
    "fruit_dmc",          # fruit dry matter content (fresh = dry / dmc)
    "heat_threshold", "cold_threshold", "humid_threshold",
    "abort_heat", "abort_cold", "abort_humid", "abort_dark",
    "dark_need",          # MJ/m2/day of light above crop needed to avoid dark abortion
    "abort_max",
    "rh_growth_penalty",  # photosynthesis reduction per humid hour share
    "photoperiod_max",    # lit hours per day tolerated without injury
    "photo_injury",       # photosynthesis reduction per lit hour beyond the limit
)
P = {name: i for i, name in enumerate(PARAM_NAMES)}
N_PARAMS = len(PARAM_NAMES)

# packed crop/climate carry-over state
STATE_NAMES = (
    "leaf_dry", "stem_dry", "fruit_dry", "fruit_count",
    "harvest_dry", "harvest_fresh", "air_temp", "air_co2", "day",
)
S = {name: i for i, name in enumerate(STATE_NAMES)}
N_STATE = len(STATE_NAMES)

# hourly outputs: rows of the (4, 24) output array
HOURLY_NAMES = ("air_temp", "air_humidity", "air_co2", "par")
N_HOURLY = len(HOURLY_NAMES)

# daily diagnostics
DAILY_NAMES = (
    "irrigation", "drain", "lai", "gross_growth", "respiration",
    "net_growth", "abort_fraction", "harvest_dry", "harvest_fresh", "stress",
)
D = {name: i for i, name in enumerate(DAILY_NAMES)}
N_DAILY = len(DAILY_NAMES)
