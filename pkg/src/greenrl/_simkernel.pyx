# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled day kernel; same arithmetic as ``_simkernel_py.advance_day``."""
from libc.math cimport exp, pow, isnan

cdef enum:
    P_TEMP_LAG = 0
    P_CO2_LAG = 1
    P_VENT_CAPACITY = 2
    P_VENT_DILUTION = 3
    P_TRANSMISSION = 4
    P_LAMP_INTENSITY = 5
    P_PAR_SATURATION = 6
    P_PMAX = 7
    P_CO2_HALF = 8
    P_EXTINCTION = 9
    P_T_MIN = 10
    P_T_OPT_LOW = 11
    P_T_OPT_HIGH = 12
    P_T_MAX = 13
    P_CONVERSION = 14
    P_MAINT_RESP = 15
    P_Q10 = 16
    P_TRANSPIRATION = 17
    P_IRRIGATION_RATE = 18
    P_RH_HEATING = 19
    P_RH_TRANSPIRATION = 20
    P_RH_VENT = 21
    P_SLA = 22
    P_LAI_MAX = 23
    P_LEAF_FRACTION = 24
    P_FLOWERING_DAY = 25
    P_FRUIT_SET = 26
    P_FRUIT_MAX_FRACTION = 27
    P_FRUIT_HALF = 28
    P_FRUIT_DEMAND = 29
    P_MATURITY_DAY = 30
    P_HARVEST_RATE = 31
    P_FRUIT_DMC = 32
    P_HEAT_THRESHOLD = 33
    P_COLD_THRESHOLD = 34
    P_HUMID_THRESHOLD = 35
    P_ABORT_HEAT = 36
    P_ABORT_COLD = 37
    P_ABORT_HUMID = 38
    P_ABORT_DARK = 39
    P_DARK_NEED = 40
    P_ABORT_MAX = 41
    P_RH_GROWTH_PENALTY = 42
    P_PHOTOPERIOD_MAX = 43
    P_PHOTO_INJURY = 44

cdef enum:
    S_LEAF_DRY = 0
    S_STEM_DRY = 1
    S_FRUIT_DRY = 2
    S_FRUIT_COUNT = 3
    S_HARVEST_DRY = 4
    S_HARVEST_FRESH = 5
    S_AIR_TEMP = 6
    S_AIR_CO2 = 7
    S_DAY = 8

cdef enum:
    D_IRRIGATION = 0
    D_DRAIN = 1
    D_LAI = 2
    D_GROSS_GROWTH = 3
    D_RESPIRATION = 4
    D_NET_GROWTH = 5
    D_ABORT_FRACTION = 6
    D_HARVEST_DRY = 7
    D_HARVEST_FRESH = 8
    D_STRESS = 9

PARAM_COUNT = 45
STATE_COUNT = 9
DAILY_COUNT = 10


cdef inline double _temp_response(double t, double t_min, double t_lo,
                                  double t_hi, double t_max) nogil:
    if t <= t_min or t >= t_max:
        return 0.0
    if t < t_lo:
        return (t - t_min) / (t_lo - t_min)
    if t > t_hi:
        return (t_max - t) / (t_max - t_hi)
    return 1.0


def advance_day(double[::1] state, const double[::1] p,
                const double[::1] t_target, const double[::1] co2_target,
                const double[::1] t_pass, const double[::1] rad,
                const double[::1] lamp, const double[::1] irr,
                const double[::1] t_out, const double[::1] rh_out,
                const double[::1] t_override, const double[::1] rh_override,
                double[:, ::1] hourly, double[::1] daily):
    cdef double temp_lag = p[P_TEMP_LAG]
    cdef double co2_lag = p[P_CO2_LAG]
    cdef double vent_cap = p[P_VENT_CAPACITY]
    cdef double vent_dil = p[P_VENT_DILUTION]
    cdef double trans = p[P_TRANSMISSION]
    cdef double lamp_int = p[P_LAMP_INTENSITY]
    cdef double par_sat = p[P_PAR_SATURATION]
    cdef double pmax = p[P_PMAX]
    cdef double co2_half = p[P_CO2_HALF]
    cdef double ext = p[P_EXTINCTION]
    cdef double t_min = p[P_T_MIN]
    cdef double t_lo = p[P_T_OPT_LOW]
    cdef double t_hi = p[P_T_OPT_HIGH]
    cdef double t_max = p[P_T_MAX]
    cdef double e_coef = p[P_TRANSPIRATION]
    cdef double rh_heat = p[P_RH_HEATING]
    cdef double rh_tr = p[P_RH_TRANSPIRATION]
    cdef double rh_vent = p[P_RH_VENT]
    cdef double heat_thr = p[P_HEAT_THRESHOLD]
    cdef double cold_thr = p[P_COLD_THRESHOLD]
    cdef double humid_thr = p[P_HUMID_THRESHOLD]

    cdef double leaf = state[S_LEAF_DRY]
    cdef double stem = state[S_STEM_DRY]
    cdef double fruit = state[S_FRUIT_DRY]
    cdef double n_fruit = state[S_FRUIT_COUNT]
    cdef double t_air = state[S_AIR_TEMP]
    cdef double c_air = state[S_AIR_CO2]
    cdef double day = state[S_DAY]
    cdef double harvest_dry_total = state[S_HARVEST_DRY]
    cdef double harvest_fresh_total = state[S_HARVEST_FRESH]

    cdef double lai = p[P_SLA] * leaf
    cdef double canopy = 1.0 - exp(-ext * lai)
    cdef double co2_norm = 1000.0 / (1000.0 + co2_half)

    cdef double photo = 0.0, t_sum = 0.0, transp = 0.0, par_sum = 0.0
    cdef double heat_h = 0.0, cold_h = 0.0, humid_h = 0.0, lit_h = 0.0
    cdef double goal, vent, c_goal, par, e_h, rh, f_light, f_co2, f_temp
    cdef Py_ssize_t h

    for h in range(24):
        goal = t_target[h]
        if t_pass[h] > goal:
            goal = t_pass[h] - vent_cap
            if goal < t_target[h]:
                goal = t_target[h]
        t_air = t_air + temp_lag * (goal - t_air)
        if not isnan(t_override[h]):
            t_air = t_override[h]
        vent = (t_pass[h] - t_air) / vent_cap
        if vent < 0.0:
            vent = 0.0
        elif vent > 1.0:
            vent = 1.0

        c_goal = 400.0 + (co2_target[h] - 400.0) / (1.0 + vent_dil * vent)
        c_air = c_air + co2_lag * (c_goal - c_air)
        if c_air < 400.0:
            c_air = 400.0
        elif c_air > 1000.0:
            c_air = 1000.0

        par = trans * rad[h] + lamp_int * lamp[h]
        if par > 2000.0:
            par = 2000.0

        e_h = e_coef * par * canopy
        rh = rh_out[h] - rh_heat * (t_air - t_out[h]) + rh_tr * e_h - rh_vent * vent
        if not isnan(rh_override[h]):
            rh = rh_override[h]
        if rh < 0.0:
            rh = 0.0
        elif rh > 100.0:
            rh = 100.0

        f_light = 1.0 - exp(-par / par_sat)
        f_co2 = c_air / (c_air + co2_half) / co2_norm
        f_temp = _temp_response(t_air, t_min, t_lo, t_hi, t_max)
        photo += pmax * f_light * f_co2 * f_temp * canopy

        t_sum += t_air
        transp += e_h
        par_sum += par
        if par > 10.0:
            lit_h += 1.0
        if t_air > heat_thr:
            heat_h += 1.0
        if t_air < cold_thr:
            cold_h += 1.0
        if rh > humid_thr:
            humid_h += 1.0

        hourly[0, h] = t_air
        hourly[1, h] = rh
        hourly[2, h] = c_air
        hourly[3, h] = par

    cdef double irrigation = 0.0
    for h in range(24):
        irrigation += p[P_IRRIGATION_RATE] * irr[h]
    if irrigation > 10.0:
        irrigation = 10.0
    cdef double water
    if transp > 1e-9:
        water = irrigation / transp
        if water > 1.0:
            water = 1.0
    else:
        water = 1.0
    cdef double drain = irrigation - transp
    if drain < 0.0:
        drain = 0.0
    elif drain > 10.0:
        drain = 10.0

    cdef double injury = p[P_PHOTO_INJURY] * (lit_h - p[P_PHOTOPERIOD_MAX])
    if injury < 0.0:
        injury = 0.0
    elif injury > 1.0:
        injury = 1.0
    cdef double gross = p[P_CONVERSION] * photo * (0.4 + 0.6 * water) \
        * (1.0 - p[P_RH_GROWTH_PENALTY] * humid_h / 24.0) * (1.0 - injury)
    cdef double biomass = leaf + stem + fruit
    cdef double resp = p[P_MAINT_RESP] * biomass * pow(p[P_Q10], (t_sum / 24.0 - 20.0) / 10.0)
    cdef double net = gross - resp

    if day >= p[P_FLOWERING_DAY] and net > 0.0:
        n_fruit += p[P_FRUIT_SET] * net * 1000.0

    cdef double demand = p[P_FRUIT_DEMAND] * n_fruit
    cdef double supply
    if demand > 1e-12:
        supply = net / demand
        if supply < 0.0:
            supply = 0.0
        elif supply > 1.0:
            supply = 1.0
    else:
        supply = 1.0

    cdef double f_fruit, veg, keep
    if net > 0.0:
        f_fruit = 0.0
        if day >= p[P_FLOWERING_DAY]:
            f_fruit = p[P_FRUIT_MAX_FRACTION] * n_fruit / (n_fruit + p[P_FRUIT_HALF])
        veg = net * (1.0 - f_fruit)
        leaf += veg * p[P_LEAF_FRACTION]
        stem += veg * (1.0 - p[P_LEAF_FRACTION])
        fruit += net * f_fruit
    elif biomass > 0.0:
        keep = 1.0 + net / biomass
        if keep < 0.0:
            keep = 0.0
        leaf *= keep
        stem *= keep
        fruit *= keep

    cdef double par_mj = par_sum * 0.0036
    cdef double dark = 1.0 - par_mj / p[P_DARK_NEED]
    if dark < 0.0:
        dark = 0.0
    cdef double stress = (p[P_ABORT_HEAT] * heat_h + p[P_ABORT_COLD] * cold_h
                          + p[P_ABORT_HUMID] * humid_h + p[P_ABORT_DARK] * dark)
    cdef double abort = stress * (1.0 - 0.5 * supply)
    if abort > p[P_ABORT_MAX]:
        abort = p[P_ABORT_MAX]
    n_fruit -= abort * n_fruit
    fruit -= abort * fruit

    cdef double harvest_dry = 0.0
    if day >= p[P_MATURITY_DAY]:
        harvest_dry = p[P_HARVEST_RATE] * fruit
        fruit -= harvest_dry
        n_fruit -= p[P_HARVEST_RATE] * n_fruit
    cdef double harvest_fresh = harvest_dry / p[P_FRUIT_DMC]

    if n_fruit > 1000.0:
        n_fruit = 1000.0
    lai = p[P_SLA] * leaf
    if lai > p[P_LAI_MAX]:
        leaf = p[P_LAI_MAX] / p[P_SLA]
        lai = p[P_LAI_MAX]

    state[S_LEAF_DRY] = leaf
    state[S_STEM_DRY] = stem
    state[S_FRUIT_DRY] = fruit
    state[S_FRUIT_COUNT] = n_fruit
    state[S_HARVEST_DRY] = harvest_dry_total + harvest_dry
    state[S_HARVEST_FRESH] = harvest_fresh_total + harvest_fresh
    state[S_AIR_TEMP] = t_air
    state[S_AIR_CO2] = c_air
    state[S_DAY] = day + 1.0

    daily[D_IRRIGATION] = irrigation
    daily[D_DRAIN] = drain
    daily[D_LAI] = lai
    daily[D_GROSS_GROWTH] = gross
    daily[D_RESPIRATION] = resp
    daily[D_NET_GROWTH] = net
    daily[D_ABORT_FRACTION] = abort
    daily[D_HARVEST_DRY] = harvest_dry
    daily[D_HARVEST_FRESH] = harvest_fresh
    daily[D_STRESS] = stress
