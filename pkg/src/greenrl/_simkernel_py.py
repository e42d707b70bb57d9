"""Pure-Python day kernel; reference twin of ``_simkernel.pyx``.

Both implementations perform the same floating-point operations in the
same order, so they agree to the last bit on IEEE-754 hardware. Keep them
in lockstep when editing either one.
"""
from math import exp, isnan

from ._kernel_layout import P, S, D


def _temp_response(t, t_min, t_lo, t_hi, t_max):
    if t <= t_min or t >= t_max:
        return 0.0
    if t < t_lo:
        return (t - t_min) / (t_lo - t_min)
    if t > t_hi:
        return (t_max - t) / (t_max - t_hi)
    return 1.0


def advance_day(state, p, t_target, co2_target, t_pass, rad, lamp, irr,
                t_out, rh_out, t_override, rh_override, hourly, daily):
    """Advance the greenhouse by one day (24 hourly climate steps + crop update).

    ``state`` and the two output arrays are modified in place.
    """
    st = state.tolist()
    pp = p.tolist()
    t_target = t_target.tolist()
    co2_target = co2_target.tolist()
    t_pass = t_pass.tolist()
    rad = rad.tolist()
    lamp = lamp.tolist()
    irr = irr.tolist()
    t_out = t_out.tolist()
    rh_out = rh_out.tolist()
    t_override = t_override.tolist()
    rh_override = rh_override.tolist()

    temp_lag = pp[P["temp_lag"]]
    co2_lag = pp[P["co2_lag"]]
    vent_cap = pp[P["vent_capacity"]]
    vent_dil = pp[P["vent_dilution"]]
    trans = pp[P["transmission"]]
    lamp_int = pp[P["lamp_intensity"]]
    par_sat = pp[P["par_saturation"]]
    pmax = pp[P["pmax"]]
    co2_half = pp[P["co2_half"]]
    ext = pp[P["extinction"]]
    t_min = pp[P["t_min"]]
    t_lo = pp[P["t_opt_low"]]
    t_hi = pp[P["t_opt_high"]]
    t_max = pp[P["t_max"]]
    e_coef = pp[P["transpiration"]]
    rh_heat = pp[P["rh_heating"]]
    rh_tr = pp[P["rh_transpiration"]]
    rh_vent = pp[P["rh_vent"]]
    heat_thr = pp[P["heat_threshold"]]
    cold_thr = pp[P["cold_threshold"]]
    humid_thr = pp[P["humid_threshold"]]

    leaf = st[S["leaf_dry"]]
    stem = st[S["stem_dry"]]
    fruit = st[S["fruit_dry"]]
    n_fruit = st[S["fruit_count"]]
    t_air = st[S["air_temp"]]
    c_air = st[S["air_co2"]]
    day = st[S["day"]]

    lai = pp[P["sla"]] * leaf
    canopy = 1.0 - exp(-ext * lai)
    co2_norm = 1000.0 / (1000.0 + co2_half)

    photo = 0.0
    t_sum = 0.0
    transp = 0.0
    par_sum = 0.0
    heat_h = 0.0
    cold_h = 0.0
    humid_h = 0.0
    lit_h = 0.0

    for h in range(24):
        # climate controller: heat up to the target, vent down towards it
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

    # water balance of the day
    irrigation = 0.0
    for h in range(24):
        irrigation += pp[P["irrigation_rate"]] * irr[h]
    if irrigation > 10.0:
        irrigation = 10.0
    if transp > 1e-9:
        water = irrigation / transp
        if water > 1.0:
            water = 1.0
    else:
        water = 1.0
    drain = irrigation - transp
    if drain < 0.0:
        drain = 0.0
    elif drain > 10.0:
        drain = 10.0

    injury = pp[P["photo_injury"]] * (lit_h - pp[P["photoperiod_max"]])
    if injury < 0.0:
        injury = 0.0
    elif injury > 1.0:
        injury = 1.0
    gross = pp[P["conversion"]] * photo * (0.4 + 0.6 * water) \
        * (1.0 - pp[P["rh_growth_penalty"]] * humid_h / 24.0) * (1.0 - injury)
    biomass = leaf + stem + fruit
    resp = pp[P["maint_resp"]] * biomass * pp[P["q10"]] ** ((t_sum / 24.0 - 20.0) / 10.0)
    net = gross - resp

    if day >= pp[P["flowering_day"]] and net > 0.0:
        n_fruit += pp[P["fruit_set"]] * net * 1000.0

    demand = pp[P["fruit_demand"]] * n_fruit
    if demand > 1e-12:
        supply = net / demand
        if supply < 0.0:
            supply = 0.0
        elif supply > 1.0:
            supply = 1.0
    else:
        supply = 1.0

    if net > 0.0:
        f_fruit = 0.0
        if day >= pp[P["flowering_day"]]:
            f_fruit = pp[P["fruit_max_fraction"]] * n_fruit / (n_fruit + pp[P["fruit_half"]])
        veg = net * (1.0 - f_fruit)
        leaf += veg * pp[P["leaf_fraction"]]
        stem += veg * (1.0 - pp[P["leaf_fraction"]])
        fruit += net * f_fruit
    elif biomass > 0.0:
        keep = 1.0 + net / biomass
        if keep < 0.0:
            keep = 0.0
        leaf *= keep
        stem *= keep
        fruit *= keep

    # stress-driven fruit abortion, softened by a good assimilate supply
    par_mj = par_sum * 0.0036
    dark = 1.0 - par_mj / pp[P["dark_need"]]
    if dark < 0.0:
        dark = 0.0
    stress = (pp[P["abort_heat"]] * heat_h + pp[P["abort_cold"]] * cold_h
              + pp[P["abort_humid"]] * humid_h + pp[P["abort_dark"]] * dark)
    abort = stress * (1.0 - 0.5 * supply)
    if abort > pp[P["abort_max"]]:
        abort = pp[P["abort_max"]]
    n_fruit -= abort * n_fruit
    fruit -= abort * fruit

    harvest_dry = 0.0
    if day >= pp[P["maturity_day"]]:
        harvest_dry = pp[P["harvest_rate"]] * fruit
        fruit -= harvest_dry
        n_fruit -= pp[P["harvest_rate"]] * n_fruit
    harvest_fresh = harvest_dry / pp[P["fruit_dmc"]]

    if n_fruit > 1000.0:
        n_fruit = 1000.0
    lai = pp[P["sla"]] * leaf
    if lai > pp[P["lai_max"]]:
        leaf = pp[P["lai_max"]] / pp[P["sla"]]
        lai = pp[P["lai_max"]]

    state[S["leaf_dry"]] = leaf
    state[S["stem_dry"]] = stem
    state[S["fruit_dry"]] = fruit
    state[S["fruit_count"]] = n_fruit
    state[S["harvest_dry"]] = st[S["harvest_dry"]] + harvest_dry
    state[S["harvest_fresh"]] = st[S["harvest_fresh"]] + harvest_fresh
    state[S["air_temp"]] = t_air
    state[S["air_co2"]] = c_air
    state[S["day"]] = day + 1.0

    daily[D["irrigation"]] = irrigation
    daily[D["drain"]] = drain
    daily[D["lai"]] = lai
    daily[D["gross_growth"]] = gross
    daily[D["respiration"]] = resp
    daily[D["net_growth"]] = net
    daily[D["abort_fraction"]] = abort
    daily[D["harvest_dry"]] = harvest_dry
    daily[D["harvest_fresh"]] = harvest_fresh
    daily[D["stress"]] = stress
