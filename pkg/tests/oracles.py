"""Independent reference models used to check the package.

Nothing here imports the code under test except plain data types.
"""

from __future__ import annotations

import math


def step_pair(t_run, i_run, xi_run, t_arr, i_arr, xi_arr, kappa, dt=1e-3):
    """Fixed-step integration of the two-job timeline; completion times by in-step interpolation."""
    done_r = done_a = None
    left_r, left_a = float(i_run), float(i_arr)
    now = 0.0
    if left_r == 0:
        done_r = 0.0
    while done_r is None or done_a is None:
        arr_on = now >= kappa - 1e-12 and done_a is None
        run_on = done_r is None
        both = arr_on and run_on
        r_rate = (1 / (t_run * xi_run) if both else 1 / t_run) if run_on else 0.0
        a_rate = (1 / (t_arr * xi_arr) if both else 1 / t_arr) if arr_on else 0.0
        step = dt
        if not arr_on and done_a is None and kappa - now < dt:
            step = max(kappa - now, 0.0) or dt
        fr = left_r / r_rate if r_rate else math.inf
        fa = left_a / a_rate if a_rate else math.inf
        step = min(step, fr, fa)
        left_r -= r_rate * step
        left_a -= a_rate * step
        now += step
        if run_on and left_r <= 1e-12:
            done_r = now
        if arr_on and left_a <= 1e-12:
            done_a = now
    return done_r, done_a


def phase_pair(t_run, i_run, xi_run, t_arr, i_arr, xi_arr, kappa):
    """Exact piecewise-constant-rate evaluation written as a generic two-job event loop."""
    jobs = {
        "run": {"t": t_run, "xi": xi_run, "left": float(i_run), "start": 0.0, "done": None},
        "arr": {"t": t_arr, "xi": xi_arr, "left": float(i_arr), "start": float(kappa), "done": None},
    }
    now = 0.0
    while any(j["done"] is None for j in jobs.values()):
        active = [k for k, j in jobs.items() if j["done"] is None and j["start"] <= now + 1e-12]
        shared = len(active) == 2
        rates = {k: 1.0 / (jobs[k]["t"] * (jobs[k]["xi"] if shared else 1.0)) for k in active}
        horizon = [jobs[k]["left"] / rates[k] for k in active]
        horizon += [j["start"] - now for j in jobs.values() if j["done"] is None and j["start"] > now + 1e-12]
        dt = min(horizon)
        for k in active:
            jobs[k]["left"] -= rates[k] * dt
        now += dt
        for k in active:
            if jobs[k]["left"] <= 1e-9 * max(1.0, i_run, i_arr):
                jobs[k]["left"] = 0.0
                jobs[k]["done"] = now
    return jobs["run"]["done"], jobs["arr"]["done"]


def ladder(batch):
    out, b = [], float(batch)
    while True:
        sb = math.ceil(b)
        if sb not in out:
            out.append(sb)
        if sb == 1:
            return out
        b /= 2


def iteration_seconds(batch, steps, alpha, beta, t_comm, delta):
    sb = math.ceil(batch / steps)
    tc = alpha + beta * sb
    return (steps - 1) * tc + (tc**delta + t_comm**delta) ** (1 / delta)


def enumerate_scaling(t_run, i_run, xi_run, i_arr, xi_arr, batch, alpha, beta, t_comm, delta, feasible):
    """Every (avg, share, sub_batch, steps) candidate the sub-batch search could pick from."""
    out = []
    for b in ladder(batch):
        if not feasible(b):
            continue
        steps = math.ceil(batch / b)
        t_arr = iteration_seconds(batch, steps, alpha, beta, t_comm, delta)
        for kappa, share in ((0.0, True), (t_run * i_run, False)):
            a, c = phase_pair(t_run, i_run, xi_run, t_arr, i_arr, xi_arr, kappa)
            out.append(((a + c) / 2, share, math.ceil(batch / steps), steps))
    return out
