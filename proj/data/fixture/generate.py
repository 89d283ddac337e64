#!/usr/bin/env python3
"""Writes the bundled synthetic 3-study / 3-treatment fixture (deterministic)."""
import math
import os

import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))
rng = np.random.default_rng(20240521)

# Lee-Carter surface for one country, both sexes, ages 0..101, years 1990..2022.
ages = np.arange(102)
years = np.arange(1990, 2023)
rows = ["country,sex,age,year,rate"]
for sex, shift in (("female", -0.25), ("male", 0.0)):
    alpha = -9.6 + shift + 0.088 * ages + 2.2 * np.exp(-ages / 1.5)
    beta = np.full(102, 1.0)
    beta[60:] = np.linspace(1.0, 0.4, 42)
    beta /= beta.sum()
    kappa = np.cumsum(np.concatenate([[0.0], -1.8 + 0.6 * rng.standard_normal(len(years) - 1)]))
    kappa -= kappa.mean()
    for t, year in enumerate(years):
        log_m = alpha + beta * kappa[t] + 0.03 * rng.standard_normal(102)
        m = np.minimum(np.exp(log_m), 0.9)
        for a in ages:
            rows.append(f"UTO,{sex},{a},{year},{m[a]:.6g}")
with open(os.path.join(HERE, "mortality.csv"), "w") as f:
    f.write("\n".join(rows) + "\n")

# Disease arms: Weibull excess hazard on top of a small background; administrative censoring.
arms = {
    "S1": {"A": (1.1, 1.6), "B": (1.1, 2.2)},
    "S2": {"A": (1.1, 1.5), "C": (1.1, 2.6)},
    "S3": {"A": (1.1, 1.7), "B": (1.1, 2.3), "C": (1.1, 2.8)},
}
follow_up = {"S1": 4.0, "S2": 5.0, "S3": 4.5}
rows = ["study,arm,time,event"]
for study, spec in arms.items():
    for arm, (shape, scale) in spec.items():
        n = 150
        u = rng.uniform(size=n)
        # H(t) = (t/scale)^shape + 0.02 t; invert by bisection.
        t_event = []
        for ui in u:
            target = -math.log1p(-ui)
            lo, hi = 0.0, 1.0
            while (hi / scale) ** shape + 0.02 * hi < target:
                hi *= 2
            for _ in range(60):
                mid = (lo + hi) / 2
                if (mid / scale) ** shape + 0.02 * mid < target:
                    lo = mid
                else:
                    hi = mid
            t_event.append((lo + hi) / 2)
        entry = rng.uniform(0, 1.5, size=n)
        for te, e in zip(t_event, entry):
            c = follow_up[study] - e
            time, event = (te, 1) if te <= c else (c, 0)
            rows.append(f"{study},{arm},{max(time, 1e-3):.5f},{event}")
with open(os.path.join(HERE, "ipd.csv"), "w") as f:
    f.write("\n".join(rows) + "\n")
