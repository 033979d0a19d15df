"""Writes the synthetic ICU-style fixtures used by the ingestion tests.

stays.csv   one row per stay: id, race label, covariates, stay length, outcome
events.csv  long-format oximetry readings (spo2 / sao2) timed relative to the
            anchor event
Run from this directory; output is deterministic.
"""
import csv
import math
import random

rng = random.Random(20240611)
N = 600

stays, events = [], []
for sid in range(1, N + 1):
    black = rng.random() < 0.35
    age = round(rng.gauss(62, 14), 1)
    sex = int(rng.random() < 0.45)
    sofa = max(0, round(rng.gauss(5 + 0.5 * black, 2.5)))
    hours = round(rng.expovariate(1 / 70), 1)
    sao2_level = rng.gauss(92 - 0.1 * sofa, 2.5)
    bias = rng.gauss(1.2 + 1.3 * black, 1.0)
    n_read = rng.randint(2, 6)
    t = 0.0
    sao2_vals = []
    for _ in range(n_read):
        t += rng.uniform(20, 240)
        s_true = sao2_level + rng.gauss(0, 1.5)
        spo2_val = min(100.0, s_true + bias + rng.gauss(0, 0.8))
        events.append((sid, "spo2", round(t, 1), round(spo2_val, 1)))
        # Blood gas drawn a few minutes after most pulse readings; some fall
        # outside the matching window.
        if rng.random() < 0.85:
            lag = rng.choice([0.0, 1.5, 3.0, 4.5, 7.0])
            events.append((sid, "sao2", round(max(0.0, t - lag), 1), round(s_true, 1)))
            sao2_vals.append(s_true)
    # Occasional stays with no blood gas at all.
    if not sao2_vals:
        sao2_level = float("nan")
    logit = -1.0 + 0.08 * (sofa - 5) - 0.25 * (sao2_level - 92 if sao2_vals else 0) + 0.3 * black
    y = int(rng.random() < 1 / (1 + math.exp(-logit)))
    if sid % 97 == 0:
        age = ""  # missing covariate
    if sid % 151 == 0:
        age = 140.0  # implausible value removed by the range filter
    stays.append((sid, "black" if black else "white", age, sex, sofa, hours, y))

with open("stays.csv", "w", newline="") as f:
    w = csv.writer(f)
    w.writerow(["stay_id", "race", "age", "sex", "sofa", "stay_hours", "hypoxemia"])
    w.writerows(stays)

with open("events.csv", "w", newline="") as f:
    w = csv.writer(f)
    w.writerow(["stay_id", "channel", "minutes_before", "value"])
    w.writerows(events)
