"""Inside the exercise policy: thresholds, value left on the table, timing.

Calibrates the threshold rule on its own path set, then prices the
Bermudan with it and with thresholds forced to zero (exercise whenever
intrinsic beats every still-alive European).  The gap between the two
is what the calibrated premium buys.  Also prints where the paths
actually stop.
"""
from wkbmc import bermudan as brm
from wkbmc import harness

cfg = harness.build_config(None, 1.0)
policy = brm.calibrate_policy(cfg, n_paths=10_000, seed=101)

print("calibrated thresholds (trigger = intrinsic - best remaining European):")
print(f"{'date':>6} {'threshold':>12} {'objective bp':>14}")
for k, date in enumerate(policy.dates):
    obj = policy.objectives[k] * 1e4
    print(f"{date:>6g} {policy.thresholds[k]:>12.2e} {obj:>14.1f}")

m = 50_000
calibrated = brm.bermudan_price(cfg, policy, level=1, m=m, seed=7)
flat = brm.AndersenPolicy(
    exercise_indices=policy.exercise_indices,
    dates=policy.dates,
    thresholds=policy.thresholds * 0.0,
)
premium_free = brm.bermudan_price(cfg, flat, level=1, m=m, seed=7)

print()
print(f"calibrated policy : {calibrated.value:8.2f} ({calibrated.sd:.2f})")
print(f"zero thresholds   : {premium_free.value:8.2f} ({premium_free.sd:.2f})")
print(f"premium captured  : {calibrated.value - premium_free.value:8.2f}")

freq = brm.exercise_frequencies(cfg, policy, level=1, m=m, seed=7)
print()
print("stopping distribution (last bucket = never exercised):")
for k, date in enumerate(policy.dates):
    bar = "#" * int(round(60 * freq[k]))
    print(f"  T={date:<4g} {freq[k]:>6.1%} {bar}")
print(f"  never  {freq[-1]:>6.1%} {'#' * int(round(60 * freq[-1]))}")
