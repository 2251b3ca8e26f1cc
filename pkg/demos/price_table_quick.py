"""Desk-size run of the European price table, against the benchmark values.

Runs every estimator variant at M = 20k (the benchmark numbers were
produced at 5e5, so expect agreement within a few of OUR standard
deviations, not theirs) and prints both side by side.

Usage: python demos/price_table_quick.py [M]
"""
import sys

from wkbmc import harness

m = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000

print(f"European payer swaption prices, M = {m}, seed = {harness.DEFAULT_SEED}")
print(f"{'T1':>4} {'level':>6} {'value':>8} {'sd':>6}   {'benchmark':>12}")

text = harness.run_table(1, m=m)
for line in text.splitlines()[1:]:
    f = line.split(",")
    t1, level, value, sd = float(f[1]), f[2], float(f[3]), float(f[4])
    ref, ref_sd = harness.reference("european_price", t1, level)
    gap = (value - ref) / sd
    print(f"{t1:>4g} {level:>6} {value:>8.1f} {sd:>6.2f}   {ref:>7.1f} ({ref_sd})  [{gap:+.1f} sd]")

print()
print("level key: euler = fine-grid path reference, lgn = lognormal proxy only,")
print("0/1 = expansion kernel truncated after that many correction orders.")
print("The order-0 kernel drifts off with maturity; order 1 tracks the reference.")
