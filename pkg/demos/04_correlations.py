"""
SRCC, PLCC and KRCC with ties
=============================

Spearman uses average ranks for ties and Kendall uses the tau-b correction.
"""

import numpy as np

from prompt_dqa.metrics import correlations, krcc, plcc, srcc

print("srcc", srcc([1, 2, 3], [1, 3, 2]), " plcc", plcc([1, 2, 3], [1, 3, 2]), " krcc", krcc([1, 2, 3], [1, 3, 2]))

# ties: five predictions collapse to two values
pred = [0.2, 0.2, 0.2, 0.9, 0.9]
mos = [0.1, 0.3, 0.2, 0.8, 0.7]
print(correlations(pred, mos))

# rank metrics ignore monotone distortions; plcc does not
rng = np.random.default_rng(0)
x = rng.random(50)
y = x + 0.1 * rng.normal(size=50)
for name, f in (("identity", lambda v: v), ("exp(5x)", lambda v: np.exp(5 * v))):
    print(f"{name:9s}", {k: round(v, 4) for k, v in correlations(f(x), y).items()})
