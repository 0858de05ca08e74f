"""
How much can augmentation gain?
===============================

Gaussian design: W1 and W2 independent N(0, 1), logit propensity
theta0 + theta1 W1, outcome linear in both with noise SD sigma. W2 is a
pure precision variable. Everything below is closed form apart from
E[pi (1 - pi)], which needs one quadrature.
"""

import numpy as np

from augmatch import AnalyticDesign, analytic_quantities, relative_efficiency

q = analytic_quantities(AnalyticDesign(theta1=1.0, beta=(1, 1, 1), gamma=(0, 1, 1), sigma=1.0, m=1))
for key, val in q.items():
    print(f"{key:<11}{val:8.4f}")

# relative efficiency of unaugmented vs optimally augmented matching;
# no gain when either the propensity slope or the precision coefficient is 0
print("\nRE at theta1 = 0:", relative_efficiency(0.0, 1.0))
print("RE at beta2  = 0:", relative_efficiency(1.0, 0.0))

theta1 = np.round(np.arange(0, 3.01, 0.5), 2)
print("\n theta1   M=1     M=4     M=16")
for t in theta1:
    row = [relative_efficiency(t, 1.0, m=m) for m in (1, 4, 16)]
    print(f" {t:5.1f}  " + "  ".join(f"{r:6.3f}" for r in row))

# a stronger precision variable helps more
print("\n beta2   RE (theta1 = 1.5)")
for b in (0.25, 0.5, 1.0, 2.0, 4.0):
    print(f" {b:5.2f}   {relative_efficiency(1.5, b):.3f}")
