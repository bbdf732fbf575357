"""
Geometric model: every quantity in closed form
==============================================

With ``a_i = 1`` and ``b_i = 2`` the equilibrium at monomer density
``z = 1`` is ``Q_i = 2**(1 - i)``, so masses, moments and the quantity
``B`` are geometric series.  This script prints the computed values next
to their closed forms, then shows how the gap of the truncated operator
approaches the bottom of the essential spectrum, ``3 - 2 sqrt(2)``.
"""
import math

import numpy as np

from bdgap import (CoefficientModel, build_linearized, equilibrium_profile,
                   gap_bounds, lambda_m_estimate, numerical_gap, quantity_B)

model = CoefficientModel.table([1.0], [2.0])
profile = equilibrium_profile(model, 1.0, 400)

# moments against sum_i i x^i = x/(1-x)^2 and friends at x = 1/2
print(f"mass  {profile.mass:.12f}   closed form 4")
print(f"M2    {profile.m2:.12f}   closed form 12")
print(f"M3    {profile.m3:.12f}   closed form 36")
print(f"A     {profile.a_quantity:.12f}   closed form 192")

# B = sup_k (2 - 2^(1-k)) = 2
b = quantity_B(profile, model)
lo, hi = gap_bounds(profile, b, profile.m2, profile.m3)
print(f"B     {b:.12f}   closed form 2")
print(f"gap bracket [{lo}, {hi}]")

# the truncated gap creeps down to 3 - 2 sqrt(2) like 1/n^2
bottom = 3 - 2 * math.sqrt(2)
print(f"lambda_M estimate {lambda_m_estimate(profile, model):.10f}")
for n in (100, 200, 400, 800):
    p = equilibrium_profile(model, 1.0, n)
    lam = numerical_gap(build_linearized(p, model, n))
    print(f"n={n:4d}  gap {lam:.10f}  (gap - bottom) n^2 = {(lam - bottom) * n * n:.3f}")

# below z = 1 the Dirichlet form carries a factor Q_1 = z
for z in (0.25, 0.5, 1.0, 1.5):
    p = equilibrium_profile(model, z, 200)
    b = quantity_B(p, model)
    lam = numerical_gap(build_linearized(p, model, 200))
    print(f"z={z:4}  B={b:.6f}  z/(4B)={z / (4 * b):.6f}  1/(4B)={1 / (4 * b):.6f}  "
          f"gap={lam:.6f}")
