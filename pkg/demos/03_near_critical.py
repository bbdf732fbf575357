"""
Closing the gap near the critical density
=========================================

``B`` controls the spectral gap from below.  Approaching the critical
density ``zs`` along ``z = zs exp(-w)``, ``B`` blows up like
``w**(-2 + alpha/(1 - mu))`` when ``alpha < 2(1 - mu)`` and stays bounded
when ``alpha = 2(1 - mu)``.  The sweep below fits the exponent for both
cases.
"""
from bdgap import CoefficientModel, critical_sweep

for alpha in (1 / 3, 2 / 3):
    model = CoefficientModel.power_law(alpha, 2 / 3, zs=1.0, q=1.0)
    rows, slope = critical_sweep(model)
    predicted = -2 + alpha / (1 - 2 / 3) if alpha < 2 / 3 else 0.0
    print(f"alpha={alpha:.3f}: fitted exponent {slope:.4f}, predicted {predicted:.4f}")
    for r in rows[::5]:
        print(f"    w={r.w:.2e}  B={r.b:.5g}  tail ratio in [{r.ratio_min:.3f}, {r.ratio_max:.3f}]")
