"""How far can an eigenvector turn between two frames?

First the closed-form estimate sqrt(N) * delta_max and the worst-case final
displacement it implies. Then a small pair of matrices where the measured
angle exceeds ||E||_2 / gap even though the bound is below pi/2, which is
why the test suite checks the sin(2 theta) form as its invariant. Finally
the per-frame chain on the clustered synthetic scene.
"""

import numpy as np

from spectral_traffic import forecast, synth
from spectral_traffic.spectral import eigenvector_angle, perturbation_bound, phi_estimate, t_fde_table

print(f"phi for 270 agents, delta_max 0.049: {phi_estimate(270, 0.049):.3f}")
for row in t_fde_table():
    print(f"  {row['dataset']:13s} T-FDE {row['t_fde']:.2f} (printed {row['printed_t_fde']})")

a = np.array([[0.405418, 0.886738, 0.432897], [0.886738, -0.505017, -0.218507], [0.432897, -0.218507, 1.287437]])
b = np.array([[0.492041, 1.125957, 0.232787], [1.125957, -0.543202, -0.42352], [0.232787, -0.42352, 0.989518]])
r = perturbation_bound(a, b, 1)
angle = eigenvector_angle(a, b, 1)
print(f"\ncounterexample: angle {angle:.4f} rad vs bound {r.phi:.4f}; 0.5*sin(2*angle) = {0.5 * np.sin(2 * angle):.4f}")

scene = synth.generate(synth.clustered_scenario()).scene
seqs = forecast.build_spectrum_sequences(scene, forecast.ForecastConfig(), with_bounds=True)
degenerate = sum(b.degenerate for b in seqs.bounds)
print(f"\nclustered scene: {len(seqs.bounds)} transitions, {degenerate} with a repeated eigenvalue at j=1")
# two disconnected platoons give a double zero eigenvalue, so the gap for j=1 vanishes
print(f"largest perturbation entry {max(b.delta_max for b in seqs.bounds):.4f}")
