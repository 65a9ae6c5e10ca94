"""Label overspeeding and underspeeding agents from the accumulated graph.

A synthetic pack of twelve cars is generated with two planted overspeeders
and two planted underspeeders. Each car's diagonal entry in the accumulated
Laplacian grows whenever it overtakes someone new, so its slope over time
separates the three classes. Thresholds are calibrated against the planted
labels and the script prints one line per car.
"""

from spectral_traffic import forecast, synth
from spectral_traffic.behavior import calibrate_thresholds, classify, weighted_accuracy

result = synth.generate(synth.behavior_scenario())
seqs = forecast.build_spectrum_sequences(result.scene, forecast.ForecastConfig())
rates = forecast.agent_theta_rates(seqs)

agents = sorted(rates)
truth = [result.labels[a] for a in agents]
thresholds = calibrate_thresholds([rates[a] for a in agents], truth)
print(f"calibrated thresholds: lambda1={thresholds.lambda1:.3g} lambda2={thresholds.lambda2:.3g}")

predicted = []
for a, label in zip(agents, truth):
    got = classify(rates[a], thresholds).label
    predicted.append(got)
    print(f"agent {a:2d}  slope {rates[a]:+.3e}/frame  planted {label.value:13s} predicted {got.value}")

print(f"weighted accuracy {weighted_accuracy(predicted, truth):.3f}")
