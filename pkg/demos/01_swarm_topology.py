"""
Topology of a simulated swarm
=============================

Simulate one D'Orsogna run, compute Rips persistence at a few observation
times and watch the loop features come and go.
"""
import numpy as np

from swarmtopo import simulate as sim
from swarmtopo.ph import rips_persistence, wasserstein1

rng = np.random.default_rng(0)
obs = sim.generate_sequence("dorsogna1k", 80, rng)
print("targets (C_r, l_r):", np.round(obs.targets, 3))
print("observations:", len(obs), "clouds of shape", obs.clouds[0].shape)

# diagrams for dims 0 and 1 at every 20th observation
frames = {t: rips_persistence(obs.clouds[t], 1) for t in range(0, len(obs), 20)}
for t, (h0, h1) in frames.items():
    longest = h1.persistence().max() if len(h1) else 0.0
    print(f"t={obs.times[t]:5.2f}  H0 bars {len(h0):3d}  H1 bars {len(h1):3d}  longest loop {longest:.3f}")

# how far apart consecutive snapshots are in diagram space
times = sorted(frames)
for a, b in zip(times, times[1:]):
    print(f"W1(H1 at t={obs.times[a]:.1f}, t={obs.times[b]:.1f}) = {wasserstein1(frames[a][1], frames[b][1]):.4f}")
