"""
From diagrams to vectors
========================

Fit Gaussian structure elements on a few training sequences, turn every
diagram into a fixed-length vector and estimate the empirical Lipschitz
constant of the map.
"""
import numpy as np

from swarmtopo import simulate as sim
from swarmtopo import vectorize as vz
from swarmtopo.ph import rips_persistence, wasserstein1

rng = np.random.default_rng(1)
sequences = []
for i in range(5):
    obs = sim.generate_sequence("dorsogna1k", 50, rng)
    sequences.append([rips_persistence(c, 1) for c in obs.clouds[::4]])

train, held_out = sequences[:4], sequences[4:]
model = vz.fit(vz.group_by_dim(train), rng)
print("vector length:", model.size, "dims:", model.dims)
print("fingerprint:", model.fingerprint()[:16])

frame = held_out[0][0]
print("first held-out frame ->", np.round(model.vectorize(frame)[:6], 4), "...")

by_dim = vz.group_by_dim(train)
held = vz.group_by_dim(held_out)
for k in model.dims:
    K = vz.estimate_lipschitz(model, by_dim[k], rng, trials=2000)
    a, b = held[k][0], held[k][-1]
    gap = np.linalg.norm(model.transform(a) - model.transform(b))
    print(f"H{k}: K ~ {K:.3g}; held-out pair ratio {gap / wasserstein1(a, b):.3g}")
