"""Synthetic freeway traffic, the corruption process and the cleaning filters.

Run: python3 demos/01_traffic_and_noise.py
"""
import numpy as np

from noisesim.cleaning import clean
from noisesim.idm import IdmParams, equilibrium_gap, idm_accel
from noisesim.noise import NoiseConfig, corrupt
from noisesim.synth import SynthConfig, build_freeway_map, generate_scenario

# %% car following: braking when closer than the steady-state gap
p = IdmParams()
gap = equilibrium_gap(20.0, p)
print(f"equilibrium gap at 20 m/s: {gap:.3f} m")
for s in (20.0, 32.0, gap, 60.0):
    print(f"  gap {s:6.2f} m -> accel {idm_accel(20.0, (20.0, s), p):+.4f} m/s^2")

# %% a stop-and-go scenario on a four-lane freeway
rmap = build_freeway_map(4, 1500.0)
sc = generate_scenario(SynthConfig(seed=3, wave_mode=True, n_vehicles=24), rmap, "demo")
speeds = np.stack([np.linalg.norm(np.diff(t.xy, axis=0), axis=1) / 0.1 for t in sc.tracks])
print(f"\n{len(sc.tracks)} vehicles, speed range {speeds.min():.1f}..{speeds.max():.1f} m/s")

# %% corrupt it the way a camera tracker would
noise = NoiseConfig(jitter_sigma_xy=0.3, dropout_rate=0.05, occlusion_rate=0.5, fragmentation_rate=0.2, seed=1)
noisy = corrupt(sc, noise)
valid = lambda s: sum(int(t.valid.sum()) for t in s.tracks)
print(f"after corruption: {len(noisy.tracks)} tracks, {valid(noisy)} / {valid(sc)} valid frames")

# %% the cleaning filters drop whole tracks only
cleaned = clean(noisy, rmap)
dropped = sorted(set(noisy.agent_ids) - set(cleaned.agent_ids))
print(f"after cleaning: {len(cleaned.tracks)} tracks (dropped ids {dropped})")
