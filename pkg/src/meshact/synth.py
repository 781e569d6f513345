"""Synthetic fixed-topology motion generator.

Three deformation families, each a smooth displacement of the template over
time with seed-controlled amplitude/phase/frequency jitter:

    0 "twist"  - oscillating rotation about z, angle proportional to height
    1 "swell"  - radial scale ramping up across the sequence
    2 "shrink" - radial scale ramping down across the sequence

Classes 1 and 2 share their static shape distribution and differ only in
temporal direction, so a classifier must use frame order (not per-frame
shape statistics) to separate them. Per-frame displacement stays below 20%
of the template bounding radius, keeping normalized coordinates well inside
[-1, 1].
"""

from __future__ import annotations

import numpy as np

from .sequence import MeshSequence
from .topology import TemplateTopology

CLASS_NAMES = ("twist", "swell", "shrink")
N_CLASSES = len(CLASS_NAMES)

# Fraction of the bounding radius the largest displacement may reach.
MAX_DEFORM_FRACTION = 0.2


def synth_generate(template: tuple[TemplateTopology, np.ndarray],
                   class_id: int, seed: int, length: int) -> MeshSequence:
    """Deterministic sequence for (class_id, seed, length); label = class_id."""
    topology, rest = template
    if not 0 <= class_id < N_CLASSES:
        raise ValueError(f"unknown class id {class_id} (have {N_CLASSES} classes)")
    if length < 1:
        raise ValueError("length must be >= 1")

    rest = np.asarray(rest, dtype=np.float64)
    centroid = rest.mean(axis=0)
    rest = rest - centroid                  # deform about the shape center
    radius = float(np.linalg.norm(rest, axis=1).max())
    rng = np.random.default_rng(np.random.SeedSequence([17, class_id, seed]))
    # Draw jitter in a fixed order so sequences are pure functions of the key.
    amp_u, freq_u, phase = rng.random(3)
    phase *= 2.0 * np.pi

    t = np.arange(length, dtype=np.float64) / 24.0          # 24 fps clock
    ramp = np.arange(length, dtype=np.float64) / max(length - 1, 1)

    frames = np.empty((length, len(rest), 3), dtype=np.float64)
    if class_id == 0:
        # Twist: top and bottom counter-rotate, angle oscillates in time.
        max_angle = 0.14 + 0.04 * amp_u                      # radians
        freq = 1.0 + 0.4 * freq_u                            # Hz
        z_norm = rest[:, 2] / radius
        for i in range(length):
            ang = max_angle * np.sin(2.0 * np.pi * freq * t[i] + phase) * z_norm
            ca, sa = np.cos(ang), np.sin(ang)
            frames[i, :, 0] = ca * rest[:, 0] - sa * rest[:, 1]
            frames[i, :, 1] = sa * rest[:, 0] + ca * rest[:, 1]
            frames[i, :, 2] = rest[:, 2]
    else:
        # Radial breathing with a monotone ramp; class 2 mirrors class 1 in
        # time. Texture term keeps individual frames from being static keys.
        amp = 0.10 + 0.04 * amp_u
        texture = 0.02 + 0.01 * freq_u
        direction = 1.0 if class_id == 1 else -1.0
        envelope = direction * amp * (2.0 * ramp - 1.0)
        wobble = texture * np.sin(2.0 * np.pi * (1.5 + freq_u) * t + phase)
        factor = 1.0 + envelope + wobble
        frames[:] = rest[None, :, :] * factor[:, None, None]

    frames += centroid
    return MeshSequence(frames, label=class_id, topology_checksum=topology.checksum)


def max_displacement(seq: MeshSequence, rest: np.ndarray) -> float:
    """Largest vertex distance from its rest position over all frames."""
    delta = seq.frames.astype(np.float64) - np.asarray(rest, dtype=np.float64)[None]
    return float(np.linalg.norm(delta, axis=2).max())
