"""Procedural HDR video: textured background with moving bright objects.

Used to synthesise training data when no HDR footage is at hand.
"""

import numpy as np

from evhdr.event_sim import HDRFrameSequence


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3 - 2 * x)


def render_scene(n_frames=8, height=64, width=64, fps=25.0, n_objects=3, seed=0,
                 speed=2.0) -> HDRFrameSequence:
    """Render ``n_frames`` of a scene spanning roughly four decades of radiance."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)

    # background: coloured ramp times a low-frequency texture
    c0, c1 = rng.uniform(0.02, 0.3, 3), rng.uniform(0.02, 0.3, 3)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.clip((np.cos(angle) * xx / width + np.sin(angle) * yy / height + 1) / 2, 0.0, 1.0)
    freq = rng.uniform(1.0, 3.0, 2) * 2 * np.pi
    texture = 1.0 + 0.4 * np.sin(freq[0] * xx / width + rng.uniform(0, 6)) \
        * np.cos(freq[1] * yy / height + rng.uniform(0, 6))
    background = (c0 + (c1 - c0) * ramp[..., None]) * texture[..., None]
    pan = rng.uniform(-0.5, 0.5, 2)

    objects = []
    for _ in range(n_objects):
        objects.append(dict(
            pos=rng.uniform([0.2 * height, 0.2 * width], [0.8 * height, 0.8 * width]),
            vel=rng.normal(0, speed, 2),
            radius=rng.uniform(0.08, 0.2) * min(height, width),
            color=rng.uniform(0.3, 1.0, 3) * 10 ** rng.uniform(-0.5, 1.3),
        ))

    frames = []
    for k in range(n_frames):
        shift_y, shift_x = pan * k
        bg = np.roll(background, (int(round(shift_y)), int(round(shift_x))), axis=(0, 1))
        frame = bg.copy()
        for obj in objects:
            cy, cx = obj["pos"] + obj["vel"] * k
            dist = np.hypot(yy - cy, xx - cx)
            mask = _smoothstep((obj["radius"] - dist) / 2.0 + 0.5)
            frame = frame * (1 - mask[..., None]) + obj["color"] * mask[..., None]
        frames.append(frame)
    return HDRFrameSequence(np.stack(frames), np.arange(n_frames) / fps)
