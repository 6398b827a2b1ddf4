"""Regenerate triangulation_envelope.json.

The envelope is computed without the triangulation code: for each true
joint the estimate's error is modelled as N(0, s^2 (sum_v J_v^T J_v)^-1),
with J_v the hand-derived pinhole Jacobian of view v, and the expected error
norm is sampled by Monte-Carlo. The bound on the mean over all joints is the
expected mean plus four standard errors.
"""

import json
from pathlib import Path

import numpy as np

from mouselift.pipeline.synth import SynthSpec, synth_generate
from mouselift.skeleton import default_skeleton

SPEC = dict(seed=11, frames=20, noise_px=1.0, layout="rig")
SAMPLES = 20000


def pinhole_jacobian(cam, X):
    Xc = cam.rotation @ X + cam.translation
    x, y, z = Xc
    J = np.array([[cam.fx / z, 0.0, -cam.fx * x / z**2], [0.0, cam.fy / z, -cam.fy * y / z**2]])
    return J @ cam.rotation


def main():
    rng = np.random.default_rng(2024)
    result = synth_generate(SynthSpec(**SPEC), default_skeleton())
    means, variances = [], []
    for rec in result.truth.frames:
        for X in rec.pose.positions:
            A = sum(pinhole_jacobian(c, X).T @ pinhole_jacobian(c, X) for c in result.cameras)
            cov = SPEC["noise_px"] ** 2 * np.linalg.inv(A)
            e = np.linalg.norm(rng.multivariate_normal(np.zeros(3), cov, SAMPLES), axis=1)
            means.append(e.mean())
            variances.append(e.var())
    n = len(means)
    expected = float(np.mean(means))
    se = float(np.sqrt(np.sum(variances)) / n)
    doc = {
        "spec": SPEC,
        "joints": n,
        "expected_mean_error_mm": expected,
        "standard_error_mm": se,
        "envelope_mm": expected + 4.0 * se,
    }
    out = Path(__file__).with_name("triangulation_envelope.json")
    out.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    print(json.dumps(doc, indent=1))


if __name__ == "__main__":
    main()
