#!/usr/bin/env python3
"""Smoke test for the ccs_amp_py extension module.

Builds nothing itself: expects `cargo build --release -p ccs-amp-py` to have
produced target/release/libccs_amp_py.so, which is copied next to a temp
directory under the importable name and exercised end to end at miniature
scale.
"""

import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    candidates = [
        ROOT / "target" / "release" / "libccs_amp_py.so",
        ROOT / "target" / "debug" / "libccs_amp_py.so",
    ]
    src = next((p for p in candidates if p.exists()), None)
    if src is None:
        sys.exit("build the extension first: cargo build --release -p ccs-amp-py")
    tmp = tempfile.mkdtemp(prefix="ccs_amp_py_")
    shutil.copy(src, pathlib.Path(tmp) / "ccs_amp_py.so")
    sys.path.insert(0, tmp)
    import ccs_amp_py

    return ccs_amp_py


def main():
    m = load_module()

    # Tree code: build, encode, verify, tamper.
    design = m.CodeDesign(16, 4, extra_cross=0, seed=7)
    assert design.num_sections == 8
    assert design.payload_bits == 16
    assert design.girth >= 8
    bits = [1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 1, 0, 0, 1, 0, 1]
    indices = design.encode(bits)
    assert design.is_consistent(indices)
    assert design.payload(indices) == bits
    tampered = list(indices)
    tampered[design.num_sections - 1] ^= 1
    assert not design.is_consistent(tampered)

    # Serialization round trip regenerates identical generators.
    clone = m.CodeDesign.from_json(design.to_json())
    assert clone.encode(bits) == indices

    # Sensing operator: unit columns and the adjoint identity.
    op = m.SensingOperator(48, 96, kind="subsampled_hadamard", seed=3)
    e5 = [0.0] * 96
    e5[5] = 1.0
    col = op.forward(e5)
    assert abs(sum(c * c for c in col) - 1.0) < 1e-9
    x = [math.sin(0.1 * i) for i in range(96)]
    z = [math.cos(0.2 * i) for i in range(48)]
    lhs = sum(a * b for a, b in zip(op.forward(x), z))
    rhs = sum(a * b for a, b in zip(x, op.adjoint(z)))
    assert abs(lhs - rhs) < 1e-9 * max(1.0, abs(lhs))

    # Scalar posterior mean and the variance-trajectory origin.
    assert abs(m.pme(0.5, 2.0, 2.0, 1.0) - 0.8807970779778823) < 1e-12
    full = m.CodeDesign(128, 16, extra_cross=0, seed=1)
    t0 = m.tau0_sq(full, 25, 3.0, n=38400)
    assert abs(t0 - 1.3325) < 1e-3, t0

    # State evolution at miniature scale, both denoisers.
    mini = m.CodeDesign(24, 6, extra_cross=0, seed=5)
    orig = m.state_evolution(mini, 3, 6.0, 2, denoiser="original", n=2048)
    dyn = m.state_evolution(mini, 3, 6.0, 2, denoiser="dynamic", n=2048, mc_samples=200, seed=9)
    assert len(orig) == 3 and len(dyn) == 3
    assert orig[0] == dyn[0]
    assert all(t >= 1.0 for t in orig + dyn)
    assert dyn[2] <= orig[2] * 1.05, (orig, dyn)

    # BP priors concentrate on a planted codeword at high SNR.
    d = 6.0
    r = [0.0] * mini.total_len
    planted = mini.encode([1, 0] * 12)
    offset = 0
    for l in range(mini.num_sections):
        r[offset + planted[l]] = d
        offset += mini.section_size(l)
    q = m.bp_priors(mini, r, 0.4, d, 1, bp_rounds=1)
    for l in range(mini.num_sections):
        assert q[l][planted[l]] > 0.99, (l, q[l][planted[l]])

    # End-to-end experiment: two users, high SNR, exact recovery.
    config = """{
        "k_a": 2, "n": 512, "w": 32, "v": 8, "ebn0_db": 12.0, "trials": 3,
        "seeds": {"design": 1, "matrix": 2, "noise": 3, "messages": 4},
        "denoiser": {"dynamic": {"bp_rounds": 1}}
    }"""
    mean_pupe, std_err, per_trial = m.run_experiment(config)
    assert mean_pupe == 0.0, (mean_pupe, per_trial)
    assert len(per_trial) == 3
    assert std_err == 0.0

    assert any("dynamic" in k for k in m.denoiser_kinds())

    print("smoke test: all checks passed")


if __name__ == "__main__":
    main()
