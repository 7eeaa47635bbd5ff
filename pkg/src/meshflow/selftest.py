"""Built-in verification: gradient checks, round-trips, oracle equivalences.

A condensed version of the test suite that runs in a few seconds from the CLI
and prints one PASS/FAIL line per check.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .chamfer import chamfer_accelerated, chamfer_loss
from .encoder import encode, init_encoder
from .flow import flow_deform, flow_inverse, init_flow
from .geometry import chamfer_bruteforce
from .gradcheck import grad_check
from .warp import sample_warp_field, warp_displacement


def _check_gradients(rng) -> tuple:
    def graph(tensors):
        x, w, b = tensors
        return ad.sum_all(ad.relu(ad.pointwise_linear(x, w, b)))

    err = grad_check(graph, [rng.standard_normal((5, 4)), rng.standard_normal((4, 3)),
                             rng.standard_normal(3)], rng=rng)
    return err < 1e-6, f"max rel err {err:.2e}"


def _check_chamfer_gradient(rng) -> tuple:
    def graph(tensors):
        pred, target = tensors
        return chamfer_loss(pred, target)

    err = grad_check(graph, [rng.standard_normal((8, 3)), rng.standard_normal((6, 3))], rng=rng)
    return err < 1e-5, f"max rel err {err:.2e}"


def _check_flow_roundtrip(rng) -> tuple:
    model = init_flow(rng, embed_dim=16, n_blocks=6, proj_dim=8, hidden=16, zero_init=False)
    coords = rng.standard_normal((200, 3))
    code = rng.standard_normal(16)
    back = flow_inverse(flow_deform(coords, code, model), code, model)
    err = np.abs(back - coords).max()
    return err < 1e-9, f"max abs err {err:.2e}"


def _check_chamfer_oracle(rng) -> tuple:
    worst = 0.0
    for _ in range(20):
        a = rng.standard_normal((rng.integers(2, 200), 3))
        b = rng.standard_normal((rng.integers(2, 200), 3))
        worst = max(worst, abs(chamfer_accelerated(a, b) - chamfer_bruteforce(a, b)))
    return worst < 1e-12, f"max |accel - brute| {worst:.2e}"


def _check_rbf_exactness(rng) -> tuple:
    worst = 0.0
    for seed in range(5):
        fld = sample_warp_field(int(rng.integers(0, 2**31)), 0.05)
        recon = warp_displacement(fld, fld.grid_nodes)
        worst = max(worst, np.abs(recon - fld.node_displacements).max())
    return worst < 1e-9, f"max node residual {worst:.2e}"


def _check_permutation_invariance(rng) -> tuple:
    params = init_encoder(rng, embed_dim=32, widths=(8, 16))
    for _ in range(10):
        pts = rng.standard_normal((64, 3))
        if not np.array_equal(encode(pts, params), encode(pts[rng.permutation(64)], params)):
            return False, "encodings differ under permutation"
    return True, "exact over 10 shuffles"


def run_selftest(seed: int = 0) -> bool:
    rng = np.random.default_rng(seed)
    checks = [
        ("gradient check (linear+relu)", _check_gradients),
        ("gradient check (chamfer loss)", _check_chamfer_gradient),
        ("flow forward/inverse round-trip", _check_flow_roundtrip),
        ("chamfer oracle equivalence", _check_chamfer_oracle),
        ("warp field node exactness", _check_rbf_exactness),
        ("encoder permutation invariance", _check_permutation_invariance),
    ]
    all_ok = True
    for name, fn in checks:
        ok, detail = fn(rng)
        all_ok &= ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return all_ok
