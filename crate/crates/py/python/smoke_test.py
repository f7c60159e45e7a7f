"""Smoke test for the dualadam_py extension.

Build and install first, e.g. `maturin develop --release` inside crates/py, then
run `python python/smoke_test.py`.
"""

import json
import math
import tempfile

import dualadam_py as da


def main():
    # alpha = 0 reproduces Adam and alpha = 1 reproduces InvAdam
    grads = [[math.sin(3 * k + i) for i in range(4)] for k in range(200)]
    for fixed, pure in ((0.0, "adam"), (1.0, "invadam")):
        mixed = da.Optimizer("dualadam", 4, schedule="constant_alpha", fixed_alpha=fixed)
        ref = da.Optimizer(pure, 4)
        a = b = [0.1] * 4
        for g in grads:
            a, rep = mixed.step(a, g)
            b, _ = ref.step(b, g)
        assert a == b, (pure, a, b)
        assert rep["alpha"] == fixed
    assert mixed.t == 200 and len(mixed.m) == 4 and min(mixed.v) >= 0

    u = da.adam_update([0.5], [4.0], 0.0)[0]
    w = da.invadam_update([0.5], [4.0])[0]
    assert abs(u * w - 0.25) < 1e-15

    assert da.alpha_at("linear", 8e-5, 12500) == 0.0
    assert abs(da.alpha_at("exponential", 0.99, 100) - 0.99**100) < 1e-12
    assert da.flops_per_iteration(10**6, "dualadam", True) == 18 * 10**6
    assert da.flops_per_iteration(10**6, "adam", False) == 14 * 10**6
    assert abs(da.overhead_fraction(128) - 2 / (3 * 128)) < 1e-12

    try:
        da.Optimizer("sgd", 3)
    except ValueError as e:
        assert "dualadam" in str(e)
    else:
        raise AssertionError("unknown optimizer accepted")

    t = da.two_basin_trajectory("adam", 0.01, seed=1)
    assert t["terminal_basin"] == "sharp", t["terminal_basin"]
    t = da.two_basin_trajectory("invadam", 10.0, seed=1)
    assert t["terminal_basin"] == "flat", t["terminal_basin"]

    with tempfile.TemporaryDirectory() as tmp:
        cfg = f"{tmp}/h.toml"
        with open(cfg, "w") as f:
            f.write('model = "quadratic"\n')
        run_dir = da.run("hessian", config=cfg, out=tmp)
        manifest = json.loads(da.check_run_dir(run_dir))
        assert manifest["artifact_version"] == da.ARTIFACT_VERSION
        with open(f"{run_dir}/hessian.json") as f:
            eig = json.load(f)["report"]["top_eigenvalues"]
        assert abs(eig[0] - 3) < 1e-6 and abs(eig[1] - 1) < 1e-6, eig

    print("dualadam_py smoke test passed")


if __name__ == "__main__":
    main()
