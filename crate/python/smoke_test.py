"""Smoke test for the riemopt extension module.

Build and install first:  pip install --no-build-isolation -e crates/python
"""

import json

import numpy as np

import riemopt


def rayleigh():
    rng = np.random.default_rng(0)
    b = rng.standard_normal((20, 20))
    a = (b + b.T) / 2
    out = riemopt.solve_rayleigh(a.tolist(), solver="rtr", eps_g=1e-9, eps_h=1e-6, seed=3)
    lam = np.linalg.eigvalsh(a)[0]
    assert out["status"] == "second_order_met", out["status"]
    assert abs(out["f"] - lam / 2) < 1e-8, (out["f"], lam / 2)
    assert abs(np.linalg.norm(out["x"]) - 1) < 1e-12
    passed, summary, report = riemopt.verify_trace(out["trace_json"])
    assert passed, summary
    assert json.loads(report)["schema"] == "boundreport-v1"

    gd = riemopt.solve_rayleigh(a.tolist(), solver="gd-armijo", eps_g=1e-6, seed=3)
    assert gd["status"] == "grad_tolerance_met"
    assert riemopt.verify_trace(gd["trace_json"])[0]


def maxcut():
    n = 6
    c = np.zeros((n, n))
    for i in range(n):
        c[i, (i + 1) % n] = c[(i + 1) % n, i] = 1.0
    out = riemopt.maxcut(c.tolist(), eps_g=1e-9, eps_h=1e-7)
    assert out["p"] == n + 1
    # Even cycle: bipartite, so the relaxation is tight at -2 * edges.
    assert abs(out["objective"] + 2 * n) < 1e-6, out["objective"]
    assert out["lower_bound"] <= out["objective"] + 1e-12
    y = np.array(out["y"])
    assert np.allclose(np.sum(y * y, axis=1), 1.0, atol=1e-12)


def errors():
    try:
        riemopt.solve_rayleigh([[1.0, 2.0]])
    except ValueError:
        pass
    else:
        raise AssertionError("non-square matrix accepted")
    try:
        riemopt.verify_trace("{}")
    except ValueError:
        pass
    else:
        raise AssertionError("empty trace accepted")


if __name__ == "__main__":
    rayleigh()
    maxcut()
    errors()
    print(f"riemopt {riemopt.__version__}: smoke test passed")
