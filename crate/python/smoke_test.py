"""Smoke test for the rbflow_py extension.

Build and install first:

    pip install maturin
    maturin build --release -m crates/rbflow-py/Cargo.toml -o dist && pip install dist/rbflow_py-*.whl
    python python/smoke_test.py
"""

import math
import pathlib
import sys
import tempfile

import rbflow_py

TINY = """
ensemble_grid = [2, 2]
basis_sizes = [4]
methods = [{ kind = "div-conforming" }]

[mesh]
n_circ = 24
n_rad = 8
alpha = 1.35
"""


def main() -> int:
    th, dth = rbflow_py.theta(1.0)
    assert abs(th - 1.0) < 1e-12 and abs(dth) < 1e-12, (th, dth)
    assert rbflow_py.theta(10.0) == (0.0, 0.0)

    pts = rbflow_py.naca_profile(0.15, 64)
    assert max(abs(y) for _, y in pts) < 0.08
    xs = [x for x, _ in pts]
    assert abs(max(xs) - min(xs) - 1.0) < 1e-12  # unit chord

    with tempfile.TemporaryDirectory() as tmp:
        tmp = pathlib.Path(tmp)
        cfg = tmp / "tiny.toml"
        cfg.write_text(TINY)
        stages = rbflow_py.run_offline(str(tmp / "store"), str(cfg))
        assert all(status == "ran" for _, status in stages), stages
        again = rbflow_py.run_offline(str(tmp / "store"), str(cfg))
        assert all(status == "skipped" for _, status in again), again

        model = rbflow_py.load_model(str(tmp / "store" / "models" / "dc_M04.rbm"))
        assert model.kind == "div-conforming"
        assert model.sizes == (4, 4, 4)
        assert "block" in model.solvers()

        out = model.solve(10.0, 5.0, "block", lift=True)
        assert out["converged"], out
        assert all(s == 0.0 for s in out["s_coeffs"])
        assert all(math.isfinite(v) for v in out["u"])
        coupled = model.solve(10.0, 5.0, "coupled")
        diff = max(abs(a - b) for a, b in zip(out["u_coeffs"], coupled["u_coeffs"]))
        assert diff < 1e-8, diff

        try:
            model.solve(0.0, 1.0, "nonsense")
        except ValueError:
            pass
        else:
            raise AssertionError("unknown solver accepted")

    print("rbflow_py smoke test: ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
