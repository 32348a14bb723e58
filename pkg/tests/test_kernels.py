import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xrandlab import _kernels_py, kernels

compiled = pytest.importorskip("xrandlab._kernels")
ROOT = Path(__file__).resolve().parents[1]


def _constraints(gen, p, m):
    ca = gen.integers(-1, p, size=m)
    cb = gen.integers(-1, p, size=m)
    same = ca == cb
    cb[same] = (ca[same] + 1) % p
    z = gen.normal(size=p)
    lhs = np.where(ca >= 0, z[np.maximum(ca, 0)], 0.0) - np.where(cb >= 0, z[np.maximum(cb, 0)], 0.0)
    return ca.astype(np.int_), cb.astype(np.int_), lhs + gen.uniform(0.0, 0.5, size=m)


def test_dispatch_uses_compiled_backend():
    assert kernels.COMPILED and kernels.BACKEND == "cython"
    assert kernels.pg_dykstra is compiled.pg_dykstra


@given(seed=st.integers(0, 2**32), p=st.integers(1, 12), m=st.integers(0, 10))
def test_projection_parity_and_feasibility(seed, p, m):
    gen = np.random.default_rng(seed)
    ca, cb, rhs = _constraints(gen, max(p, 2), m)
    z = gen.normal(size=max(p, 2)) * 3
    a = _kernels_py.project_polyhedron(z, ca, cb, rhs)
    b = compiled.project_polyhedron(z, ca, cb, rhs)
    assert np.array_equal(a[0], b[0]) and a[1] == b[1]
    x = a[0]
    lhs = np.where(ca >= 0, x[np.maximum(ca, 0)], 0.0) - np.where(cb >= 0, x[np.maximum(cb, 0)], 0.0)
    assert np.all(lhs <= rhs + 1e-9)


@settings(max_examples=20)
@given(seed=st.integers(0, 2**32), p=st.integers(2, 10), m=st.integers(1, 8))
def test_pg_dykstra_parity(seed, p, m):
    gen = np.random.default_rng(seed)
    ca, cb, rhs = _constraints(gen, p, m)
    M = gen.normal(size=(p + 3, p))
    H = M.T @ M + 0.1 * np.eye(p)
    g = gen.normal(size=p)
    step = 1.0 / np.linalg.eigvalsh(H)[-1]
    a = _kernels_py.pg_dykstra(H, g, ca, cb, rhs, np.zeros(p), step, 1e-9, 300)
    b = compiled.pg_dykstra(H, g, ca, cb, rhs, np.zeros(p), step, 1e-9, 300)
    # summation order inside the matrix-vector products differs, so agreement is to rounding
    assert np.max(np.abs(a[0] - b[0])) <= 1e-6
    assert a[2] == b[2] or abs(a[3] - b[3]) <= 1e-6


@given(seed=st.integers(0, 2**32), n=st.integers(2, 60), d=st.integers(1, 6))
def test_best_split_parity(seed, n, d):
    gen = np.random.default_rng(seed)
    X = np.round(gen.normal(size=(n, d)) * 2) / 2
    order = np.argsort(X, axis=0, kind="stable").T.copy()
    in_node = gen.random(n) < 0.8
    grad = gen.normal(size=n)
    hess = gen.uniform(0.05, 0.25, size=n)
    a = _kernels_py.best_split(X, order, in_node, grad, hess, 1.0, 1e-3)
    b = compiled.best_split(X, order, in_node, grad, hess, 1.0, 1e-3)
    assert a == b


@given(n=st.integers(1, 3000), s=st.integers(1, 80), gap=st.floats(1e-4, 0.999))
def test_size_kernels_parity(n, s, gap):
    assert _kernels_py.certified_size(n, float(s), gap) == compiled.certified_size(n, float(s), gap)
    for r in (0, n // 3, n):
        assert _kernels_py.size_condition(n, r, float(s), gap) == compiled.size_condition(n, r, float(s), gap)


_PURE_SCRIPT = """
import json
import numpy as np
from xrandlab import kernels, model
from xrandlab.data import SynthSpec, generate_synthetic, make_rng
from xrandlab.xrand import solve_qp
ds = generate_synthetic(SynthSpec(n_samples=120, n_features=6, n_goodware_informative=2,
                                  n_malware_informative=2), make_rng(2))
f = model.train(ds, model.TrainConfig(kind="stump_ensemble", n_stumps=6, depth=2))
H = np.array([[2.0, 0.3, 0.0], [0.3, 1.5, 0.2], [0.0, 0.2, 1.0]])
res = solve_qp(H, np.array([1.0, -2.0, 0.5]), np.array([1, 2]), np.array([0, 1]), np.array([-0.3, 0.1]),
               x0=np.zeros(3))
print(json.dumps({"backend": kernels.BACKEND, "model": model.dumps(f), "x": res.x.tolist()}))
"""


def _run_script(pure):
    env = dict(os.environ)
    env.pop("XRANDLAB_PURE", None)
    if pure:
        env["XRANDLAB_PURE"] = "1"
    out = subprocess.run([sys.executable, "-c", _PURE_SCRIPT], env=env, capture_output=True, text=True,
                         check=True, cwd=ROOT)
    return json.loads(out.stdout)


def test_pure_fallback_selected_and_equivalent():
    pure = _run_script(True)
    fast = _run_script(False)
    assert pure["backend"] == "python" and fast["backend"] == "cython"
    assert pure["model"] == fast["model"]
    assert np.allclose(pure["x"], fast["x"], rtol=0, atol=1e-12)


def test_benchmark_quick_runs():
    out = subprocess.run([sys.executable, str(ROOT / "benchmarks" / "bench_kernels.py"), "--quick", "--repeat", "1"],
                         capture_output=True, text=True, check=True, cwd=ROOT)
    for name in ("project_polyhedron", "pg_dykstra", "best_split", "certified_size"):
        assert name in out.stdout
