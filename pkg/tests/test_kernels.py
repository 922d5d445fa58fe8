"""Compiled extension vs pure-numpy twin: identical contracts."""

import numpy as np
import pytest

from latealign import kernels
from latealign.autodiff import guarded_unit_rows
from latealign.kernels import fine_np

compiled = pytest.importorskip("latealign.kernels._fine") \
    if not kernels.HAVE_COMPILED else kernels._impl


def _pack(rng, b, d, n_max):
    counts = rng.integers(1, n_max + 1, size=b).astype(np.int32)
    xu = np.zeros((b, n_max, d))
    g = np.ones((b, n_max))
    small = np.zeros((b, n_max), dtype=np.uint8)
    for i in range(b):
        rows = rng.normal(size=(counts[i], d))
        unit, norms, sm = guarded_unit_rows(rows)
        xu[i, :counts[i]] = unit
        g[i, :counts[i]] = norms
        small[i, :counts[i]] = sm
    return xu, g, small, counts


def test_forward_backends_agree():
    rng = np.random.default_rng(0)
    for _ in range(25):
        b = int(rng.integers(1, 7))
        d = int(rng.integers(2, 9))
        vu, _, _, nv = _pack(rng, b, d, 6)
        tu, _, _, nt = _pack(rng, b, d, 5)
        s_np, av_np, at_np = fine_np.fine_forward(vu, nv, tu, nt)
        s_c, av_c, at_c = compiled.fine_forward(vu, nv, tu, nt)
        assert np.max(np.abs(s_np - s_c)) < 1e-12
        assert np.array_equal(av_np, av_c)
        assert np.array_equal(at_np, at_c)


def test_backward_backends_agree():
    rng = np.random.default_rng(1)
    for _ in range(25):
        b = int(rng.integers(1, 6))
        d = int(rng.integers(2, 8))
        vu, vg, vs, nv = _pack(rng, b, d, 6)
        tu, tg, ts, nt = _pack(rng, b, d, 5)
        _, av, at = fine_np.fine_forward(vu, nv, tu, nt)
        ds = np.ascontiguousarray(rng.normal(size=(b, b)))
        dv_np, dt_np = fine_np.fine_backward(vu, vg, vs, nv, tu, tg, ts, nt, av, at, ds)
        dv_c, dt_c = compiled.fine_backward(vu, vg, vs, nv, tu, tg, ts, nt, av, at, ds)
        assert np.max(np.abs(dv_np - dv_c)) < 1e-12
        assert np.max(np.abs(dt_np - dt_c)) < 1e-12


def test_batched_call_bit_identical_to_single_pair_calls():
    rng = np.random.default_rng(2)
    b, d = 5, 4
    vu, _, _, nv = _pack(rng, b, d, 6)
    tu, _, _, nt = _pack(rng, b, d, 5)
    for impl in (fine_np, compiled):
        full, _, _ = impl.fine_forward(vu, nv, tu, nt)
        for i in range(b):
            for j in range(b):
                one, _, _ = impl.fine_forward(
                    np.ascontiguousarray(vu[i:i + 1]), nv[i:i + 1],
                    np.ascontiguousarray(tu[j:j + 1]), nt[j:j + 1])
                assert one[0, 0] == full[i, j]


def test_argmax_tie_breaks_to_lowest_index():
    # Two identical text rows: both backends must pick index 0.
    v = np.array([[[1.0, 0.0]]])
    t = np.array([[[1.0, 0.0], [1.0, 0.0]]])
    nv = np.array([1], dtype=np.int32)
    nt = np.array([2], dtype=np.int32)
    for impl in (fine_np, compiled):
        _, av, at = impl.fine_forward(v, nv, t, nt)
        assert av[0, 0, 0] == 0
        assert at[0, 0, 0] == 0 and at[0, 0, 1] == 0


def test_env_override_selects_fallback(monkeypatch):
    import importlib
    import latealign.kernels as kmod
    monkeypatch.setenv("LATEALIGN_PURE_PYTHON", "1")
    reloaded = importlib.reload(kmod)
    try:
        assert reloaded.BACKEND == "numpy"
        assert not reloaded.HAVE_COMPILED
    finally:
        monkeypatch.delenv("LATEALIGN_PURE_PYTHON")
        importlib.reload(kmod)
