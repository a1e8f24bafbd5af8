import numpy as np
import pytest

from speechinv import kernels


def random_cell(rng, n_in, n_h):
    s = 1.0 / np.sqrt(n_in)
    return dict(
        wz=rng.uniform(-s, s, (n_h, n_in)),
        wr=rng.uniform(-s, s, (n_h, n_in)),
        wh=rng.uniform(-s, s, (n_h, n_in)),
        uz=rng.uniform(-s, s, (n_h, n_h)),
        ur=rng.uniform(-s, s, (n_h, n_h)),
        uh=rng.uniform(-s, s, (n_h, n_h)),
        bz=rng.normal(0, 0.1, n_h),
        br=rng.normal(0, 0.1, n_h),
        bh=rng.normal(0, 0.1, n_h),
    )


def test_get_kernels_names():
    assert kernels.get_kernels("numpy").name == "numpy"
    if kernels.NUMBA_AVAILABLE:
        assert kernels.get_kernels("numba").name == "numba"
        assert kernels.get_kernels("auto").name == "numba"
    assert kernels.active_backend() in ("numpy", "numba")


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        kernels.get_kernels("tpu")


@pytest.mark.skipif(not kernels.NUMBA_AVAILABLE, reason="numba not installed")
def test_backends_agree_forward_and_backward():
    rng = np.random.default_rng(11)
    for n_in, n_h, length in [(13, 8, 50), (4, 3, 7), (16, 16, 200)]:
        cell = random_cell(rng, n_in, n_h)
        x = np.ascontiguousarray(rng.normal(size=(length, n_in)))
        args = tuple(np.ascontiguousarray(cell[k]) for k in
                     ("wz", "wr", "wh", "uz", "ur", "uh", "bz", "br", "bh"))
        np_k = kernels.get_kernels("numpy")
        nb_k = kernels.get_kernels("numba")
        f_np = np_k.gru_forward(x, *args)
        f_nb = nb_k.gru_forward(x, *args)
        for a, b in zip(f_np, f_nb):
            assert np.allclose(a, b, atol=1e-13)
        dh = np.ascontiguousarray(rng.normal(size=(length, n_h)))
        wargs = args[:6]
        b_np = np_k.gru_backward(dh, x, *f_np, *wargs)
        b_nb = nb_k.gru_backward(dh, x, *f_nb, *wargs)
        for a, b in zip(b_np, b_nb):
            assert np.allclose(a, b, atol=1e-12)


def test_forward_is_deterministic():
    rng = np.random.default_rng(5)
    cell = random_cell(rng, 6, 4)
    x = np.ascontiguousarray(rng.normal(size=(30, 6)))
    args = tuple(np.ascontiguousarray(cell[k]) for k in
                 ("wz", "wr", "wh", "uz", "ur", "uh", "bz", "br", "bh"))
    k = kernels.get_kernels()
    a = k.gru_forward(x, *args)
    b = k.gru_forward(x, *args)
    for u, v in zip(a, b):
        assert np.array_equal(u, v)


def test_gates_stay_in_range():
    rng = np.random.default_rng(9)
    cell = random_cell(rng, 5, 7)
    x = np.ascontiguousarray(rng.normal(size=(40, 5)) * 10.0)  # large inputs
    args = tuple(np.ascontiguousarray(cell[k]) for k in
                 ("wz", "wr", "wh", "uz", "ur", "uh", "bz", "br", "bh"))
    hs, zs, rs, cs = kernels.get_kernels().gru_forward(x, *args)
    assert np.all((zs > 0) & (zs < 1))
    assert np.all((rs > 0) & (rs < 1))
    assert np.all(np.abs(cs) <= 1.0)
    assert np.all(np.abs(hs) <= 1.0)  # convex mix of 0-start and tanh values
    assert np.all(np.isfinite(hs))
