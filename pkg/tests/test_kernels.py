import subprocess
import sys

import numpy as np
import pytest

from phonembed import kernels
from phonembed.kernels import _cells_py


def _random_cell_inputs(seed, batch=9, hidden=11):
    rng = np.random.default_rng(seed)
    return (
        rng.normal(size=(batch, 3 * hidden)),
        rng.normal(size=(batch, 3 * hidden)),
        rng.normal(size=(batch, hidden)),
        rng.normal(size=(batch, hidden)),
    )


class TestBackendAgreement:
    compiled = pytest.importorskip("phonembed.kernels._cells_cy")

    def test_forward_agrees_with_fallback(self):
        xp, hp, h0, _ = _random_cell_inputs(0)
        for a, b in zip(
            self.compiled.gru_cell_forward(xp, hp, h0),
            _cells_py.gru_cell_forward(xp, hp, h0),
        ):
            np.testing.assert_allclose(a, b, atol=5e-15, rtol=0)

    def test_backward_agrees_with_fallback(self):
        xp, hp, h0, dh = _random_cell_inputs(1)
        _, r, z, n = _cells_py.gru_cell_forward(xp, hp, h0)
        for a, b in zip(
            self.compiled.gru_cell_backward(dh, hp, h0, r, z, n),
            _cells_py.gru_cell_backward(dh, hp, h0, r, z, n),
        ):
            np.testing.assert_allclose(a, b, atol=5e-15, rtol=0)

    def test_each_backend_bit_reproducible(self):
        xp, hp, h0, _ = _random_cell_inputs(2)
        for impl in (self.compiled, _cells_py):
            first = impl.gru_cell_forward(xp, hp, h0)
            second = impl.gru_cell_forward(xp, hp, h0)
            for a, b in zip(first, second):
                assert np.array_equal(a, b)


class TestBackendSelection:
    def test_a_backend_is_active(self):
        assert kernels.BACKEND in ("cython", "python")

    def test_env_var_forces_fallback(self):
        code = (
            "import os; os.environ['PHONEMBED_PURE_PYTHON']='1'; "
            "from phonembed import kernels; print(kernels.BACKEND)"
        )
        out = subprocess.run(
            [sys.executable, "-c", code], capture_output=True, text=True, check=True
        )
        assert out.stdout.strip() == "python"

    def test_fallback_backward_matches_finite_differences(self):
        # The fallback is the reference; pin it against numeric derivatives.
        xp, hp, h0, dh = _random_cell_inputs(3, batch=2, hidden=3)
        h, r, z, n = _cells_py.gru_cell_forward(xp, hp, h0)
        dxp, dhp, dh0 = _cells_py.gru_cell_backward(dh, hp, h0, r, z, n)
        step = 1e-6
        for arr, grad in ((xp, dxp), (hp, dhp), (h0, dh0)):
            flat = arr.reshape(-1)
            for i in range(0, flat.size, 5):
                orig = flat[i]
                flat[i] = orig + step
                up = (_cells_py.gru_cell_forward(xp, hp, h0)[0] * dh).sum()
                flat[i] = orig - step
                down = (_cells_py.gru_cell_forward(xp, hp, h0)[0] * dh).sum()
                flat[i] = orig
                numeric = (up - down) / (2 * step)
                assert abs(numeric - grad.reshape(-1)[i]) < 1e-6
