import numpy as np
import pytest

from mimo_ilc.errors import InvalidArgument
from mimo_ilc.kernels import (SisoKernel, WeightedKernelContext, assemble_covariances, eval_siso, eval_weighted,
                              is_hermitian_psd, kernel_rows, self_covariance)


def test_siso_values():
    k = SisoKernel(2.0, 0.7)
    assert eval_siso(k, 3.1, 3.1) == pytest.approx(4.0)
    assert eval_siso(SisoKernel(1.0, 1.0), 0.0, 1.0) == pytest.approx(0.6065306597126334, rel=1e-12)
    vals = [eval_siso(k, 0.0, d).real for d in np.linspace(0, 10, 50)]
    assert np.all(np.diff(vals) < 0) and vals[-1] < 1e-20
    assert eval_siso(k, 1.0, 2.5) == eval_siso(k, 2.5, 1.0)


def test_siso_invalid():
    with pytest.raises(InvalidArgument):
        SisoKernel(0.0, 1.0)
    with pytest.raises(InvalidArgument):
        SisoKernel(1.0, -1.0)


def test_weighted_examples():
    ctx = WeightedKernelContext((SisoKernel(),), [0.0, 0.0], [[2.0, 2.0]])
    assert eval_weighted(ctx, 0, 1) == pytest.approx(4.0)
    wide = (SisoKernel(1.0, 1e6), SisoKernel(1.0, 1e6))
    ctx2 = WeightedKernelContext(wide, [0.0, 1.0], [[1 + 1j, 1.0], [2.0, 1j]])
    assert eval_weighted(ctx2, 0, 1) == pytest.approx(1 - 1j, abs=1e-9)
    with pytest.raises(InvalidArgument):
        eval_weighted(ctx2, 0, 2)


def test_zero_input_row_gives_zero():
    ctx = WeightedKernelContext((SisoKernel(), SisoKernel()), [0.0, 1.0], [[0.0, 1.0], [1.0, 2.0]])
    # only channel 0 silent at w_0: channel 1 still contributes
    assert eval_weighted(ctx, 0, 1) != 0
    with pytest.raises(InvalidArgument):
        WeightedKernelContext((SisoKernel(),), [0.0, 1.0], [[0.0, 1.0]])


def test_assemble_scalar_case():
    ctx = WeightedKernelContext((SisoKernel(),), [1.0], [[2.0]])
    K, KT, K0 = assemble_covariances(ctx, 1.3, 0)
    assert K[0, 0] == pytest.approx(4.0)
    assert KT[0, 0] == pytest.approx(2.0 * eval_siso(SisoKernel(), 1.3, 1.0))
    assert K0 == pytest.approx(1.0)
    with pytest.raises(InvalidArgument):
        assemble_covariances(ctx, 1.0, 1)


def random_ctx(rng, n, q):
    kernels = tuple(SisoKernel(rng.uniform(0.2, 2), rng.uniform(0.1, 2)) for _ in range(n))
    grid = np.sort(rng.uniform(0, 10, q))
    I = rng.normal(size=(n, q)) + 1j * rng.normal(size=(n, q))
    return WeightedKernelContext(kernels, grid, I)


def test_matrix_matches_entrywise():
    ctx = random_ctx(np.random.default_rng(4), 3, 6)
    K = self_covariance(ctx)
    E = np.array([[eval_weighted(ctx, r, s) for s in range(ctx.q)] for r in range(ctx.q)])
    assert np.allclose(K, E, atol=1e-12)
    assert np.allclose(E, E.conj().T, atol=1e-12)


def test_random_psd_and_quadratic_form():
    rng = np.random.default_rng(7)
    ctx = random_ctx(rng, 3, 5)
    K = self_covariance(ctx)
    assert np.linalg.eigvalsh(K).min() >= -1e-10
    for _ in range(20):
        v = rng.normal(size=5) + 1j * rng.normal(size=5)
        z = np.vdot(v, K @ v)
        assert z.real >= -1e-10 and abs(z.imag) < 1e-10


def test_is_hermitian_psd():
    assert is_hermitian_psd(np.eye(3))
    assert not is_hermitian_psd(np.array([[0, 1], [-1, 0]]))
    assert not is_hermitian_psd(np.diag([1.0, -1.0]))
    with pytest.raises(InvalidArgument):
        is_hermitian_psd(np.ones((2, 3)))


def test_kernel_rows_nested():
    rows = kernel_rows([[1, 2], [3, 4]], 0.5, 2, 2)
    assert rows[1][0].sigma_f == 3 and rows[0][1].length_scale == 0.5
