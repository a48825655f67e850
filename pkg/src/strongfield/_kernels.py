"""Compiled inner loop of the Krylov propagator (numba; numpy fallback upstream).

The Lanczos recursion for a batch of orbitals is embarrassingly parallel over
the batch index, and each Hamiltonian application fuses the z stencil, the
dense radial block and the diagonal potential into one pass over the grid.
"""

import numpy as np

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - environment without numba
    HAVE_NUMBA = False


if HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def lanczos_iterate(c0, vdiag, sten, trho, order, tol, reorth):
        """Build the Lanczos basis and recurrence coefficients per orbital.

        Returns (basis, alpha, beta, eff, norm0, ok): ``eff`` is the usable
        subspace dimension (smaller on happy breakdown), ``ok`` flags loss of
        finiteness. ``reorth`` enables the full reorthogonalization pass
        (needed for roundoff-level unitarity; predictor steps skip it).
        """
        nb, nz, nr = c0.shape
        q = sten.shape[0] - 1
        basis = np.zeros((nb, order, nz, nr), np.complex128)
        alpha = np.zeros((nb, order))
        beta = np.zeros((nb, order))
        eff = np.zeros(nb, np.int64)
        norm0 = np.zeros(nb)
        ok = np.ones(nb, np.uint8)

        for b in prange(nb):
            acc = 0.0
            for i in range(nz):
                for j in range(nr):
                    v = c0[b, i, j]
                    acc += v.real * v.real + v.imag * v.imag
            nrm = np.sqrt(acc)
            norm0[b] = nrm
            eff[b] = order
            if nrm == 0.0:
                eff[b] = 1
                continue
            inv = 1.0 / nrm
            for i in range(nz):
                for j in range(nr):
                    basis[b, 0, i, j] = c0[b, i, j] * inv

            w = np.empty((nz, nr), np.complex128)
            stopped = False
            for k in range(order):
                if stopped:
                    break
                # w = H v_k in one fused pass
                for i in range(nz):
                    for j in range(nr):
                        a_c = (sten[0] + vdiag[b, i, j]) * basis[b, k, i, j]
                        for o in range(1, q + 1):
                            if i - o >= 0:
                                a_c += sten[o] * basis[b, k, i - o, j]
                            if i + o < nz:
                                a_c += sten[o] * basis[b, k, i + o, j]
                        s_c = 0.0 + 0.0j
                        for l in range(nr):
                            s_c += basis[b, k, i, l] * trho[l, j]
                        w[i, j] = a_c + s_c
                a = 0.0
                for i in range(nz):
                    for j in range(nr):
                        vk = basis[b, k, i, j]
                        a += vk.real * w[i, j].real + vk.imag * w[i, j].imag
                alpha[b, k] = a
                if k == order - 1:
                    break
                for i in range(nz):
                    for j in range(nr):
                        w[i, j] -= a * basis[b, k, i, j]
                if k > 0:
                    bk = beta[b, k - 1]
                    for i in range(nz):
                        for j in range(nr):
                            w[i, j] -= bk * basis[b, k - 1, i, j]
                if reorth:
                    # one full reorthogonalization pass
                    for l in range(k + 1):
                        pr = 0.0 + 0.0j
                        for i in range(nz):
                            for j in range(nr):
                                pr += np.conj(basis[b, l, i, j]) * w[i, j]
                        for i in range(nz):
                            for j in range(nr):
                                w[i, j] -= pr * basis[b, l, i, j]
                acc = 0.0
                for i in range(nz):
                    for j in range(nr):
                        acc += w[i, j].real * w[i, j].real + w[i, j].imag * w[i, j].imag
                bnew = np.sqrt(acc)
                if not np.isfinite(bnew) or not np.isfinite(a):
                    ok[b] = 0
                    stopped = True
                elif bnew <= tol:
                    eff[b] = k + 1
                    stopped = True
                else:
                    beta[b, k] = bnew
                    invb = 1.0 / bnew
                    for i in range(nz):
                        for j in range(nr):
                            basis[b, k + 1, i, j] = w[i, j] * invb
        return basis, alpha, beta, eff, norm0, ok
