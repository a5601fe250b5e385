"""Complex matrix kernels and a cyclic-Jacobi Hermitian eigensolver.

Matrices are dense ``numpy`` arrays of ``complex128``. The eigensolver is
hand-rolled (cyclic Jacobi sweeps with unitary 2x2 rotations) so that its
output is bit-deterministic for identical input: fixed sweep order, fixed
rotation formulas, and a fixed eigenvector phase convention. At the array
sizes used here (up to 32x32) it is accurate to near machine precision.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

DEFAULT_JACOBI_TOL = 1e-12
MAX_JACOBI_SWEEPS = 100


def as_cmatrix(a) -> np.ndarray:
    """Coerce to a 2-D complex128 array, rejecting non-finite entries."""
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains NaN or Inf entries")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit dimension check."""
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    return a @ b


def adjoint(a) -> np.ndarray:
    """Conjugate transpose."""
    return np.asarray(a, dtype=np.complex128).conj().T


def fro_norm(a) -> float:
    """Frobenius norm."""
    return float(np.linalg.norm(np.asarray(a)))


def gram_average(channels) -> np.ndarray:
    """Average Gram matrix (1/N) * sum_n H_n^H H_n of a channel list.

    All matrices must share the same shape; the result is Hermitian PSD.
    """
    if len(channels) == 0:
        raise ValueError("gram_average needs a nonempty channel list")
    shape = np.shape(channels[0])
    acc = np.zeros((shape[1], shape[1]), dtype=np.complex128)
    for h in channels:
        h = np.asarray(h, dtype=np.complex128)
        if h.shape != shape:
            raise ValueError(f"dimension mismatch: {h.shape} vs {shape}")
        acc += h.conj().T @ h
    acc /= len(channels)
    # Exact Hermitian symmetrization; summation order can leave ~1e-16 skew.
    return 0.5 * (acc + acc.conj().T)


@dataclass
class EigResult:
    """Eigendecomposition of a Hermitian matrix.

    ``eigenvalues`` are real and sorted descending; ``eigenvectors`` holds
    unit-norm columns in matching order, each phased so its
    largest-magnitude component is real and positive.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int


def _hermitian_defect(a: np.ndarray) -> float:
    return float(np.max(np.abs(a - a.conj().T))) if a.size else 0.0


def eig_hermitian(a, tol: float = DEFAULT_JACOBI_TOL) -> EigResult:
    """Full eigendecomposition of a Hermitian matrix by cyclic Jacobi sweeps.

    ``tol`` bounds the off-diagonal Frobenius mass relative to the matrix
    Frobenius norm at convergence. Raises on non-Hermitian input (defect
    above 1e-10) and on non-convergence after the sweep limit.
    """
    a = as_cmatrix(a)
    n, m = a.shape
    if n != m:
        raise ValueError(f"matrix must be square, got {a.shape}")
    defect = _hermitian_defect(a)
    if defect > 1e-10:
        raise ValueError(f"matrix is not Hermitian (defect {defect:.3e})")

    work = 0.5 * (a + a.conj().T)
    vecs = np.eye(n, dtype=np.complex128)
    norm = fro_norm(work)
    if norm == 0.0 or n == 1:
        return EigResult(np.real(np.diag(work)).copy(), vecs, 0)

    threshold = tol * norm
    sweeps = 0
    while _offdiag_norm(work) > threshold:
        if sweeps >= MAX_JACOBI_SWEEPS:
            raise NumericalError(
                f"Jacobi sweep limit reached after {sweeps} sweeps "
                f"(off-diagonal norm {_offdiag_norm(work):.3e})"
            )
        for p in range(n - 1):
            for q in range(p + 1, n):
                _rotate(work, vecs, p, q)
        sweeps += 1

    vals = np.real(np.diag(work)).copy()
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    vecs = fix_phase(vecs)
    return EigResult(vals, vecs, sweeps)


def _offdiag_norm(a: np.ndarray) -> float:
    off = a - np.diag(np.diag(a))
    return float(np.linalg.norm(off))


def _rotate(a: np.ndarray, v: np.ndarray, p: int, q: int) -> None:
    """Apply one unitary Jacobi rotation zeroing a[p, q], in place.

    With a[p,q] = r*e^{i*phi}, the rotation is the real Jacobi rotation for
    [[a_pp, r], [r, a_qq]] with the phase folded into the mixing column.
    """
    apq = a[p, q]
    # np.hypot so scalar and batched solvers round identically.
    r = np.hypot(apq.real, apq.imag)
    if r == 0.0:
        return
    phase = apq / r
    app = a[p, p].real
    aqq = a[q, q].real
    diff = aqq - app
    if r < 1e-300 * abs(diff):
        t = -r / diff
    else:
        # Small-magnitude root of t^2 - (diff/r) t - 1 = 0.
        theta = diff / (2.0 * r)
        t = -1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
        if theta < 0.0:
            t = -t
    c = 1.0 / np.sqrt(t * t + 1.0)
    s = t * c

    # Columns p and q of the unitary: [c, -s*phase; s*conj(phase), c].
    col_p = a[:, p] * c + a[:, q] * (s * np.conj(phase))
    col_q = a[:, p] * (-s * phase) + a[:, q] * c
    a[:, p] = col_p
    a[:, q] = col_q
    row_p = a[p, :] * c + a[q, :] * (s * phase)
    row_q = a[p, :] * (-s * np.conj(phase)) + a[q, :] * c
    a[p, :] = row_p
    a[q, :] = row_q
    # Force the rotated pair to its exact Hermitian form.
    a[p, q] = 0.0
    a[q, p] = 0.0
    a[p, p] = a[p, p].real
    a[q, q] = a[q, q].real

    vcol_p = v[:, p] * c + v[:, q] * (s * np.conj(phase))
    vcol_q = v[:, p] * (-s * phase) + v[:, q] * c
    v[:, p] = vcol_p
    v[:, q] = vcol_q


def eig_hermitian_batch(mats, tol: float = DEFAULT_JACOBI_TOL) -> list:
    """Jacobi eigendecomposition of a stack of Hermitian matrices.

    Applies the same cyclic pivots and rotation formulas as
    ``eig_hermitian`` to every matrix in lockstep, freezing each matrix as
    soon as it converges, so the results are bitwise identical to the
    scalar solver. This amortizes Python overhead when decomposing the 60
    subband Grams of one position at once.
    """
    a = np.array(mats, dtype=np.complex128)
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise ValueError(f"expected a stack of square matrices, got {a.shape}")
    m, n, _ = a.shape
    defects = np.max(np.abs(a - a.conj().transpose(0, 2, 1)), axis=(1, 2)) if n else 0
    if np.any(defects > 1e-10):
        worst = float(np.max(defects))
        raise ValueError(f"non-Hermitian matrix in batch (defect {worst:.3e})")

    work = 0.5 * (a + a.conj().transpose(0, 2, 1))
    vecs = np.broadcast_to(np.eye(n, dtype=np.complex128), (m, n, n)).copy()
    norms = np.linalg.norm(work, axis=(1, 2))
    thresholds = tol * norms
    sweeps = np.zeros(m, dtype=int)

    def offdiag(w):
        off = w.copy()
        idx = np.arange(n)
        off[:, idx, idx] = 0.0
        return np.linalg.norm(off, axis=(1, 2))

    active = (offdiag(work) > thresholds) & (norms > 0) if n > 1 else np.zeros(m, bool)
    while np.any(active):
        if np.any(sweeps[active] >= MAX_JACOBI_SWEEPS):
            raise NumericalError(
                f"Jacobi sweep limit reached after {MAX_JACOBI_SWEEPS} sweeps "
                f"on {int(np.sum(sweeps >= MAX_JACOBI_SWEEPS))} matrices"
            )
        for p in range(n - 1):
            for q in range(p + 1, n):
                _rotate_batch(work, vecs, p, q, active)
        sweeps[active] += 1
        active = active & (offdiag(work) > thresholds)

    results = []
    for i in range(m):
        vals = np.real(np.diag(work[i])).copy()
        order = np.argsort(-vals, kind="stable")
        results.append(
            EigResult(vals[order], fix_phase(vecs[i][:, order]), int(sweeps[i]))
        )
    return results


def _rotate_batch(a: np.ndarray, v: np.ndarray, p: int, q: int, active: np.ndarray) -> None:
    """Batched twin of _rotate; identical arithmetic per matrix."""
    apq = a[:, p, q]
    r = np.hypot(apq.real, apq.imag)
    do = active & (r != 0.0)
    if not np.any(do):
        return
    safe_r = np.where(r == 0.0, 1.0, r)
    phase = np.where(r == 0.0, 1.0 + 0j, apq / safe_r)
    app = a[:, p, p].real
    aqq = a[:, q, q].real
    diff = aqq - app
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        theta = diff / (2.0 * safe_r)
        t_main = -1.0 / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
        t_main = np.where(theta < 0.0, -t_main, t_main)
        tiny = r < 1e-300 * np.abs(diff)
        t_tiny = -r / np.where(diff == 0.0, 1.0, diff)
        t = np.where(tiny, t_tiny, t_main)
    t = np.where(do, t, 0.0)
    c = 1.0 / np.sqrt(t * t + 1.0)
    s = t * c
    phase = np.where(do, phase, 1.0 + 0j)

    sp = (s * np.conj(phase))[:, None]
    sn = (-s * phase)[:, None]
    cc = c[:, None]
    col_p = a[:, :, p] * cc + a[:, :, q] * sp
    col_q = a[:, :, p] * sn + a[:, :, q] * cc
    a[:, :, p] = np.where(do[:, None], col_p, a[:, :, p])
    a[:, :, q] = np.where(do[:, None], col_q, a[:, :, q])
    row_p = a[:, p, :] * cc + a[:, q, :] * (s * phase)[:, None]
    row_q = a[:, p, :] * (-s * np.conj(phase))[:, None] + a[:, q, :] * cc
    a[:, p, :] = np.where(do[:, None], row_p, a[:, p, :])
    a[:, q, :] = np.where(do[:, None], row_q, a[:, q, :])
    a[do, p, q] = 0.0
    a[do, q, p] = 0.0
    a[do, p, p] = a[do, p, p].real
    a[do, q, q] = a[do, q, q].real

    vcol_p = v[:, :, p] * cc + v[:, :, q] * sp
    vcol_q = v[:, :, p] * sn + v[:, :, q] * cc
    v[:, :, p] = np.where(do[:, None], vcol_p, v[:, :, p])
    v[:, :, q] = np.where(do[:, None], vcol_q, v[:, :, q])


def fix_phase(vecs: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-|.| component is real positive.

    Ties on magnitude resolve to the lowest row index, so the convention is
    deterministic. Zero columns are returned unchanged.
    """
    out = np.array(vecs, dtype=np.complex128, copy=True)
    for j in range(out.shape[1]):
        col = out[:, j]
        k = int(np.argmax(np.abs(col)))
        pivot = col[k]
        if pivot != 0.0:
            out[:, j] = col * (np.conj(pivot) / abs(pivot))
            out[k, j] = out[k, j].real
    return out
