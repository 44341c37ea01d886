"""Observability certificates for linear lattice systems and an empirical
rank diagnostic for nonlinear ones.

For a linear system x' = A x observed through y = h x, the certificates
agree (theorem-level equivalence, exercised by the tests):

  * Kalman: the stacked matrix (h; hA; ...; hA^{p-1}) has full column rank.
  * Hautus: no eigenvector of A lies in the kernel of h.
  * Gramian: the finite-horizon observability Gramian is invertible, in
    which case the initial state can be reconstructed from the output
    signal by quadrature.

Patch averaging is *not* observable for constant-coefficient generators:
a lattice harmonic that completes a full period inside every patch is
annihilated by the tokenizer yet is an eigenvector of the generator, so
its entire orbit is invisible.  :func:`annihilation_witness` constructs
that state explicitly.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm

from .errors import NonObservableError, ParameterError
from .lattice_ops import GridSpec


@dataclass
class ObservabilityReport:
    """Outcome of one certificate run.

    ``rank``/``singular_values`` are filled by the rank test, the eigen
    fields by the Hautus test.  ``eigen_tests`` rows are tuples
    (eigenvalue, multiplicity, min |h v| over unit eigenvectors v) and
    ``failing`` is the subset below tolerance.  When ``rank`` is set,
    ``observable`` equals ``rank == state_dim``.
    """

    method: str
    state_dim: int
    observable: bool
    tolerance: float
    rank: int | None = None
    singular_values: np.ndarray | None = None
    eigen_tests: list = field(default_factory=list)
    failing: list = field(default_factory=list)
    tested_eigenvalues: int | None = None

    def to_text(self) -> str:
        lines = [
            f"method = {self.method}",
            f"state_dim = {self.state_dim}",
            f"observable = {self.observable}",
            f"tolerance = {self.tolerance:.3e}",
        ]
        if self.rank is not None:
            lines.append(f"rank = {self.rank}")
        if self.singular_values is not None:
            sv = self.singular_values
            lines.append(f"singular_value_max = {sv[0]:.6e}")
            lines.append(f"singular_value_min = {sv[-1]:.6e}")
        if self.tested_eigenvalues is not None:
            lines.append(f"tested_eigenvalues = {self.tested_eigenvalues}")
        for lam, mult, norm in self.failing:
            lines.append(f"failing_eigenvalue = {lam.real:+.6e}{lam.imag:+.6e}j "
                         f"multiplicity={mult} min_output_norm={norm:.3e}")
        return "\n".join(lines) + "\n"


def _as_dense(mat) -> np.ndarray:
    return mat.toarray() if sp.issparse(mat) else np.asarray(mat, dtype=float)


def kalman_observability_matrix(A, h, max_powers: int | None = None) -> np.ndarray:
    """Stack (h; hA; ...; hA^{p-1}); p defaults to the state dimension."""
    n = A.shape[0]
    if A.shape[0] != A.shape[1]:
        raise ParameterError(f"generator must be square, got {A.shape}")
    hd = _as_dense(h)
    if hd.ndim == 1:
        hd = hd[None, :]
    if hd.shape[1] != n:
        raise ParameterError(f"output map columns {hd.shape[1]} != state dim {n}")
    p = n if max_powers is None else max_powers
    if p < 1:
        raise ParameterError(f"max_powers must be >= 1, got {p}")
    at = A.T if sp.issparse(A) else np.asarray(A, dtype=float).T
    blocks = np.empty((p, hd.shape[0], n))
    block_t = hd.T.copy()  # (n, m); iterate on the transpose so sparse @ dense works
    for i in range(p):
        blocks[i] = block_t.T
        if i + 1 < p:
            block_t = at @ block_t
    return blocks.reshape(p * hd.shape[0], n)


def rank_test(matrix: np.ndarray, rel_tol: float = 1e-10) -> ObservabilityReport:
    """Numerical column rank via singular values > rel_tol * largest."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.size == 0:
        raise ParameterError(f"rank test needs a nonempty 2-d matrix, got shape {matrix.shape}")
    if not 0 < rel_tol < 1:
        raise ParameterError(f"rel_tol must be in (0, 1), got {rel_tol}")
    svals = np.linalg.svd(matrix, compute_uv=False)
    rank = int((svals > rel_tol * svals[0]).sum()) if svals[0] > 0 else 0
    return ObservabilityReport(
        method="kalman-rank",
        state_dim=matrix.shape[1],
        observable=rank == matrix.shape[1],
        tolerance=rel_tol,
        rank=rank,
        singular_values=svals,
    )


def hautus_test(A, h, tol: float = 1e-8, eig_budget: int | None = None) -> ObservabilityReport:
    """Check min |h v| over unit eigenvectors v for every eigenvalue of A.

    Eigenvalues within 1e-8 * max|eig| of each other are treated as one
    cluster and the minimum is taken over the whole (orthonormalised)
    eigenspace, so degenerate spectra are handled correctly.  With
    ``eig_budget`` set, only that many largest-magnitude eigenpairs are
    examined (iteratively), recorded in ``tested_eigenvalues``.
    """
    n = A.shape[0]
    if A.shape[0] != A.shape[1]:
        raise ParameterError(f"generator must be square, got {A.shape}")
    hd = _as_dense(h)
    if hd.ndim == 1:
        hd = hd[None, :]
    if hd.shape[1] != n:
        raise ParameterError(f"output map columns {hd.shape[1]} != state dim {n}")
    if eig_budget is not None and 1 <= eig_budget < n - 1:
        from scipy.sparse.linalg import eigs

        vals, vecs = eigs(A if sp.issparse(A) else np.asarray(A, float), k=eig_budget, which="LM")
        tested = eig_budget
    else:
        ad = _as_dense(A)
        if np.allclose(ad, ad.T, rtol=0, atol=1e-12 * max(1.0, np.abs(ad).max())):
            vals, vecs = np.linalg.eigh(ad)
            vals = vals.astype(complex)
        else:
            vals, vecs = np.linalg.eig(ad)
        tested = n
    scale = max(1.0, float(np.abs(vals).max()))
    cluster_tol = 1e-8 * scale
    order = np.lexsort((vals.imag, vals.real))
    vals, vecs = vals[order], vecs[:, order]
    eigen_tests = []
    start = 0
    while start < len(vals):
        stop = start + 1
        while stop < len(vals) and abs(vals[stop] - vals[start]) <= cluster_tol:
            stop += 1
        q, _ = np.linalg.qr(vecs[:, start:stop])
        svals = np.linalg.svd(hd @ q, compute_uv=False)
        min_norm = float(svals[-1]) if len(svals) else 0.0
        if q.shape[1] > hd.shape[0]:
            min_norm = 0.0  # eigenspace wider than the output, kernel guaranteed
        eigen_tests.append((complex(vals[start:stop].mean()), stop - start, min_norm))
        start = stop
    failing = [row for row in eigen_tests if row[2] < tol]
    return ObservabilityReport(
        method="hautus",
        state_dim=n,
        observable=not failing,
        tolerance=tol,
        eigen_tests=eigen_tests,
        failing=failing,
        tested_eigenvalues=tested,
    )


def annihilation_witness(grid: GridSpec, patch: int, wave: bool = False):
    """State invisible to patch averaging under constant-coefficient flow.

    Returns ``(state, eigenvalue)``.  The scalar witness is the lattice
    harmonic w(i, j) = cos(2*pi*i/patch): one full period fits in every
    patch, so each patch mean is a full-period cosine sum and vanishes,
    while w is an eigenvector of the unit-coefficient generator with
    eigenvalue 2*(cos(2*pi/patch) - 1)/dx**2.  Its whole orbit is
    therefore token null.  With ``wave=True`` the returned state is the
    stacked pair (w, sqrt(-eigenvalue) * w); the span of (w, 0) and
    (0, w) is invariant under the wave generator and invisible to the
    amplitude tokenizer, so again the whole orbit is annihilated.
    """
    n = grid.n
    if patch < 2 or n % patch != 0:
        raise ParameterError(f"patch {patch} must be >= 2 and divide grid size {n}")
    i = np.arange(n)
    w = np.cos(2.0 * np.pi * i / patch)[:, None] * np.ones((1, n))
    lam = 2.0 * (np.cos(2.0 * np.pi / patch) - 1.0) / grid.dx**2
    if not wave:
        return w, lam
    return np.stack([w, np.sqrt(-lam) * w]), lam


_GRAMIAN_DENSE_LIMIT = 256


def observability_gramian(A, h, horizon: float, quadrature_steps: int = 256) -> np.ndarray:
    """Finite-horizon Gramian  integral_0^T  e^{A's} h' h e^{As} ds.

    Composite Simpson quadrature on a uniform grid (steps rounded up to
    even); matrix exponentials advance by repeated multiplication with
    expm(A * T/steps).  Dense evaluation, guarded to state dims <= 256.
    """
    n = A.shape[0]
    if n > _GRAMIAN_DENSE_LIMIT:
        raise ParameterError(f"dense Gramian limited to state dim {_GRAMIAN_DENSE_LIMIT}, got {n}")
    if horizon <= 0:
        raise ParameterError(f"horizon must be > 0, got {horizon}")
    if quadrature_steps < 2:
        raise ParameterError(f"quadrature_steps must be >= 2, got {quadrature_steps}")
    steps = quadrature_steps + (quadrature_steps % 2)
    hd = _as_dense(h)
    if hd.ndim == 1:
        hd = hd[None, :]
    ad = _as_dense(A)
    delta = horizon / steps
    estep = expm(ad * delta)
    weights = np.full(steps + 1, 2.0)
    weights[1::2] = 4.0
    weights[0] = weights[-1] = 1.0
    gram = np.zeros((n, n))
    prop = np.eye(n)
    for i in range(steps + 1):
        hm = hd @ prop
        gram += weights[i] * (hm.T @ hm)
        if i < steps:
            prop = prop @ estep
    gram *= delta / 3.0
    return (gram + gram.T) / 2.0


def linear_reconstruct_initial_state(A, h, outputs: np.ndarray, horizon: float,
                                     cond_limit: float = 1e12) -> np.ndarray:
    """Recover x(0) from output samples y(s) = h e^{As} x(0).

    ``outputs`` holds the output vectors at uniform quadrature nodes
    0 = s_0 < ... < s_steps = horizon (odd count, so Simpson applies).
    Solves  Q x = integral e^{A's} h' y(s) ds  with the Gramian Q built on
    the same nodes.  Raises NonObservableError when cond(Q) exceeds
    ``cond_limit``: the moment problem is numerically singular.
    """
    outputs = np.atleast_2d(np.asarray(outputs, dtype=float))
    n_nodes = outputs.shape[0]
    if n_nodes < 3 or n_nodes % 2 == 0:
        raise ParameterError(f"need an odd number >= 3 of output samples, got {n_nodes}")
    steps = n_nodes - 1
    n = A.shape[0]
    hd = _as_dense(h)
    if hd.ndim == 1:
        hd = hd[None, :]
    if outputs.shape[1] != hd.shape[0]:
        raise ParameterError(f"output rows have {outputs.shape[1]} entries, map has {hd.shape[0]}")
    gram = observability_gramian(A, h, horizon, steps)
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > cond_limit:
        raise NonObservableError(
            f"observability Gramian condition number {cond:.3e} exceeds {cond_limit:.1e}"
        )
    ad = _as_dense(A)
    delta = horizon / steps
    estep = expm(ad * delta)
    weights = np.full(steps + 1, 2.0)
    weights[1::2] = 4.0
    weights[0] = weights[-1] = 1.0
    rhs = np.zeros(n)
    prop = np.eye(n)
    for i in range(steps + 1):
        rhs += weights[i] * (prop.T @ (hd.T @ outputs[i]))
        if i < steps:
            prop = prop @ estep
    rhs *= delta / 3.0
    return np.linalg.solve(gram, rhs)


@dataclass
class LieLogDetSeries:
    """Empirical local-rank diagnostic along one trajectory.

    For each start time t a square matrix M(t) collects the token state
    and its first ``derivative_order - 1`` forward-difference time
    derivatives (rows) over ``dim`` consecutive samples (columns).
    ``sign`` and ``log_abs_det`` come from a sign-preserving slogdet;
    degenerate matrices yield sign 0 and -inf magnitude rather than an
    exception.  ``rolling`` is the centred ``window``-sample mean of
    ``log_abs_det`` (NaN where the window does not fit).  When singular
    values were requested, ``min_sv``/``max_sv`` hold the extreme
    singular values of each M(t).
    """

    times: np.ndarray
    sign: np.ndarray
    log_abs_det: np.ndarray
    rolling: np.ndarray
    window: int
    dim: int
    dt: float
    derivative_order: int
    min_sv: np.ndarray | None = None
    max_sv: np.ndarray | None = None


def empirical_lie_logdet(traj, patch: int, derivative_order: int = 5,
                         window: int = 50, with_singular_values: bool = False,
                         chunk: int = 256) -> LieLogDetSeries:
    """Sign-preserving log-determinant of the empirical observability
    matrix along a tokenized line trajectory.

    ``traj`` is a Trajectory of (T, N) line fields (or the raw array);
    tokens are means over non-overlapping windows of ``patch`` sites.
    Derivatives use forward-difference tables divided by dt**order, so
    scaling the trajectory by c shifts every log |det| by dim * log(c).
    """
    frames = np.asarray(getattr(traj, "frames", traj), dtype=float)
    dt = float(getattr(traj, "dt", 1.0))
    if frames.ndim != 2:
        raise ParameterError(f"expected (T, N) line frames, got shape {frames.shape}")
    t_total, n_sites = frames.shape
    if patch < 1 or n_sites % patch != 0:
        raise ParameterError(f"patch {patch} must divide the line length {n_sites}")
    p = derivative_order
    if p < 1:
        raise ParameterError(f"derivative_order must be >= 1, got {p}")
    tokens = frames.reshape(t_total, n_sites // patch, patch).mean(axis=2)
    m = tokens.shape[1]
    dim = m * p
    n_z = t_total - p + 1
    if n_z < dim:
        raise ParameterError(f"trajectory too short: {n_z} derivative rows < matrix dim {dim}")
    z = np.empty((n_z, dim))
    for order in range(p):
        deriv = np.diff(tokens, n=order, axis=0) / dt**order if order else tokens
        z[:, order * m:(order + 1) * m] = deriv[:n_z]
    windows = np.lib.stride_tricks.sliding_window_view(z, dim, axis=0)  # (nt, dim, dim)
    nt = windows.shape[0]
    sign = np.empty(nt)
    logabs = np.empty(nt)
    min_sv = np.empty(nt) if with_singular_values else None
    max_sv = np.empty(nt) if with_singular_values else None
    for lo in range(0, nt, chunk):
        hi = min(lo + chunk, nt)
        block = np.ascontiguousarray(windows[lo:hi])
        s, l = np.linalg.slogdet(block)
        sign[lo:hi], logabs[lo:hi] = s, l
        if with_singular_values:
            svals = np.linalg.svd(block, compute_uv=False)
            min_sv[lo:hi] = svals[:, -1]
            max_sv[lo:hi] = svals[:, 0]
    rolling = np.full(nt, np.nan)
    if nt >= window:
        kernel = np.ones(window) / window
        valid = np.convolve(logabs, kernel, mode="valid")
        start = (window - 1) // 2
        rolling[start:start + len(valid)] = valid
    return LieLogDetSeries(
        times=np.arange(nt),
        sign=sign,
        log_abs_det=logabs,
        rolling=rolling,
        window=window,
        dim=dim,
        dt=dt,
        derivative_order=p,
        min_sv=min_sv,
        max_sv=max_sv,
    )
