"""Finite-dimensional stabilizing feedback synthesis.

Pipeline: project onto the unstable eigenspace, reduce the control system to
the unstable coordinates, check per-eigenvalue controllability (Hautus
margins, the numerical stand-in for rank conditions), place poles on the
reduced pair, and assemble the feedback law either in spectral form
(functionals factoring exactly through the unstable projection) or in
localized form (observation vectors supported on a window, gain re-solved
against the masked Gramian; spill onto stable modes verified a posteriori).
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import (
    DimensionError,
    RankCheckFailure,
    SynthesisError,
    UsageError,
)
from .operators import (
    GreenMap,
    Operator,
    match_spectra,
    spectrum,
)

_CLUSTER_TOL = 1e-8


@dataclass(frozen=True)
class FeedbackLaw:
    """Rank-K feedback  u = sum_k <obs_k, y> g_k  realized as a dense matrix.

    ``boundary_profiles`` holds the output directions g_k as columns (m x K);
    ``observation_rows`` holds the K observation functionals as rows (K x n),
    so ``as_matrix = boundary_profiles @ observation_rows``.  In localized
    mode ``observation_vectors`` are the window-supported vectors w_k (rows)
    with ``omega_weights`` the quadrature weights realizing the windowed inner
    product.
    """

    mode: str
    gain: np.ndarray
    boundary_profiles: np.ndarray
    observation_rows: np.ndarray
    as_matrix: np.ndarray
    observation_vectors: np.ndarray | None = None
    omega_mask: np.ndarray | None = None
    omega_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in ("spectral", "localized"):
            raise UsageError(f"unknown feedback mode {self.mode!r}")
        prof = np.atleast_2d(np.asarray(self.boundary_profiles))
        rows = np.atleast_2d(np.asarray(self.observation_rows))
        mat = np.atleast_2d(np.asarray(self.as_matrix))
        if prof.shape[1] != rows.shape[0]:
            raise DimensionError("one observation functional per boundary profile required")
        if mat.shape != (prof.shape[0], rows.shape[1]):
            raise DimensionError(
                f"realized feedback shape {mat.shape} inconsistent with profiles/observations")
        resid = np.abs(prof @ rows - mat).max(initial=0.0)
        if resid > 1e-12 * max(np.abs(mat).max(initial=0.0), 1.0):
            raise SynthesisError(f"rank-K factorization residual {resid:.3e} exceeds 1e-12")
        if self.mode == "localized":
            if self.omega_mask is None or self.observation_vectors is None:
                raise UsageError("localized mode requires omega_mask and observation vectors")
            outside = ~np.asarray(self.omega_mask, dtype=bool)
            w = np.atleast_2d(np.asarray(self.observation_vectors))
            if np.any(w[:, outside] != 0):
                raise SynthesisError("localized observation vectors must vanish outside the window")

    @property
    def n_channels(self):
        return self.boundary_profiles.shape[1]

    @property
    def state_dim(self):
        return self.as_matrix.shape[1]

    @property
    def input_dim(self):
        return self.as_matrix.shape[0]

    @staticmethod
    def zero(input_dim, state_dim):
        return FeedbackLaw(
            mode="spectral",
            gain=np.zeros((1, 1)),
            boundary_profiles=np.zeros((input_dim, 1)),
            observation_rows=np.zeros((1, state_dim)),
            as_matrix=np.zeros((input_dim, state_dim)),
        )


@dataclass(frozen=True)
class ReducedPair:
    """Unstable-coordinate control pair (Lambda_N, B_N) with Hautus margins.

    ``b_matrix`` projects the control influence onto the unstable left basis;
    ``hautus_margins[i]`` is the smallest singular value of
    [lambda_i I - Lambda | B] restricted to eigenvalue i's cluster block.
    ``obs_margins`` (present when a window was supplied) are the per-cluster
    smallest eigenvalues of the windowed observability Gramian.
    """

    lam: np.ndarray
    b_matrix: np.ndarray
    hautus_margins: np.ndarray
    clusters: tuple
    obs_margins: np.ndarray | None = None

    @property
    def n_unstable(self):
        return self.lam.shape[0]

    @property
    def lambda_matrix(self):
        return np.diag(self.lam)


@dataclass(frozen=True)
class RankReport:
    passed: bool
    margins: np.ndarray
    failing: tuple
    eigenvalues: np.ndarray
    obs_margins: np.ndarray | None = None
    tol: float = 1e-8

    def table(self):
        lines = ["eigenvalue, hautus_margin, obs_margin, status"]
        for i, lam in enumerate(self.eigenvalues):
            om = "-" if self.obs_margins is None else f"{self.obs_margins[i]:.6e}"
            status = "FAIL" if i in self.failing else "ok"
            lines.append(f"{lam}, {self.margins[i]:.6e}, {om}, {status}")
        return "\n".join(lines)


def _clusters(eigenvalues, tol=_CLUSTER_TOL):
    """Group indices of (sorted) eigenvalues lying within ``tol`` of each other."""
    groups = []
    used = np.zeros(len(eigenvalues), dtype=bool)
    for i in range(len(eigenvalues)):
        if used[i]:
            continue
        members = [j for j in range(len(eigenvalues))
                   if not used[j] and abs(eigenvalues[j] - eigenvalues[i]) <= tol]
        for j in members:
            used[j] = True
        groups.append(tuple(members))
    return tuple(groups)


def unstable_projection(spectral):
    """Rank-N spectral projection P_N onto the unstable eigenspace.

    Built from the biorthogonal bases; idempotent to 1e-8 by construction.
    N = 0 is a valid nothing-to-stabilize outcome and yields the zero matrix.
    """
    n = spectral.dim
    nu = spectral.unstable_count
    if nu == 0:
        return Operator(np.zeros((n, n)), label="P_N (rank 0)")
    p = spectral.right_vectors[:, :nu] @ spectral.left_vectors[:, :nu].conj().T
    return Operator(p, label=f"P_N (rank {nu})")


def reduce(spectral, drift, green, omega_weights=None):
    """Project the control system onto the unstable coordinates.

    ``b_matrix[i, j]`` pairs the j-th influence column of ``drift @ green``
    with the i-th unstable left eigenvector.  ``omega_weights`` (a state-dim
    vector of window quadrature weights, zero outside the window) additionally
    produces windowed observability margins used by the localized route.
    """
    if spectral.unstable_count < 1:
        raise UsageError("reduce: no unstable eigenvalues (nothing to project)")
    nu = spectral.unstable_count
    drift_m = drift.entries if isinstance(drift, Operator) else np.asarray(drift)
    g = green.entries if isinstance(green, GreenMap) else np.atleast_2d(np.asarray(green))
    if g.shape[0] != drift_m.shape[0]:
        raise DimensionError("green map state dimension does not match operator")
    lam = spectral.eigenvalues[:nu]
    wl = spectral.left_vectors[:, :nu]
    b = wl.conj().T @ (drift_m @ g)
    clusters = _clusters(lam)
    lam_mat = np.diag(lam)
    margins = np.empty(nu)
    for group in clusters:
        idx = np.array(group)
        for i in idx:
            block = np.hstack([lam[i] * np.eye(len(idx)) - lam_mat[np.ix_(idx, idx)],
                               b[idx]])
            margins[i] = la.svdvals(block)[-1]
    obs_margins = None
    if omega_weights is not None:
        w = np.asarray(omega_weights, dtype=float)
        if w.shape != (drift_m.shape[0],):
            raise DimensionError("omega_weights must be a state-dim vector")
        vr = spectral.right_vectors[:, :nu]
        gram = vr.conj().T @ (w[:, None] * vr)
        obs_margins = np.empty(nu)
        for group in clusters:
            idx = np.array(group)
            block = gram[np.ix_(idx, idx)]
            vals = la.eigvalsh(0.5 * (block + block.conj().T))
            obs_margins[idx] = vals[0].real
    return ReducedPair(
        lam=lam.copy(),
        b_matrix=b,
        hautus_margins=margins,
        clusters=clusters,
        obs_margins=obs_margins,
    )


def rank_check(rp, tol=1e-8):
    """PASS iff every margin exceeds ``tol``; FAIL is a report, not an error."""
    failing = [i for i, m in enumerate(rp.hautus_margins) if m <= tol]
    if rp.obs_margins is not None:
        failing += [i for i, m in enumerate(rp.obs_margins)
                    if m <= tol and i not in failing]
    return RankReport(
        passed=not failing,
        margins=np.asarray(rp.hautus_margins, dtype=float),
        failing=tuple(sorted(failing)),
        eigenvalues=rp.lam.copy(),
        obs_margins=None if rp.obs_margins is None else np.asarray(rp.obs_margins, dtype=float),
        tol=tol,
    )


def choose_K(spectral, tol=1e-8):
    """Largest geometric multiplicity over the unstable eigenvalue clusters."""
    if spectral.unstable_count < 1:
        return 0
    lam = spectral.eigenvalues[: spectral.unstable_count]
    best = 1
    for group in _clusters(lam, tol):
        vecs = spectral.right_vectors[:, list(group)]
        sv = la.svdvals(vecs)
        rank = int(np.sum(sv > tol * sv[0])) if sv.size and sv[0] > 0 else 0
        best = max(best, rank)
    return best


def _conjugate_closed(values, tol=1e-6):
    values = np.asarray(values, dtype=complex)
    return match_spectra(values, np.conj(values)) <= tol


def _ackermann(lam_mat, b_col, targets):
    n = lam_mat.shape[0]
    ctrb = np.empty((n, n), dtype=complex)
    col = b_col.astype(complex).ravel()
    for j in range(n):
        ctrb[:, j] = col
        col = lam_mat @ col
    sv = la.svdvals(ctrb)
    if sv[-1] <= 1e-12 * max(sv[0], 1.0):
        raise SynthesisError("single-input pair uncontrollable (controllability matrix singular)")
    phi = np.eye(n, dtype=complex)
    for t in targets:
        phi = phi @ (lam_mat - t * np.eye(n))
    k_row = la.solve(ctrb.T, np.eye(n)[:, -1]).T @ phi
    return k_row.reshape(1, n)


def _dyadic_placement(lam_mat, b, targets):
    """Move eigenvalues one at a time by rank-one gain updates.

    Each step uses a left eigenvector u of the current closed loop: the
    update alpha f u^H shifts only u's eigenvalue (the remaining spectrum has
    right eigenvectors annihilated by u^H), by alpha u^H B f.
    """
    n = lam_mat.shape[0]
    gain = np.zeros((b.shape[1], n), dtype=complex)
    placed = []
    for t in targets:
        current = lam_mat - b @ gain
        sp = spectrum(Operator(current))
        w = sp.eigenvalues
        remaining = list(range(n))
        for pt in placed:
            j = int(np.argmin(np.abs(w[remaining] - pt)))
            remaining.pop(j)
        if not remaining:
            raise SynthesisError("dyadic placement bookkeeping exhausted the spectrum")
        i = remaining[int(np.argmax(w[remaining].real))]
        u = sp.left_vectors[:, i]
        ub = u.conj() @ b
        nub = np.linalg.norm(ub)
        if nub <= 1e-12:
            raise SynthesisError(
                f"eigenvalue {w[i]} uncontrollable through the supplied channels")
        f = ub.conj() / nub
        alpha = (w[i] - t) / (ub @ f)
        gain = gain + alpha * np.outer(f, u.conj())
        placed.append(t)
    return gain


def place_poles(rp, targets, input_matrix=None, tol=1e-6):
    """Gain K with spec(Lambda_N - B K) = targets (within ``tol``).

    ``input_matrix`` restricts/combines the boundary influence columns (for
    profile channels); by default the full reduced influence matrix is used.
    Single-input pairs go through Ackermann's formula, multi-input pairs
    through successive rank-one eigenvalue assignment.  Targets must be
    strictly stable, one per unstable eigenvalue, and closed under conjugation
    whenever the reduced spectrum is.
    """
    targets = np.asarray(targets, dtype=complex).ravel()
    n = rp.n_unstable
    if targets.size != n:
        raise UsageError(f"need exactly {n} targets, got {targets.size}")
    if np.any(targets.real >= 0):
        bad = targets[targets.real >= 0][0]
        raise UsageError(f"target {bad} is not strictly stable")
    if _conjugate_closed(rp.lam) and not _conjugate_closed(targets):
        raise UsageError(
            "reduced spectrum is conjugate-closed; targets must be too (real model)")
    b = rp.b_matrix if input_matrix is None else np.atleast_2d(np.asarray(input_matrix))
    if b.shape[0] != n:
        raise DimensionError(f"influence matrix must have {n} rows, got {b.shape}")
    lam_mat = rp.lambda_matrix
    for i in range(n):
        row_gap = np.abs(rp.lam[i] - rp.lam) > _CLUSTER_TOL
        block_idx = np.where(~row_gap)[0]
        sub = np.hstack([rp.lam[i] * np.eye(len(block_idx)) - lam_mat[np.ix_(block_idx, block_idx)],
                         b[block_idx]])
        if la.svdvals(sub)[-1] <= 1e-12:
            raise SynthesisError(
                f"eigenvalue {rp.lam[i]} uncontrollable through the supplied channels")
    if b.shape[1] == 1:
        gain = _ackermann(lam_mat, b[:, 0], targets)
    else:
        gain = _dyadic_placement(lam_mat, b, targets)
    achieved = la.eigvals(lam_mat - b @ gain)
    err = match_spectra(achieved, targets)
    if err > tol:
        raise SynthesisError(f"pole placement missed targets by {err:.3e} (> {tol:g})")
    return gain


def build_feedback(rp, gain, mode, spectral, omega_mask=None,
                   boundary_profiles=None, omega_weights=None,
                   gramian_cond_limit=1e8):
    """Assemble a FeedbackLaw from a placed gain.

    Spectral mode: observation functional k is (gain row k) in unstable
    left-eigenvector coordinates, so the law factors exactly through the
    unstable projection.  Localized mode: observation vectors are window-
    masked combinations of adjoint eigenvectors, re-solved against the masked
    Gramian so that unstable coordinates are still read exactly; spill onto
    stable modes is accepted and checked downstream by direct eigensolve.
    Boundary profiles default to the first K canonical input directions.
    """
    gain = np.atleast_2d(np.asarray(gain, dtype=complex))
    nu = spectral.unstable_count
    n = spectral.dim
    k_channels = gain.shape[0]
    if gain.shape[1] != nu:
        raise DimensionError(f"gain must have one column per unstable mode ({nu})")
    k_min = choose_K(spectral)
    if k_channels < k_min and np.any(gain != 0):
        raise UsageError(
            f"{k_channels} channel(s) cannot move an eigenvalue of geometric multiplicity {k_min}")
    if boundary_profiles is None:
        raise UsageError("boundary_profiles required (columns g_k, one per channel)")
    profiles = np.atleast_2d(np.asarray(boundary_profiles))
    if profiles.shape[1] != k_channels:
        raise DimensionError("one boundary profile column per gain row required")

    wl = spectral.left_vectors[:, :nu]
    coords = wl.conj().T          # rows: unstable coordinate functionals
    if mode == "spectral":
        rows = gain @ coords
        law_kwargs = {}
    elif mode == "localized":
        if omega_mask is None or omega_weights is None:
            raise UsageError("localized mode needs omega_mask and omega_weights")
        mask = np.asarray(omega_mask, dtype=bool)
        wts = np.asarray(omega_weights, dtype=float)
        if mask.shape != (n,) or wts.shape != (n,):
            raise DimensionError("mask/weights must be state-dim vectors")
        if not mask.any():
            raise SynthesisError("localized window is empty")
        weff = np.where(mask, wts, 0.0)
        raw = wl.conj().T * weff[None, :]            # raw windowed functionals
        gram = raw @ spectral.right_vectors[:, :nu]  # <phi_i, m phi*_j> pattern
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond) or cond > gramian_cond_limit:
            raise SynthesisError(
                f"masked observation Gramian condition {cond:.3e} exceeds "
                f"{gramian_cond_limit:g} (window too small or misplaced)")
        corrected = la.solve(gram, raw)
        rows = gain @ corrected
        wvec = np.zeros_like(rows)
        nz = weff > 0
        wvec[:, nz] = np.conj(rows[:, nz]) / weff[nz][None, :]
        law_kwargs = {
            "observation_vectors": wvec,
            "omega_mask": mask,
            "omega_weights": weff,
        }
    else:
        raise UsageError(f"unknown feedback mode {mode!r}")

    as_matrix = profiles @ rows
    if (np.isrealobj(profiles) or np.abs(np.asarray(profiles).imag).max(initial=0) == 0):
        scale = max(np.abs(as_matrix).max(initial=0.0), 1.0)
        if np.abs(as_matrix.imag).max(initial=0.0) <= 1e-8 * scale:
            as_matrix = as_matrix.real
            rows = rows.real if np.abs(rows.imag).max(initial=0.0) <= 1e-8 * scale else rows
            for key in ("observation_vectors",):
                if key in law_kwargs:
                    v = law_kwargs[key]
                    if np.abs(v.imag).max(initial=0.0) <= 1e-8 * scale:
                        law_kwargs[key] = v.real
    return FeedbackLaw(
        mode=mode,
        gain=gain,
        boundary_profiles=profiles,
        observation_rows=rows,
        as_matrix=as_matrix,
        **law_kwargs,
    )


def require_rank(rp, tol=1e-8):
    """Raise RankCheckFailure (with the margin table) unless rank_check passes."""
    report = rank_check(rp, tol)
    if not report.passed:
        raise RankCheckFailure(
            "controllability rank check failed for eigenvalue indices "
            f"{list(report.failing)}", report=report)
    return report
