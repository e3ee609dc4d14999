"""Dense operator algebra for closed-loop boundary-feedback studies.

Houses the basic value types (square operators, boundary-to-interior Green
maps, eigendecompositions, composed closed loops) and the operations built on
them: spectra with biorthogonal left bases, resolvents, matrix exponentials,
fractional powers by spectral calculus, closed-loop composition A_F = M(I-GF)+B
with its factors retained, the adjoint three-term decomposition check, the
resolvent perturbation identity, resolvent ray decay and semigroup decay fits.

All values are immutable after construction and every operation is a pure
function of its inputs; concurrent use needs no locks.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
from scipy.optimize import linear_sum_assignment

from .errors import (
    DimensionError,
    EigenDecompositionError,
    IdentityViolationError,
    IllConditionedBasisError,
    NumericalError,
    SaturationError,
    SingularityError,
    TranslationRequiredError,
    UsageError,
)

_COND_FLAG = 1e8


def _frozen_array(a, dtype=None):
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Operator:
    """Dense square operator with optional grid metadata."""

    entries: np.ndarray
    label: str = ""
    grid_meta: dict | None = None

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.entries))
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"operator {self.label!r}: entries must be square, got {m.shape}")
        if not np.all(np.isfinite(m.real)) or not np.all(np.isfinite(m.imag)):
            raise UsageError(f"operator {self.label!r}: non-finite entries")
        object.__setattr__(self, "entries", _frozen_array(m))

    @property
    def dim(self):
        return self.entries.shape[0]

    def is_real(self, tol=0.0):
        return np.abs(self.entries.imag).max(initial=0.0) <= tol if np.iscomplexobj(self.entries) else True


@dataclass(frozen=True)
class GreenMap:
    """Boundary-input to state map G with its fractional-power exponent gamma."""

    entries: np.ndarray
    gamma: float
    input_labels: tuple = ()

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.entries))
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
            raise DimensionError(f"green map: bad shape {m.shape}")
        if not np.all(np.isfinite(m.real)) or not np.all(np.isfinite(m.imag)):
            raise UsageError("green map: non-finite entries")
        if not (0.0 < self.gamma < 1.0):
            raise UsageError(f"green map exponent gamma must lie strictly in (0,1), got {self.gamma}")
        object.__setattr__(self, "entries", _frozen_array(m))
        labels = tuple(self.input_labels) if self.input_labels else tuple(
            f"u{j}" for j in range(m.shape[1]))
        if len(labels) != m.shape[1]:
            raise DimensionError("green map: one input label per column required")
        object.__setattr__(self, "input_labels", labels)

    @property
    def state_dim(self):
        return self.entries.shape[0]

    @property
    def input_dim(self):
        return self.entries.shape[1]


@dataclass(frozen=True)
class SpectralData:
    """Eigendecomposition sorted by decreasing real part.

    ``left_vectors`` is biorthogonally normalized against ``right_vectors``:
    left[:, i]^H @ right[:, j] = delta_ij.  ``unstable_count`` counts
    eigenvalues with real part >= -tol_unstable.
    """

    eigenvalues: np.ndarray
    right_vectors: np.ndarray
    left_vectors: np.ndarray
    unstable_count: int
    cond_estimate: float
    ill_conditioned: bool = False
    defective: bool = False

    @property
    def dim(self):
        return self.eigenvalues.shape[0]

    def unstable(self):
        return self.eigenvalues[: self.unstable_count]


@dataclass(frozen=True)
class ClosedLoop:
    """Composed feedback operator with its factors retained.

    ``composed = drift_A (I - green @ F) + interior_B`` where F is the
    realized feedback matrix.  ``generator_A`` holds the semigroup generator
    of the unperturbed part (the "-A" whose sign-flip has right-half-plane
    spectrum), ``perturbation_Ao`` the lower-order perturbation, so that
    ``drift_A = generator_A + perturbation_Ao``.  ``ao_epsilon`` is the
    exponent for which the perturbation is relatively bounded (first-order
    terms: 1/2).
    """

    generator_A: Operator
    perturbation_Ao: Operator | None
    drift_A: Operator
    green: GreenMap
    feedback: object | None
    interior_B: Operator | None
    composed: Operator
    ao_epsilon: float = 0.5

    @property
    def dim(self):
        return self.composed.dim

    def feedback_matrix(self):
        return feedback_as_matrix(self.feedback, self.green.input_dim, self.dim)

    def feedback_part(self):
        """The B-less part drift_A (I - G F), recomputed from the factors."""
        n = self.dim
        gf = self.green.entries @ self.feedback_matrix()
        return self.drift_A.entries @ (np.eye(n) - gf)


def feedback_as_matrix(feedback, input_dim, state_dim):
    """Realized feedback matrix of shape (input_dim, state_dim); None means 0."""
    if feedback is None:
        return np.zeros((input_dim, state_dim))
    mat = getattr(feedback, "as_matrix", feedback)
    mat = np.atleast_2d(np.asarray(mat))
    if mat.shape != (input_dim, state_dim):
        raise DimensionError(
            f"feedback matrix maps state ({state_dim}) to boundary inputs ({input_dim}); got {mat.shape}")
    return mat


def _as_entries(op):
    return op.entries if isinstance(op, Operator) else np.atleast_2d(np.asarray(op))


def spectral_norm(m, tol=1e-10, max_iter=5000):
    """Operator 2-norm by singular value (power) iteration.

    Deterministic start vector; the iteration must hit relative tolerance
    ``tol`` on two consecutive sweeps, otherwise a full SVD takes over.
    """
    m = np.atleast_2d(np.asarray(m))
    if m.size == 0:
        return 0.0
    v = np.ones(m.shape[1]) + 1e-3 * np.arange(m.shape[1])
    v = (v / np.linalg.norm(v)).astype(np.result_type(m.dtype, float))
    sigma = 0.0
    hits = 0
    for _ in range(max_iter):
        w = m.conj().T @ (m @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        sigma_new = float(np.sqrt(nw))
        v = w / nw
        if abs(sigma_new - sigma) <= tol * max(sigma_new, 1e-300):
            hits += 1
            if hits >= 2:
                return sigma_new
        else:
            hits = 0
        sigma = sigma_new
    return float(np.linalg.norm(m, 2))


def spectral_abscissa(op):
    """Largest real part over the spectrum."""
    return float(np.max(la.eigvals(_as_entries(op)).real))


def match_spectra(a, b):
    """Greatest matched distance between two equal-length eigenvalue sets.

    Uses optimal assignment; the standard oracle for "spectrum equals targets
    union untouched modes" claims.
    """
    a = np.asarray(a, dtype=complex).ravel()
    b = np.asarray(b, dtype=complex).ravel()
    if a.shape != b.shape:
        raise UsageError(f"spectra size mismatch: {a.shape} vs {b.shape}")
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max()) if a.size else 0.0


def spectrum(op, tol_unstable=1e-9):
    """Full eigendecomposition with a biorthogonal left basis.

    Eigenvalues are sorted by decreasing real part (imaginary part descending
    as tie-break).  Eigenvalues with ``Re >= -tol_unstable`` are counted
    unstable.  A warning-carrying flag is raised when the right-eigenvector
    basis conditioning exceeds 1e8; a defective (numerically non-diagonalizable)
    matrix is flagged and the left basis is least-squares biorthogonalized.
    """
    m = _as_entries(op)
    try:
        w, vl, vr = la.eig(m, left=True, right=True)
    except la.LinAlgError as exc:
        raise EigenDecompositionError(f"eigen iteration failed: {exc}") from exc
    if not np.all(np.isfinite(w)):
        raise EigenDecompositionError("eigen iteration returned non-finite eigenvalues")
    order = np.lexsort((-w.imag, -w.real))
    w, vl, vr = w[order], vl[:, order], vr[:, order]

    # deterministic phase: make the largest-magnitude component of each right
    # vector real positive (keeps conjugate pairs of real matrices conjugate)
    for j in range(vr.shape[1]):
        i = int(np.argmax(np.abs(vr[:, j])))
        piv = vr[i, j]
        if piv != 0:
            vr[:, j] = vr[:, j] * (abs(piv) / piv)
    cond_estimate = float(np.linalg.cond(vr))

    gram = vl.conj().T @ vr
    defective = False
    try:
        gram_cond = np.linalg.cond(gram)
        if not np.isfinite(gram_cond) or gram_cond > 1e12:
            raise la.LinAlgError("singular Gram matrix")
        with warnings.catch_warnings():
            warnings.simplefilter("error", la.LinAlgWarning)
            lu, piv = la.lu_factor(gram)
            corr = la.lu_solve((lu, piv), np.eye(gram.shape[0]))
        vl = vl @ corr.conj().T
        if gram_cond > _COND_FLAG:
            warnings.warn(
                f"biorthogonalization Gram condition {gram_cond:.3e} > 1e8; "
                "left basis may be inaccurate", stacklevel=2)
            defective = True
    except (la.LinAlgError, la.LinAlgWarning):
        defective = True
        warnings.warn(
            "matrix is numerically defective; left basis taken from the adjoint "
            "eigenproblem with least-squares biorthogonalization", stacklevel=2)
        wl_adj, vl_adj = la.eig(m.conj().T)
        # pair adjoint eigenvectors with conj eigenvalues by optimal matching
        cost = np.abs(np.conj(wl_adj)[:, None] - w[None, :])
        rows, cols = linear_sum_assignment(cost)
        vl_m = np.empty_like(vl_adj)
        vl_m[:, cols] = vl_adj[:, rows]
        gram = vl_m.conj().T @ vr
        vl = vl_m @ np.linalg.pinv(gram).conj().T

    biorth_err = np.abs(vl.conj().T @ vr - np.eye(m.shape[0])).max()
    if biorth_err > 1e-8 and not defective:
        defective = True
        warnings.warn(
            f"biorthogonality residual {biorth_err:.3e} > 1e-8 after Gram correction; "
            "matrix treated as defective", stacklevel=2)
    ill = cond_estimate > _COND_FLAG
    if ill and not defective:
        warnings.warn(f"eigenvector basis condition {cond_estimate:.3e} > 1e8", stacklevel=2)

    n_unstable = int(np.sum(w.real >= -tol_unstable))
    return SpectralData(
        eigenvalues=_frozen_array(w),
        right_vectors=_frozen_array(vr),
        left_vectors=_frozen_array(vl),
        unstable_count=n_unstable,
        cond_estimate=cond_estimate,
        ill_conditioned=bool(ill),
        defective=bool(defective),
    )


def resolvent(op, lam, eigenvalues=None, guard=1e-10, residual_tol=1e-8):
    """(lam I - op)^{-1} with a spectral-distance guard and residual check."""
    m = _as_entries(op)
    lam = complex(lam)
    evs = la.eigvals(m) if eigenvalues is None else np.asarray(eigenvalues)
    gap = np.abs(evs - lam)
    i = int(np.argmin(gap))
    if gap[i] <= guard:
        raise SingularityError(
            f"lambda = {lam} lies within {guard:g} of eigenvalue {evs[i]}")
    n = m.shape[0]
    shifted = lam * np.eye(n) - m
    try:
        r = la.solve(shifted, np.eye(n))
    except la.LinAlgError as exc:
        raise SingularityError(f"resolvent solve singular at lambda = {lam}") from exc
    resid = spectral_norm(shifted @ r - np.eye(n))
    if resid > residual_tol:
        raise NumericalError(
            f"resolvent residual {resid:.3e} exceeds {residual_tol:g} at lambda = {lam}")
    return Operator(r, label=f"resolvent({lam})")


def semigroup_apply(op, t):
    """Matrix exponential e^{op t} (scaling and squaring, Pade degree 13)."""
    if not np.isfinite(t):
        raise UsageError("time must be finite")
    if t < 0:
        raise UsageError(f"semigroup time must be nonnegative, got {t}")
    m = _as_entries(op)
    if t == 0:
        return Operator(np.eye(m.shape[0], dtype=m.dtype), label="identity")
    with np.errstate(over="ignore", invalid="ignore"):
        e = la.expm(m * t)
    if not np.all(np.isfinite(e.real)) or (np.iscomplexobj(e) and not np.all(np.isfinite(e.imag))):
        raise SaturationError(
            f"matrix exponential overflowed at t = {t} "
            f"(abscissa {spectral_abscissa(op):.3e}, ||op t|| ~ {np.abs(m).max() * t:.3e})")
    return Operator(e, label=f"exp(t={t})")


def _power_from_spectral(spectral, theta):
    """V diag(lambda^theta) V^{-1} using the biorthogonal left basis."""
    lam = spectral.eigenvalues
    powered = np.power(lam.astype(complex), theta)
    v = spectral.right_vectors
    w = spectral.left_vectors.conj().T
    return (v * powered) @ w


def fractional_power(op, theta, spectral=None, verify_tol=1e-6):
    """Principal-branch fractional power of an operator with right-half-plane spectrum.

    Computed by eigendecomposition: V diag(lambda^theta) V^{-1}.  The spectrum
    must lie strictly in the open right half-plane (translate first otherwise)
    and the eigenbasis must be acceptably conditioned.  The semigroup law
    ``A^theta A^{1-theta} = A`` is checked to relative tolerance
    ``verify_tol``.
    """
    if not (0.0 < theta < 1.0):
        raise UsageError(f"fractional exponent must lie in (0,1), got {theta}")
    m = _as_entries(op)
    sp = spectral if spectral is not None else spectrum(op)
    if np.min(sp.eigenvalues.real) <= 0.0:
        raise TranslationRequiredError(
            "spectrum touches the closed left half-plane "
            f"(min Re = {np.min(sp.eigenvalues.real):.3e}); translate the operator first")
    if sp.cond_estimate > _COND_FLAG:
        raise IllConditionedBasisError(
            f"eigenvector basis condition {sp.cond_estimate:.3e} > 1e8; refusing spectral calculus")
    frac = _power_from_spectral(sp, theta)
    comp = _power_from_spectral(sp, 1.0 - theta)
    resid = spectral_norm(frac @ comp - m) / max(spectral_norm(m), 1e-300)
    if resid > verify_tol:
        raise NumericalError(
            f"fractional power verification failed: ||A^t A^(1-t) - A||/||A|| = {resid:.3e}")
    out = frac
    if np.isrealobj(m) and np.abs(out.imag).max(initial=0.0) <= 1e-12 * max(np.abs(out.real).max(), 1.0):
        out = out.real
    return Operator(out, label=f"power({theta})")


def real_power(op, theta, spectral=None):
    """Arbitrary real power by the same spectral calculus (no (0,1) restriction)."""
    sp = spectral if spectral is not None else spectrum(op)
    if np.min(sp.eigenvalues.real) <= 0.0:
        raise TranslationRequiredError("real_power needs right-half-plane spectrum")
    if sp.cond_estimate > _COND_FLAG:
        raise IllConditionedBasisError(
            f"eigenvector basis condition {sp.cond_estimate:.3e} > 1e8")
    return Operator(_power_from_spectral(sp, theta), label=f"power({theta})")


def translate_to_positive(op, margin=1.0):
    """Translation k I - op with k = max(0, spectral abscissa) + margin.

    Returns (k, translated operator); the translated spectrum lies in the
    right half-plane with at least ``margin`` to spare.
    """
    m = _as_entries(op)
    k = max(0.0, spectral_abscissa(op)) + margin
    return k, Operator(k * np.eye(m.shape[0]) - m, label=f"translated(k={k:g})")


def compose_closed_loop(drift, green, feedback, interior_B=None, *,
                        generator_A=None, perturbation_Ao=None, ao_epsilon=0.5):
    """Assemble the closed loop  drift (I - G F) + B  keeping all factors.

    ``generator_A``/``perturbation_Ao`` optionally record the split
    ``drift = generator_A + perturbation_Ao`` used by the adjoint
    decomposition check; by default the whole of ``drift`` is treated as the
    generator part (no perturbation).
    """
    drift = drift if isinstance(drift, Operator) else Operator(drift)
    if not isinstance(green, GreenMap):
        raise UsageError("green must be a GreenMap (exponent gamma required)")
    n = drift.dim
    if green.state_dim != n:
        raise DimensionError(
            f"green map has state dimension {green.state_dim}, operator has {n}")
    fmat = feedback_as_matrix(feedback, green.input_dim, n)
    if interior_B is not None:
        interior_B = interior_B if isinstance(interior_B, Operator) else Operator(interior_B)
        if interior_B.dim != n:
            raise DimensionError(f"interior term is {interior_B.dim}x{interior_B.dim}, expected {n}x{n}")
    if generator_A is None:
        generator_A = drift
        if perturbation_Ao is not None:
            raise UsageError("perturbation_Ao given without generator_A")
    else:
        generator_A = generator_A if isinstance(generator_A, Operator) else Operator(generator_A)
        if perturbation_Ao is not None:
            perturbation_Ao = (perturbation_Ao if isinstance(perturbation_Ao, Operator)
                               else Operator(perturbation_Ao))
        split = generator_A.entries + (perturbation_Ao.entries if perturbation_Ao is not None else 0.0)
        err = np.abs(split - drift.entries).max()
        if err > 1e-10 * max(np.abs(drift.entries).max(), 1.0):
            raise IdentityViolationError(
                f"generator_A + perturbation_Ao differs from drift by {err:.3e}")

    composed = drift.entries @ (np.eye(n) - green.entries @ fmat)
    if interior_B is not None:
        composed = composed + interior_B.entries
    return ClosedLoop(
        generator_A=generator_A,
        perturbation_Ao=perturbation_Ao,
        drift_A=drift,
        green=green,
        feedback=feedback,
        interior_B=interior_B,
        composed=Operator(composed, label="closed loop"),
        ao_epsilon=ao_epsilon,
    )


def adjoint_decomposition_residual(cl):
    """Relative residual of the three-term adjoint decomposition.

    The B-less part satisfies (M(I-GF))^H = -A^H + [F^H G^H (A^H)^g](A^H)^(1-g)
    + (I-GF)^H (A^(-(1-e)) Ao)^H (A^H)^(1-e) with g the Green exponent and e
    the perturbation exponent.  Requires the positive part -generator_A to
    have right-half-plane spectrum.
    """
    n = cl.dim
    a_pos = -cl.generator_A.entries
    sp = spectrum(Operator(a_pos))
    if np.min(sp.eigenvalues.real) <= 0.0:
        raise TranslationRequiredError(
            "adjoint decomposition needs the generator split's positive part to "
            "have right-half-plane spectrum")
    gamma = cl.green.gamma
    eps = cl.ao_epsilon
    a_g = _power_from_spectral(sp, gamma)
    a_1mg = _power_from_spectral(sp, 1.0 - gamma)
    a_1me = _power_from_spectral(sp, 1.0 - eps)
    a_m1me = _power_from_spectral(sp, -(1.0 - eps))

    fmat = cl.feedback_matrix()
    g = cl.green.entries
    i_gf = np.eye(n) - g @ fmat
    ao = cl.perturbation_Ao.entries if cl.perturbation_Ao is not None else np.zeros((n, n))

    term1 = -a_pos.conj().T
    term2 = (fmat.conj().T @ g.conj().T @ a_g.conj().T) @ a_1mg.conj().T
    term3 = i_gf.conj().T @ (a_m1me @ ao).conj().T @ a_1me.conj().T
    three_term = term1 + term2 + term3

    bless_adj = (cl.drift_A.entries @ i_gf).conj().T
    denom = max(spectral_norm(bless_adj), 1e-300)
    return float(spectral_norm(three_term - bless_adj) / denom)


def adjoint_closed_loop(cl, tol=1e-8):
    """Conjugate transpose of the closed loop, verified against the three-term
    adjoint decomposition; a residual above ``tol`` signals a wiring bug and
    raises."""
    resid = adjoint_decomposition_residual(cl)
    if resid > tol:
        raise IdentityViolationError(
            f"adjoint three-term decomposition residual {resid:.3e} > {tol:g} "
            "(closed-loop wiring bug)")
    return Operator(cl.composed.entries.conj().T, label="adjoint closed loop")


def resolvent_perturbation_residual(cl, lam, guard=1e-6):
    """Relative residual of R(lam, A_F) = [I + R(lam,M) M G F]^{-1} R(lam,M).

    A_F here is the B-less part drift (I - GF); lam must lie in the resolvent
    set of both operators.
    """
    lam = complex(lam)
    n = cl.dim
    drift = cl.drift_A.entries
    a_f = cl.feedback_part()
    for name, mat in (("drift operator", drift), ("closed loop", a_f)):
        evs = la.eigvals(mat)
        gap = np.abs(evs - lam)
        i = int(np.argmin(gap))
        if gap[i] <= guard:
            raise SingularityError(
                f"lambda = {lam} within {guard:g} of {name} eigenvalue {evs[i]}")
    r_drift = resolvent(Operator(drift), lam).entries
    r_af = resolvent(Operator(a_f), lam).entries
    gf = cl.green.entries @ cl.feedback_matrix()
    lhs_factor = np.eye(n) + r_drift @ drift @ gf
    try:
        rhs = la.solve(lhs_factor, r_drift)
    except la.LinAlgError as exc:
        raise SingularityError(
            f"[I + R(lam,M) M G F] singular at lambda = {lam}") from exc
    return float(spectral_norm(rhs - r_af) / max(spectral_norm(r_af), 1e-300))


def ray_decay_check(drift_translated, gamma, lambda_grid):
    """||R(lam, M^) M^^(1-gamma)|| along a lambda ray.

    ``drift_translated`` must already have right-half-plane spectrum.  Returns
    a list of (|lam|, value) pairs; the caller asserts a log-log slope.
    """
    op = drift_translated if isinstance(drift_translated, Operator) else Operator(drift_translated)
    sp = spectrum(op)
    if np.min(sp.eigenvalues.real) <= 0.0:
        raise TranslationRequiredError("ray check expects a translated operator")
    power = real_power(op, 1.0 - gamma, spectral=sp).entries
    rows = []
    for lam in lambda_grid:
        r = resolvent(op, lam, eigenvalues=sp.eigenvalues).entries
        rows.append((abs(complex(lam)), float(spectral_norm(r @ power))))
    return rows


def fit_loglog_slope(pairs):
    """Least-squares slope of log(value) against log(|lam|)."""
    pairs = [(x, y) for x, y in pairs]
    if len(pairs) < 2:
        raise UsageError("need at least two points for a slope fit")
    x = np.log([p[0] for p in pairs])
    y = np.log([p[1] for p in pairs])
    return float(np.polyfit(x, y, 1)[0])


def decay_estimate(op, t_grid):
    """Fit ||e^{op t}|| <= M e^{-delta t} on the tail half of a time grid.

    Returns (M, delta) from a least-squares fit of log-norm against t over the
    second half of the grid (transients excluded).
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 4:
        raise UsageError("decay fit needs at least 4 time points")
    if np.any(t <= 0) or np.any(np.diff(t) <= 0):
        raise UsageError("time grid must be positive and strictly increasing")
    norms = np.array([spectral_norm(semigroup_apply(op, ti).entries) for ti in t])
    if np.any(norms <= 0):
        raise NumericalError("semigroup norm vanished; cannot fit decay")
    tail = t.size // 2
    slope, intercept = np.polyfit(t[tail:], np.log(norms[tail:]), 1)
    return float(np.exp(intercept)), float(-slope)
