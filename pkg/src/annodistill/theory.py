"""Noise-tolerance numerics for teacher/student distillation.

Linearized-softmax model: a classifier trained by L2-regularized cross-entropy
on targets Q over features with block-structured Gram matrix S (intra-class
similarity a, inter-class b, unit diagonal) has the closed-form prediction

    P - U = (Q - U) @ (I - (I + S / (C m lam))^{-1}),   U = uniform,

and on balanced data the multiplier collapses to three shrinkage coefficients
theta < phi < psi attached to the three eigenvalue families of S. From these,
executable noise-tolerance conditions for a teacher trained on noisy labels,
a student distilled from the teacher's top-1 prediction, and a student
distilled from its top-2 prediction, plus phase sweeps and a brute-force
gradient-descent oracle for the closed forms.

Comparisons use a 1e-9 tolerance; exact ties at a condition boundary count as
failures for strict (top-1) correctness, while top-2 correctness only requires
the true label to attain the maximum. For C=2 the top-2 target of every sample
is uniform over both labels, so the top-2 student is informative only through
that tie convention; its accuracy column cannot drop past the C=2 boundary.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

logger = logging.getLogger(__name__)

TIE_TOL = 1e-9
MAX_DENSE_M = 2000


@dataclass(frozen=True)
class TheoryParams:
    """(C, m, a, b, lam) with 1 > a > b > 0 and lam > 0."""

    C: int
    m: int
    a: float
    b: float
    lam: float

    def __post_init__(self):
        if self.C < 2:
            raise ValueError("C must be >= 2")
        if self.m < self.C:
            raise ValueError("m must be >= C")
        if not (1.0 > self.a > self.b > 0.0):
            raise ValueError(f"need 1 > a > b > 0, got a={self.a}, b={self.b}")
        if self.lam <= 0.0:
            raise ValueError("lam must be > 0")

    @property
    def theta(self) -> float:
        cm = self.C * self.m * self.lam
        return 1.0 - cm / (cm + 1.0 - self.a)

    @property
    def phi(self) -> float:
        cm = self.C * self.m * self.lam
        return 1.0 - cm / (cm + (self.m / self.C) * (self.a - self.b) + 1.0 - self.a)

    @property
    def psi(self) -> float:
        cm = self.C * self.m * self.lam
        return 1.0 - cm / (cm + self.m * self.b + (self.m / self.C) * (self.a - self.b) + 1.0 - self.a)

    def similarity_eigenvalues(self) -> tuple[float, float, float]:
        """The three analytic eigenvalue families of S with multiplicities
        (1, C-1, m-C): class-mean, between-class, and identity directions."""
        lam1 = self.m * self.b + (self.m / self.C) * (self.a - self.b) + (1.0 - self.a)
        lam2 = (self.m / self.C) * (self.a - self.b) + (1.0 - self.a)
        lam3 = 1.0 - self.a
        return lam1, lam2, lam3


def theta_phi_psi(params: TheoryParams) -> tuple[float, float, float]:
    """Shrinkage coefficients, strictly increasing in (0, 1).

    Each equals 1 - Cm*lam / (Cm*lam + lam_i) for the matching eigenvalue
    family of the similarity matrix.
    """
    return params.theta, params.phi, params.psi


def top1_threshold(params: TheoryParams) -> float:
    """Noise bound 1 - theta/(phi - theta) for teacher / top-1 student."""
    th, ph, _ = theta_phi_psi(params)
    if ph <= th:
        raise ValueError("top-1 condition requires phi > theta")
    return 1.0 - th / (ph - th)


def balanced_labels(m: int, C: int) -> np.ndarray:
    if m % C != 0:
        raise ValueError(f"balanced assignment needs C | m (got m={m}, C={C})")
    return np.repeat(np.arange(C), m // C)


def build_similarity(m: int, C: int, a: float, b: float, labels: np.ndarray | None = None) -> np.ndarray:
    """Symmetric unit-diagonal Gram matrix: a within a class, b across classes."""
    y = balanced_labels(m, C) if labels is None else np.asarray(labels)
    if len(y) != m:
        raise ValueError("labels length must equal m")
    S = np.where(y[:, None] == y[None, :], a, b)
    np.fill_diagonal(S, 1.0)
    return S


def closed_form_predictions(Q: np.ndarray, S: np.ndarray, lam: float, C: int) -> np.ndarray:
    """Prediction matrix of the linearized model; columns sum to 1 whenever the
    target columns do. Dense solve, so m is capped at 2000."""
    Q = np.asarray(Q, dtype=float)
    m = S.shape[0]
    if S.shape != (m, m) or Q.shape != (C, m):
        raise ValueError(f"dimension mismatch: Q {Q.shape} vs S {S.shape} with C={C}")
    if m > MAX_DENSE_M:
        raise ValueError(f"m={m} exceeds dense-path cap {MAX_DENSE_M}")
    U = np.full((C, m), 1.0 / C)
    A = Q - U
    # (Q - U) @ (I - (I + S/(Cm lam))^{-1}) without forming the inverse
    K = np.eye(m) + S / (C * m * lam)
    return U + A - np.linalg.solve(K, A.T).T


def analytic_multiplier(params: TheoryParams) -> np.ndarray:
    """Closed-form I - (I + S/(Cm lam))^{-1} on balanced data:
    ((psi-phi)/m) * ones + ((phi-theta) C/m) * Y^T Y + theta * I."""
    th, ph, ps = theta_phi_psi(params)
    y = balanced_labels(params.m, params.C)
    same = (y[:, None] == y[None, :]).astype(float)
    return (ps - ph) / params.m * np.ones((params.m, params.m)) + (ph - th) * params.C / params.m * same + th * np.eye(params.m)


def quantified_prediction(
    q_i: np.ndarray,
    class_mean_q: np.ndarray,
    theta: float,
    phi: float,
    C: int,
) -> np.ndarray:
    """Per-sample prediction under the balanced-target assumption:
    theta * q_i + (phi - theta) * class_mean + (1 - phi)/C. The coefficients
    sum to 1, so the output is a valid distribution whenever the inputs are."""
    q_i = np.asarray(q_i, dtype=float)
    return theta * q_i + (phi - theta) * np.asarray(class_mean_q, dtype=float) + (1.0 - phi) / C


# ---------------------------------------------------------------------------
# noise matrices and tolerance conditions


@dataclass(frozen=True)
class NoiseMatrix:
    """Row-stochastic matrix of flip probabilities; R[c, c'] is the probability
    of true class c being observed as c'."""

    R: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        object.__setattr__(self, "R", R)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ValueError("noise matrix must be square")
        if np.any(R < 0):
            raise ValueError("noise matrix entries must be >= 0")
        if np.any(np.abs(R.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("noise matrix rows must sum to 1")
        R.setflags(write=False)

    @property
    def C(self) -> int:
        return self.R.shape[0]

    @classmethod
    def symmetric(cls, C: int, rho: float) -> "NoiseMatrix":
        """Uniform flips: diagonal 1 - rho, off-diagonal rho / (C - 1)."""
        if not 0.0 <= rho <= 1.0:
            raise ValueError("rho must be in [0, 1]")
        R = np.full((C, C), rho / (C - 1))
        np.fill_diagonal(R, 1.0 - rho)
        return cls(R)


@dataclass(frozen=True)
class ConditionReport:
    """Pass/fail per ordered class pair (c, c') with margins; margin > 0 means
    the strict inequality holds with that slack."""

    kind: str
    threshold: float
    margins: np.ndarray  # (C, C), diagonal NaN
    passed: bool
    violations: tuple[tuple[int, int], ...]

    def render(self) -> str:
        out = io.StringIO()
        out.write(f"{self.kind} condition: threshold {self.threshold:.6f} -> {'PASS' if self.passed else 'FAIL'}\n")
        if self.violations:
            for c, cp in self.violations:
                out.write(f"  violated at (c={c}, c'={cp}): margin {self.margins[c, cp]:.6f}\n")
        return out.getvalue()


def _pair_condition(R: np.ndarray, threshold: float, kind: str) -> ConditionReport:
    C = R.shape[0]
    off_sum = R.sum(axis=1) - np.diag(R)  # total flip mass per row
    margins = np.full((C, C), np.nan)
    violations: list[tuple[int, int]] = []
    for c in range(C):
        for cp in range(C):
            if cp == c:
                continue
            margins[c, cp] = threshold - (R[c, cp] + off_sum[c])
            if margins[c, cp] <= TIE_TOL:
                violations.append((c, cp))
    return ConditionReport(
        kind=kind,
        threshold=threshold,
        margins=margins,
        passed=not violations,
        violations=tuple(violations),
    )


def condition_top1(noise: NoiseMatrix, theta: float, phi: float) -> ConditionReport:
    """Strict bound R[c,c'] + sum_{i != c} R[c,i] < 1 - theta/(phi-theta) for
    every ordered pair; governs the teacher and the top-1 student."""
    if phi <= theta:
        raise ValueError("top-1 condition requires phi > theta")
    return _pair_condition(noise.R, 1.0 - theta / (phi - theta), "top-1")


def condition_top2(noise: NoiseMatrix) -> ConditionReport:
    """Strict bound R[c,c'] + sum_{i != c} R[c,i] < 1, i.e. the diagonal
    dominates every off-diagonal entry of its row."""
    return _pair_condition(noise.R, 1.0, "top-2")


# ---------------------------------------------------------------------------
# distillation simulation


Mode = Literal["teacher", "top1", "top2"]


def _teacher_cell_predictions(R: np.ndarray, theta: float, phi: float) -> np.ndarray:
    """Infinite-m prediction for each (true class y, observed class yt) cell:
    theta * e(yt) + (phi - theta) * R[y, :] + (1 - phi)/C."""
    C = R.shape[0]
    base = (phi - theta) * R[:, None, :] + (1.0 - phi) / C  # (y, 1, C)
    cells = np.broadcast_to(base, (C, C, C)).copy()
    cells[:, np.arange(C), np.arange(C)] += theta
    return cells


def _strict_correct(cell: np.ndarray, y: int) -> bool:
    others = np.delete(cell, y)
    return bool(cell[y] - others.max() > TIE_TOL)


def _weak_correct(cell: np.ndarray, y: int) -> bool:
    return bool(cell[y] >= cell.max() - TIE_TOL)


def _cell_weighted_accuracy(R: np.ndarray, cells: np.ndarray, *, weak: bool) -> float:
    # normalizing by the summed weights (not C) makes all-correct exactly 1.0
    C = R.shape[0]
    correct = _weak_correct if weak else _strict_correct
    acc = total = 0.0
    for y in range(C):
        for yt in range(C):
            if R[y, yt] == 0.0:
                continue
            total += R[y, yt]
            acc += R[y, yt] * correct(cells[y, yt], y)
    return acc / total


def _top2_target(cell: np.ndarray, y: int) -> tuple[np.ndarray, bool]:
    """Half/half target on the teacher's two largest entries.

    The true label joins only when at most one other label weakly beats it
    (ties against the true label count as beating it, so the strict condition
    is what admits it); remaining slots break ties by lowest index. Returns
    (target, true_label_included).
    """
    C = len(cell)
    beats_y = [c for c in range(C) if c != y and cell[c] >= cell[y] - TIE_TOL]
    q = np.zeros(C)
    if len(beats_y) <= 1:
        if beats_y:
            partner = beats_y[0]
        else:
            rest = np.where(np.arange(C) == y, -np.inf, cell)
            partner = int(rest.argmax())
        q[y] += 0.5
        q[partner] += 0.5
        return q, True
    order = np.argsort(-cell, kind="stable")
    q[int(order[0])] += 0.5
    q[int(order[1])] += 0.5
    return q, bool(y in order[:2])


def _teacher_accuracy_infinite(R: np.ndarray, theta: float, phi: float) -> float:
    cells = _teacher_cell_predictions(R, theta, phi)
    return _cell_weighted_accuracy(R, cells, weak=False)


def _top1_accuracy_infinite(R: np.ndarray, theta: float, phi: float) -> float:
    """Student trained on the teacher's hard labels: build the effective noise
    matrix of those labels, then score the student like a fresh teacher."""
    C = R.shape[0]
    cells = _teacher_cell_predictions(R, theta, phi)
    Rq = np.zeros_like(R)
    for y in range(C):
        for yt in range(C):
            if R[y, yt] == 0.0:
                continue
            Rq[y, int(cells[y, yt].argmax())] += R[y, yt]
    student_cells = _teacher_cell_predictions(Rq, theta, phi)
    return _cell_weighted_accuracy(Rq, student_cells, weak=False)


def teacher_top2_targets(R: np.ndarray, theta: float, phi: float) -> tuple[np.ndarray, bool]:
    """Per-cell half/half targets from the teacher's top-2 predictions; also
    reports whether every cell's target contains the true label."""
    C = R.shape[0]
    cells = _teacher_cell_predictions(R, theta, phi)
    targets = np.zeros((C, C, C))
    all_include = True
    for y in range(C):
        for yt in range(C):
            q, includes = _top2_target(cells[y, yt], y)
            targets[y, yt] = q
            if R[y, yt] > 0.0:
                all_include &= includes
    return targets, all_include


def _top2_accuracy_infinite(R: np.ndarray, theta: float, phi: float, C_classes: int) -> float:
    """Student trained on half/half top-2 targets, evaluated per cell with the
    quantified prediction; correctness = the true label attains the maximum."""
    targets, _ = teacher_top2_targets(R, theta, phi)
    class_mean = np.einsum("yt,ytc->yc", R, targets)
    acc = total = 0.0
    C = R.shape[0]
    for y in range(C):
        for yt in range(C):
            if R[y, yt] == 0.0:
                continue
            p = quantified_prediction(targets[y, yt], class_mean[y], theta, phi, C_classes)
            total += R[y, yt]
            acc += R[y, yt] * _weak_correct(p, y)
    return acc / total


@dataclass(frozen=True)
class FiniteSimResult:
    accuracy: float
    tie_tolerant_accuracy: float


def _finite_accuracy(P: np.ndarray, y: np.ndarray) -> FiniteSimResult:
    strict = float((P.argmax(axis=0) == y).mean())
    weak = float((P[y, np.arange(len(y))] >= P.max(axis=0) - TIE_TOL).mean())
    return FiniteSimResult(accuracy=strict, tie_tolerant_accuracy=weak)


def simulate_distillation(
    params: TheoryParams,
    noise: NoiseMatrix,
    mode: Mode,
    *,
    path: Literal["infinite", "finite"] = "infinite",
    seed: int = 0,
) -> float:
    """Training accuracy of the teacher or a distilled student.

    infinite path: evaluates the quantified per-(true, observed)-cell formulas
    with class means replaced by their expectation (the matching noise row) and
    returns the probability mass on correctly-argmaxed cells.

    finite path: samples noisy labels for params.m balanced samples, runs the
    teacher closed form, converts its top-1 / top-2 columns into student
    targets, re-runs the closed form, and scores argmax against true labels
    (ties to the lowest index).
    """
    if mode not in ("teacher", "top1", "top2"):
        raise ValueError(f"unknown mode {mode!r}")
    if noise.C != params.C:
        raise ValueError(f"noise matrix is {noise.C}x{noise.C} but params.C={params.C}")
    if mode == "top2" and params.C < 2:
        raise ValueError("top-2 mode needs C >= 2")
    th, ph, _ = theta_phi_psi(params)
    if path == "infinite":
        if mode == "teacher":
            return _teacher_accuracy_infinite(noise.R, th, ph)
        if mode == "top1":
            return _top1_accuracy_infinite(noise.R, th, ph)
        return _top2_accuracy_infinite(noise.R, th, ph, params.C)
    return simulate_distillation_finite(params, noise, mode, seed=seed).accuracy


def simulate_distillation_finite(
    params: TheoryParams,
    noise: NoiseMatrix,
    mode: Mode,
    *,
    seed: int = 0,
) -> FiniteSimResult:
    """Sampled finite-m path; also reports a tie-tolerant accuracy since the
    top-2 student's optimum frequently puts exactly equal mass on the true
    label and its candidate partner."""
    C, m = params.C, params.m
    y = balanced_labels(m, C)
    rng = np.random.default_rng(seed)
    cum = noise.R.cumsum(axis=1)
    yt = (rng.random(m)[:, None] < cum[y]).argmax(axis=1)
    S = build_similarity(m, C, params.a, params.b, labels=y)
    Q = np.zeros((C, m))
    Q[yt, np.arange(m)] = 1.0
    P_teacher = closed_form_predictions(Q, S, params.lam, C)
    if mode == "teacher":
        return _finite_accuracy(P_teacher, y)
    if mode == "top1":
        Qs = np.zeros((C, m))
        Qs[P_teacher.argmax(axis=0), np.arange(m)] = 1.0
    else:
        order = np.argsort(-P_teacher, axis=0, kind="stable")
        Qs = np.zeros((C, m))
        cols = np.arange(m)
        Qs[order[0], cols] += 0.5
        Qs[order[1], cols] += 0.5
    P_student = closed_form_predictions(Qs, S, params.lam, C)
    return _finite_accuracy(P_student, y)


# ---------------------------------------------------------------------------
# phase sweeps


@dataclass(frozen=True)
class SweepRow:
    rho: float
    teacher_acc: float
    top1_acc: float
    top2_acc: float
    cond_top1: bool
    cond_top2: bool


SWEEP_HEADER = "rho,teacher_acc,top1_acc,top2_acc,cond_top1,cond_top2"


def phase_sweep(
    params: TheoryParams,
    noise_grid: Sequence[float] | Sequence[NoiseMatrix],
) -> list[SweepRow]:
    """Infinite-m accuracies and tolerance conditions across a noise grid.

    Grid entries are either symmetric flip rates rho or explicit NoiseMatrix
    objects (the rho column then records the grid index).
    """
    if len(noise_grid) == 0:
        raise ValueError("noise grid must be nonempty")
    th, ph, _ = theta_phi_psi(params)
    rows: list[SweepRow] = []
    for i, g in enumerate(noise_grid):
        if isinstance(g, NoiseMatrix):
            noise, rho = g, float(i)
        else:
            noise, rho = NoiseMatrix.symmetric(params.C, float(g)), float(g)
        rows.append(
            SweepRow(
                rho=rho,
                teacher_acc=simulate_distillation(params, noise, "teacher"),
                top1_acc=simulate_distillation(params, noise, "top1"),
                top2_acc=simulate_distillation(params, noise, "top2"),
                cond_top1=condition_top1(noise, th, ph).passed,
                cond_top2=condition_top2(noise).passed,
            )
        )
    return rows


def sweep_to_csv(rows: Sequence[SweepRow]) -> str:
    lines = [SWEEP_HEADER]
    for r in rows:
        lines.append(
            f"{r.rho:.6g},{r.teacher_acc:.6f},{r.top1_acc:.6f},{r.top2_acc:.6f},"
            f"{int(r.cond_top1)},{int(r.cond_top2)}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# gradient-descent oracle


@dataclass
class OracleResult:
    P: np.ndarray
    grad_norm: float
    steps: int
    converged: bool
    mode: str


def _features_from_similarity(S: np.ndarray) -> np.ndarray:
    """Symmetric matrix square root, so G[:, i] dot G[:, j] == S[i, j]."""
    w, V = np.linalg.eigh(S)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def gd_oracle(
    S_or_features: np.ndarray,
    Q: np.ndarray,
    lam: float,
    *,
    mode: Literal["linear", "softmax"] = "linear",
    steps: int = 100_000,
    lr: float | None = None,
    tol: float = 1e-11,
) -> OracleResult:
    """Brute-force check of the closed forms by first-order iteration on the
    classifier weights (never forming a matrix inverse).

    linear mode iterates the affine stationarity map of the linearized model
    and must agree with closed_form_predictions to high precision. softmax
    mode runs gradient descent on the true L2-regularized cross-entropy; its
    gap to the linear closed form is reported, not asserted (the linearization
    assumes logits of small magnitude).
    """
    arr = np.asarray(S_or_features, dtype=float)
    C, m = Q.shape
    if arr.shape == (m, m) and np.allclose(arr, arr.T):
        G = _features_from_similarity(arr)  # columns are samples, d = m
    else:
        # raw features, rows are samples (m, d)
        if arr.ndim != 2 or arr.shape[0] != m:
            raise ValueError("features must have one row per Q column")
        G = arr.T
    d = G.shape[0]
    GG = G @ G.T
    spectral = float(np.linalg.eigvalsh(GG).max())
    if lr is None:
        curv = spectral / (m * C) if mode == "linear" else spectral / (2 * m)
        lr = 2.0 / (2.0 * lam + curv) if mode == "linear" else 1.0 / (lam + curv)
    W = np.zeros((d, C))
    Qt = Q.T  # (m, C)
    grad_norm = np.inf
    step = 0
    for step in range(1, steps + 1):
        Z = G.T @ W  # (m, C)
        if mode == "linear":
            P = (1.0 + Z) / C
        else:
            Zs = Z - Z.max(axis=1, keepdims=True)
            E = np.exp(Zs)
            P = E / E.sum(axis=1, keepdims=True)
        grad = G @ (P - Qt) / m + lam * W
        grad_norm = float(np.abs(grad).max())
        if grad_norm < tol:
            break
        W -= lr * grad
    converged = grad_norm < tol
    if not converged:
        logger.warning("gd_oracle (%s) did not converge: grad norm %.3e after %d steps", mode, grad_norm, step)
    Z = G.T @ W
    if mode == "linear":
        P = ((1.0 + Z) / C).T
    else:
        Zs = Z - Z.max(axis=1, keepdims=True)
        E = np.exp(Zs)
        P = (E / E.sum(axis=1, keepdims=True)).T
    return OracleResult(P=P, grad_norm=grad_norm, steps=step, converged=converged, mode=mode)
