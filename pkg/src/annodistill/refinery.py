"""Distill a single-label classifier from candidate annotations.

The training target for each sample is iteratively refined: it starts uniform
over the sample's candidate labels and is re-normalized each epoch from the
model's previous-epoch predictions, restricted to the candidate set. Samples
whose argmax escapes their candidate set are filtered out; per-class low-loss
samples get sharpened targets; confidently-escaping samples are pseudo-labeled
at their argmax. Consistency regularization over augmented views and mixup
round out the total objective.

Epoch granularity: refinement advances once per epoch, from a frozen
full-dataset prediction snapshot taken at the end of the previous epoch, so
selection and per-batch target assembly are deterministic.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from annodistill.classifiers import Classifier, classifier_from_spec, softmax
from annodistill.core import CandidateSet, Dataset, LabelSpace, atomic_write_text

logger = logging.getLogger(__name__)

_LOG_EPS = 1e-12


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the offending epoch index."""

    def __init__(self, epoch: int):
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}")
        self.epoch = epoch


# ---------------------------------------------------------------------------
# target machinery


def candidate_mask(candidate_sets: Sequence[CandidateSet], C: int) -> np.ndarray:
    """Boolean (n, C) membership mask for a list of candidate sets."""
    mask = np.zeros((len(candidate_sets), C), dtype=bool)
    for i, s in enumerate(candidate_sets):
        mask[i, list(s.labels)] = True
    return mask


def renormalize_target(
    prev_pred: np.ndarray | None,
    candidates: CandidateSet,
    t: int,
    C: int,
) -> np.ndarray:
    """Refined target for one sample: uniform over candidates at t=0, otherwise
    the previous prediction restricted to the candidate set and re-normalized."""
    if t == 0:
        if prev_pred is not None:
            raise ValueError("previous prediction must be absent at t=0")
        q = np.zeros(C)
        q[list(candidates.labels)] = 1.0 / len(candidates)
        return q
    if prev_pred is None:
        raise ValueError("previous prediction required for t > 0")
    mask = np.zeros(C, dtype=bool)
    mask[list(candidates.labels)] = True
    Q, _ = renormalize_target_rows(np.atleast_2d(prev_pred), np.atleast_2d(mask), t)
    return Q[0]


def renormalize_target_rows(
    prev_preds: np.ndarray | None,
    cand_mask: np.ndarray,
    t: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized refinement; returns (targets, underflow_mask).

    Rows whose restricted mass underflows fall back to uniform over the
    candidate set and are flagged.
    """
    n, C = cand_mask.shape
    sizes = cand_mask.sum(axis=1)
    if np.any(sizes == 0):
        raise ValueError("every sample needs a nonempty candidate set")
    uniform = cand_mask / sizes[:, None]
    if t == 0:
        return uniform, np.zeros(n, dtype=bool)
    if prev_preds is None:
        raise ValueError("previous predictions required for t > 0")
    restricted = np.where(cand_mask, prev_preds, 0.0)
    mass = restricted.sum(axis=1)
    underflow = mass <= 0.0
    safe = np.where(underflow, 1.0, mass)
    Q = restricted / safe[:, None]
    if np.any(underflow):
        Q[underflow] = uniform[underflow]
    return Q, underflow


def partition_out_of_candidate(
    preds: np.ndarray,
    cand_mask: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Split sample indices into (inside, outside) by whether the argmax
    prediction lies in the candidate set. Argmax ties go to the lowest index."""
    if preds.shape != cand_mask.shape:
        raise ValueError("predictions and candidate mask must align")
    top = preds.argmax(axis=1)
    inside = cand_mask[np.arange(len(top)), top]
    return np.flatnonzero(inside), np.flatnonzero(~inside)


def cross_entropy_rows(preds: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-row cross-entropy of predictions against (soft) targets."""
    return -(targets * np.log(np.clip(preds, _LOG_EPS, None))).sum(axis=1)


def kl_divergence_rows(p_first: np.ndarray, p_second: np.ndarray) -> np.ndarray:
    """Per-row KL(first || second)."""
    ratio = np.log(np.clip(p_first, _LOG_EPS, None)) - np.log(np.clip(p_second, _LOG_EPS, None))
    return (p_first * ratio).sum(axis=1)


def select_small_loss(preds: np.ndarray, targets: np.ndarray, delta: float) -> np.ndarray:
    """Class-wise low-loss selection over samples already restricted to the
    in-candidate partition.

    For each predicted class c, keeps the floor(delta * n_c) samples with the
    smallest cross-entropy against their refined targets (at least 1 whenever
    the class bucket is nonempty). Ties break by position. Returns positions
    into `preds`.
    """
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must be in (0, 1]")
    losses = cross_entropy_rows(preds, targets)
    top = preds.argmax(axis=1)
    selected: list[np.ndarray] = []
    for c in np.unique(top):
        bucket = np.flatnonzero(top == c)
        k = max(1, int(np.floor(delta * len(bucket))))
        order = bucket[np.argsort(losses[bucket], kind="stable")]
        selected.append(order[:k])
    if not selected:
        return np.array([], dtype=int)
    return np.sort(np.concatenate(selected))


def select_high_confidence(preds: np.ndarray, tau: float) -> np.ndarray:
    """Positions whose max prediction strictly exceeds tau; tau=1 selects nothing."""
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must be in (0, 1]")
    return np.flatnonzero(preds.max(axis=1) > tau)


def sharpen(q: np.ndarray, gamma: float) -> np.ndarray:
    """Power transform q^(1/gamma), re-normalized; identity at gamma=1.

    Support is unchanged and the argmax is preserved; for gamma < 1 the
    maximum entry never decreases.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must be in (0, 1]")
    q = np.asarray(q, dtype=float)
    if gamma == 1.0:
        return q.copy()
    powered = np.where(q > 0.0, np.power(np.clip(q, _LOG_EPS, None), 1.0 / gamma), 0.0)
    return powered / powered.sum(axis=-1, keepdims=True)


@dataclass
class RefineryState:
    """Per-epoch selection state derived from the frozen prediction snapshot."""

    epoch: int
    prev_preds: np.ndarray
    targets_renorm: np.ndarray
    underflow: np.ndarray
    in_idx: np.ndarray
    out_idx: np.ndarray
    sl_idx: np.ndarray
    hc_idx: np.ndarray
    losses: np.ndarray


def compute_refinery_state(
    prev_preds: np.ndarray,
    cand_mask: np.ndarray,
    epoch: int,
    *,
    delta: float,
    tau: float,
) -> RefineryState:
    """Run one epoch's selection pipeline on the snapshot predictions."""
    targets, underflow = renormalize_target_rows(prev_preds, cand_mask, epoch)
    in_idx, out_idx = partition_out_of_candidate(prev_preds, cand_mask)
    sl_local = select_small_loss(prev_preds[in_idx], targets[in_idx], delta) if len(in_idx) else np.array([], dtype=int)
    hc_local = select_high_confidence(prev_preds[out_idx], tau) if len(out_idx) else np.array([], dtype=int)
    return RefineryState(
        epoch=epoch,
        prev_preds=prev_preds,
        targets_renorm=targets,
        underflow=underflow,
        in_idx=in_idx,
        out_idx=out_idx,
        sl_idx=in_idx[sl_local],
        hc_idx=out_idx[hc_local],
        losses=cross_entropy_rows(prev_preds, targets),
    )


def assemble_targets(state: RefineryState, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Final per-sample training targets.

    Low-loss in-candidate samples get the sharpened refined target, the rest
    of the in-candidate partition the refined target as-is, and confident
    out-of-candidate samples a one-hot at their argmax. Remaining
    out-of-candidate samples receive no target (excluded mask entry False).
    """
    n, C = state.targets_renorm.shape
    q_hat = np.zeros((n, C))
    targeted = np.zeros(n, dtype=bool)
    if len(state.in_idx):
        q_hat[state.in_idx] = state.targets_renorm[state.in_idx]
        targeted[state.in_idx] = True
    if len(state.sl_idx):
        q_hat[state.sl_idx] = sharpen(state.targets_renorm[state.sl_idx], gamma)
    if len(state.hc_idx):
        top = state.prev_preds[state.hc_idx].argmax(axis=1)
        one_hot = np.zeros((len(state.hc_idx), C))
        one_hot[np.arange(len(top)), top] = 1.0
        q_hat[state.hc_idx] = one_hot
        targeted[state.hc_idx] = True
    return q_hat, targeted


def assemble_target_map(
    state: RefineryState,
    sample_ids: Sequence[str],
    gamma: float,
) -> dict[str, np.ndarray]:
    """assemble_targets keyed by sample id; untargeted samples are absent."""
    q_hat, targeted = assemble_targets(state, gamma)
    return {sample_ids[i]: q_hat[i] for i in np.flatnonzero(targeted)}


# ---------------------------------------------------------------------------
# losses


def dr_loss(preds: np.ndarray, targets: np.ndarray, targeted: np.ndarray | None = None) -> float:
    """Mean cross-entropy between predictions and assembled targets over the
    samples that have one; 0 with a warning when nothing is included."""
    if targeted is not None:
        preds = preds[targeted]
        targets = targets[targeted]
    if len(preds) == 0:
        logger.warning("refinement loss over empty inclusion set; returning 0")
        return 0.0
    return float(cross_entropy_rows(preds, targets).mean())


def consistency_losses(
    preds_aug: np.ndarray,
    preds: np.ndarray,
    targets: np.ndarray,
    in_mask: np.ndarray,
    out_mask: np.ndarray,
) -> tuple[float, float]:
    """(in-partition CE on the augmented view, out-partition KL to the clean view)."""
    l_in = float(cross_entropy_rows(preds_aug[in_mask], targets[in_mask]).mean()) if in_mask.any() else 0.0
    l_out = float(kl_divergence_rows(preds_aug[out_mask], preds[out_mask]).mean()) if out_mask.any() else 0.0
    return l_in, l_out


def mixup_batch(
    features: np.ndarray,
    targets: np.ndarray,
    varsigma: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Interpolated virtual samples; the same Beta(varsigma, varsigma) draw
    mixes a pair's features and targets. Returns (X_mix, Q_mix, perm, omega)."""
    n = len(features)
    if n < 2:
        raise ValueError("mixup needs a batch of at least 2")
    perm = rng.permutation(n)
    omega = rng.beta(varsigma, varsigma, size=n)
    w = omega[:, None]
    x_mix = w * features + (1.0 - w) * features[perm]
    q_mix = w * targets + (1.0 - w) * targets[perm]
    return x_mix, q_mix, perm, omega


# ---------------------------------------------------------------------------
# total objective on one batch


@dataclass
class BatchPlan:
    """Everything needed to evaluate the total loss on one batch, frozen so the
    loss is a pure deterministic function of the classifier parameters."""

    X: np.ndarray
    q_hat: np.ndarray
    targeted: np.ndarray  # bool per row
    in_mask: np.ndarray  # bool per row
    out_mask: np.ndarray  # bool per row
    eta: float
    X_aug: np.ndarray | None = None
    X_mix: np.ndarray | None = None
    q_mix: np.ndarray | None = None


@dataclass
class LossParts:
    dr: float
    cr_in: float
    cr_out: float
    mix: float

    @property
    def total_weighted(self) -> float:
        # caller applies eta; kept for logging symmetry
        return self.dr + self.cr_in + self.cr_out + self.mix


def make_batch_plan(
    X: np.ndarray,
    q_hat: np.ndarray,
    targeted: np.ndarray,
    in_mask: np.ndarray,
    out_mask: np.ndarray,
    eta: float,
    *,
    X_aug: np.ndarray | None = None,
    varsigma: float = 4.0,
    mix_rng: np.random.Generator | None = None,
) -> BatchPlan:
    """Freeze the stochastic pieces (mixup pairing and weights) for one batch."""
    plan = BatchPlan(X=X, q_hat=q_hat, targeted=targeted, in_mask=in_mask, out_mask=out_mask, eta=eta, X_aug=X_aug)
    if eta > 0.0 and mix_rng is not None and targeted.sum() >= 2:
        t_idx = np.flatnonzero(targeted)
        x_mix, q_mix, _, _ = mixup_batch(X[t_idx], q_hat[t_idx], varsigma, mix_rng)
        plan.X_mix = x_mix
        plan.q_mix = q_mix
    return plan


def total_loss_and_grad(clf: Classifier, plan: BatchPlan) -> tuple[LossParts, float, np.ndarray]:
    """Loss parts, total = L_dr + eta * (L_cr_in + L_cr_out + L_mix), and the
    analytic gradient of the total with respect to the flat parameter vector."""
    n = len(plan.X)
    P = softmax(clf.logits(plan.X))
    dZ = np.zeros_like(P)

    n_t = int(plan.targeted.sum())
    if n_t:
        l_dr = float(cross_entropy_rows(P[plan.targeted], plan.q_hat[plan.targeted]).mean())
        dZ[plan.targeted] += (P[plan.targeted] - plan.q_hat[plan.targeted]) / n_t
    else:
        l_dr = 0.0

    l_in = l_out = l_mix = 0.0
    batches: list[tuple[np.ndarray, np.ndarray]] = []
    if plan.eta > 0.0 and plan.X_aug is not None:
        Pa = softmax(clf.logits(plan.X_aug))
        dZa = np.zeros_like(Pa)
        n_in = int(plan.in_mask.sum())
        if n_in:
            l_in = float(cross_entropy_rows(Pa[plan.in_mask], plan.q_hat[plan.in_mask]).mean())
            dZa[plan.in_mask] += plan.eta * (Pa[plan.in_mask] - plan.q_hat[plan.in_mask]) / n_in
        n_out = int(plan.out_mask.sum())
        if n_out:
            pa = Pa[plan.out_mask]
            p = P[plan.out_mask]
            kl = kl_divergence_rows(pa, p)
            l_out = float(kl.mean())
            u = np.log(np.clip(pa, _LOG_EPS, None)) - np.log(np.clip(p, _LOG_EPS, None))
            dZa[plan.out_mask] += plan.eta * (pa * (u - kl[:, None])) / n_out
            dZ[plan.out_mask] += plan.eta * (p - pa) / n_out
        batches.append((plan.X_aug, dZa))
    if plan.eta > 0.0 and plan.X_mix is not None:
        Pm = softmax(clf.logits(plan.X_mix))
        l_mix = float(cross_entropy_rows(Pm, plan.q_mix).mean())
        dZm = plan.eta * (Pm - plan.q_mix) / len(Pm)
        batches.append((plan.X_mix, dZm))

    batches.insert(0, (plan.X, dZ))
    grad = clf.grad_param_vector(batches)
    parts = LossParts(dr=l_dr, cr_in=l_in, cr_out=l_out, mix=l_mix)
    total = l_dr + plan.eta * (l_in + l_out + l_mix)
    return parts, total, grad


def total_loss(clf: Classifier, plan: BatchPlan) -> float:
    """Loss-only evaluation (used by finite-difference checks)."""
    _, total, _ = total_loss_and_grad(clf, plan)
    return total


# ---------------------------------------------------------------------------
# trainer


@dataclass
class RefineryConfig:
    epochs: int = 50
    warmup_epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 0.1
    weight_decay: float = 1e-4
    delta: float = 0.5
    gamma: float = 0.85
    tau: float = 0.99
    varsigma: float = 4.0
    eta_ramp_epochs: int = 10
    eta_max: float = 1.0
    jitter_scale: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.delta <= 1.0:
            raise ValueError("delta must be in (0, 1]")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ValueError("need 0 <= warmup_epochs <= epochs")

    def eta_at(self, epoch: int) -> float:
        """Consistency/mixup weight: 0 through warm-up, then a linear ramp."""
        if epoch < self.warmup_epochs or self.eta_max == 0.0:
            return 0.0
        if self.eta_ramp_epochs <= 0:
            return self.eta_max
        frac = (epoch - self.warmup_epochs + 1) / self.eta_ramp_epochs
        return self.eta_max * min(1.0, frac)


@dataclass
class EpochStats:
    epoch: int
    loss_dr: float
    loss_cr_in: float
    loss_cr_out: float
    loss_mix: float
    eta: float
    n_in: int
    n_out: int
    n_sl: int
    n_hc: int
    train_acc: float | None = None
    n_underflow: int = 0


HISTORY_HEADER = "epoch,loss_dr,loss_cr_in,loss_cr_out,loss_mix,eta,d_in,d_out,d_sl,d_hc,train_acc"


def history_to_csv(history: Sequence[EpochStats]) -> str:
    lines = [HISTORY_HEADER]
    for h in history:
        acc = "" if h.train_acc is None else f"{h.train_acc:.6f}"
        lines.append(
            f"{h.epoch},{h.loss_dr:.6f},{h.loss_cr_in:.6f},{h.loss_cr_out:.6f},"
            f"{h.loss_mix:.6f},{h.eta:.4f},{h.n_in},{h.n_out},{h.n_sl},{h.n_hc},{acc}"
        )
    return "\n".join(lines) + "\n"


@dataclass
class TrainResult:
    classifier: Classifier
    history: list[EpochStats]


def minibatch_indices(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled contiguous minibatches; shared with the reference trainers so
    schedules match exactly."""
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _epoch_rng(seed: int, epoch: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, stream])


def _augmented_views(dataset: Dataset, X: np.ndarray, epoch: int, config: RefineryConfig) -> np.ndarray | None:
    """Per-sample alternate view: a supplied augmented feature vector when the
    sample has one (rotating through multiple views by epoch), otherwise
    Gaussian jitter scaled by the per-dimension feature std."""
    aug_lists = [s.aug_features for s in dataset.samples]
    need_jitter = [i for i, a in enumerate(aug_lists) if not a]
    if need_jitter and config.jitter_scale <= 0.0:
        if len(need_jitter) == len(aug_lists):
            logger.warning("no augmented views and jitter disabled; consistency losses will be 0")
            return None
    if need_jitter:
        sigma = config.jitter_scale * X.std(axis=0)
        rng = _epoch_rng(config.seed, epoch, 2)
        views = X + sigma * rng.standard_normal(X.shape)
    else:
        views = np.empty_like(X)
    for i, a in enumerate(aug_lists):
        if a:
            views[i] = a[epoch % len(a)]
    return views


def train(
    dataset: Dataset,
    candidates: Mapping[str, CandidateSet],
    classifier: Classifier,
    config: RefineryConfig,
    *,
    batch_callback=None,
) -> TrainResult:
    """Run warm-up plus refinement epochs; returns the trained classifier and
    per-epoch history. Deterministic given config.seed.

    batch_callback, when given, receives (epoch, batch_index, LossParts, total)
    after every gradient step; used by equivalence tests against reference
    trainers."""
    missing = [s.id for s in dataset.samples if s.id not in candidates]
    if missing:
        raise ValueError(f"{len(missing)} training samples lack candidate sets (first: {missing[0]!r})")
    C = dataset.n_classes
    X = dataset.feature_matrix()
    cand_list = [candidates[s.id] for s in dataset.samples]
    for cs in cand_list:
        cs.check_range(C)
    mask = candidate_mask(cand_list, C)
    gold = dataset.gold_labels()
    n = len(dataset)

    uniform_targets, _ = renormalize_target_rows(None, mask, 0)
    history: list[EpochStats] = []
    prev_preds: np.ndarray | None = None

    for epoch in range(config.epochs):
        eta = config.eta_at(epoch)
        # epoch 0 always trains on the uniform targets: no snapshot exists yet
        warm = epoch < config.warmup_epochs or prev_preds is None
        if warm:
            q_hat, targeted = uniform_targets, np.ones(n, dtype=bool)
            in_idx = np.arange(n)
            state = None
        else:
            state = compute_refinery_state(prev_preds, mask, epoch, delta=config.delta, tau=config.tau)
            q_hat, targeted = assemble_targets(state, config.gamma)
            in_idx = state.in_idx

        in_mask = np.zeros(n, dtype=bool)
        in_mask[in_idx] = True
        out_mask = ~in_mask

        X_aug = _augmented_views(dataset, X, epoch, config) if eta > 0.0 else None
        mix_rng = _epoch_rng(config.seed, epoch, 1) if eta > 0.0 else None
        shuffle_rng = _epoch_rng(config.seed, epoch, 0)

        sums = np.zeros(4)
        n_batches = 0
        for bidx in minibatch_indices(n, config.batch_size, shuffle_rng):
            plan = make_batch_plan(
                X[bidx],
                q_hat[bidx],
                targeted[bidx],
                in_mask[bidx],
                out_mask[bidx],
                eta,
                X_aug=X_aug[bidx] if X_aug is not None else None,
                varsigma=config.varsigma,
                mix_rng=mix_rng,
            )
            parts, total, grad = total_loss_and_grad(classifier, plan)
            if not np.isfinite(total):
                raise TrainingDiverged(epoch)
            grad = grad + config.weight_decay * classifier.weight_decay_vector()
            classifier.set_param_vector(classifier.param_vector() - config.learning_rate * grad)
            if batch_callback is not None:
                batch_callback(epoch, n_batches, parts, total)
            sums += (parts.dr, parts.cr_in, parts.cr_out, parts.mix)
            n_batches += 1

        prev_preds = classifier.predict_proba(X)
        train_acc = float((prev_preds.argmax(axis=1) == gold).mean()) if gold is not None else None
        means = sums / max(n_batches, 1)
        history.append(
            EpochStats(
                epoch=epoch,
                loss_dr=float(means[0]),
                loss_cr_in=float(means[1]),
                loss_cr_out=float(means[2]),
                loss_mix=float(means[3]),
                eta=eta,
                n_in=int(len(in_idx)),
                n_out=int(n - len(in_idx)),
                n_sl=0 if state is None else int(len(state.sl_idx)),
                n_hc=0 if state is None else int(len(state.hc_idx)),
                train_acc=train_acc,
                n_underflow=0 if state is None else int(state.underflow.sum()),
            )
        )
    return TrainResult(classifier=classifier, history=history)


def predict(classifier: Classifier, dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """(argmax labels, full softmax distributions); ties go to the lowest index."""
    X = dataset.feature_matrix()
    if X.shape[1] != classifier.feature_dim:
        raise ValueError(f"feature dimension mismatch: dataset d={X.shape[1]}, model d={classifier.feature_dim}")
    probs = classifier.predict_proba(X)
    return probs.argmax(axis=1), probs


# ---------------------------------------------------------------------------
# model files


MODEL_FORMAT = "annodistill-model-v1"


def save_model(
    path,
    classifier: Classifier,
    label_space: LabelSpace,
    config: RefineryConfig,
    seed: int,
) -> None:
    """Structured text model file: label space, dimensions, parameters, config echo, seed."""
    payload = {
        "format": MODEL_FORMAT,
        "label_space": label_space.to_dict(),
        "feature_dim": classifier.feature_dim,
        "classifier": classifier.to_spec(),
        "config": asdict(config),
        "seed": seed,
    }
    atomic_write_text(path, json.dumps(payload, indent=1) + "\n")


@dataclass
class ModelBundle:
    classifier: Classifier
    label_space: LabelSpace
    config: RefineryConfig
    seed: int


def load_model(path) -> ModelBundle:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a model file: {path}")
    return ModelBundle(
        classifier=classifier_from_spec(payload["classifier"]),
        label_space=LabelSpace.from_dict(payload["label_space"]),
        config=RefineryConfig(**payload["config"]),
        seed=payload["seed"],
    )
