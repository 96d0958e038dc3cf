"""Score-weighted ensembling of inlier models, instance-level recycling
of confident outlier predictions, and classifier-head adaptation.

Adaptation minimizes  L_all = L_sim + gamma1 * L_pse + gamma2 * L_omr
by full-batch gradient descent with momentum on the member heads only;
feature matrices stay frozen. Gradients are analytic through each
member's softmax; pseudo-labels and recycle labels are constants within
an epoch and refreshed at every epoch boundary.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ZooAdaptError
from .inference import forward, mean_entropy
from .kernels import entropy_rows, softmax_rows
from .tensorio import ModelRecord, write_tensor

ADAPTED_SUFFIX = ".adapted"


class AdaptError(ZooAdaptError):
    pass


def ensemble_weights(sutes, temperature: float = 1.0) -> np.ndarray:
    """Softmax of the member scores; shift-invariant and strictly positive."""
    s = np.asarray(sutes, dtype=np.float64)
    if s.size == 0:
        raise AdaptError("no scores given")
    if not np.isfinite(s).all():
        raise AdaptError("ensemble weights need finite scores")
    if temperature <= 0:
        raise AdaptError("temperature must be positive")
    z = s / temperature
    e = np.exp(z - z.max())
    return e / e.sum()


@dataclass
class EnsembleModel:
    members: list[ModelRecord]
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if len(self.members) == 0:
            raise AdaptError("ensemble needs at least one member")
        if w.shape[0] != len(self.members):
            raise AdaptError("one weight per member required")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise AdaptError("weights must be positive and sum to 1")
        self.weights = w


def build_ensemble(members: list[ModelRecord], sutes,
                   temperature: float = 1.0) -> EnsembleModel:
    return EnsembleModel(members=members,
                         weights=ensemble_weights(sutes, temperature))


def member_outputs(e: EnsembleModel) -> list[np.ndarray]:
    return [forward(m) for m in e.members]


def ensemble_forward(e: EnsembleModel) -> np.ndarray:
    """Weighted sum of member probability matrices; rows stay distributions."""
    probs = member_outputs(e)
    return mix_outputs(probs, e.weights)


def mix_outputs(probs: list[np.ndarray], weights: np.ndarray) -> np.ndarray:
    out = np.zeros_like(probs[0])
    for w, p in zip(weights, probs):
        out += w * p
    return out


@dataclass(frozen=True)
class RecyclePair:
    sample_index: int
    label: int
    model_id: str
    confidence: float


def mine_recycle_pairs(outliers: list[ModelRecord],
                       tau: float) -> list[RecyclePair]:
    """Per sample, the single most confident outlier prediction, kept
    only when its confidence exceeds tau. Ties on confidence go to the
    lowest model_id; ties on the class go to the lowest index."""
    if not outliers:
        return []
    ordered = sorted(outliers, key=lambda m: m.model_id)
    probs = [forward(m) for m in ordered]
    n = probs[0].shape[0]
    best_conf = np.full(n, -1.0)
    best_label = np.zeros(n, dtype=int)
    best_model = np.zeros(n, dtype=int)
    for j, p in enumerate(probs):
        labels = np.argmax(p, axis=1)
        confs = p[np.arange(n), labels]
        better = confs > best_conf  # strict: earlier (lower) id wins ties
        best_conf[better] = confs[better]
        best_label[better] = labels[better]
        best_model[better] = j
    pairs = []
    for i in range(n):
        if best_conf[i] > tau:
            pairs.append(RecyclePair(sample_index=i, label=int(best_label[i]),
                                     model_id=ordered[best_model[i]].model_id,
                                     confidence=float(best_conf[i])))
    return pairs


def pseudo_labels(mixture: np.ndarray) -> np.ndarray:
    return np.argmax(mixture, axis=1)


def loss_pse(mixture: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy of the ensemble against its own argmax labels."""
    n = mixture.shape[0]
    picked = mixture[np.arange(n), labels]
    if np.any(picked <= 0.0):
        raise AdaptError("L_pse: zero probability at a pseudo-label")
    return float(-np.log(picked).mean())


def loss_omr(mixture: np.ndarray, pairs: list[RecyclePair]) -> float:
    """Mean cross-entropy over recycled outlier pairs; empty set gives 0."""
    if not pairs:
        return 0.0
    idx = np.array([p.sample_index for p in pairs])
    lab = np.array([p.label for p in pairs])
    picked = mixture[idx, lab]
    if np.any(picked <= 0.0):
        raise AdaptError("L_omr: zero probability at a recycled label")
    return float(-np.log(picked).mean())


def loss_im(p: np.ndarray) -> float:
    """Information-maximization loss in minimized form: mean per-sample
    entropy minus entropy of the mean prediction (lower is better)."""
    mean_row = p.mean(axis=0)
    return mean_entropy(p) - float(entropy_rows(mean_row[None, :])[0])


def loss_sim(probs: list[np.ndarray], weights: np.ndarray) -> float:
    """Per-member IM losses, combined with the ensemble weights."""
    return float(sum(w * loss_im(p) for w, p in zip(weights, probs)))


def loss_cim(probs: list[np.ndarray], weights: np.ndarray) -> float:
    """IM loss of the whole mixture (the collaborative variant)."""
    return loss_im(mix_outputs(probs, weights))


@dataclass
class AdaptConfig:
    gamma1: float = 0.3
    gamma2: float = 0.3
    tau_recycle: float = 0.95
    epochs: int = 50
    lr: float = 0.01
    momentum: float = 0.9
    softmax_temperature_for_weights: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise AdaptError("gamma weights must be >= 0")
        if not 0 < self.tau_recycle < 1:
            raise AdaptError("tau_recycle must be in (0, 1)")
        if self.epochs < 0 or self.lr < 0:
            raise AdaptError("epochs and lr must be >= 0")
        if not 0 <= self.momentum < 1:
            raise AdaptError("momentum must be in [0, 1)")


# ---------------------------------------------------------------------------
# Analytic gradients. Each loss term yields dL/dP_bar (or dL/dP_j for the
# separate-IM term); the member chain applies the softmax Jacobian and the
# frozen feature matrix:
#   dL/dZ_j = theta_j * (P_j .* D - rowsum(P_j .* D) .* P_j)
#   dL/dW_j = dL/dZ_j^T F_j,   dL/db_j = colsum(dL/dZ_j)
# ---------------------------------------------------------------------------

def _chain_to_head(d_p: np.ndarray, p: np.ndarray, features: np.ndarray,
                   scale: float) -> tuple[np.ndarray, np.ndarray]:
    a = d_p * p
    g_z = scale * (a - a.sum(axis=1, keepdims=True) * p)
    return g_z.T @ features, g_z.sum(axis=0)


def _d_ce(mixture: np.ndarray, idx: np.ndarray, lab: np.ndarray,
          count: int) -> np.ndarray:
    d = np.zeros_like(mixture)
    if count:
        with np.errstate(divide="ignore"):
            d[idx, lab] = -1.0 / (count * mixture[idx, lab])
    return d


def _d_im(p: np.ndarray) -> np.ndarray:
    # exact zeros in p make this unbounded; the per-epoch loss guard
    # turns the resulting non-finite state into an AdaptError
    n = p.shape[0]
    mean_row = p.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return (np.log(mean_row)[None, :] - np.log(p)) / n


def term_value_and_grads(term: str, features: list[np.ndarray],
                         weights: list[np.ndarray], biases: list[np.ndarray],
                         theta: np.ndarray, labels: np.ndarray | None = None,
                         pairs: list[RecyclePair] | None = None):
    """One loss term's value and analytic per-member head gradients.

    term is one of sim, pse, omr, cim; labels (for pse) and pairs (for
    omr) are treated as constants. Returns (value, [(gW, gb), ...]).
    """
    probs = [softmax_rows(f @ w.T + b)
             for f, w, b in zip(features, weights, biases)]
    mixture = mix_outputs(probs, theta)
    n = mixture.shape[0]
    if term == "pse":
        value = loss_pse(mixture, labels)
        d_mix = _d_ce(mixture, np.arange(n), labels, n)
        d_ps = [t * d_mix for t in theta]
    elif term == "omr":
        pairs = pairs or []
        idx = np.array([p.sample_index for p in pairs], dtype=int)
        lab = np.array([p.label for p in pairs], dtype=int)
        value = loss_omr(mixture, pairs)
        d_mix = _d_ce(mixture, idx, lab, len(pairs))
        d_ps = [t * d_mix for t in theta]
    elif term == "sim":
        value = loss_sim(probs, theta)
        d_ps = [t * _d_im(p) for t, p in zip(theta, probs)]
    elif term == "cim":
        value = loss_cim(probs, theta)
        d_mix = _d_im(mixture)
        d_ps = [t * d_mix for t in theta]
    else:
        raise AdaptError(f"unknown loss term {term!r}")
    grads = [_chain_to_head(d_p, p, f, 1.0)
             for d_p, p, f in zip(d_ps, probs, features)]
    return value, grads


@dataclass
class AdaptHistory:
    rows: list[dict] = field(default_factory=list)

    def append(self, epoch: int, l_sim: float, l_pse: float,
               l_omr: float, l_all: float) -> None:
        self.rows.append({"epoch": epoch, "L_sim": l_sim, "L_pse": l_pse,
                          "L_omr": l_omr, "L_all": l_all})

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["epoch", "L_sim", "L_pse", "L_omr", "L_all"])
            for r in self.rows:
                out.writerow([r["epoch"], repr(r["L_sim"]), repr(r["L_pse"]),
                              repr(r["L_omr"]), repr(r["L_all"])])


def adapt(e: EnsembleModel, outliers: list[ModelRecord], cfg: AdaptConfig,
          learnable_weights: bool = False) -> tuple[EnsembleModel, AdaptHistory]:
    """Adapt the member heads to the target set.

    Full-batch descent with classic momentum (v <- mu v + g;
    p <- p - lr v). With learnable_weights=True the member weights are
    trained too, reparameterized through a softmax so they stay on the
    simplex (ablation mode; the default keeps score-derived weights
    frozen). Deterministic given the config.
    """
    heads_w = [m.weights.copy() for m in e.members]
    heads_b = [m.bias.copy() for m in e.members]
    feats = [m.features for m in e.members]
    vel_w = [np.zeros_like(w) for w in heads_w]
    vel_b = [np.zeros_like(b) for b in heads_b]
    theta = e.weights.copy()
    rho = np.log(theta)  # softmax-reparameterized weight logits
    vel_rho = np.zeros_like(rho)
    history = AdaptHistory()

    for epoch in range(cfg.epochs):
        probs = [softmax_rows(f @ w.T + b)
                 for f, w, b in zip(feats, heads_w, heads_b)]
        mixture = mix_outputs(probs, theta)

        # refresh constants: pseudo-labels and recycled outlier pairs
        labels = pseudo_labels(mixture)
        pairs = mine_recycle_pairs(outliers, cfg.tau_recycle)
        pair_idx = np.array([p.sample_index for p in pairs], dtype=int)
        pair_lab = np.array([p.label for p in pairs], dtype=int)

        l_sim = loss_sim(probs, theta)
        l_pse = loss_pse(mixture, labels)
        l_omr = loss_omr(mixture, pairs)
        l_all = l_sim + cfg.gamma1 * l_pse + cfg.gamma2 * l_omr
        for name, value in (("L_sim", l_sim), ("L_pse", l_pse),
                            ("L_omr", l_omr)):
            if not np.isfinite(value):
                raise AdaptError(f"non-finite loss term {name} at epoch {epoch}")
        history.append(epoch, l_sim, l_pse, l_omr, l_all)

        n = mixture.shape[0]
        d_mix = _d_ce(mixture, np.arange(n), labels, n) * cfg.gamma1
        d_mix += _d_ce(mixture, pair_idx, pair_lab, len(pair_idx)) * cfg.gamma2

        for j, (f, p) in enumerate(zip(feats, probs)):
            with np.errstate(invalid="ignore"):
                d_p = theta[j] * d_mix + theta[j] * _d_im(p)
                g_w, g_b = _chain_to_head(d_p, p, f, 1.0)
            vel_w[j] = cfg.momentum * vel_w[j] + g_w
            vel_b[j] = cfg.momentum * vel_b[j] + g_b

        if learnable_weights:
            g_theta = np.array([
                (d_mix * p).sum() + loss_im(p) for p in probs])
            # softmax Jacobian: d theta_k / d rho_j = theta_k([k=j] - theta_j)
            g_rho = theta * (g_theta - float(g_theta @ theta))
            vel_rho = cfg.momentum * vel_rho + g_rho
            rho = rho - cfg.lr * vel_rho
            theta = np.exp(rho - rho.max())
            theta = theta / theta.sum()

        for j in range(len(heads_w)):
            heads_w[j] = heads_w[j] - cfg.lr * vel_w[j]
            heads_b[j] = heads_b[j] - cfg.lr * vel_b[j]

    adapted = [m.with_head(w, b)
               for m, w, b in zip(e.members, heads_w, heads_b)]
    return EnsembleModel(members=adapted, weights=theta), history


def write_adapted_heads(e: EnsembleModel, weight_paths: dict[str, str],
                        bias_paths: dict[str, str]) -> list[str]:
    """Write adapted heads beside the originals with the .adapted suffix."""
    written = []
    for m in e.members:
        wp = str(weight_paths[m.model_id]) + ADAPTED_SUFFIX
        bp = str(bias_paths[m.model_id]) + ADAPTED_SUFFIX
        write_tensor(m.weights.astype(np.float32), wp)
        write_tensor(m.bias.astype(np.float32), bp)
        written.extend([wp, bp])
    return written
