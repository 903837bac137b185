"""Link-prediction metrics, node classification, and sensitivity sweeps.

Scores are "higher = more likely edge": the negative scalarized relation,
symmetrized by averaging both directions for the asymmetric backends.
AUC uses the Mann-Whitney formulation with midranks for ties. Average
precision sorts by descending score and breaks ties by the stable order
of the input pair list (positives are listed before negatives by the
builders here).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path as FilePath

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit
from scipy.stats import rankdata

from pathembed.autodiff import Tensor, concat
from pathembed.graph import EdgeSplit, Graph, LabeledDataset, split_edges
from pathembed.relations import encoder_forward_t, mlp_forward_t

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinkScores:
    """Scored node pairs with boolean labels (True = positive)."""

    pairs: np.ndarray     # (M, 2) int
    scores: np.ndarray    # (M,) float
    labels: np.ndarray    # (M,) bool

    def __post_init__(self):
        if not (len(self.pairs) == len(self.scores) == len(self.labels)):
            raise ValueError("pairs, scores, and labels must align")
        if not np.isfinite(self.scores).all():
            raise ValueError("scores must be finite")


@dataclass(frozen=True)
class ClassifierReport:
    micro_f1: float
    macro_f1: float
    per_class_precision: tuple[float, ...]
    per_class_recall: tuple[float, ...]
    train_fraction: float
    repeats: int


# -- scoring -------------------------------------------------------------------


def score_pairs(state, pairs: np.ndarray, backend: str) -> np.ndarray:
    """Symmetric link scores for an (M, 2) array of node pairs."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size == 0:
        return np.empty(0, dtype=np.float64)
    phi = state.embeddings.values
    pu = phi[pairs[:, 0]]
    pv = phi[pairs[:, 1]]
    if backend == "2n":
        return -np.linalg.norm(pu - pv, axis=1)
    params_t = {n: Tensor(a) for n, a in state.metric_params.items()}
    if backend == "mlp":
        fwd = mlp_forward_t(concat([Tensor(pu), Tensor(pv)], axis=1), params_t).data
        bwd = mlp_forward_t(concat([Tensor(pv), Tensor(pu)], axis=1), params_t).data
    elif backend == "vi":
        fwd = encoder_forward_t(Tensor(pu - pv), params_t)[0].data
        bwd = encoder_forward_t(Tensor(pv - pu), params_t)[0].data
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return -0.5 * (
        np.linalg.norm(fwd, axis=1) + np.linalg.norm(bwd, axis=1)
    )


def score_pair(state, i: int, j: int, backend: str) -> float:
    return float(score_pairs(state, np.array([[i, j]]), backend)[0])


def make_link_scores(
    state, pos_pairs: np.ndarray, neg_pairs: np.ndarray, backend: str
) -> LinkScores:
    """Score positives and negatives; positives come first in the list."""
    pos_pairs = np.asarray(pos_pairs, dtype=np.int64).reshape(-1, 2)
    neg_pairs = np.asarray(neg_pairs, dtype=np.int64).reshape(-1, 2)
    pairs = np.concatenate([pos_pairs, neg_pairs])
    scores = np.concatenate(
        [score_pairs(state, pos_pairs, backend), score_pairs(state, neg_pairs, backend)]
    )
    labels = np.concatenate(
        [np.ones(len(pos_pairs), dtype=bool), np.zeros(len(neg_pairs), dtype=bool)]
    )
    return LinkScores(pairs=pairs, scores=scores, labels=labels)


# -- ranking metrics -----------------------------------------------------------


def auc_score(pos_scores: np.ndarray, neg_scores: np.ndarray) -> float:
    """P(random positive outscores random negative), ties count one half."""
    pos_scores = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg_scores = np.asarray(neg_scores, dtype=np.float64).ravel()
    if len(pos_scores) == 0 or len(neg_scores) == 0:
        raise ValueError("auc needs at least one positive and one negative")
    ranks = rankdata(np.concatenate([pos_scores, neg_scores]))
    n_pos = len(pos_scores)
    u = ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * len(neg_scores)))


def average_precision_score(pos_scores: np.ndarray, neg_scores: np.ndarray) -> float:
    """Mean precision at each positive, ranked by score, positives first on ties."""
    pos_scores = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg_scores = np.asarray(neg_scores, dtype=np.float64).ravel()
    if len(pos_scores) == 0 or len(neg_scores) == 0:
        raise ValueError("average precision needs both positives and negatives")
    scores = np.concatenate([pos_scores, neg_scores])
    labels = np.concatenate(
        [np.ones(len(pos_scores), dtype=bool), np.zeros(len(neg_scores), dtype=bool)]
    )
    return _ap_from_arrays(scores, labels)


def _ap_from_arrays(scores: np.ndarray, labels: np.ndarray) -> float:
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    csum = np.cumsum(hits)
    k = np.arange(1, len(hits) + 1)
    return float((csum[hits] / k[hits]).mean())


def auc(scores: LinkScores) -> float:
    if scores.labels.all() or not scores.labels.any():
        raise ValueError("auc needs both labels present")
    return auc_score(scores.scores[scores.labels], scores.scores[~scores.labels])


def average_precision(scores: LinkScores) -> float:
    if scores.labels.all() or not scores.labels.any():
        raise ValueError("average precision needs both labels present")
    return _ap_from_arrays(scores.scores, scores.labels)


def evaluate_split(state, split: EdgeSplit, backend: str) -> dict:
    """AUC and AP on the validation and test partitions of a split."""
    out = {}
    for name, pos, neg in (
        ("val", split.val_pos, split.val_neg),
        ("test", split.test_pos, split.test_neg),
    ):
        if len(pos) and len(neg):
            ls = make_link_scores(state, pos, neg, backend)
            out[f"{name}_auc"] = auc(ls)
            out[f"{name}_ap"] = average_precision(ls)
        else:
            out[f"{name}_auc"] = float("nan")
            out[f"{name}_ap"] = float("nan")
    return out


# -- node classification -------------------------------------------------------


def _fit_logistic(X: np.ndarray, y: np.ndarray, l2: float = 1.0) -> np.ndarray:
    """Binary L2-regularized logistic regression; returns (d + 1,) weights."""
    n, d = X.shape
    sign = np.where(y, 1.0, -1.0)

    def objective(wb):
        w, b = wb[:d], wb[d]
        margin = sign * (X @ w + b)
        loss = np.logaddexp(0.0, -margin).sum() + 0.5 * l2 * float(w @ w)
        pull = -sign * expit(-margin)
        grad = np.concatenate([X.T @ pull + l2 * w, [pull.sum()]])
        return loss, grad

    res = minimize(
        objective,
        np.zeros(d + 1),
        jac=True,
        method="L-BFGS-B",
        tol=1e-6,
        options={"maxiter": 1000},
    )
    return res.x


def _f1_report(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int):
    tp = np.zeros(num_classes)
    fp = np.zeros(num_classes)
    fn = np.zeros(num_classes)
    for c in range(num_classes):
        tp[c] = np.sum((y_pred == c) & (y_true == c))
        fp[c] = np.sum((y_pred == c) & (y_true != c))
        fn[c] = np.sum((y_pred != c) & (y_true == c))
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
    denom = 2 * tp.sum() + fp.sum() + fn.sum()
    micro = 2 * tp.sum() / denom if denom > 0 else 0.0
    pc_denom = precision + recall
    per_class_f1 = np.where(pc_denom > 0, 2 * precision * recall / np.where(pc_denom > 0, pc_denom, 1.0), 0.0)
    return float(micro), float(per_class_f1.mean()), precision, recall


def classify_nodes(
    state,
    dataset: LabeledDataset,
    train_fraction: float = 0.1,
    seed: int = 0,
    repeats: int = 10,
    embeddings: np.ndarray | None = None,
) -> ClassifierReport:
    """One-vs-rest logistic regression on node embeddings.

    Samples `train_fraction` of the labeled nodes, fits one binary model
    per class on per-dimension standardized features, predicts argmax on
    the held-out labeled nodes, and averages micro/macro F1 over
    `repeats` reseeded splits. A repeat whose train sample misses a
    class is redrawn up to 10 times before erroring.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    X_full = embeddings if embeddings is not None else state.embeddings.values
    labeled = np.flatnonzero(dataset.labels >= 0)
    if labeled.size == 0:
        raise ValueError("dataset has no labeled nodes")
    X = np.asarray(X_full, dtype=np.float64)[labeled]
    y = dataset.labels[labeled]
    num_classes = dataset.num_classes
    n_train = max(1, int(np.floor(train_fraction * len(labeled))))
    if n_train >= len(labeled):
        raise ValueError("train_fraction leaves no evaluation nodes")

    micro_list, macro_list = [], []
    prec_acc = np.zeros(num_classes)
    rec_acc = np.zeros(num_classes)
    for rep in range(repeats):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xC1A5, rep]))
        train_idx = None
        for _ in range(10):
            perm = rng.permutation(len(labeled))
            cand = perm[:n_train]
            if len(np.unique(y[cand])) == num_classes:
                train_idx = cand
                break
        if train_idx is None:
            raise ValueError(
                f"could not draw a train split containing all {num_classes} classes"
            )
        test_idx = np.setdiff1d(np.arange(len(labeled)), train_idx)
        mu = X[train_idx].mean(axis=0)
        sd = X[train_idx].std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        Xs = (X - mu) / sd
        decision = np.empty((len(test_idx), num_classes))
        for c in range(num_classes):
            wb = _fit_logistic(Xs[train_idx], y[train_idx] == c)
            decision[:, c] = Xs[test_idx] @ wb[:-1] + wb[-1]
        y_pred = decision.argmax(axis=1)
        micro, macro, prec, rec = _f1_report(y[test_idx], y_pred, num_classes)
        micro_list.append(micro)
        macro_list.append(macro)
        prec_acc += prec
        rec_acc += rec
    return ClassifierReport(
        micro_f1=float(np.mean(micro_list)),
        macro_f1=float(np.mean(macro_list)),
        per_class_precision=tuple(prec_acc / repeats),
        per_class_recall=tuple(rec_acc / repeats),
        train_fraction=train_fraction,
        repeats=repeats,
    )


# -- sensitivity sweeps ---------------------------------------------------------

SWEEP_COLUMNS = ("param", "value", "trial", "auc", "ap", "micro_f1")
_TRIAL_SEED_STRIDE = 9973


def _sweep_point(graph, base_cfg, param, value, trial, labels, val_fraction,
                 test_fraction, classify_fraction):
    from pathembed.training import train  # deferred: training imports this module

    cfg = replace(base_cfg, seed=base_cfg.seed + _TRIAL_SEED_STRIDE * trial)
    if param == "train_fraction":
        frac = float(value)
        if not 0.0 < frac < 1.0 - val_fraction:
            raise ValueError(f"train_fraction {frac} out of range")
        split = split_edges(graph, val_fraction, 1.0 - val_fraction - frac, cfg.seed)
    else:
        cfg = replace(cfg, **{param: value})
        cfg.validate()
        split = split_edges(graph, val_fraction, test_fraction, cfg.seed)
    result = train(
        split.train_graph, cfg,
        val_pos=split.val_pos, val_neg=split.val_neg,
    )
    metrics = evaluate_split(result.state, split, cfg.backend)
    micro = float("nan")
    if labels is not None:
        dataset = LabeledDataset(graph=graph, labels=labels)
        try:
            report = classify_nodes(
                result.state, dataset, train_fraction=classify_fraction,
                seed=cfg.seed, repeats=1,
            )
        except (ValueError, RuntimeError) as exc:
            # classification can be infeasible (for instance a class count
            # larger than the train sample); link metrics are still valid
            logger.warning("classification skipped for %s=%s: %s",
                           param, value, exc)
        else:
            micro = report.micro_f1
    return {
        "param": param,
        "value": value,
        "trial": trial,
        "auc": metrics["test_auc"],
        "ap": metrics["test_ap"],
        "micro_f1": micro,
    }


def sweep(
    graph: Graph,
    base_cfg,
    param: str,
    values,
    trials: int = 10,
    labels: np.ndarray | None = None,
    threads: int = 1,
    val_fraction: float = 0.05,
    test_fraction: float = 0.10,
    classify_fraction: float = 0.1,
    completed: set[tuple[str, int]] | None = None,
) -> tuple[list[dict], list[dict]]:
    """Train and evaluate a grid of settings, several trials per value.

    `param` is either a training-config field or "train_fraction" (which
    varies the edge split instead: test takes what train gives up, with a
    fixed validation slice). Returns (rows, errors); a failing grid point
    is recorded in `errors` and the sweep continues. Grid points whose
    `(str(value), trial)` key appears in `completed` are skipped, which
    lets callers resume an interrupted sweep from rows already on disk.
    """
    if not values:
        raise ValueError("sweep needs a non-empty value grid")
    points = [(v, t) for v in values for t in range(trials)]
    if completed:
        points = [(v, t) for v, t in points if (str(v), t) not in completed]
    rows: list[dict] = []
    errors: list[dict] = []

    def run(point):
        value, trial = point
        return _sweep_point(graph, base_cfg, param, value, trial, labels,
                            val_fraction, test_fraction, classify_fraction)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {pool.submit(run, p): p for p in points}
            for fut, point in futures.items():
                try:
                    rows.append(fut.result())
                except Exception as exc:  # noqa: BLE001 - per-point isolation
                    logger.warning("sweep point %s failed: %s", point, exc)
                    errors.append({"param": param, "value": point[0],
                                   "trial": point[1], "error": str(exc)})
    else:
        for point in points:
            try:
                rows.append(run(point))
            except Exception as exc:  # noqa: BLE001 - per-point isolation
                logger.warning("sweep point %s failed: %s", point, exc)
                errors.append({"param": param, "value": point[0],
                               "trial": point[1], "error": str(exc)})
    value_order = {v: i for i, v in enumerate(values)}
    rows.sort(key=lambda r: (value_order[r["value"]], r["trial"]))
    return rows, errors


def write_sweep_csv(rows: list[dict], path: str | FilePath) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(SWEEP_COLUMNS) + "\n")
        for row in rows:
            fh.write(
                f"{row['param']},{row['value']},{row['trial']},"
                f"{row['auc']:.10g},{row['ap']:.10g},{row['micro_f1']:.10g}\n"
            )
