from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.cluster.hierarchy import cut_tree, linkage
from sklearn.metrics import calinski_harabasz_score

from model.competitors import competitor_features
from model.estimator import weighted_scores
from model.spectrum import smoothed_log_periodogram
from utils.errors import DegenerateInputError, ValidationError

FEATURE_KINDS = ('astar', 'a', 'sdf', 'spb', 'spk', 'sep')
K_SELECT = ('elbow', 'ch')
DEFAULT_K_MAX = 10
TINY = 1e-300


@dataclass
class ClusterResult:
    labels: np.ndarray          # 1..K, numbered by first appearance
    merge_tree: np.ndarray      # [m - 1, 3]: (cluster a, cluster b, height)
    K: int
    input_kind: str = 'astar'
    wss_curve: Optional[np.ndarray] = field(default=None, repr=False)
    ch_curve: Optional[np.ndarray] = field(default=None, repr=False)


def _check_features(features):
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValidationError(f"features must be a non-empty (m, p) matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("features contain non-finite values")
    return X


def ward_tree(X):
    ''' scipy Ward linkage on Euclidean row distances; heights on the Euclidean scale '''
    if X.shape[0] < 2:
        return np.zeros((0, 4))
    return linkage(X, method='ward', metric='euclidean')


def canonical_labels(labels):
    ''' renumber ids 1..K in order of first appearance '''
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inverse.ravel()] + 1


def cut(Z, m, k):
    if m == 1:
        return np.ones(1, dtype=np.int64)
    return canonical_labels(cut_tree(Z, n_clusters=k).ravel())


def within_scatter(X, labels):
    return float(sum(np.sum((X[labels == c] - X[labels == c].mean(axis=0)) ** 2) for c in np.unique(labels)))


def ward_cluster(features, k):
    X = _check_features(features)
    m = X.shape[0]
    if k < 1 or k > m:
        raise ValidationError(f"number of clusters k = {k} must lie in 1..{m}")
    Z = ward_tree(X)
    return ClusterResult(labels=cut(Z, m, k), merge_tree=Z[:, :3], K=int(k))


def wss_curve(features, k_max):
    """Total within-cluster sum of squares of the Ward cuts k = 1..k_max.

    Rows of features are the observations (pass U_sp^T to cluster subregions).
    """
    X = _check_features(features)
    m = X.shape[0]
    if k_max < 1 or k_max > m:
        raise ValidationError(f"k_max = {k_max} must lie in 1..{m}")
    Z = ward_tree(X)
    return np.array([within_scatter(X, cut(Z, m, k)) for k in range(1, k_max + 1)])


def relative_drops(wss):
    ''' r(k) = (WSS(k) - WSS(k+1)) / WSS(k), k = 1..k_max-1; 0 where WSS(k) vanishes '''
    drop = np.clip(wss[:-1] - wss[1:], 0.0, None)
    return np.where(wss[:-1] > TINY, drop / np.where(wss[:-1] > TINY, wss[:-1], 1.0), 0.0)


def select_k_elbow(wss):
    """Elbow of a WSS curve: the k in 2..k_max-1 maximising r(k-1) / r(k), the relative drop into k over
    the relative drop out of k.

    A vanishing r(k) after a positive r(k-1) counts as infinite; 0 / 0 counts as 0.
    Ties within 1e-12 relative resolve to the smallest k.
    """
    wss = np.asarray(wss, dtype=np.float64)
    if wss.size < 3:
        raise ValidationError(f"elbow selection needs at least 3 curve points, got {wss.size}")
    r = relative_drops(wss)
    before, after = r[:-1], r[1:]
    with np.errstate(divide='ignore', invalid='ignore'):
        ratio = np.where(after > 0, before / np.where(after > 0, after, 1.0), np.where(before > 0, np.inf, 0.0))
    best = ratio.max()
    if np.isinf(best):
        return int(np.flatnonzero(np.isinf(ratio))[0]) + 2
    tol = 1e-12 * max(1.0, abs(best))
    return int(np.flatnonzero(ratio >= best - tol)[0]) + 2


def calinski_harabasz(features, k):
    ''' ch(k) = (m - k) tr(W_between) / ((k - 1) tr(W_within)) for the Ward cut at k '''
    X = _check_features(features)
    m = X.shape[0]
    if k < 2 or k >= m:
        raise ValidationError(f"Calinski-Harabasz needs 2 <= k < m = {m}, got k = {k}")
    labels = cut(ward_tree(X), m, k)
    if within_scatter(X, labels) <= TINY:
        raise DegenerateInputError(f"within-cluster scatter vanishes at k = {k}; Calinski-Harabasz is undefined")
    return float(calinski_harabasz_score(X, labels))


def ch_curve(features, k_max):
    ''' ch(k) for k = 1..k_max; NaN where undefined (k = 1, k >= m, zero within scatter) '''
    X = _check_features(features)
    curve = np.full(k_max, np.nan)
    for k in range(2, min(k_max, X.shape[0] - 1) + 1):
        try:
            curve[k - 1] = calinski_harabasz(X, k)
        except DegenerateInputError:
            pass
    return curve


def select_k_ch(ch):
    ch = np.asarray(ch, dtype=np.float64)
    if not np.any(np.isfinite(ch)):
        raise DegenerateInputError("Calinski-Harabasz is undefined for every candidate k")
    return int(np.nanargmax(ch)) + 1


def selection_curves(P, basis, k_max=None):
    ''' WSS and CH curves for k = 1..k_max over the rows of U_sp^T (one per subregion) '''
    rows = smoothed_log_periodogram(P, basis).T
    k_max = min(DEFAULT_K_MAX, P.m) if k_max is None else int(k_max)
    return wss_curve(rows, k_max), ch_curve(rows, k_max)


def select_k(P, basis, method='elbow', k_max=None):
    """Choose the cluster count from the smoothed log-periodograms of the subregions.

    Return:
        (K, wss curve, ch curve)
    """
    if method not in K_SELECT:
        raise ValidationError(f"unknown k selection {method!r}; expected one of {', '.join(K_SELECT)}")
    wss, ch = selection_curves(P, basis, k_max)
    K = select_k_elbow(wss) if method == 'elbow' else select_k_ch(ch)
    return K, wss, ch


def build_features(kind, P, basis, model_fit=None, K=None, device=None):
    """Feature rows per subregion for clustering.

    astar: weighted scores, a: re-factored unweighted scores, sdf: fitted spectra exp(B Theta A^T)^T,
    spb / spk / sep: competitor estimators.
    """
    if kind not in FEATURE_KINDS:
        raise ValidationError(f"unknown feature kind {kind!r}; expected one of {', '.join(FEATURE_KINDS)}")
    if kind in ('astar', 'a', 'sdf'):
        if model_fit is None:
            raise ValidationError(f"feature kind {kind!r} needs a fitted model")
        if kind == 'sdf':
            return np.exp(np.clip(model_fit.log_sdf(basis), -700.0, 700.0)).T
        scores = weighted_scores(model_fit, basis)
        return scores.Astar if kind == 'astar' else scores.A
    K = K if K is not None else (model_fit.K if model_fit is not None else None)
    if kind == 'sep' and K is None:
        raise ValidationError("feature kind 'sep' needs the rank K")
    return competitor_features(P, basis, K, kind, device=device)


def cluster_pipeline(P, basis, model_fit=None, input_kind='astar', k=None, k_select='elbow', k_max=None,
                     device=None, logger=None):
    ''' select K (unless given), build features of input_kind and cut the Ward tree '''
    if input_kind not in FEATURE_KINDS:
        raise ValidationError(f"unknown feature kind {input_kind!r}; expected one of {', '.join(FEATURE_KINDS)}")
    if k is None:
        k, wss, ch = select_k(P, basis, k_select, k_max)
        if logger is not None:
            logger.log(f"[Info] {k_select} selection chose K = {k}")
    else:
        wss, ch = selection_curves(P, basis, min(k_max or DEFAULT_K_MAX, P.m))
    features = build_features(input_kind, P, basis, model_fit, K=(model_fit.K if model_fit is not None else k),
                              device=device)
    result = ward_cluster(features, k)
    result.input_kind = input_kind
    result.wss_curve, result.ch_curve = wss, ch
    if logger is not None:
        sizes = np.bincount(result.labels)[1:]
        logger.log(f"[Info] clustered {P.m} subregions on '{input_kind}' features into {k} clusters of sizes {sizes.tolist()}")
    return result
