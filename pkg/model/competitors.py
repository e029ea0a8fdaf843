import numpy as np
import torch

from model.estimator import _np, _sign_fix, _solve_spd, _t
from model.spectrum import smoothed_log_periodogram
from utils.errors import ValidationError

KINDS = ('spb', 'spk', 'sep')
N_BANDWIDTHS = 15
SEP_LAMBDA = 1.0


def spb(P, basis):
    ''' exp of the basis projection of log I, one row per subregion [m, n] '''
    return np.exp(smoothed_log_periodogram(P, basis)).T


def circular_kernel(side, bandwidth):
    ''' row-normalised Gaussian smoother on the marginal Fourier grid, distances taken on the unit circle '''
    u = np.arange(side) / side
    d = np.abs(u[:, None] - u[None, :])
    d = np.minimum(d, 1.0 - d)
    S = np.exp(-0.5 * (d / bandwidth) ** 2)
    return S / S.sum(axis=1, keepdims=True)


def bandwidth_grid(side):
    return np.geomspace(0.25 / side, 0.25, N_BANDWIDTHS)


def gcv_scores(P, bandwidths):
    """Pooled GCV of the separable kernel smoother S = S1 kron S1 applied to every log-periodogram.

    GCV(h) = mean ||Y - S Y||^2 / (1 - tr(S) / n)^2 with tr(S) = tr(S1)^2; inf where the denominator vanishes.
    """
    side = P.side
    Y = P.log().reshape(P.m, side, side)
    scores = np.empty(len(bandwidths))
    for b, h in enumerate(bandwidths):
        S1 = circular_kernel(side, h)
        fitted = np.einsum('ab,ibc,dc->iad', S1, Y, S1)
        denom = 1.0 - np.trace(S1) ** 2 / P.n
        scores[b] = np.mean((Y - fitted) ** 2) / denom ** 2 if denom > 0 else np.inf
    return scores


def spk(P, bandwidths=None):
    """2D Gaussian kernel smoothing of the log-periodograms with a GCV-selected bandwidth.

    Return:
        (ndarray [m, n] smoothed spectra, chosen bandwidth, GCV scores on the grid)
    """
    bandwidths = bandwidth_grid(P.side) if bandwidths is None else np.asarray(bandwidths, dtype=np.float64)
    scores = gcv_scores(P, bandwidths)
    h = bandwidths[int(np.argmin(scores))]
    S1 = circular_kernel(P.side, h)
    Y = P.log().reshape(P.m, P.side, P.side)
    smooth = np.einsum('ab,ibc,dc->iad', S1, Y, S1).reshape(P.m, P.n)
    return np.exp(smooth), h, scores


def separate_fits(P, basis, lam=SEP_LAMBDA, max_iter=50, tol=1e-8, delta_max=30, device=None):
    """Penalised Whittle fit of each subregion on its own: min_b 2 sum_j [u_j + I_j e^{-u_j}] + lam b^T R b.

    All m Newton systems are solved as one batch.
    Return:
        beta (ndarray [L, m])
    """
    B, R, I = _t(basis.B, device), _t(basis.R, device), _t(P.I, device)
    beta = _t(basis.coefficients(P.log().T), device).T.contiguous()  # [m, L]

    def values(b):
        U = (b @ B.T).clamp(-700.0, 700.0)
        return 2.0 * torch.sum(U + I * torch.exp(-U), dim=1) + lam * torch.sum(b * (b @ R), dim=1)

    current = values(beta)
    for _ in range(max_iter):
        U = (beta @ B.T).clamp(-700.0, 700.0)
        W = I * torch.exp(-U)
        g = (1.0 - W) @ B + lam * (beta @ R)
        H = torch.einsum('jk,ij,jl->ikl', B, W, B) + lam * R
        d, _ = _solve_spd(H, -g.unsqueeze(-1))
        d = d.squeeze(-1)
        step = torch.zeros_like(beta)
        accepted = torch.zeros(P.m, dtype=torch.bool, device=beta.device)
        for delta in range(delta_max + 1):
            cand = beta + (0.5 ** delta) * d
            better = (~accepted) & (values(cand) < current)
            step[better] = (0.5 ** delta) * d[better]
            accepted |= better
            if bool(accepted.all()):
                break
        beta = beta + step
        new = values(beta)
        change = torch.max(torch.abs(current - new) / torch.clamp(torch.abs(current), min=1e-300))
        current = new
        if float(change) < tol:
            break
    return _np(beta).T


def sep(P, basis, K, lam=SEP_LAMBDA, device=None):
    ''' rank-K truncated SVD scores of the separately estimated log-SDFs [m, K] '''
    if K < 1 or K > min(P.m, P.n):
        raise ValidationError(f"K = {K} must lie in 1..{min(P.m, P.n)}")
    U_sep = basis.B @ separate_fits(P, basis, lam=lam, device=device)
    _, _, vt = np.linalg.svd(U_sep, full_matrices=False)
    scores, _ = _sign_fix(vt[:K].T)
    return scores


def competitor_features(P, basis, K, kind, device=None):
    if kind == 'spb':
        return spb(P, basis)
    elif kind == 'spk':
        return spk(P)[0]
    elif kind == 'sep':
        return sep(P, basis, K, device=device)
    raise ValidationError(f"unknown competitor kind {kind!r}; expected one of {', '.join(KINDS)}")
