import os
from dataclasses import dataclass, field, fields
from typing import List

import numpy as np
import torch
from tqdm import tqdm

from loss.penalty import Fusion_Loss, Roughness_Loss, fusion, roughness
from loss.whittle import Whittle_Loss, capped, log_sdf, per_subregion
from model.spectrum import smoothed_log_periodogram
from utils.errors import NumericError, ValidationError
from utils.file import read_kv, read_matrix, write_kv, write_matrix, write_rows

DTYPE = torch.float64
RIDGE = 1e-8
LAMBDA_MIN, LAMBDA_MAX = 1e-8, 1e8
OSCILLATION = 10.0


@dataclass
class FitOptions:
    max_iter: int = 200
    tol: float = 1e-6           # relative objective change per sweep
    lambda_tol: float = 1e-3    # relative change of the tuned lambdas
    patience: int = 2           # consecutive sweeps meeting both criteria
    delta_max: int = 30         # step halving tau = (1/2)^delta, delta = 0..delta_max
    spatial: bool = True
    lambda1: float = 1.0
    lambda2: float = 1.0
    tune_lambda1: bool = True
    tune_lambda2: bool = True
    a: int = 2                  # order of the difference penalty in the lambda_1 update
    progress: bool = False


@dataclass
class TraceRecord:
    iteration: int
    objective_start: float
    objective: float
    nll: float
    pen1: float
    pen2: float
    lambda1: float
    lambda2: float
    df1: float
    df2: float
    aic: float

    @classmethod
    def header(cls):
        return [f.name for f in fields(cls)]

    def row(self):
        return [getattr(self, f.name) for f in fields(self)]


@dataclass
class ModelFit:
    """Collective fit U = B Theta A^T.

    theta [L, K] basis coefficients, A [m, K] scores, lambdas in force during the last sweep.
    """
    theta: np.ndarray
    A: np.ndarray
    lambda1: float
    lambda2: float
    spatial: bool
    trace: List[TraceRecord] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    ridge_repairs: int = 0
    cap_hits: int = 0

    @property
    def K(self):
        return self.theta.shape[1]

    @property
    def objective(self):
        return self.trace[-1].objective if self.trace else float('nan')

    @property
    def aic(self):
        return self.trace[-1].aic if self.trace else float('nan')

    def log_sdf(self, basis):
        ''' U [n, m] '''
        return basis.B @ self.theta @ self.A.T


@dataclass
class WeightedScores:
    Astar: np.ndarray
    singular_values: np.ndarray
    weights: np.ndarray
    A: np.ndarray
    theta: np.ndarray


def _t(x, device=None):
    return torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=DTYPE, device=device)


def _np(x):
    return x.detach().cpu().numpy()


def _solve_spd(H, rhs):
    """Solve H x = rhs for (batched) symmetric PSD H via Cholesky.

    Singular systems are ridge-repaired with 1e-8 * mean(diag H).
    Return: (x, number of repaired systems)
    """
    chol, info = torch.linalg.cholesky_ex(H)
    bad = info > 0
    repaired = int(bad.sum())
    if repaired:
        scale = torch.diagonal(H, dim1=-2, dim2=-1).mean(dim=-1)
        scale = torch.where(scale > 0, scale, torch.ones_like(scale))
        eye = torch.eye(H.shape[-1], dtype=H.dtype, device=H.device)
        ridge = (RIDGE * scale * bad.to(H.dtype))[..., None, None]
        chol, info = torch.linalg.cholesky_ex(H + ridge * eye)
        if bool((info > 0).any()):
            raise NumericError("Newton Hessian stays singular after ridge repair")
    return torch.cholesky_solve(rhs, chol), repaired


class CollectiveEstimator(object):
    """Penalised Whittle estimation of m log-SDFs sharing K adaptive basis functions.

    Objective: F = 2 * sum_ij [u_ij + I_ij exp(-u_ij)] + lambda1 * tr(Theta^T R Theta) + lambda2 * PEN_2(A)
    Newton systems use half the gradient and Hessian of F.

    Args:
        P (PeriodogramSet): clamped periodograms [m, n].
        basis (BasisSystem): design B [n, L] and penalty R [L, L].
        graph (NeighborGraph | None): lattice adjacency; None disables PEN_2.
    """

    def __init__(self, P, basis, graph=None, device=None):
        if basis.n != P.n:
            raise ValidationError(f"basis has {basis.n} frequencies, periodograms have {P.n}")
        if graph is not None and graph.m != P.m:
            raise ValidationError(f"neighbour graph has {graph.m} cells, periodograms have {P.m} rows")
        self.device = device
        self.basis = basis
        self.P = P
        self.B = _t(basis.B, device)
        self.R = _t(basis.R, device)
        self.S = _t(basis.penalty_root(), device)
        self.I = _t(P.I, device)
        Dmat = graph.difference_matrix() if graph is not None else np.zeros((P.m, P.m))
        self.whittle = Whittle_Loss(self.B, self.I)
        self.roughness = Roughness_Loss(self.R)
        self.fusion = Fusion_Loss(_t(Dmat, device))
        self.Q = self.fusion.Q
        self.qdiag = torch.diagonal(self.Q)
        self.ridge_repairs = 0
        self.cap_hits = 0

    @property
    def m(self):
        return self.P.m

    @property
    def L(self):
        return self.basis.L

    # objective
    def parts(self, theta, A):
        nll = self.whittle(theta, A)
        return nll, self.roughness(theta), self.fusion(A)

    def objective(self, theta, A, lam1, lam2):
        nll, p1, p2 = self.parts(theta, A)
        return 2.0 * nll + lam1 * p1 + lam2 * p2

    def weights(self, theta, A):
        ''' W_ij = I_ij exp(-u_ij), [m, n] '''
        U, hit = capped(log_sdf(theta, A, self.B))
        if hit:
            self.cap_hits += 1
        return self.I * torch.exp(-U.T)

    # derivatives of F
    def score_gradient(self, theta, A, lam2):
        ''' dF/dA [m, K] '''
        C = self.B @ theta
        W = self.weights(theta, A)
        return 2.0 * ((1.0 - W) @ C) + 2.0 * lam2 * (self.Q @ A)

    def basis_gradient(self, theta, A, lam1):
        ''' dF/dTheta [L, K] '''
        W = self.weights(theta, A)
        return 2.0 * (self.B.T @ ((1.0 - W).T @ A)) + 2.0 * lam1 * (self.R @ theta)

    def likelihood_score_hessians(self, theta, A):
        ''' [m, K, K]: Theta^T sum_j b_j W_ij b_j^T Theta per subregion '''
        C = self.B @ theta
        W = self.weights(theta, A)
        return torch.einsum('jk,ij,jl->ikl', C, W, C)

    def likelihood_basis_hessian(self, theta, A, k, W=None):
        ''' [L, L]: sum_i alpha_ik^2 sum_j b_j W_ij b_j^T '''
        if W is None:
            W = self.weights(theta, A)
        w = (A[:, k] ** 2) @ W
        return (self.B * w[:, None]).T @ self.B

    def score_hessians(self, theta, A, lam2):
        ''' half Hessian of F per score block, [m, K, K] '''
        H = self.likelihood_score_hessians(theta, A)
        eye = torch.eye(A.shape[1], dtype=DTYPE, device=self.device)
        return H + lam2 * self.qdiag[:, None, None] * eye

    def basis_hessian(self, theta, A, k, lam1):
        ''' half Hessian of F for column k of Theta, [L, L] '''
        return self.likelihood_basis_hessian(theta, A, k) + lam1 * self.R

    # Newton sweeps
    def update_scores(self, theta, A, lam2, delta_max=30):
        """Jacobi Newton sweep over all score vectors alpha_i.

        Each alpha_i takes the first step tau = (1/2)^delta that lowers F with the other rows held at
        the previous sweep's values; rows with no improving step stay put. If the joint update raises F
        through the PEN_2 coupling, the joint displacement is halved until F drops.
        """
        C = self.B @ theta
        U = C @ A.T
        W = self.weights(theta, A)
        QA = self.Q @ A
        g = (1.0 - W) @ C + lam2 * QA
        H = self.score_hessians(theta, A, lam2)
        d, repaired = _solve_spd(H, -g.unsqueeze(-1))
        self.ridge_repairs += repaired
        d = d.squeeze(-1)

        base = 2.0 * per_subregion(U, self.I)
        step = torch.zeros_like(A)
        accepted = torch.zeros(A.shape[0], dtype=torch.bool, device=A.device)
        for delta in range(delta_max + 1):
            tau = 0.5 ** delta
            cand = A + tau * d
            local = 2.0 * per_subregion(C @ cand.T, self.I) - base \
                + lam2 * (2.0 * tau * torch.sum(d * QA, dim=1) + tau ** 2 * self.qdiag * torch.sum(d * d, dim=1))
            newly = (~accepted) & (local < 0)
            step[newly] = tau * d[newly]
            accepted |= newly
            if bool(accepted.all()):
                break

        start = self.objective(theta, A, 0.0, lam2)
        for delta in range(delta_max + 1):
            A_new = A + (0.5 ** delta) * step
            if self.objective(theta, A_new, 0.0, lam2) < start:
                return A_new
        return A

    def update_basis_coeffs(self, theta, A, lam1, delta_max=30):
        ''' Newton step with step halving for each column theta_k in turn, k = 1..K '''
        theta = theta.clone()
        current = self.objective(theta, A, lam1, 0.0)
        for k in range(theta.shape[1]):
            W = self.weights(theta, A)
            g = self.B.T @ ((1.0 - W).T @ A[:, k]) + lam1 * (self.R @ theta[:, k])
            H = self.likelihood_basis_hessian(theta, A, k, W) + lam1 * self.R
            d, repaired = _solve_spd(H, -g.unsqueeze(-1))
            self.ridge_repairs += repaired
            d = d.squeeze(-1)
            for delta in range(delta_max + 1):
                cand = theta.clone()
                cand[:, k] = theta[:, k] + (0.5 ** delta) * d
                value = self.objective(cand, A, lam1, 0.0)
                if value < current:
                    theta, current = cand, value
                    break
        return theta

    # model size
    def degrees_of_freedom(self, theta, A, lam1, lam2):
        """Effective degrees of freedom.

        df1 = sum_k tr[(H_k + lam1 R)^{-1} H_k], evaluated as L - sum_j lam1 v_j / (1 + lam1 v_j) with v_j the
        eigenvalues of S^T H_k^{-1} S, R = S S^T.
        df2 = sum_i tr[(H_i + lam2 Q_ii I)^{-1} H_i] = sum_i sum_j h_ij / (h_ij + lam2 Q_ii).
        """
        K = theta.shape[1]
        W = self.weights(theta, A)
        df1 = 0.0
        for k in range(K):
            if lam1 == 0:
                df1 += self.L
                continue
            Hk = self.likelihood_basis_hessian(theta, A, k, W)
            X, repaired = _solve_spd(Hk, self.S)
            self.ridge_repairs += repaired
            M = self.S.T @ X
            v = torch.linalg.eigvalsh(0.5 * (M + M.T)).clamp_min(0.0)
            df1 += float(self.L - torch.sum(lam1 * v / (1.0 + lam1 * v)))

        h = torch.linalg.eigvalsh(self.likelihood_score_hessians(theta, A)).clamp_min(0.0)  # [m, K]
        denom = h + lam2 * self.qdiag[:, None]
        ratio = torch.where(denom > 0, h / torch.where(denom > 0, denom, torch.ones_like(denom)),
                            torch.ones_like(denom))
        df2 = float(ratio.sum())
        return df1, df2

    def initialize(self, K):
        theta0, A0 = initialize(self.P, self.basis, K)
        return _t(theta0, self.device), _t(A0, self.device)

    def fit(self, K, opts=None, init=None, logger=None, writer=None):
        """Alternate score and basis sweeps, refreshing lambda1 and lambda2 after each sweep.

        Return:
            ModelFit; converged is False when max_iter is reached.
        Raises:
            NumericError: the objective became NaN/Inf.
        """
        opts = opts or FitOptions()
        if init is None:
            theta, A = self.initialize(K)
        else:
            theta, A = _t(init[0], self.device), _t(init[1], self.device)
        lam1 = float(opts.lambda1)
        lam2 = float(opts.lambda2) if opts.spatial else 0.0
        tune1 = opts.tune_lambda1
        tune2 = opts.spatial and opts.tune_lambda2
        self.ridge_repairs = 0
        self.cap_hits = 0

        trace = []
        streak = 0
        converged = False
        it = 0
        with tqdm(range(1, opts.max_iter + 1), unit="sweep", disable=not opts.progress) as sweeps:
            for it in sweeps:
                start = float(self.objective(theta, A, lam1, lam2))
                A = self.update_scores(theta, A, lam2, opts.delta_max)
                theta = self.update_basis_coeffs(theta, A, lam1, opts.delta_max)
                nll, p1, p2 = (float(v) for v in self.parts(theta, A))
                end = 2.0 * nll + lam1 * p1 + lam2 * p2
                if not np.isfinite(end):
                    raise NumericError(f"objective is {end} after sweep {it} (lambda1={lam1}, lambda2={lam2})")
                df1, df2 = self.degrees_of_freedom(theta, A, lam1, lam2)
                record = TraceRecord(iteration=it, objective_start=start, objective=end, nll=nll, pen1=p1, pen2=p2,
                                     lambda1=lam1, lambda2=lam2, df1=df1, df2=df2, aic=2.0 * nll + 2.0 * (df1 + df2))
                trace.append(record)
                if writer is not None:
                    writer.add_scalar("Objective/fit", end, it)
                    writer.add_scalar("NLL/fit", nll, it)
                    writer.add_scalar("Lambda1/fit", lam1, it)
                    writer.add_scalar("Lambda2/fit", lam2, it)
                    writer.add_scalar("DF/fit", df1 + df2, it)
                    writer.add_scalar("AIC/fit", record.aic, it)
                sweeps.set_postfix(obj=end, lam1=lam1, lam2=lam2)

                new1 = update_lambda(lam1, (df1 - (opts.a - 1)) / p1 if p1 > 0 else np.inf) if tune1 else lam1
                new2 = update_lambda(lam2, df2 / p2 if p2 > 0 else np.inf) if tune2 else lam2
                rel_obj = abs(start - end) / max(abs(start), 1e-300)
                rel_lam = max([abs(new - old) / old for new, old, on in ((new1, lam1, tune1), (new2, lam2, tune2))
                               if on] or [0.0])
                streak = streak + 1 if (rel_obj < opts.tol and rel_lam < opts.lambda_tol) else 0
                if streak >= opts.patience:
                    converged = True
                    break
                if it < opts.max_iter:
                    lam1, lam2 = new1, new2

        fit = ModelFit(theta=_np(theta), A=_np(A), lambda1=lam1, lambda2=lam2, spatial=opts.spatial, trace=trace,
                       converged=converged, iterations=it, ridge_repairs=self.ridge_repairs, cap_hits=self.cap_hits)
        if logger is not None:
            logger.log(f"fit {'converged' if converged else 'stopped without convergence'} after {it} sweeps: "
                       f"objective {fit.objective:.6f}, lambda1 {lam1:.4g}, lambda2 {lam2:.4g}, AIC {fit.aic:.4f}")
            if self.ridge_repairs:
                logger.warn(f"{self.ridge_repairs} singular Newton systems were ridge-repaired")
            if self.cap_hits:
                logger.warn(f"log-SDF exceeded +-700 in {self.cap_hits} evaluations; the fit is ill-conditioned")
        return fit


def update_lambda(old, proposal):
    ''' clamp to [1e-8, 1e8]; average with the previous value when the proposal moves by more than 10x '''
    new = float(np.clip(proposal, LAMBDA_MIN, LAMBDA_MAX)) if np.isfinite(proposal) else LAMBDA_MAX
    if old > 0 and (new > OSCILLATION * old or new < old / OSCILLATION):
        new = 0.5 * (new + old)
    return float(np.clip(new, LAMBDA_MIN, LAMBDA_MAX))


def _sign_fix(right, left=None):
    ''' flip singular pairs so the largest-magnitude entry of each right vector is positive '''
    idx = np.argmax(np.abs(right), axis=0)
    signs = np.sign(right[idx, np.arange(right.shape[1])])
    signs[signs == 0] = 1.0
    return right * signs, (left * signs if left is not None else None)


# functional forms over numpy inputs
def whittle_nll(theta, A, P, basis):
    return float(Whittle_Loss(_t(basis.B), _t(P.I))(_t(theta), _t(A)))


def pen1(theta, R):
    return float(roughness(_t(theta), _t(R)))


def pen2(A, graph):
    return float(fusion(_t(A), _t(graph.difference_matrix())))


def objective(theta, A, P, basis, graph, lam1, lam2):
    est = CollectiveEstimator(P, basis, graph)
    return float(est.objective(_t(theta), _t(A), lam1, lam2))


def update_scores(theta, A, P, basis, graph, lam2, delta_max=30):
    est = CollectiveEstimator(P, basis, graph)
    return _np(est.update_scores(_t(theta), _t(A), lam2, delta_max))


def update_basis_coeffs(theta, A, P, basis, lam1, delta_max=30):
    est = CollectiveEstimator(P, basis, None)
    return _np(est.update_basis_coeffs(_t(theta), _t(A), lam1, delta_max))


def initialize(P, basis, K):
    """Rank-K start from the smoothed log-periodogram U_sp = P D Q^T.

    Theta0 = (B^T B)^{-1} B^T P_K D_K, A0 = Q_K, so B Theta0 A0^T is the best rank-K approximation of U_sp.
    """
    if K < 1 or K > min(P.m, basis.L):
        raise ValidationError(f"K = {K} must lie in 1..min(m, L) = 1..{min(P.m, basis.L)}")
    U_sp = smoothed_log_periodogram(P, basis)
    left, d, right_t = np.linalg.svd(U_sp, full_matrices=False)
    A0, left_k = _sign_fix(right_t[:K].T, left[:, :K])
    theta0 = basis.coefficients(left_k * d[:K])
    return theta0, A0


def fit(P, basis, graph, K, opts=None, init=None, logger=None, writer=None, device=None):
    est = CollectiveEstimator(P, basis, graph if (opts is None or opts.spatial) else None, device=device)
    return est.fit(K, opts, init=init, logger=logger, writer=writer)


def degrees_of_freedom(model_fit, P, basis, graph):
    est = CollectiveEstimator(P, basis, graph)
    return est.degrees_of_freedom(_t(model_fit.theta), _t(model_fit.A), model_fit.lambda1, model_fit.lambda2)


def aic(model_fit, P, basis, graph):
    ''' 2 * whittle_nll + 2 (df1 + df2) at the estimates '''
    df1, df2 = degrees_of_freedom(model_fit, P, basis, graph)
    return 2.0 * whittle_nll(model_fit.theta, model_fit.A, P, basis) + 2.0 * (df1 + df2)


def weighted_scores(model_fit, basis):
    """Re-factor U = B Theta A^T by its thin SVD and weight the score columns by w_k / sum(w).

    The rank-K surface is unchanged; A becomes the K leading right singular vectors.
    """
    C = basis.B @ model_fit.theta
    Qc, Rc = np.linalg.qr(C)
    Qa, Ra = np.linalg.qr(model_fit.A)
    u, w, vt = np.linalg.svd(Rc @ Ra.T)
    right, left = _sign_fix(Qa @ vt.T, Qc @ u)
    total = w.sum()
    weights = w / total if total > 0 else np.full(w.shape, 1.0 / w.size)
    theta = basis.coefficients(left * w)
    return WeightedScores(Astar=right * weights, singular_values=w, weights=weights, A=right, theta=theta)


def save_fit(model_fit, out_dir, meta=None):
    os.makedirs(out_dir, exist_ok=True)
    write_matrix(os.path.join(out_dir, 'Theta.csv'), model_fit.theta)
    write_matrix(os.path.join(out_dir, 'A.csv'), model_fit.A)
    write_rows(os.path.join(out_dir, 'trace.csv'), TraceRecord.header(), [r.row() for r in model_fit.trace])
    record = {'K': model_fit.K, 'lambda1': repr(model_fit.lambda1), 'lambda2': repr(model_fit.lambda2),
              'spatial': 'on' if model_fit.spatial else 'off', 'iterations': model_fit.iterations,
              'converged': int(model_fit.converged), 'objective': repr(model_fit.objective),
              'aic': repr(model_fit.aic), 'ridge_repairs': model_fit.ridge_repairs, 'cap_hits': model_fit.cap_hits}
    if model_fit.trace:
        record['df1'] = repr(model_fit.trace[-1].df1)
        record['df2'] = repr(model_fit.trace[-1].df2)
    record.update(meta or {})
    write_kv(os.path.join(out_dir, 'meta.txt'), record)


def load_fit(fit_dir):
    ''' Return: (ModelFit, meta dict of strings) '''
    meta = read_kv(os.path.join(fit_dir, 'meta.txt'))
    theta = read_matrix(os.path.join(fit_dir, 'Theta.csv'))
    A = read_matrix(os.path.join(fit_dir, 'A.csv'))
    trace = []
    trace_path = os.path.join(fit_dir, 'trace.csv')
    if os.path.isfile(trace_path):
        rows = read_matrix(trace_path, skip_header=True) if os.path.getsize(trace_path) > 0 else np.zeros((0, 11))
        for row in rows:
            trace.append(TraceRecord(int(row[0]), *(float(v) for v in row[1:])))
    model_fit = ModelFit(theta=theta, A=A, lambda1=float(meta['lambda1']), lambda2=float(meta['lambda2']),
                         spatial=meta.get('spatial', 'on') == 'on', trace=trace,
                         converged=meta.get('converged') == '1', iterations=int(meta.get('iterations', 0)))
    return model_fit, meta
