import torch
from torch.nn.modules.loss import _Loss

U_CAP = 700.0


def log_sdf(theta, A, B):
    ''' U = B Theta A^T, [n, m]; column i is u_i on the frequency grid '''
    return B @ theta @ A.T


def capped(U):
    ''' clamp log-SDF values to +-700 before exponentiation; also returns whether the cap was hit '''
    hit = bool((U.abs() > U_CAP).any())
    return U.clamp(-U_CAP, U_CAP), hit


def loss(theta, A, I, B):
    # u_ij + I_ij exp(-u_ij), summed over subregions i and frequencies j
    U, _ = capped(log_sdf(theta, A, B))  # (n, m)
    return torch.sum(U.T + I * torch.exp(-U.T))


def per_subregion(U, I):
    ''' Whittle terms summed over frequencies for each subregion, U [n, m], I [m, n] -> [m] '''
    U, _ = capped(U)
    return torch.sum(U.T + I * torch.exp(-U.T), dim=1)


class Whittle_Loss(_Loss):
    """Negative Whittle log-likelihood sum_i sum_j [u_i(w_j) + I_i(w_j) exp(-u_i(w_j))].

    Args:
        B (Tensor [n, L]): tensor B-spline design on the frequency grid.
        I (Tensor [m, n]): clamped periodogram ordinates.
    """

    def __init__(self, B, I):
        super(Whittle_Loss, self).__init__(True)
        self.B = B
        self.I = I

    def forward(self, theta, A):
        return loss(theta, A, self.I, self.B)
