import torch
from torch.nn.modules.loss import _Loss


def roughness(theta, R):
    ''' PEN_1 = tr(Theta^T R Theta) '''
    return torch.sum(theta * (R @ theta))


def fusion(A, Dmat):
    ''' PEN_2 = sum_i |alpha_i - mean_{j in N_i} alpha_j|^2 with Dmat = I - M '''
    D = Dmat @ A
    return torch.sum(D * D)


class Roughness_Loss(_Loss):

    def __init__(self, R):
        super(Roughness_Loss, self).__init__(True)
        self.R = R

    def forward(self, theta):
        return roughness(theta, self.R)


class Fusion_Loss(_Loss):
    """Neighbour fusion penalty on the score matrix.

    Args:
        Dmat (Tensor [m, m]): I - M, M the row-normalised rook adjacency.
    """

    def __init__(self, Dmat):
        super(Fusion_Loss, self).__init__(True)
        self.Dmat = Dmat
        self.Q = Dmat.T @ Dmat

    def forward(self, A):
        return fusion(A, self.Dmat)
