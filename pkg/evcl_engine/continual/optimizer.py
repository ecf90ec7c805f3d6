
from typing import List

import numpy as np

from ..autograd.node import Node
from ..config import Config


class Adam:
    def __init__(self, parameters: List[Node], lr: float = Config.LEARNING_RATE,
                 betas=Config.ADAM_BETAS, eps: float = Config.ADAM_EPS):
        self.parameters = parameters
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.parameters]
        self.v = [np.zeros_like(p.value) for p in self.parameters]

    def step(self):
        self.t += 1
        beta1, beta2 = self.betas
        bc1 = 1.0 - beta1 ** self.t
        bc2 = 1.0 - beta2 ** self.t

        for i, p in enumerate(self.parameters):
            g = p.grad
            if g is None:
                continue
            self.m[i] = beta1 * self.m[i] + (1 - beta1) * g
            self.v[i] = beta2 * self.v[i] + (1 - beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.parameters:
            p.grad = None
