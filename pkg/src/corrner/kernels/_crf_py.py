"""Pure-numpy implementation of the chain-CRF dynamic programs.

Semantics shared with the compiled kernel:

  score(y) = begin[y_0] + sum_t em[t, y_t] + sum_t trans[y_t, y_{t+1}] + end[y_n]

- log_partition: log-sum-exp over all paths (forward recursion).
- forward_backward: log-partition plus posterior expectations — per-position
  tag marginals and the summed adjacent-pair marginals.
- viterbi: argmax path; ties resolved to the lexicographically smallest tag
  index sequence via a backward max recursion and a forward first-argmax walk.

All inputs are float64; `em` is (n, L), `trans` (L, L), `begin`/`end` (L,).
"""

import numpy as np

BACKEND = "python"


def _lse(x, axis):
    m = x.max(axis=axis)
    return m + np.log(np.exp(x - np.expand_dims(m, axis)).sum(axis=axis))


def _forward(em, trans, begin):
    n, L = em.shape
    alpha = np.empty((n, L))
    alpha[0] = begin + em[0]
    for t in range(1, n):
        alpha[t] = em[t] + _lse(alpha[t - 1][:, None] + trans, axis=0)
    return alpha


def log_partition(em, trans, begin, end):
    alpha = _forward(em, trans, begin)
    return float(_lse(alpha[-1] + end, axis=0))


def forward_backward(em, trans, begin, end):
    n, L = em.shape
    alpha = _forward(em, trans, begin)
    log_z = float(_lse(alpha[-1] + end, axis=0))

    gamma = np.empty((n, L))
    gamma[-1] = end
    for t in range(n - 2, -1, -1):
        gamma[t] = _lse(trans + (em[t + 1] + gamma[t + 1])[None, :], axis=1)

    unary = np.exp(alpha + gamma - log_z)
    pair_sum = np.zeros((L, L))
    for t in range(n - 1):
        pair_sum += np.exp(
            alpha[t][:, None] + trans + (em[t + 1] + gamma[t + 1])[None, :] - log_z
        )
    return log_z, unary, pair_sum


def viterbi(em, trans, begin, end):
    n, L = em.shape
    beta = np.empty((n, L))
    beta[-1] = em[-1] + end
    for t in range(n - 2, -1, -1):
        beta[t] = em[t] + (trans + beta[t + 1][None, :]).max(axis=1)

    path = np.empty(n, dtype=np.int32)
    total = begin + beta[0]
    path[0] = int(np.argmax(total))  # first argmax = smallest tag index
    for t in range(n - 1):
        path[t + 1] = int(np.argmax(trans[path[t]] + beta[t + 1]))
    return path, float(total[path[0]])
