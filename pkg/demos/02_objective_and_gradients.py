"""The weighted softmax objective, its gradients, and the NDCG surrogate bounds."""

import numpy as np

from wclsm import model as M
from wclsm import objective as O
from wclsm.text import TrigramVocabulary, hash_text

rng = np.random.default_rng(0)

# Posterior of the positive against J negatives, sharpened by gamma.
print(O.softmax_posterior(0.6, [0.2, 0.1, -0.3], gamma=1.0))
print(O.softmax_posterior(0.6, [0.2, 0.1, -0.3], gamma=10.0))

# Pairwise view: the lambda gradient with |dDCG| = y at rank 1 is the
# derivative of y * log(1 + exp(s- - s+)) with respect to s-.
y, s_pos, s_neg, h = 0.4, 0.3, 0.1, 1e-6
fd = y * (O.pairwise_loss(s_pos, s_neg + h) - O.pairwise_loss(s_pos, s_neg - h)) / (2 * h)
print(O.lambda_gradient(s_pos, s_neg, O.lambda_scale(y, 1)), fd)

# A tiny model and a weighted batch.
texts = ["running shoes", "trail running shoes", "cheap flights", "dog food", "paris hotel"]
vocab = TrigramVocabulary.build(texts)
params = M.init_params(M.Hyper(vocab.size, 3, 8, 4), seed=1)
seq = [hash_text(t, vocab) for t in texts]
ex = [O.TrainingExample(seq[0], seq[1], (seq[2], seq[3]), weight=0.8),
      O.TrainingExample(seq[2], seq[4], (seq[0], seq[3]), weight=0.1)]
report, grads = O.batch_loss_and_grad(params, ex, gamma=5.0)
print("loss", report.loss, "grad norm", grads.norm())

# One central-difference probe on a conv weight.
i = (3, int(np.flatnonzero(seq[0].windows.toarray()[0])[0]))
f = lambda p: O.batch_loss_and_grad(p, ex, 5.0, need_grad=False)[0].loss
w_plus, w_minus = params.conv_weight.copy(), params.conv_weight.copy()
w_plus[i] += 1e-5
w_minus[i] -= 1e-5
num = (f(M.ModelParams(w_plus, params.conv_bias, params.sem_weight, params.sem_bias, params.hyper))
       - f(M.ModelParams(w_minus, params.conv_bias, params.sem_weight, params.sem_bias, params.hyper))) / 2e-5
print("analytic", grads.conv_weight[i], "numeric", num)

# 1 - NDCG sits below both pairwise bounds, and the label-weighted bound is tighter.
labels = rng.integers(0, 4, 8).astype(float)
scores = rng.normal(size=8)
b = O.ndcg_bound_check(labels, scores)
print(b)
