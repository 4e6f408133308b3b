"""Shared fixtures builders for the protocol-level tests."""

import numpy as np

from anofel import trainer
from anofel.protocol import Deployment, TaskSpec
from anofel.rng import Rng

N_FEATURES = 4
N_CLASSES = 2
CENTERS = trainer.blob_centers(N_FEATURES, N_CLASSES, np.random.default_rng(0), 3.0)


def blobs(n, seed):
    return trainer.gaussian_blobs(n, N_FEATURES, N_CLASSES, np.random.default_rng(seed), centers=CENTERS)


def make_deployment(keys, committees=1, lr=0.5, seed="dep", n_features=N_FEATURES, task_dt=b"", **kw):
    template = trainer.init_model(trainer.LOGREG, n_features, N_CLASSES)
    tasks = [TaskSpec(chr(ord("A") + i), template, lr, task_dt) for i in range(committees)]
    return Deployment(Rng(seed), tasks, keys[:committees], **kw)
