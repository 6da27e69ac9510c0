"""Labeled substream derivation from a single master seed.

Each noise source (durations, per-job gradients, per-message quantizer
randomness, client assignment) gets an independent stream, so tests can
hold one source fixed while varying another.
"""

from __future__ import annotations

import numpy as np

LBL_DURATION = 1
LBL_GRADIENT = 2
LBL_CLIENT_Q = 3
LBL_SERVER_Q = 4
LBL_ASSIGN = 5
LBL_GENERIC = 6


def substream(master_seed: int, label: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, label, index]))


def duration_rng(master_seed: int) -> np.random.Generator:
    return substream(master_seed, LBL_DURATION)


def gradient_rng(master_seed: int, job_id: int) -> np.random.Generator:
    return substream(master_seed, LBL_GRADIENT, job_id)


def client_quantizer_rng(master_seed: int, job_id: int) -> np.random.Generator:
    return substream(master_seed, LBL_CLIENT_Q, job_id)


def server_quantizer_rng(master_seed: int, step: int) -> np.random.Generator:
    return substream(master_seed, LBL_SERVER_Q, step)


def assignment_rng(master_seed: int) -> np.random.Generator:
    return substream(master_seed, LBL_ASSIGN)
