# SPDX-License-Identifier: Apache-2.0
# Copyright 2026 The evkit Authors
"""Emotion-robust speaker embeddings: synthetic corpus, E-Vector model, training and evaluation."""

from ._core import *  # noqa: F401,F403
from ._core import NumericError, EVECTOR_DIM  # noqa: F401

__version__ = "0.1.0"
