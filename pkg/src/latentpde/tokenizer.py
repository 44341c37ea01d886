"""Patch-average tokenization and supervised sample assembly.

A token frame is the vector of patch means of one field, flattened in the
same block order as the rows of the sparse tokenizer matrix, so applying
:func:`tokenize` and multiplying by
:func:`latentpde.lattice_ops.build_tokenizer_matrix` agree to rounding.
For stacked wave states only the amplitude block is read.
"""

import numpy as np

from .errors import ParameterError


def tokenize(state: np.ndarray, patch: int) -> np.ndarray:
    """Token frame of shape ((n/patch)^2,) from one (n, n) or (2, n, n) state."""
    state = np.asarray(state, dtype=float)
    if state.ndim == 3:
        if state.shape[0] != 2:
            raise ParameterError(f"stacked state must have 2 components, got {state.shape}")
        state = state[0]
    if state.ndim != 2 or state.shape[0] != state.shape[1]:
        raise ParameterError(f"expected a square field, got shape {state.shape}")
    n = state.shape[0]
    if patch < 1 or n % patch != 0:
        raise ParameterError(f"patch {patch} must divide grid size {n}")
    blocks = n // patch
    return state.reshape(blocks, patch, blocks, patch).mean(axis=(1, 3)).ravel()


def tokenize_trajectory(frames: np.ndarray, patch: int) -> np.ndarray:
    """Tokenize every frame: (T, n, n) or (T, 2, n, n) -> (T, m)."""
    frames = np.asarray(frames, dtype=float)
    if frames.ndim == 4:
        frames = frames[:, 0]
    if frames.ndim != 3 or frames.shape[1] != frames.shape[2]:
        raise ParameterError(f"expected stacked square frames, got shape {frames.shape}")
    n = frames.shape[1]
    if patch < 1 or n % patch != 0:
        raise ParameterError(f"patch {patch} must divide grid size {n}")
    blocks = n // patch
    t = frames.shape[0]
    return frames.reshape(t, blocks, patch, blocks, patch).mean(axis=(2, 4)).reshape(t, -1)


def sliding_histories(tokens: np.ndarray, k: int) -> np.ndarray:
    """All windows of k consecutive token frames: (T, m) -> (T-k+1, k, m)."""
    tokens = np.asarray(tokens, dtype=float)
    if tokens.ndim != 2:
        raise ParameterError(f"expected a (T, m) token array, got shape {tokens.shape}")
    if k < 1 or k > tokens.shape[0]:
        raise ParameterError(f"history length {k} outside 1..{tokens.shape[0]}")
    view = np.lib.stride_tricks.sliding_window_view(tokens, (k, tokens.shape[1]))
    return view[:, 0].copy()


def build_histories(frames: np.ndarray, k: int, patch: int):
    """Forecasting samples from one trajectory.

    Returns ``(histories, token_targets, field_targets)`` where history r
    covers frames ``r .. r+k-1`` and both targets are frame ``r+k`` (its
    token frame and the raw field).  A trajectory of T frames yields
    T - k samples; T <= k raises.  Shapes: (S, k, m), (S, m), and
    (S, n, n) or (S, 2, n, n).
    """
    frames = np.asarray(frames, dtype=float)
    if frames.shape[0] <= k:
        raise ParameterError(f"need more than k={k} frames, got {frames.shape[0]}")
    tokens = tokenize_trajectory(frames, patch)
    histories = sliding_histories(tokens[:-1], k)
    return histories, tokens[k:], frames[k:]


def build_reconstruction_pairs(frames: np.ndarray, k: int, patch: int):
    """Super-resolution samples: history ending at frame s paired with the
    raw field at that same frame s.

    Returns ``(histories, field_targets)`` of shapes (S, k, m) and
    (S, n, n) (the amplitude block for wave states), with S = T - k + 1
    and s running over k-1 .. T-1.
    """
    frames = np.asarray(frames, dtype=float)
    if frames.shape[0] < k:
        raise ParameterError(f"need at least k={k} frames, got {frames.shape[0]}")
    tokens = tokenize_trajectory(frames, patch)
    histories = sliding_histories(tokens, k)
    targets = frames[k - 1:, 0] if frames.ndim == 4 else frames[k - 1:]
    return histories, targets
