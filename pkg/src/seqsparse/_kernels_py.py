"""Pure-numpy stacked soft-threshold recurrence (fallback backend).

Array layout shared with the compiled backend, all C-contiguous float64:

    W, S    (K, N, N)     recurrence / cross-layer matrices (S[0] unused)
    drive   (T, K, B, N)  input contribution added to each pre-activation
    b       (K, N)        per-layer thresholds
    h0      (K, B, N)     initial recurrence states
    pre/hid (T, K, B, N)  pre-activations and soft-thresholded states

With ``sista`` set, every layer's recurrence reads the last layer of the
previous step (``h0[K-1]`` at ``t = 0``); otherwise layer ``k`` reads its own
previous state.
"""
import numpy as np

NAME = "python"


def _soft(z, b):
    return np.sign(z) * np.maximum(np.abs(z) - b, 0.0)


def forward_recurrence(W, S, drive, b, h0, sista):
    T, K, B, N = drive.shape
    pre = np.empty_like(drive)
    hid = np.empty_like(drive)
    for t in range(T):
        for k in range(K):
            src_layer = K - 1 if sista else k
            src = hid[t - 1, src_layer] if t else h0[src_layer]
            z = drive[t, k] + src @ W[k].T
            if k:
                z += hid[t, k - 1] @ S[k].T
            pre[t, k] = z
            hid[t, k] = _soft(z, b[k])
    return pre, hid


def backward_recurrence(W, S, b, h0, pre, hid, g_out, sista):
    """Reverse pass of :func:`forward_recurrence`.

    ``g_out`` (T, B, N) is the loss gradient with respect to the last layer's
    states. Returns ``(g_pre, gW, gS, gb, gh0)``; ``g_pre`` doubles as the
    gradient with respect to ``drive``.
    """
    T, K, B, N = pre.shape
    g_pre = np.zeros_like(pre)
    gW = np.zeros_like(W)
    gS = np.zeros_like(S)
    gb = np.zeros_like(b)
    gh0 = np.zeros_like(h0)
    carry = np.zeros((K, B, N))
    for t in range(T - 1, -1, -1):
        nxt = np.zeros((K, B, N)) if t else gh0
        down = None
        for k in range(K - 1, -1, -1):
            g = carry[k].copy()
            if k == K - 1:
                g += g_out[t]
            if down is not None:
                g += down
            z = pre[t, k]
            gp = np.where(np.abs(z) > b[k], g, 0.0)
            g_pre[t, k] = gp
            gb[k] -= (np.sign(z) * gp).sum(axis=0)
            src_layer = K - 1 if sista else k
            src = hid[t - 1, src_layer] if t else h0[src_layer]
            gW[k] += gp.T @ src
            nxt[src_layer] += gp @ W[k]
            if k:
                gS[k] += gp.T @ hid[t, k - 1]
                down = gp @ S[k]
        carry = nxt
    return g_pre, gW, gS, gb, gh0
