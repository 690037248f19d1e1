# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stacked soft-threshold recurrence.

Same contract and array layout as ``_kernels_py``; matrix products go through
BLAS ``dgemm`` on contiguous (B, N) slabs so no Python code runs inside the
time/layer loops.
"""
import numpy as np

from scipy.linalg.cython_blas cimport dgemm

NAME = "compiled"

cdef double ONE = 1.0


cdef inline void acc_x_wt(double* x, double* w, double* out, int nb, int n) noexcept nogil:
    # out(B,N) += x(B,N) @ w(N,N).T
    dgemm(b"T", b"N", &n, &nb, &n, &ONE, w, &n, x, &n, &ONE, out, &n)


cdef inline void acc_x_w(double* x, double* w, double* out, int nb, int n) noexcept nogil:
    # out(B,N) += x(B,N) @ w(N,N)
    dgemm(b"N", b"N", &n, &nb, &n, &ONE, w, &n, x, &n, &ONE, out, &n)


cdef inline void acc_gt_x(double* g, double* x, double* out, int nb, int n) noexcept nogil:
    # out(N,N) += g(B,N).T @ x(B,N)
    dgemm(b"N", b"T", &n, &n, &nb, &ONE, x, &n, g, &n, &ONE, out, &n)


cdef inline double soft(double z, double b) noexcept nogil:
    if z > 0.0:
        return z - b if z - b > 0.0 else 0.0
    if z < 0.0:
        return z + b if -z - b > 0.0 else 0.0
    return 0.0


def forward_recurrence(double[:, :, ::1] W, double[:, :, ::1] S, double[:, :, :, ::1] drive,
                       double[:, ::1] b, double[:, :, ::1] h0, bint sista):
    cdef int T = drive.shape[0], K = drive.shape[1], B = drive.shape[2], N = drive.shape[3]
    pre_arr = np.array(drive, dtype=np.float64, order="C", copy=True)
    hid_arr = np.empty_like(pre_arr)
    if T == 0 or B == 0 or N == 0:
        return pre_arr, hid_arr
    cdef double[:, :, :, ::1] pre = pre_arr
    cdef double[:, :, :, ::1] hid = hid_arr
    cdef int t, k, i, j, src_layer
    cdef double* src
    cdef double thr
    with nogil:
        for t in range(T):
            for k in range(K):
                src_layer = K - 1 if sista else k
                if t > 0:
                    src = &hid[t - 1, src_layer, 0, 0]
                else:
                    src = &h0[src_layer, 0, 0]
                acc_x_wt(src, &W[k, 0, 0], &pre[t, k, 0, 0], B, N)
                if k > 0:
                    acc_x_wt(&hid[t, k - 1, 0, 0], &S[k, 0, 0], &pre[t, k, 0, 0], B, N)
                for i in range(B):
                    for j in range(N):
                        hid[t, k, i, j] = soft(pre[t, k, i, j], b[k, j])
    return pre_arr, hid_arr


def backward_recurrence(double[:, :, ::1] W, double[:, :, ::1] S, double[:, ::1] b,
                        double[:, :, ::1] h0, double[:, :, :, ::1] pre, double[:, :, :, ::1] hid,
                        double[:, :, ::1] g_out, bint sista):
    cdef int T = pre.shape[0], K = pre.shape[1], B = pre.shape[2], N = pre.shape[3]
    g_pre_arr = np.zeros((T, K, B, N))
    gW_arr = np.zeros((K, N, N))
    gS_arr = np.zeros((K, N, N))
    gb_arr = np.zeros((K, N))
    gh0_arr = np.zeros((K, B, N))
    if T == 0 or B == 0 or N == 0:
        return g_pre_arr, gW_arr, gS_arr, gb_arr, gh0_arr
    carry_arr = np.zeros((K, B, N))
    nxt_arr = np.zeros((K, B, N))
    g_arr = np.zeros((B, N))
    down_arr = np.zeros((B, N))
    cdef double[:, :, :, ::1] g_pre = g_pre_arr
    cdef double[:, :, ::1] gW = gW_arr
    cdef double[:, :, ::1] gS = gS_arr
    cdef double[:, ::1] gb = gb_arr
    cdef double[:, :, ::1] gh0 = gh0_arr
    cdef double[:, :, ::1] carry = carry_arr
    cdef double[:, :, ::1] nxt = nxt_arr
    cdef double[:, ::1] g = g_arr
    cdef double[:, ::1] down = down_arr
    cdef double[:, :, ::1] tmp
    cdef int t, k, i, j, src_layer
    cdef bint have_down
    cdef double z, gv, bk
    cdef double* src
    cdef double* dst
    with nogil:
        for t in range(T - 1, -1, -1):
            for k in range(K):
                for i in range(B):
                    for j in range(N):
                        nxt[k, i, j] = 0.0
            have_down = False
            for k in range(K - 1, -1, -1):
                for i in range(B):
                    for j in range(N):
                        gv = carry[k, i, j]
                        if k == K - 1:
                            gv = gv + g_out[t, i, j]
                        if have_down:
                            gv = gv + down[i, j]
                        z = pre[t, k, i, j]
                        bk = b[k, j]
                        if z > bk or -z > bk:
                            g_pre[t, k, i, j] = gv
                            if z > 0.0:
                                gb[k, j] -= gv
                            elif z < 0.0:
                                gb[k, j] += gv
                        else:
                            g_pre[t, k, i, j] = 0.0
                src_layer = K - 1 if sista else k
                if t > 0:
                    src = &hid[t - 1, src_layer, 0, 0]
                    dst = &nxt[src_layer, 0, 0]
                else:
                    src = &h0[src_layer, 0, 0]
                    dst = &gh0[src_layer, 0, 0]
                acc_gt_x(&g_pre[t, k, 0, 0], src, &gW[k, 0, 0], B, N)
                acc_x_w(&g_pre[t, k, 0, 0], &W[k, 0, 0], dst, B, N)
                if k > 0:
                    acc_gt_x(&g_pre[t, k, 0, 0], &hid[t, k - 1, 0, 0], &gS[k, 0, 0], B, N)
                    for i in range(B):
                        for j in range(N):
                            down[i, j] = 0.0
                    acc_x_w(&g_pre[t, k, 0, 0], &S[k, 0, 0], &down[0, 0], B, N)
                    have_down = True
            for k in range(K):
                for i in range(B):
                    for j in range(N):
                        carry[k, i, j] = nxt[k, i, j]
    return g_pre_arr, gW_arr, gS_arr, gb_arr, gh0_arr
