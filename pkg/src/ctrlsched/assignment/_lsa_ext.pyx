# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled shortest augmenting path solver.

Mirrors ``_lsa_py.solve_lsa`` step for step, including the scan order that
fixes tie-breaking.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def solve_lsa(const double[:, ::1] cost):
    cdef Py_ssize_t n = cost.shape[0]
    cdef Py_ssize_t m = cost.shape[1]
    if n > m:
        raise ValueError("cost must have no more rows than columns")
    cdef double[::1] u = np.zeros(n + 1)
    cdef double[::1] v = np.zeros(m + 1)
    cdef double[::1] minv = np.empty(m + 1)
    cdef Py_ssize_t[::1] p = np.zeros(m + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] way = np.zeros(m + 1, dtype=np.intp)
    cdef char[::1] used = np.zeros(m + 1, dtype=np.int8)
    cdef Py_ssize_t i, j, i0, j0, j1
    cdef double delta, cur, ui0

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(m + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            ui0 = u[i0]
            delta = INFINITY
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    col_of_row = [0] * n
    for j in range(1, m + 1):
        if p[j]:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row
