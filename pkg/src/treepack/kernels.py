"""Hot numeric kernels: switching-chain inner loop and nibble conflict pass.

Two backends share one source of truth: the functions below are written in
the numba-compatible subset of numpy and compiled with @njit unless
TREEPACK_NO_NUMBA=1, in which case the same Python code runs uncompiled.
bench/bench_kernels.py compares the two.

All kernels take explicit integer seeds; no global RNG state leaks in.
"""

import numpy as np

from ._accel import USE_NUMBA


def _mzmz_count_impl(match, zadj):
    # number of 4-cycles alternating between the matching and Z:
    # pairs x != x' with (x, match(x')) in Z and (x', match(x)) in Z
    n = match.shape[0]
    total = 0
    for x in range(n):
        for xp in range(x + 1, n):
            if zadj[x, match[xp]] and zadj[xp, match[x]]:
                total += 1
    return total


def _chain_run_impl(match, badj, zadj, steps, seed, burnin, thin, samples):
    """Run the matching switching chain in place for `steps` proposals.

    A proposal picks two or three distinct left vertices (coin flip) and
    cyclically swaps their partners, accepted only when the incoming
    edges exist and none closes a new alternating 4-cycle with Z.  Both
    move sizes are needed: 3-cycles alone preserve permutation parity
    and would confine the walk to half the state space.  Records the
    state every `thin` steps after `burnin` into `samples` (pass a
    (0, n) array to disable).  Returns the number of accepted swaps.
    """
    np.random.seed(seed)
    n = match.shape[0]
    n_samples = samples.shape[0]
    si = 0
    accepted = 0
    for step in range(steps):
        pair_move = np.random.randint(2) == 0
        x1 = np.random.randint(n)
        x2 = np.random.randint(n)
        x3 = np.random.randint(n)
        if pair_move:
            x3 = x2
            ok = x1 != x2
        else:
            ok = x1 != x2 and x1 != x3 and x2 != x3
        if ok:
            y1 = match[x1]
            y2 = match[x2]
            y3 = match[x3]
            if badj[x1, y3] and badj[x2, y1] and (pair_move or badj[x3, y2]):
                match[x1] = y3
                match[x2] = y1
                if not pair_move:
                    match[x3] = y2
                valid = True
                for k in range(3):
                    if k == 0:
                        x, y = x1, y3
                    elif k == 1:
                        x, y = x2, y1
                    else:
                        if pair_move:
                            break
                        x, y = x3, y2
                    for xp in range(n):
                        if xp != x and zadj[x, match[xp]] and zadj[xp, y]:
                            valid = False
                            break
                    if not valid:
                        break
                if valid:
                    accepted += 1
                else:
                    match[x1] = y1
                    match[x2] = y2
                    if not pair_move:
                        match[x3] = y3
        if si < n_samples and step >= burnin and (step - burnin) % thin == 0:
            for j in range(n):
                samples[si, j] = match[j]
            si += 1
    return accepted


def _nibble_survivors_impl(edge_off, edge_verts, act_ids, n_verts):
    """Mark which activated hyperedges survive the clash rule.

    An activated edge survives iff every one of its vertices is touched by
    exactly one activated edge this round.
    """
    counts = np.zeros(n_verts, dtype=np.int64)
    for i in range(act_ids.shape[0]):
        e = act_ids[i]
        for j in range(edge_off[e], edge_off[e + 1]):
            counts[edge_verts[j]] += 1
    keep = np.zeros(act_ids.shape[0], dtype=np.bool_)
    for i in range(act_ids.shape[0]):
        e = act_ids[i]
        ok = True
        for j in range(edge_off[e], edge_off[e + 1]):
            if counts[edge_verts[j]] != 1:
                ok = False
                break
        keep[i] = ok
    return keep


if USE_NUMBA:
    from numba import njit

    mzmz_count = njit(cache=True)(_mzmz_count_impl)
    chain_run = njit(cache=True)(_chain_run_impl)
    nibble_survivors = njit(cache=True)(_nibble_survivors_impl)
else:
    mzmz_count = _mzmz_count_impl
    chain_run = _chain_run_impl
    nibble_survivors = _nibble_survivors_impl


def no_samples(n):
    """Placeholder sample buffer for chain_run when recording is off."""
    return np.empty((0, n), dtype=np.int32)
