"""Compiled inner loops for shard-local bit deletion.

The kernels operate on a flat uint64 word array and are restricted to the
word range of a single shard, so concurrent calls on disjoint shards are
safe. They release the GIL and are compiled lazily on first use; when numba
is unavailable the callers fall back to the pure-Python shift loops in
``sharded_bitmap``.
"""

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


_ONE = np.uint64(1)
_SHIFT1 = np.uint64(1)
_SHIFT63 = np.uint64(63)


@njit(cache=True, nogil=True)
def multi_delete_scalar(words, base, nwords, offsets):
    """Delete bits at descending in-shard offsets, one word at a time.

    Each delete shifts every bit above the offset down one position within
    words [base, base+nwords); the vacated top slot fills with zero.
    """
    last = base + nwords - 1
    for t in range(offsets.shape[0]):
        off = offsets[t]
        w = base + (off >> 6)
        b0 = np.uint64(off & 63)
        low = (_ONE << b0) - _ONE if b0 else np.uint64(0)
        cur = words[w]
        carry = (words[w + 1] & _ONE) << _SHIFT63 if w < last else np.uint64(0)
        words[w] = (cur & low) | ((cur >> _SHIFT1) & ~low) | carry
        w += 1
        while w <= last:
            nxt = (words[w + 1] << _SHIFT63) if w < last else np.uint64(0)
            words[w] = (words[w] >> _SHIFT1) | nxt
            w += 1


@njit(cache=True, nogil=True)
def multi_delete_lanes(words, base, nwords, offsets):
    """Same contract as multi_delete_scalar, shifting four words per step.

    Per step: four lanes shift right by one, each lane's top bit is blended
    in from the next lane's bottom bit (a one-lane permute), and the final
    lane takes its carry from the word following the block.
    """
    last = base + nwords - 1
    for t in range(offsets.shape[0]):
        off = offsets[t]
        w = base + (off >> 6)
        b0 = np.uint64(off & 63)
        low = (_ONE << b0) - _ONE if b0 else np.uint64(0)
        cur = words[w]
        carry = (words[w + 1] & _ONE) << _SHIFT63 if w < last else np.uint64(0)
        words[w] = (cur & low) | ((cur >> _SHIFT1) & ~low) | carry
        w += 1
        while w + 3 <= last:
            a0 = words[w]
            a1 = words[w + 1]
            a2 = words[w + 2]
            a3 = words[w + 3]
            nxt = words[w + 4] if w + 4 <= last else np.uint64(0)
            words[w] = (a0 >> _SHIFT1) | (a1 << _SHIFT63)
            words[w + 1] = (a1 >> _SHIFT1) | (a2 << _SHIFT63)
            words[w + 2] = (a2 >> _SHIFT1) | (a3 << _SHIFT63)
            words[w + 3] = (a3 >> _SHIFT1) | (nxt << _SHIFT63)
            w += 4
        while w <= last:
            nxt = (words[w + 1] << _SHIFT63) if w < last else np.uint64(0)
            words[w] = (words[w] >> _SHIFT1) | nxt
            w += 1


@njit(cache=True, nogil=True)
def single_delete(words, starts, shard, base, nwords, offset):
    """Fused single delete: one in-shard shift plus the start decrements."""
    last = base + nwords - 1
    w = base + (offset >> 6)
    b0 = np.uint64(offset & 63)
    low = (_ONE << b0) - _ONE if b0 else np.uint64(0)
    cur = words[w]
    carry = (words[w + 1] & _ONE) << _SHIFT63 if w < last else np.uint64(0)
    words[w] = (cur & low) | ((cur >> _SHIFT1) & ~low) | carry
    w += 1
    while w <= last:
        nxt = (words[w + 1] << _SHIFT63) if w < last else np.uint64(0)
        words[w] = (words[w] >> _SHIFT1) | nxt
        w += 1
    for i in range(shard + 1, len(starts)):
        starts[i] -= 1


def warm_up():
    """Trigger JIT compilation so first timed use is not skewed."""
    if not HAVE_NUMBA:
        return
    scratch = np.zeros(8, dtype=np.uint64)
    offs = np.array([1, 0], dtype=np.int64)
    multi_delete_scalar(scratch, 0, 8, offs)
    multi_delete_lanes(scratch, 0, 8, offs)
    single_delete(scratch, np.array([0, 256], dtype=np.int64), 0, 0, 4, 3)
