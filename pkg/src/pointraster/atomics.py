"""Lock-free atomic primitives for numba-jitted render kernels.

Numba's CPU target has no public atomics, so the operations needed by the
render passes (64-bit min/add/exchange, 32-bit min/CAS, relaxed loads and
release stores) are emitted directly as LLVM ``atomicrmw``/``cmpxchg``
instructions through small intrinsics.  All of them operate on elements of a
1-D numpy array shared between worker threads; kernels that use them must be
compiled with ``nogil=True`` so threads actually interleave.
"""

import ctypes

import numpy as np
from llvmlite import ir
from numba import njit, types
from numba.core import cgutils
from numba.extending import intrinsic


def _element_ptr(context, builder, aryty, ary_val, idx):
    ary = context.make_array(aryty)(context, builder, ary_val)
    return cgutils.get_item_pointer(context, builder, aryty, ary, [idx])


def _make_rmw(op, numba_ty):
    """Build an intrinsic ``f(arr, idx, val) -> old`` for one atomicrmw op."""

    @intrinsic
    def rmw(typingctx, arr, idx, val):
        if not isinstance(arr, types.Array) or arr.dtype != numba_ty:
            return None
        sig = numba_ty(arr, types.intp, numba_ty)

        def codegen(context, builder, signature, args):
            arr_v, idx_v, val_v = args
            ptr = _element_ptr(context, builder, signature.args[0], arr_v, idx_v)
            return builder.atomic_rmw(op, ptr, val_v, "monotonic")

        return sig, codegen

    return rmw


# fetch-style read-modify-writes; each returns the value held before the op
atomic_min_u64 = _make_rmw("umin", types.uint64)
atomic_add_u64 = _make_rmw("add", types.uint64)
atomic_xchg_u64 = _make_rmw("xchg", types.uint64)
atomic_min_u32 = _make_rmw("umin", types.uint32)


def _make_load(numba_ty, width_bytes):
    @intrinsic
    def load(typingctx, arr, idx):
        if not isinstance(arr, types.Array) or arr.dtype != numba_ty:
            return None
        sig = numba_ty(arr, types.intp)

        def codegen(context, builder, signature, args):
            arr_v, idx_v = args
            ptr = _element_ptr(context, builder, signature.args[0], arr_v, idx_v)
            return builder.load_atomic(ptr, "monotonic", width_bytes)

        return sig, codegen

    return load


# relaxed loads: safe for the early-z pre-read because packed framebuffer
# values only ever decrease within a pass
atomic_load_u64 = _make_load(types.uint64, 8)
atomic_load_u32 = _make_load(types.uint32, 4)


def _make_store(numba_ty, width_bytes, ordering):
    @intrinsic
    def store(typingctx, arr, idx, val):
        if not isinstance(arr, types.Array) or arr.dtype != numba_ty:
            return None
        sig = types.void(arr, types.intp, numba_ty)

        def codegen(context, builder, signature, args):
            arr_v, idx_v, val_v = args
            ptr = _element_ptr(context, builder, signature.args[0], arr_v, idx_v)
            builder.store_atomic(val_v, ptr, ordering, width_bytes)
            return context.get_dummy_value()

        return sig, codegen

    return store


atomic_store_u64 = _make_store(types.uint64, 8, "monotonic")
# release ordering so stores done under a pixel lock are visible to the
# next thread that acquires it
atomic_store_release_u32 = _make_store(types.uint32, 4, "release")


@intrinsic
def atomic_cas_u32(typingctx, arr, idx, expected, desired):
    """Compare-and-swap on a uint32 array element; returns the old value."""
    if not isinstance(arr, types.Array) or arr.dtype != types.uint32:
        return None
    sig = types.uint32(arr, types.intp, types.uint32, types.uint32)

    def codegen(context, builder, signature, args):
        arr_v, idx_v, cmp_v, val_v = args
        ptr = _element_ptr(context, builder, signature.args[0], arr_v, idx_v)
        pair = builder.cmpxchg(ptr, cmp_v, val_v, "acq_rel", "monotonic")
        return builder.extract_value(pair, 0)

    return sig, codegen


@intrinsic
def f32_bits(typingctx, x):
    """Round a float64 to float32 and return its IEEE-754 bit pattern."""
    if x != types.float64:
        return None
    sig = types.uint32(types.float64)

    def codegen(context, builder, signature, args):
        f32 = builder.fptrunc(args[0], ir.FloatType())
        return builder.bitcast(f32, ir.IntType(32))

    return sig, codegen


@intrinsic
def f32_from_bits(typingctx, b):
    """Interpret a uint32 as float32 bits and widen to float64."""
    if b != types.uint32:
        return None
    sig = types.float64(types.uint32)

    def codegen(context, builder, signature, args):
        f32 = builder.bitcast(args[0], ir.FloatType())
        return builder.fpext(f32, ir.DoubleType())

    return sig, codegen


# OS yield for spin loops: on oversubscribed (or single-core) machines a
# thread holding a pixel lock or a pending overflow exchange may be
# preempted, so spinners must give the scheduler a chance to run it.
_libc = ctypes.CDLL(None, use_errno=False)
sched_yield = _libc.sched_yield
sched_yield.restype = ctypes.c_int
sched_yield.argtypes = []


# thin python-callable wrappers, mainly for direct tests of the primitives
@njit(nogil=True)
def min_u64(arr, idx, val):
    return atomic_min_u64(arr, idx, val)


@njit(nogil=True)
def add_u64(arr, idx, val):
    return atomic_add_u64(arr, idx, val)


@njit(nogil=True)
def xchg_u64(arr, idx, val):
    return atomic_xchg_u64(arr, idx, val)


@njit(nogil=True)
def cas_u32(arr, idx, expected, desired):
    return atomic_cas_u32(arr, idx, expected, desired)
