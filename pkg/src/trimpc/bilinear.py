"""Bilinear map descriptors and their exact mod-2^n kernels.

A BilinearSpec names a map f: A x B -> C that is linear in each argument
over the integers: elementwise products, scalar-vector products, matrix
multiplication (with transposed-operand modes for the backward passes), and
2D convolution forward/backward. The backward maps of matmul and conv are
themselves bilinear in (upstream gradient, other operand), which is what
lets one triple protocol serve the whole training graph.

Convolution uses NHWC input (B, m, n, C), filter (C, r, s, D), output
(B, m', n', D).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError
from .ring import FixedTensor, RingParams

KINDS = (
    "elementwise_mul",
    "scalar_vec_mul",
    "matmul",
    "conv2d_fwd",
    "conv2d_bwd_input",
    "conv2d_bwd_filter",
)

# matmul operand arrangements: plain product, a @ b^T, b^T @ a
MATMUL_MODES = ("ab", "a_bT", "bT_a")


@dataclass(frozen=True)
class ConvShape:
    """Conv2D geometry; m', n' must divide out exactly."""

    B: int
    m: int
    n: int
    C: int
    r: int
    s: int
    D: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        for name in ("B", "m", "n", "C", "r", "s", "D"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.stride < 1 or self.padding < 0:
            raise ValueError("bad stride/padding")
        if (self.m + 2 * self.padding - self.r) % self.stride != 0:
            raise ShapeMismatchError("output height is not integral")
        if (self.n + 2 * self.padding - self.s) % self.stride != 0:
            raise ShapeMismatchError("output width is not integral")

    @property
    def m_out(self) -> int:
        return (self.m + 2 * self.padding - self.r) // self.stride + 1

    @property
    def n_out(self) -> int:
        return (self.n + 2 * self.padding - self.s) // self.stride + 1

    @property
    def input_shape(self):
        return (self.B, self.m, self.n, self.C)

    @property
    def filter_shape(self):
        return (self.C, self.r, self.s, self.D)

    @property
    def output_shape(self):
        return (self.B, self.m_out, self.n_out, self.D)


@dataclass(frozen=True)
class BilinearSpec:
    kind: str
    shape_a: tuple[int, ...]
    shape_b: tuple[int, ...]
    conv: ConvShape | None = None
    matmul_mode: str = "ab"

    def __post_init__(self):
        object.__setattr__(self, "shape_a", tuple(int(d) for d in self.shape_a))
        object.__setattr__(self, "shape_b", tuple(int(d) for d in self.shape_b))
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.kind == "matmul" and self.matmul_mode not in MATMUL_MODES:
            raise ValueError(f"unknown matmul mode {self.matmul_mode!r}")
        self.shape_c  # validates

    @property
    def shape_c(self) -> tuple[int, ...]:
        k = self.kind
        if k == "elementwise_mul":
            if self.shape_a != self.shape_b:
                raise ShapeMismatchError(
                    f"elementwise shapes {self.shape_a} vs {self.shape_b}"
                )
            return self.shape_a
        if k == "scalar_vec_mul":
            if self.shape_a == ():
                return self.shape_b
            if (
                len(self.shape_a) == 2
                and self.shape_a[1] == 1
                and len(self.shape_b) == 2
                and self.shape_b[0] == self.shape_a[0]
            ):
                return self.shape_b
            raise ShapeMismatchError(
                f"scalar_vec shapes {self.shape_a} x {self.shape_b}"
            )
        if k == "matmul":
            if len(self.shape_a) != 2 or len(self.shape_b) != 2:
                raise ShapeMismatchError("matmul needs 2-D operands")
            am, ak = self.shape_a
            bk, bp = self.shape_b
            if self.matmul_mode == "ab":
                if ak != bk:
                    raise ShapeMismatchError("inner dims differ")
                return (am, bp)
            if self.matmul_mode == "a_bT":
                if ak != bp:
                    raise ShapeMismatchError("inner dims differ (a @ b^T)")
                return (am, bk)
            # bT_a
            if am != bk:
                raise ShapeMismatchError("inner dims differ (b^T @ a)")
            return (bp, ak)
        cv = self.conv
        if cv is None:
            raise ShapeMismatchError("conv spec needs geometry")
        if k == "conv2d_fwd":
            expect = (cv.input_shape, cv.filter_shape)
            out = cv.output_shape
        elif k == "conv2d_bwd_input":
            expect = (cv.output_shape, cv.filter_shape)
            out = cv.input_shape
        else:  # conv2d_bwd_filter
            expect = (cv.output_shape, cv.input_shape)
            out = cv.filter_shape
        if (self.shape_a, self.shape_b) != expect:
            raise ShapeMismatchError(
                f"{k} expects {expect}, got {(self.shape_a, self.shape_b)}"
            )
        return out

    @property
    def size_a(self) -> int:
        return int(np.prod(self.shape_a, dtype=np.int64)) if self.shape_a else 1

    @property
    def size_b(self) -> int:
        return int(np.prod(self.shape_b, dtype=np.int64)) if self.shape_b else 1

    @property
    def size_c(self) -> int:
        sc = self.shape_c
        return int(np.prod(sc, dtype=np.int64)) if sc else 1


def conv_fwd_spec(conv: ConvShape) -> BilinearSpec:
    return BilinearSpec("conv2d_fwd", conv.input_shape, conv.filter_shape, conv)


def matmul_spec(m: int, k: int, p: int) -> BilinearSpec:
    return BilinearSpec("matmul", (m, k), (k, p))


def backward_specs(fwd: BilinearSpec) -> tuple[BilinearSpec, BilinearSpec]:
    """Specs for the gradient maps of a forward matmul or conv.

    Returns (bwd_input, bwd_param): f_bi(dZ, param) -> dInput and
    f_bf(dZ, input) -> dParam. Neither takes the tensor it differentiates
    with respect to; that independence is the input to the triple protocol.
    """
    if fwd.kind == "matmul":
        if fwd.matmul_mode != "ab":
            raise ShapeMismatchError("backward of a derived matmul spec")
        (m, k), (_, p) = fwd.shape_a, fwd.shape_b
        bwd_a = BilinearSpec("matmul", (m, p), (k, p), matmul_mode="a_bT")
        bwd_b = BilinearSpec("matmul", (m, p), (m, k), matmul_mode="bT_a")
        return bwd_a, bwd_b
    if fwd.kind == "conv2d_fwd":
        cv = fwd.conv
        bwd_i = BilinearSpec("conv2d_bwd_input", cv.output_shape, cv.filter_shape, cv)
        bwd_f = BilinearSpec("conv2d_bwd_filter", cv.output_shape, cv.input_shape, cv)
        return bwd_i, bwd_f
    raise ShapeMismatchError(f"no backward specs for kind {fwd.kind!r}")


# -- kernels on raw word arrays (exact mod 2^n) ------------------------------


def _mask(w: np.ndarray, params: RingParams) -> np.ndarray:
    return w & params.word_mask if params.n < 64 else w


def _pad_spatial(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))


def _conv_fwd_words(x: np.ndarray, w: np.ndarray, cv: ConvShape) -> np.ndarray:
    xp = _pad_spatial(x, cv.padding)
    st = cv.stride
    out = np.zeros((cv.B, cv.m_out, cv.n_out, cv.D), dtype=np.uint64)
    for u in range(cv.r):
        for v in range(cv.s):
            xs = xp[
                :,
                u : u + (cv.m_out - 1) * st + 1 : st,
                v : v + (cv.n_out - 1) * st + 1 : st,
                :,
            ]
            out += np.tensordot(xs, w[:, u, v, :], axes=([3], [0]))
    return out


def _conv_bwd_input_words(dz: np.ndarray, w: np.ndarray, cv: ConvShape) -> np.ndarray:
    st, pad = cv.stride, cv.padding
    dxp = np.zeros((cv.B, cv.m + 2 * pad, cv.n + 2 * pad, cv.C), dtype=np.uint64)
    for u in range(cv.r):
        for v in range(cv.s):
            patch = np.tensordot(dz, w[:, u, v, :], axes=([3], [1]))
            dxp[
                :,
                u : u + (cv.m_out - 1) * st + 1 : st,
                v : v + (cv.n_out - 1) * st + 1 : st,
                :,
            ] += patch
    if pad:
        dxp = dxp[:, pad : pad + cv.m, pad : pad + cv.n, :]
    return dxp


def _conv_bwd_filter_words(dz: np.ndarray, x: np.ndarray, cv: ConvShape) -> np.ndarray:
    xp = _pad_spatial(x, cv.padding)
    st = cv.stride
    dw = np.zeros((cv.C, cv.r, cv.s, cv.D), dtype=np.uint64)
    for u in range(cv.r):
        for v in range(cv.s):
            xs = xp[
                :,
                u : u + (cv.m_out - 1) * st + 1 : st,
                v : v + (cv.n_out - 1) * st + 1 : st,
                :,
            ]
            dw[:, u, v, :] = np.tensordot(xs, dz, axes=([0, 1, 2], [0, 1, 2]))
    return dw


def eval_words(
    spec: BilinearSpec, wa: np.ndarray, wb: np.ndarray, params: RingParams
) -> np.ndarray:
    """Apply the map to flat word arrays; returns flat shape_c words."""
    a = wa.reshape(spec.shape_a if spec.shape_a else ())
    b = wb.reshape(spec.shape_b)
    k = spec.kind
    if k == "elementwise_mul":
        out = a * b
    elif k == "scalar_vec_mul":
        out = (a * b) if spec.shape_a == () else (a.reshape(-1, 1) * b)
    elif k == "matmul":
        if spec.matmul_mode == "ab":
            out = a @ b
        elif spec.matmul_mode == "a_bT":
            out = a @ b.T
        else:
            out = b.T @ a
    elif k == "conv2d_fwd":
        out = _conv_fwd_words(a, b, spec.conv)
    elif k == "conv2d_bwd_input":
        out = _conv_bwd_input_words(a, b, spec.conv)
    else:
        out = _conv_bwd_filter_words(a, b, spec.conv)
    return _mask(np.ascontiguousarray(out, dtype=np.uint64).reshape(-1), params)


def eval(spec: BilinearSpec, a: FixedTensor, b: FixedTensor) -> FixedTensor:  # noqa: A001
    """Plaintext evaluation; output scale is scale_a + scale_b."""
    if a.shape != spec.shape_a or b.shape != spec.shape_b:
        raise ShapeMismatchError(
            f"operands {(a.shape, b.shape)} do not match spec "
            f"{(spec.shape_a, spec.shape_b)}"
        )
    if a.params != b.params:
        raise ShapeMismatchError("ring params differ")
    words = eval_words(spec, a.words, b.words, a.params)
    return FixedTensor(words, spec.shape_c, a.scale + b.scale, a.params)


# -- im2col expansion (the matrix-form baseline) ------------------------------


def im2col_matrix(x: np.ndarray, cv: ConvShape) -> np.ndarray:
    """Unroll conv input into (B*m'*n', r*s*C); columns ordered (c, u, v)
    to match filter.reshape(C*r*s, D)."""
    xp = _pad_spatial(x, cv.padding)
    st = cv.stride
    cols = np.empty((cv.B, cv.m_out, cv.n_out, cv.C, cv.r, cv.s), dtype=np.uint64)
    for u in range(cv.r):
        for v in range(cv.s):
            cols[..., u, v] = xp[
                :,
                u : u + (cv.m_out - 1) * st + 1 : st,
                v : v + (cv.n_out - 1) * st + 1 : st,
                :,
            ]
    return cols.reshape(cv.B * cv.m_out * cv.n_out, cv.C * cv.r * cv.s)


def im2col_baseline_shapes(spec: BilinearSpec) -> tuple[int, int, int]:
    """(rows, inner, cols) of the equivalent matrix multiplication used by
    im2col-style systems for each conv direction (stride 1, no padding)."""
    cv = spec.conv
    if cv is None:
        raise ShapeMismatchError("baseline shapes need a conv spec")
    if cv.stride != 1 or cv.padding != 0:
        raise ShapeMismatchError("im2col baseline is defined for stride 1, pad 0")
    if spec.kind == "conv2d_fwd":
        return (cv.B * cv.m_out * cv.n_out, cv.r * cv.s * cv.C, cv.D)
    if spec.kind == "conv2d_bwd_input":
        # full correlation of the padded upstream gradient with the filter
        return (cv.B * cv.m * cv.n, cv.r * cv.s * cv.D, cv.C)
    if spec.kind == "conv2d_bwd_filter":
        return (cv.r * cv.s * cv.C, cv.B * cv.m_out * cv.n_out, cv.D)
    raise ShapeMismatchError(f"no im2col baseline for {spec.kind!r}")


def im2col_expand(
    spec: BilinearSpec, wa: np.ndarray, wb: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Word matrices (rows x inner), (inner x cols) whose product equals the
    conv result (rows-major reshape of shape_c)."""
    cv = spec.conv
    rows, inner, cols = im2col_baseline_shapes(spec)
    if spec.kind == "conv2d_fwd":
        A = im2col_matrix(wa.reshape(cv.input_shape), cv)
        B = wb.reshape(cv.C * cv.r * cv.s, cv.D)
        return A, B
    if spec.kind == "conv2d_bwd_input":
        dz = wa.reshape(cv.output_shape)
        dzp = np.pad(dz, ((0, 0), (cv.r - 1, cv.r - 1), (cv.s - 1, cv.s - 1), (0, 0)))
        full = ConvShape(
            cv.B, cv.m + cv.r - 1, cv.n + cv.s - 1, cv.D, cv.r, cv.s, cv.C
        )
        A = im2col_matrix(dzp, full)
        w = wb.reshape(cv.filter_shape)
        wrot = w[:, ::-1, ::-1, :]  # (C, r, s, D) flipped spatially
        B = wrot.transpose(3, 1, 2, 0).reshape(cv.D * cv.r * cv.s, cv.C)
        return A, np.ascontiguousarray(B)
    # conv2d_bwd_filter: (rsC x B m'n') @ (B m'n' x D)
    A = im2col_matrix(wb.reshape(cv.input_shape), cv).T
    B = wa.reshape(cv.B * cv.m_out * cv.n_out, cv.D)
    return np.ascontiguousarray(A), B


def im2col_result_to_spec_shape(spec: BilinearSpec, prod: np.ndarray) -> np.ndarray:
    """Reshape the baseline matmul product back to flat shape_c words."""
    cv = spec.conv
    if spec.kind == "conv2d_fwd":
        return prod.reshape(-1)
    if spec.kind == "conv2d_bwd_input":
        return prod.reshape(cv.B, cv.m, cv.n, cv.C).reshape(-1)
    return prod.reshape(cv.C, cv.r, cv.s, cv.D).reshape(-1)
