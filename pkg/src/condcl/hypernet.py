"""Condition operators and the networks that produce them.

A condition embedding is turned into a linear operator that projects
sentence embeddings into a condition-specific subspace. The generator is a
single affine layer, either emitting a dense nh x nh matrix ("full") or a
factored pair of nh x nk matrices whose product W1 @ W2.T is never
materialized ("lowrank"). Two composition baselines live here as well:
elementwise product ("hadamard") and a dropout + linear merge of the
concatenated pair ("concat").

Checkpoint format: 8-byte magic ``HYPERCL1``, an 8-byte little-endian
unsigned header length, a UTF-8 JSON header {mode, nh, nk, dropout_p,
tensors: [{name, shape, offset}]}, then little-endian float32 payloads at
the given byte offsets, in manifest order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionMismatchError, FormatError
from .linalg import as_vector

__all__ = [
    "MODES",
    "HyperNetParams",
    "ConditionOperator",
    "diagonal_operator",
    "init_params",
    "generate_condition_matrix",
    "project",
    "hadamard_compose",
    "concat_compose",
    "param_count",
    "operator_frobenius_normalized",
    "operator_payload_bytes",
    "densify",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
]

MODES = ("full", "lowrank", "hadamard", "concat")
CHECKPOINT_MAGIC = b"HYPERCL1"

INIT_WEIGHT_STD = 0.02
DEFAULT_RANK_DIVISOR = 12
DEFAULT_DROPOUT_P = 0.1


@dataclass
class HyperNetParams:
    """Learnable parameters for one composition mode.

    Fields for inactive modes are None. nk is meaningful only for lowrank;
    dropout_p only for concat.
    """

    mode: str
    nh: int
    nk: int | None = None
    U: np.ndarray | None = None
    U_bias: np.ndarray | None = None
    U1: np.ndarray | None = None
    U1_bias: np.ndarray | None = None
    U2: np.ndarray | None = None
    U2_bias: np.ndarray | None = None
    Wcat: np.ndarray | None = None
    dropout_p: float = 0.0

    def tensors(self) -> dict[str, np.ndarray]:
        """Learnable tensors in canonical (checkpoint manifest) order."""
        if self.mode == "full":
            return {"U": self.U, "U_bias": self.U_bias}
        if self.mode == "lowrank":
            return {
                "U1": self.U1,
                "U1_bias": self.U1_bias,
                "U2": self.U2,
                "U2_bias": self.U2_bias,
            }
        if self.mode == "concat":
            return {"Wcat": self.Wcat}
        return {}


@dataclass
class ConditionOperator:
    """A conditioning transform in dense, factored, or diagonal form.

    factored represents W1 @ W2.T; diagonal represents diag(d).
    """

    form: str
    W: np.ndarray | None = None
    W1: np.ndarray | None = None
    W2: np.ndarray | None = None
    d: np.ndarray | None = None

    @property
    def nh(self) -> int:
        if self.form == "dense":
            return self.W.shape[0]
        if self.form == "factored":
            return self.W1.shape[0]
        return self.d.shape[0]


def diagonal_operator(h_c) -> ConditionOperator:
    """Operator equivalent to the elementwise product with h_c."""
    return ConditionOperator(form="diagonal", d=as_vector(h_c, "h_c"))


def _default_nk(nh: int) -> int:
    return max(1, nh // DEFAULT_RANK_DIVISOR)


def init_params(
    mode: str,
    nh: int,
    nk: int | None = None,
    seed: int = 0,
    dropout_p: float = DEFAULT_DROPOUT_P,
    zero_bias: bool = False,
) -> HyperNetParams:
    """Seeded parameter initialization.

    Full mode starts at (approximately) the identity operator: weights are
    small Gaussians and the bias is the flattened identity, so an untrained
    model roughly preserves sentence embeddings. Lowrank cannot represent
    the identity for nk < nh, so it starts from small random values. Set
    zero_bias=True for the no-bias generator variant.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    if nh <= 0:
        raise ValueError("nh must be positive")
    rng = np.random.default_rng(seed)
    if mode == "full":
        U = rng.normal(0.0, INIT_WEIGHT_STD, size=(nh * nh, nh))
        bias = np.zeros(nh * nh) if zero_bias else np.eye(nh).reshape(nh * nh)
        return HyperNetParams(mode=mode, nh=nh, U=U, U_bias=bias)
    if mode == "lowrank":
        nk = _default_nk(nh) if nk is None else int(nk)
        if nk > nh or nk < 1:
            raise ValueError(f"lowrank requires 1 <= nk <= nh, got nk={nk}, nh={nh}")
        bias_std = INIT_WEIGHT_STD / np.sqrt(nk)
        U1 = rng.normal(0.0, INIT_WEIGHT_STD, size=(nh * nk, nh))
        U1_bias = np.zeros(nh * nk) if zero_bias else rng.normal(0.0, bias_std, size=nh * nk)
        U2 = rng.normal(0.0, INIT_WEIGHT_STD, size=(nh * nk, nh))
        U2_bias = np.zeros(nh * nk) if zero_bias else rng.normal(0.0, bias_std, size=nh * nk)
        return HyperNetParams(
            mode=mode, nh=nh, nk=nk, U1=U1, U1_bias=U1_bias, U2=U2, U2_bias=U2_bias
        )
    if mode == "concat":
        if not 0.0 <= dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        Wcat = rng.normal(0.0, INIT_WEIGHT_STD, size=(nh, 2 * nh))
        return HyperNetParams(mode=mode, nh=nh, Wcat=Wcat, dropout_p=float(dropout_p))
    return HyperNetParams(mode="hadamard", nh=nh)


# The formula helpers below are written against the operator protocol shared
# by ndarrays and autodiff Tensors (left operand carries the parameters), so
# the inference path and the differentiable path cannot drift apart.


def full_operator_matrix(U, U_bias, h_c, nh: int):
    return (U @ h_c + U_bias).reshape((nh, nh))


def lowrank_operator_factors(U1, U1_bias, U2, U2_bias, h_c, nh: int, nk: int):
    W1 = (U1 @ h_c + U1_bias).reshape((nh, nk))
    W2 = (U2 @ h_c + U2_bias).reshape((nh, nk))
    return W1, W2


def factored_apply(W1, W2, h_s):
    # Evaluate right-to-left: the dense nh x nh product is never formed.
    return W1 @ (W2.T @ h_s)


def generate_condition_matrix(params: HyperNetParams, h_c) -> ConditionOperator:
    """Generate the conditioning operator for one condition embedding."""
    h_c = as_vector(h_c, "h_c")
    if h_c.shape[0] != params.nh:
        raise DimensionMismatchError(
            f"h_c has dim {h_c.shape[0]}, generator expects {params.nh}"
        )
    if params.mode == "full":
        W = full_operator_matrix(params.U, params.U_bias, h_c, params.nh)
        return ConditionOperator(form="dense", W=W)
    if params.mode == "lowrank":
        W1, W2 = lowrank_operator_factors(
            params.U1, params.U1_bias, params.U2, params.U2_bias, h_c, params.nh, params.nk
        )
        return ConditionOperator(form="factored", W1=W1, W2=W2)
    raise ValueError(f"mode {params.mode!r} does not generate condition operators")


def project(op: ConditionOperator, h_s) -> np.ndarray:
    """Apply a condition operator to a sentence embedding."""
    h_s = as_vector(h_s, "h_s")
    if op.form == "dense":
        if op.W.shape[1] != h_s.shape[0]:
            raise DimensionMismatchError("dense operator/vector dim mismatch")
        return op.W @ h_s
    if op.form == "factored":
        if op.W1.shape[0] != h_s.shape[0] or op.W2.shape[0] != h_s.shape[0]:
            raise DimensionMismatchError("factored operator/vector dim mismatch")
        return factored_apply(op.W1, op.W2, h_s)
    if op.form == "diagonal":
        if op.d.shape[0] != h_s.shape[0]:
            raise DimensionMismatchError("diagonal operator/vector dim mismatch")
        return op.d * h_s
    raise ValueError(f"unknown operator form {op.form!r}")


def hadamard_compose(h_c, h_s) -> np.ndarray:
    """Elementwise composition of condition and sentence embeddings."""
    h_c = as_vector(h_c, "h_c")
    h_s = as_vector(h_s, "h_s")
    if h_c.shape != h_s.shape:
        raise DimensionMismatchError("hadamard_compose: dim mismatch")
    return h_c * h_s


def dropout_mask(rng: np.random.Generator, size: int, p: float) -> np.ndarray:
    """Inverted-dropout scaling mask: entries are 0 or 1/(1-p)."""
    if p == 0.0:
        return np.ones(size)
    keep = rng.random(size) >= p
    return keep.astype(np.float64) / (1.0 - p)


def concat_compose(
    params: HyperNetParams,
    h_c,
    h_s,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Concatenate condition and sentence, apply dropout, halve via Wcat."""
    if params.mode != "concat":
        raise ValueError("concat_compose requires concat-mode params")
    h_c = as_vector(h_c, "h_c")
    h_s = as_vector(h_s, "h_s")
    if h_c.shape[0] != params.nh or h_s.shape[0] != params.nh:
        raise DimensionMismatchError("concat_compose: dim mismatch")
    x = np.concatenate([h_c, h_s])
    if training and params.dropout_p > 0.0:
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        x = x * dropout_mask(rng, x.shape[0], params.dropout_p)
    return params.Wcat @ x


def param_count(params: HyperNetParams) -> int:
    """Exact number of learnable scalars."""
    return sum(t.size for t in params.tensors().values())


def densify(op: ConditionOperator) -> np.ndarray:
    """Materialize the operator as a dense matrix (diagnostics/tests only)."""
    if op.form == "dense":
        return np.array(op.W)
    if op.form == "factored":
        return op.W1 @ op.W2.T
    return np.diag(op.d)


def operator_frobenius_normalized(op: ConditionOperator) -> float:
    """Frobenius norm normalized by sqrt(#stored scalars) per form.

    The factored norm uses ||W1 W2^T||_F^2 = trace((W1^T W1)(W2^T W2)), so
    the dense product is never formed.
    """
    if op.form == "dense":
        nh = op.W.shape[0]
        return float(np.linalg.norm(op.W)) / float(np.sqrt(nh * nh))
    if op.form == "factored":
        nh, nk = op.W1.shape
        gram = (op.W1.T @ op.W1) @ (op.W2.T @ op.W2)
        sq = max(float(np.trace(gram)), 0.0)
        return float(np.sqrt(sq)) / float(np.sqrt(2 * nh * nk))
    nh = op.d.shape[0]
    return float(np.linalg.norm(op.d)) / float(np.sqrt(nh))


def operator_payload_bytes(op: ConditionOperator, element_bytes: int = 8) -> int:
    """Stored payload size for cache accounting (keys excluded)."""
    if op.form == "dense":
        return op.W.size * element_bytes
    if op.form == "factored":
        return (op.W1.size + op.W2.size) * element_bytes
    return op.d.size * element_bytes


def save_checkpoint(
    path: str | Path, params: HyperNetParams, extras: dict[str, np.ndarray] | None = None
) -> None:
    """Write params (plus optional named extra tensors) at float32 precision."""
    path = Path(path)
    tensors = dict(params.tensors())
    for name, arr in (extras or {}).items():
        if name in tensors:
            raise ValueError(f"extra tensor name collides with a parameter: {name!r}")
        tensors[name] = np.asarray(arr, dtype=np.float64)
    manifest = []
    payloads = []
    offset = 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(data)
        offset += len(data)
    header = {
        "mode": params.mode,
        "nh": params.nh,
        "nk": params.nk,
        "dropout_p": params.dropout_p,
        "tensors": manifest,
    }
    header_bytes = json.dumps(header).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for data in payloads:
            fh.write(data)


def load_checkpoint(path: str | Path) -> tuple[HyperNetParams, dict[str, np.ndarray]]:
    """Read a checkpoint; returns (params, extra tensors)."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {blob[:8]!r}")
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated checkpoint header")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    try:
        header = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable checkpoint header: {exc}") from exc
    mode = header["mode"]
    if mode not in MODES:
        raise FormatError(f"{path}: unknown mode {mode!r}")
    payload = blob[16 + header_len :]
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(payload):
            raise FormatError(f"{path}: payload truncated for tensor {entry['name']!r}")
        raw = np.frombuffer(payload[start:end], dtype="<f4")
        tensors[entry["name"]] = raw.astype(np.float64).reshape(shape)
    params = HyperNetParams(
        mode=mode,
        nh=int(header["nh"]),
        nk=None if header.get("nk") is None else int(header["nk"]),
        dropout_p=float(header.get("dropout_p") or 0.0),
    )
    expected = {
        "full": ("U", "U_bias"),
        "lowrank": ("U1", "U1_bias", "U2", "U2_bias"),
        "concat": ("Wcat",),
        "hadamard": (),
    }[mode]
    for name in expected:
        if name not in tensors:
            raise FormatError(f"{path}: checkpoint missing tensor {name!r} for mode {mode!r}")
        setattr(params, name, tensors.pop(name))
    _validate_shapes(params, path)
    return params, tensors


def _validate_shapes(params: HyperNetParams, path) -> None:
    nh, nk = params.nh, params.nk
    try:
        if params.mode == "full":
            assert params.U.shape == (nh * nh, nh)
            assert params.U_bias.shape == (nh * nh,)
        elif params.mode == "lowrank":
            assert nk is not None and 1 <= nk <= nh
            for w in (params.U1, params.U2):
                assert w.shape == (nh * nk, nh)
            for b in (params.U1_bias, params.U2_bias):
                assert b.shape == (nh * nk,)
        elif params.mode == "concat":
            assert params.Wcat.shape == (nh, 2 * nh)
    except AssertionError:
        raise FormatError(f"{path}: tensor shapes inconsistent with header") from None


def params_dim_check(params: HyperNetParams, provider_dim: int) -> None:
    if params.nh != provider_dim:
        raise ConfigError(
            f"checkpoint dimension {params.nh} does not match provider dimension {provider_dim}"
        )
