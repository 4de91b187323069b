"""Binary tensor checkpoints plus key=value config sidecars.

Layout: magic `PADR1\n`, u32-LE tensor count, then per tensor a u16-LE name
length, the utf-8 name, u8 ndim, ndim u32-LE dims, and f32-LE row-major data.
"""

import struct
from collections import OrderedDict

import numpy as np

from padrec.errors import ConfigError
from padrec.model.config import DraftConfig, TargetConfig

MAGIC = b"PADR1\n"


def save_tensors(path, tensors: "OrderedDict[str, np.ndarray]") -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            enc = name.encode("utf-8")
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<B", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(data.tobytes())


def load_tensors(path) -> "OrderedDict[str, np.ndarray]":
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ConfigError(f"{path}: bad checkpoint magic")
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            dims = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
            n_items = int(np.prod(dims)) if ndim else 1
            raw = fh.read(4 * n_items)
            if len(raw) != 4 * n_items:
                raise ConfigError(f"{path}: truncated tensor {name}")
            out[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    return out


# ---------------------------------------------------------------------------
# config sidecars
# ---------------------------------------------------------------------------


def _write_sidecar(path, fields: dict) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for key in sorted(fields):
            fh.write(f"{key}={fields[key]}\n")


def _read_sidecar(path) -> dict:
    fields = {}
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                key, _, value = line.partition("=")
                fields[key] = value
    return fields


def sidecar_path(ckpt_path) -> str:
    return str(ckpt_path) + ".cfg"


def save_target(path, model) -> None:
    save_tensors(path, OrderedDict((n, t.data) for n, t in model.params.items()))
    cfg = model.config
    _write_sidecar(sidecar_path(path), {
        "kind": "target",
        "vocab_size": cfg.vocab_size,
        "d_model": cfg.d_model,
        "n_layers": cfg.n_layers,
        "n_heads": cfg.n_heads,
        "d_ff": cfg.d_ff,
        "max_len": cfg.max_len,
    })


def load_target(path):
    from padrec.model.target import TargetModel

    fields = _read_sidecar(sidecar_path(path))
    if fields.get("kind") != "target":
        raise ConfigError(f"{path}: sidecar is not a target config")
    cfg = TargetConfig(
        vocab_size=int(fields["vocab_size"]),
        d_model=int(fields["d_model"]),
        n_layers=int(fields["n_layers"]),
        n_heads=int(fields["n_heads"]),
        d_ff=int(fields["d_ff"]),
        max_len=int(fields["max_len"]),
    )
    tensors = load_tensors(path)
    return TargetModel.from_tensors(cfg, tensors)


def save_draft(path, draft) -> None:
    save_tensors(path, OrderedDict((n, t.data) for n, t in draft.params.items()))
    _write_sidecar(sidecar_path(path), {
        "kind": "draft",
        "n_slots": draft.config.n_slots,
        "b_train": draft.config.b_train,
        "ablation": draft.config.ablation,
        "d_model": draft.d,
        "n_heads": draft.n_heads,
        "vocab_size": draft.vocab_size,
    })


def load_draft(path, target, slot_table: np.ndarray):
    from padrec.model.draft import DraftModel

    fields = _read_sidecar(sidecar_path(path))
    if fields.get("kind") != "draft":
        raise ConfigError(f"{path}: sidecar is not a draft config")
    if int(fields["d_model"]) != target.config.d_model or int(fields["vocab_size"]) != target.config.vocab_size:
        raise ConfigError("draft checkpoint does not match the target model dims")
    cfg = DraftConfig(
        n_slots=int(fields["n_slots"]),
        b_train=int(fields["b_train"]),
        ablation=fields["ablation"],
    )
    tensors = load_tensors(path)
    return DraftModel.from_tensors(cfg, target, slot_table, tensors)
