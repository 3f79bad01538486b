"""Binary artifact formats: checkpoints, embedding caches, token caches.

Everything on disk is little-endian with a four-byte magic, a format
version, and row-major 32-bit floats; writers iterate names in sorted
order so identical inputs produce identical bytes.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .training import TokenDataset

CKPT_MAGIC = b"CKPT"
EMB_MAGIC = b"EMBC"
TOK_MAGIC = b"TOKC"
FORMAT_VERSION = 1


def _values(obj) -> np.ndarray:
    return np.asarray(getattr(obj, "values", obj))


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError(f"truncated file: expected {n} bytes for {what}")
    return buf


def _check_header(fh, magic: bytes, kind: str) -> None:
    got = _read_exact(fh, 4, "magic")
    if got != magic:
        raise ValueError(f"not a {kind} file (magic {got!r})")
    (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported {kind} version {version}")


# -- parameter checkpoints ---------------------------------------------------


def save_checkpoint(path, tensors: dict) -> None:
    """Write named tensors: per entry name, rank, extents, float32 data."""
    names = sorted(tensors)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(names)))
        for name in names:
            arr = _values(tensors[name])
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> dict:
    out = {}
    with open(path, "rb") as fh:
        _check_header(fh, CKPT_MAGIC, "checkpoint")
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, nlen, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "extents"))
            size = int(np.prod(shape, dtype=np.int64)) if rank else 1
            raw = _read_exact(fh, 4 * size, f"data for {name!r}")
            out[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return out


def load_into(tensors: dict, path) -> None:
    """Restore a checkpoint into live tensors; the name sets and every
    shape must match exactly, otherwise the checkpoint is not
    shape-compatible with the configured model and loading refuses."""
    stored = load_checkpoint(path)
    missing = sorted(set(tensors) - set(stored))
    if missing:
        raise ValueError(f"checkpoint is missing tensors {missing}")
    unexpected = sorted(set(stored) - set(tensors))
    if unexpected:
        raise ValueError(f"checkpoint has unexpected tensors {unexpected}")
    for name, tensor in tensors.items():
        current = _values(tensor)
        if current.shape != stored[name].shape:
            raise ValueError(
                f"checkpoint tensor {name!r} has shape {stored[name].shape}, "
                f"model expects {current.shape}"
            )
    for name, tensor in tensors.items():
        tensor.values[:] = stored[name]


# -- embedding caches --------------------------------------------------------


def save_embedding(path, matrix: np.ndarray) -> None:
    mat = np.asarray(matrix)
    if mat.ndim != 2:
        raise ValueError(f"embedding matrix must be 2-d, got rank {mat.ndim}")
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, mat.shape[0], mat.shape[1]))
        fh.write(np.ascontiguousarray(mat, dtype="<f4").tobytes())


def load_embedding(path) -> np.ndarray:
    with open(path, "rb") as fh:
        _check_header(fh, EMB_MAGIC, "embedding cache")
        n, d = struct.unpack("<II", _read_exact(fh, 8, "dimensions"))
        raw = _read_exact(fh, 4 * n * d, "rows")
        return np.frombuffer(raw, dtype="<f4").reshape(n, d).copy()


def embedding_to_csv(path, matrix: np.ndarray, ids=None) -> None:
    """Human-readable export; 9 significant digits round-trip float32."""
    mat = np.asarray(matrix)
    lines = []
    for i, row in enumerate(mat):
        key = str(ids[i]) if ids is not None else str(i)
        lines.append(",".join([key] + [f"{v:.8e}" for v in row]))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def save_local_rows(directory, rows: dict) -> None:
    """One embedding-cache file per cascade plus a JSON index."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    index = {}
    for k, cid in enumerate(sorted(rows)):
        fname = f"rows_{k:06d}.emb"
        save_embedding(d / fname, rows[cid])
        index[cid] = fname
    (d / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True))


def load_local_rows(directory) -> dict:
    d = Path(directory)
    index = json.loads((d / "index.json").read_text())
    return {cid: load_embedding(d / fname) for cid, fname in index.items()}


# -- token caches ------------------------------------------------------------


def save_token_dataset(path, data: TokenDataset) -> None:
    """Concatenated per-cascade token blocks; the sidecar index carries
    block order, targets, and split labels keyed by cascade-id."""
    ids = sorted(data.tokens)
    if not ids:
        raise ValueError("token dataset is empty")
    n, s = data.tokens[ids[0]].shape
    entries = {}
    with open(path, "wb") as fh:
        fh.write(TOK_MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, n, s))
        for k, cid in enumerate(ids):
            block = data.tokens[cid]
            if block.shape != (n, s):
                raise ValueError(
                    f"cascade {cid!r} has token shape {block.shape}, "
                    f"cache expects {(n, s)}"
                )
            fh.write(np.ascontiguousarray(block, dtype="<f4").tobytes())
            entries[cid] = {
                "block": k,
                "target": int(data.targets[cid]),
                "split": data.splits[cid],
            }
    index = {
        "name": data.name,
        "t_obs": data.t_obs,
        "entries": entries,
    }
    Path(f"{path}.index.json").write_text(json.dumps(index, indent=2, sort_keys=True))


def load_token_dataset(path) -> TokenDataset:
    index = json.loads(Path(f"{path}.index.json").read_text())
    entries = index["entries"]
    tokens = {}
    with open(path, "rb") as fh:
        _check_header(fh, TOK_MAGIC, "token cache")
        n, s = struct.unpack("<II", _read_exact(fh, 8, "token shape"))
        blocks = {}
        for cid, meta in entries.items():
            blocks[meta["block"]] = cid
        for k in range(len(blocks)):
            raw = _read_exact(fh, 4 * n * s, f"token block {k}")
            tokens[blocks[k]] = np.frombuffer(raw, dtype="<f4").reshape(n, s).copy()
    return TokenDataset(
        name=index["name"],
        t_obs=index["t_obs"],
        tokens=tokens,
        targets={cid: meta["target"] for cid, meta in entries.items()},
        splits={cid: meta["split"] for cid, meta in entries.items()},
    )
