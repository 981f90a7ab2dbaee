"""
算子二进制容器 - 在多次 CLI 运行之间复用装配好的行分块算子

布局（全部小端）:
    magic       8 字节   b"SMDOP01\\0"
    header      4×int64  p, m, storage(0=dense, 1=csr), n_rows
    block_dims  p×int64
    dense:      n_rows×m float64，行优先
    csr:        nnz int64, indptr (n_rows+1)×int64, indices nnz×int64, data nnz×float64
"""
import os
import struct
from pathlib import Path
from typing import Union

import numpy as np
import scipy.sparse as sp

from .block_operator import RowBlockOperator

MAGIC = b"SMDOP01\0"
_HEADER = struct.Struct("<4q")
_STORAGE_CODES = {"dense": 0, "csr": 1}


def save_operator(op: RowBlockOperator, path: Union[str, Path]) -> Path:
    """写入容器文件（先写临时文件再原子替换）"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_rows = op.data_dim
    tmp_path = path.with_name(path.name + ".tmp")
    with open(tmp_path, "wb") as f:
        f.write(MAGIC)
        f.write(_HEADER.pack(op.p, op.m, _STORAGE_CODES[op.storage], n_rows))
        f.write(np.asarray(op.block_dims, dtype="<i8").tobytes())
        if op.storage == "dense":
            f.write(np.ascontiguousarray(op.matrix, dtype="<f8").tobytes())
        else:
            csr = op.matrix
            f.write(struct.pack("<q", csr.nnz))
            f.write(np.asarray(csr.indptr, dtype="<i8").tobytes())
            f.write(np.asarray(csr.indices, dtype="<i8").tobytes())
            f.write(np.asarray(csr.data, dtype="<f8").tobytes())
    os.replace(tmp_path, path)
    return path


def load_operator(path: Union[str, Path]) -> RowBlockOperator:
    """读取容器文件"""
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise ValueError(f"不是算子容器文件: {path}")
    pos = len(MAGIC)
    p, m, storage, n_rows = _HEADER.unpack_from(raw, pos)
    pos += _HEADER.size

    def take(count: int, dtype: str) -> np.ndarray:
        nonlocal pos
        nbytes = count * 8
        if pos + nbytes > len(raw):
            raise ValueError(f"容器文件被截断: {path}")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=pos).copy()
        pos += nbytes
        return arr

    block_dims = take(p, "<i8").tolist()
    if storage == _STORAGE_CODES["dense"]:
        matrix = take(n_rows * m, "<f8").reshape(n_rows, m)
    elif storage == _STORAGE_CODES["csr"]:
        (nnz,) = struct.unpack_from("<q", raw, pos)
        pos += 8
        indptr = take(n_rows + 1, "<i8")
        indices = take(nnz, "<i8")
        data = take(nnz, "<f8")
        matrix = sp.csr_matrix((data, indices, indptr), shape=(n_rows, m))
    else:
        raise ValueError(f"未知存储类型代码: {storage}")
    return RowBlockOperator(matrix, block_dims)
