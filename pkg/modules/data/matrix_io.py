# matrix_io.py
"""
CSV 行列の読み書き（UTF-8、行優先、任意のヘッダー行）。
値は有効数字 17 桁で書き出すので read(write(X)) はビット単位で一致する。
"""

from __future__ import annotations

import csv
import logging
import math
import os
from typing import List, Optional, Sequence, Tuple

import numpy as np

from modules.data.data_models import InputGrid, OutputMatrix
from modules.utils.errors import GPPCAArgumentError, MatrixParseError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "{:.17g}"


def _parse_float(text: str, line: int, path: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise MatrixParseError(f"not a number: '{text}'", line=line, path=path) from None
    if not math.isfinite(value):
        raise MatrixParseError(f"non-finite value '{text}' is not allowed", line=line, path=path)
    return value


def _is_numeric(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def _is_header(row: Sequence[str]) -> bool:
    """すべてのセルが数値でない行だけをヘッダーとみなす"""
    return not any(_is_numeric(c) for c in row)


def read_matrix(path: str) -> Tuple[np.ndarray, Optional[List[str]]]:
    """CSV を (行列, ヘッダー or None) として読む。空行は無視する"""
    if not os.path.exists(path):
        raise GPPCAArgumentError(f"file not found: {path}")
    rows: List[List[float]] = []
    header: Optional[List[str]] = None
    width: Optional[int] = None
    with open(path, "r", encoding="utf-8", newline="") as f:
        for line_no, raw in enumerate(csv.reader(f), start=1):
            cells = [c.strip() for c in raw]
            if not cells or all(c == "" for c in cells):
                continue
            if cells[0].startswith("#"):
                continue
            if header is None and not rows and _is_header(cells):
                header = cells
                width = len(cells)
                continue
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise MatrixParseError(f"expected {width} columns, found {len(cells)}", line=line_no, path=path)
            rows.append([_parse_float(c, line_no, path) for c in cells])
    if not rows:
        raise MatrixParseError("file contains no matrix rows", path=path)
    return np.asarray(rows, dtype=float), header


def write_matrix(path: str, matrix, header: Optional[Sequence[str]] = None, comments: Sequence[str] = ()) -> None:
    M = np.atleast_2d(np.asarray(matrix, dtype=float))
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for c in comments:
            f.write(f"# {c}\n")
        writer = csv.writer(f, lineterminator="\n")
        if header is not None:
            writer.writerow(list(header))
        for row in M:
            writer.writerow([FLOAT_FORMAT.format(v) for v in row])


def split_input_columns(path: str, covariate_columns: Sequence[str] = ()) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    入力点の CSV を (カーネル入力, 共変量 or None) に分ける。1 行だけでもよい（予測用）。
    """
    X, header = read_matrix(path)
    covariate_columns = list(covariate_columns)
    if not covariate_columns:
        return X, None
    if header is None:
        raise GPPCAArgumentError(f"{path}: covariate columns need a header row")
    missing = [c for c in covariate_columns if c not in header]
    if missing:
        raise GPPCAArgumentError(f"{path}: covariate column(s) not found: {', '.join(missing)}")
    cov_idx = [header.index(c) for c in covariate_columns]
    kern_idx = [j for j in range(len(header)) if j not in cov_idx]
    if not kern_idx:
        raise GPPCAArgumentError(f"{path}: no kernel input columns left after removing covariates")
    return X[:, kern_idx], X[:, cov_idx]


def read_inputs(path: str, covariate_columns: Sequence[str] = ()) -> InputGrid:
    """入力点の CSV（n 行 × p 列）。covariate_columns に挙げた列は平均構造用の共変量として分離する"""
    points, covariates = split_input_columns(path, covariate_columns)
    return InputGrid(points, covariates, tuple(covariate_columns) if covariates is not None else ())


def read_output_matrix(path: str, grid: Optional[InputGrid] = None) -> OutputMatrix:
    """k×n の Y を読む。grid がなければ x_i = i の等間隔グリッドを使う"""
    Y, _ = read_matrix(path)
    if grid is None:
        grid = InputGrid.regular(Y.shape[1])
    logger.info(f"[IO] read {Y.shape[0]}x{Y.shape[1]} output matrix from {path}")
    return OutputMatrix(Y, grid)


def read_observed_rows(path: str) -> Tuple[List[int], np.ndarray]:
    """
    1 行目: 観測した出力行の番号（0 始まり）
    2 行目以降: x* ごとの観測値（列は 1 行目の順）
    """
    if not os.path.exists(path):
        raise GPPCAArgumentError(f"file not found: {path}")
    indices: Optional[List[int]] = None
    values: List[List[float]] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for line_no, raw in enumerate(csv.reader(f), start=1):
            cells = [c.strip() for c in raw]
            if not cells or all(c == "" for c in cells) or cells[0].startswith("#"):
                continue
            if indices is None:
                try:
                    indices = [int(c) for c in cells]
                except ValueError:
                    raise MatrixParseError("first row must list integer row indices", line=line_no, path=path) from None
                continue
            if len(cells) != len(indices):
                raise MatrixParseError(f"expected {len(indices)} values, found {len(cells)}", line=line_no, path=path)
            values.append([_parse_float(c, line_no, path) for c in cells])
    if indices is None or not values:
        raise MatrixParseError("observed-rows file needs an index row and at least one value row", path=path)
    return indices, np.asarray(values, dtype=float)
