# errors.py
"""
GPPCA 共通例外。

CLI の終了コードはこの階層で決まる:
  GPPCAArgumentError -> 2, GPPCANumericError -> 3
"""

from __future__ import annotations

from typing import Any, Dict, Optional


class GPPCAError(Exception):
    """パッケージ内で送出される全例外の基底クラス"""


class GPPCAArgumentError(GPPCAError, ValueError):
    """入力・設定・形状の不整合"""


class MatrixParseError(GPPCAArgumentError):
    """CSV 行列の読み込み失敗（1 始まりの行番号付き）"""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        where = ""
        if path:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class GPPCANumericError(GPPCAError, ArithmeticError):
    """分解の失敗や非有限値など、数値計算上の失敗"""

    def __init__(
        self,
        message: str,
        params: Optional[Dict[str, Any]] = None,
        advice: Optional[str] = None,
    ):
        self.params = dict(params or {})
        self.advice = advice
        text = message
        if self.params:
            text += " (" + ", ".join(f"{k}={v}" for k, v in self.params.items()) + ")"
        if advice:
            text += f" -- {advice}"
        super().__init__(text)
