"""
报告记录模块
负责将研究结果写入本地 CSV / JSON 文件
每种报告有固定列定义，输出不含时间戳，便于逐字节比较
"""

import csv
import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import numpy as np

from src.core.console import log
from src.models.errors import CarveError
from src.models.nodeset import NodeSet
from src.models.tree import DomainMapping


class ReportWriter:
    """CSV / JSON 报告记录器"""

    # CSV 列定义
    SCHEMAS: Dict[str, List[str]] = {
        "condition": ["length", "variant", "dofs", "kappa"],
        "convergence": ["level", "h", "dofs", "l2", "linf"],
        "dof-compare": ["level", "variant", "elements", "dofs"],
        "sdf-study": ["level", "elements", "max_abs_distance"],
        "bench": ["phase", "mean_s", "std_s"],
        "partition": ["rank", "elements", "owned_nodes", "ghost_nodes", "eta"],
    }

    def __init__(self, out_dir: str = "out"):
        """
        初始化报告记录器

        Args:
            out_dir: 输出目录（不存在时按需创建）
        """
        self.base_path = Path(out_dir)

    def _log(self, message: str):
        log(message)

    def _path(self, filename: str) -> Path:
        path = self.base_path / filename
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    @staticmethod
    def _format(value: Any) -> Any:
        if isinstance(value, (bool, np.bool_)):
            return int(value)
        if isinstance(value, (float, np.floating)):
            return repr(float(value))
        if isinstance(value, np.integer):
            return int(value)
        return value

    def write_rows(self, schema: str, rows: Iterable[Dict[str, Any]], filename: Optional[str] = None) -> Path:
        """
        按固定列写出 CSV

        Raises:
            CarveError: 未知报告类型，或行中含列定义以外的键
        """
        if schema not in self.SCHEMAS:
            raise CarveError(f"未知报告类型: {schema}")
        columns = self.SCHEMAS[schema]
        path = self._path(filename or f"{schema}.csv")
        try:
            with open(path, "w", newline="", encoding="utf-8") as f:
                writer = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
                writer.writeheader()
                for row in rows:
                    writer.writerow({k: self._format(v) for k, v in row.items()})
        except ValueError as exc:
            raise CarveError(f"报告 {schema} 行与列定义不符: {exc}") from exc
        self._log(f"报告已写出: {path}")
        return path

    def read_rows(self, path: Path) -> List[Dict[str, str]]:
        """读取 CSV 所有行"""
        with open(path, "r", newline="", encoding="utf-8") as f:
            return list(csv.DictReader(f))

    @staticmethod
    def _json_safe(value: Any) -> Any:
        if isinstance(value, dict):
            return {str(k): ReportWriter._json_safe(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [ReportWriter._json_safe(v) for v in value]
        if isinstance(value, (np.integer, np.bool_)):
            return value.item()
        if isinstance(value, (float, np.floating)):
            value = float(value)
            return value if math.isfinite(value) else None
        return value

    def write_json(self, filename: str, data: Dict[str, Any]) -> Path:
        """JSON 报告：键排序，非有限数写为 null"""
        path = self._path(filename)
        path.write_text(
            json.dumps(self._json_safe(data), sort_keys=True, indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        self._log(f"报告已写出: {path}")
        return path

    def write_nodes(self, node_set: NodeSet, mapping: Optional[DomainMapping] = None,
                    filename: str = "nodes.csv") -> Path:
        """节点表：id, x, y(, z), boundary（物理坐标）"""
        axes = ["x", "y", "z"][: node_set.dim]
        columns = ["id", *axes, "boundary"]
        coords = node_set.physical_coordinates(mapping)
        path = self._path(filename)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(columns)
            for i in range(len(node_set)):
                writer.writerow([i, *(repr(float(c)) for c in coords[i]), int(node_set.boundary[i])])
        self._log(f"节点表已写出: {path}（{len(node_set)} 个节点）")
        return path
