"""
配置管理模块
从 TOML（或同结构 JSON）加载运行配置，提供默认值并拒绝未知键
"""

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - Python < 3.11
    import tomli as tomllib

from src.models.errors import ConfigError
from src.models.octant import L_MAX

_CONFIG_FILE_NAME = "config.toml"

# 各配置分组允许的键（"" 表示顶层）；shape 分组由几何模块自行校验
_ALLOWED_KEYS: Dict[str, set] = {
    "": {
        "dimension", "order", "verbose", "seed", "workers", "out_dir",
        "shape", "mapping", "refine", "partition", "solver", "study",
    },
    "mapping": {"scale", "origin"},
    "refine": {"base_level", "boundary_level", "seeds"},
    "partition": {"rank_count", "load_tol"},
    "solver": {
        "rel_tol", "abs_tol", "max_iter", "jacobi", "dirichlet_mode",
        "solve_mode", "manufactured",
    },
    "study": {
        "convergence_levels", "condition_lengths", "condition_level",
        "condition_norm", "dof_base_level", "dof_object_levels",
        "dof_max_elements", "sdf_levels", "bench_iterations", "bench_warmup",
        "bench_sweep",
    },
}

_DIRICHLET_MODES = {"node", "projected"}
_SOLVE_MODES = {"matvec", "assembled"}
_CONDITION_NORMS = {"1", "2"}
_MANUFACTURED = {"sine", "quadratic"}


@dataclass
class Settings:
    """运行配置"""

    # 基本参数
    DIMENSION: int = 2
    ORDER: int = 1  # 单元阶数 p
    VERBOSE: bool = True
    SEED: int = 0
    WORKERS: int = 1  # 模拟 rank 的并行 worker 数
    OUT_DIR: str = "out"

    # 几何：kind + 参数，见 src/geometry/builder.py
    SHAPE: Dict[str, Any] = field(default_factory=lambda: {"kind": "none"})
    MAPPING_SCALE: float = 1.0
    MAPPING_ORIGIN: List[float] = field(default_factory=list)

    # 细化
    BASE_LEVEL: int = 3
    BOUNDARY_LEVEL: int = 5
    SEEDS: List[List[int]] = field(default_factory=list)  # [level, i0, i1(, i2)]

    # 分区
    RANK_COUNT: int = 1
    LOAD_TOL: float = 0.1

    # 求解器
    REL_TOL: float = 1e-6
    ABS_TOL: float = 1e-6
    MAX_ITER: int = 10000
    JACOBI: bool = False
    DIRICHLET_MODE: str = "node"  # node / projected
    SOLVE_MODE: str = "matvec"  # matvec / assembled
    MANUFACTURED: str = "sine"

    # 各研究命令参数
    CONVERGENCE_LEVELS: List[int] = field(default_factory=lambda: [3, 4, 5, 6])
    CONDITION_LENGTHS: List[int] = field(default_factory=lambda: [1, 2, 4, 8, 16])
    CONDITION_LEVEL: int = 5
    CONDITION_NORM: str = "1"
    DOF_BASE_LEVEL: int = 4
    DOF_OBJECT_LEVELS: List[int] = field(default_factory=lambda: [7])
    DOF_MAX_ELEMENTS: int = 2_000_000
    SDF_LEVELS: List[int] = field(default_factory=lambda: [4, 5, 6, 7, 8, 9])
    BENCH_ITERATIONS: int = 100
    BENCH_WARMUP: int = 5
    BENCH_SWEEP: List[int] = field(default_factory=list)  # worker 数扫描

    def __post_init__(self):
        """校验取值范围"""
        if self.DIMENSION not in (2, 3):
            raise ConfigError(f"dimension 只能为 2 或 3: {self.DIMENSION}")
        if self.ORDER not in (1, 2):
            raise ConfigError(f"order 只能为 1 或 2: {self.ORDER}")
        if self.WORKERS < 1:
            raise ConfigError(f"workers 必须 ≥ 1: {self.WORKERS}")
        if self.RANK_COUNT < 1:
            raise ConfigError(f"partition.rank_count 必须 ≥ 1: {self.RANK_COUNT}")
        if self.LOAD_TOL < 0:
            raise ConfigError(f"partition.load_tol 不能为负: {self.LOAD_TOL}")
        if self.DIRICHLET_MODE not in _DIRICHLET_MODES:
            raise ConfigError(f"solver.dirichlet_mode 非法: {self.DIRICHLET_MODE}")
        if self.SOLVE_MODE not in _SOLVE_MODES:
            raise ConfigError(f"solver.solve_mode 非法: {self.SOLVE_MODE}")
        if self.MANUFACTURED not in _MANUFACTURED:
            raise ConfigError(f"solver.manufactured 非法: {self.MANUFACTURED}")
        if self.CONDITION_NORM not in _CONDITION_NORMS:
            raise ConfigError(f"study.condition_norm 只能为 \"1\" 或 \"2\": {self.CONDITION_NORM}")
        levels = [self.BASE_LEVEL, self.BOUNDARY_LEVEL, self.CONDITION_LEVEL, self.DOF_BASE_LEVEL]
        levels += self.CONVERGENCE_LEVELS + self.DOF_OBJECT_LEVELS + self.SDF_LEVELS
        for level in levels:
            if not 0 <= level <= L_MAX:
                raise ConfigError(f"层级越界 [0, {L_MAX}]: {level}")
        for seed in self.SEEDS:
            if len(seed) != self.DIMENSION + 1:
                raise ConfigError(f"refine.seeds 记录应为 [level, i0..i{self.DIMENSION - 1}]: {seed}")

    def with_overrides(self, **overrides: Any) -> "Settings":
        """返回覆盖部分字段后的新配置（命令行参数优先）"""
        clean = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **clean)

    @classmethod
    def load(cls, path: Optional[Path] = None) -> "Settings":
        """从 TOML / JSON 配置文件加载配置；path 为空时使用项目根目录 config.toml（不存在则全默认）"""
        config_path = Path(path) if path is not None else _get_config_path()
        if path is None and not config_path.exists():
            return cls()
        text = _read_text(config_path)
        data = _parse_config_text(config_path, text)
        _reject_unknown_keys(data, text)

        mapping = _get_section(data, "mapping")
        refine = _get_section(data, "refine")
        partition = _get_section(data, "partition")
        solver = _get_section(data, "solver")
        study = _get_section(data, "study")
        shape = data.get("shape", {"kind": "none"})
        if not isinstance(shape, dict):
            raise ConfigError("shape 必须是表（kind + 参数）")

        return cls(
            DIMENSION=_get_int(data, "dimension", 2),
            ORDER=_get_int(data, "order", 1),
            VERBOSE=_get_bool(data, "verbose", True),
            SEED=_get_int(data, "seed", 0),
            WORKERS=_get_int(data, "workers", 1),
            OUT_DIR=_get_str(data, "out_dir", "out"),
            SHAPE=shape,
            MAPPING_SCALE=_get_float(mapping, "scale", 1.0),
            MAPPING_ORIGIN=[float(v) for v in _get_list(mapping, "origin", [])],
            BASE_LEVEL=_get_int(refine, "base_level", 3),
            BOUNDARY_LEVEL=_get_int(refine, "boundary_level", 5),
            SEEDS=[[int(v) for v in rec] for rec in _get_list(refine, "seeds", [])],
            RANK_COUNT=_get_int(partition, "rank_count", 1),
            LOAD_TOL=_get_float(partition, "load_tol", 0.1),
            REL_TOL=_get_float(solver, "rel_tol", 1e-6),
            ABS_TOL=_get_float(solver, "abs_tol", 1e-6),
            MAX_ITER=_get_int(solver, "max_iter", 10000),
            JACOBI=_get_bool(solver, "jacobi", False),
            DIRICHLET_MODE=_get_str(solver, "dirichlet_mode", "node"),
            SOLVE_MODE=_get_str(solver, "solve_mode", "matvec"),
            MANUFACTURED=_get_str(solver, "manufactured", "sine"),
            CONVERGENCE_LEVELS=_get_int_list(study, "convergence_levels", [3, 4, 5, 6]),
            CONDITION_LENGTHS=_get_int_list(study, "condition_lengths", [1, 2, 4, 8, 16]),
            CONDITION_LEVEL=_get_int(study, "condition_level", 5),
            CONDITION_NORM=_get_str(study, "condition_norm", "1"),
            DOF_BASE_LEVEL=_get_int(study, "dof_base_level", 4),
            DOF_OBJECT_LEVELS=_get_int_list(study, "dof_object_levels", [7]),
            DOF_MAX_ELEMENTS=_get_int(study, "dof_max_elements", 2_000_000),
            SDF_LEVELS=_get_int_list(study, "sdf_levels", [4, 5, 6, 7, 8, 9]),
            BENCH_ITERATIONS=_get_int(study, "bench_iterations", 100),
            BENCH_WARMUP=_get_int(study, "bench_warmup", 5),
            BENCH_SWEEP=_get_int_list(study, "bench_sweep", []),
        )


def _get_config_path() -> Path:
    """获取默认配置文件路径"""
    return Path(__file__).resolve().parents[2] / _CONFIG_FILE_NAME


def _read_text(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"配置文件读取失败: {path}: {exc}") from exc


def _parse_config_text(path: Path, text: str) -> Dict[str, Any]:
    """按后缀选择 TOML / JSON 解析，语法错误带行列号"""
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"{path}:{exc.lineno}:{exc.colno}: JSON 语法错误: {exc.msg}"
            ) from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: 顶层必须是对象")
        return data
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: TOML 语法错误: {exc}") from exc


def _find_key_line(text: str, key: str) -> int:
    """在原文中查找键首次出现的行号（找不到返回 0）"""
    pattern = re.compile(rf'^\s*"?{re.escape(key)}"?\s*[=:]')
    for lineno, line in enumerate(text.splitlines(), start=1):
        if pattern.search(line):
            return lineno
    return 0


def _reject_unknown_keys(data: Dict[str, Any], text: str) -> None:
    """拒绝未知配置键，报告键路径与行号"""
    for section, allowed in _ALLOWED_KEYS.items():
        values = data if section == "" else data.get(section, {})
        if not isinstance(values, dict):
            raise ConfigError(f"{section} 必须是表")
        for key in values:
            if key not in allowed:
                path = key if section == "" else f"{section}.{key}"
                line = _find_key_line(text, key)
                where = f"第 {line} 行: " if line else ""
                raise ConfigError(f"{where}未知配置键 {path}")


def _get_section(data: Dict[str, Any], key: str) -> Dict[str, Any]:
    """读取配置分组"""
    value = data.get(key, {})
    return value if isinstance(value, dict) else {}


def _get_str(data: Dict[str, Any], key: str, default: str) -> str:
    """读取字符串配置"""
    value = data.get(key, default)
    return str(value) if value is not None else default


def _get_int(data: Dict[str, Any], key: str, default: int) -> int:
    """读取整数配置，类型错误直接报错"""
    value = data.get(key, default)
    if isinstance(value, bool):
        raise ConfigError(f"{key} 应为整数: {value!r}")
    try:
        return int(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key} 应为整数: {value!r}") from exc


def _get_float(data: Dict[str, Any], key: str, default: float) -> float:
    """读取浮点数配置"""
    value = data.get(key, default)
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key} 应为数值: {value!r}") from exc


def _get_bool(data: Dict[str, Any], key: str, default: bool) -> bool:
    """读取布尔配置"""
    value = data.get(key, default)
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        return value.strip().lower() in ("true", "1", "yes", "on")
    return default


def _get_list(data: Dict[str, Any], key: str, default: List[Any]) -> List[Any]:
    """读取列表配置"""
    value = data.get(key, default)
    if not isinstance(value, list):
        raise ConfigError(f"{key} 应为列表: {value!r}")
    return value


def _get_int_list(data: Dict[str, Any], key: str, default: List[int]) -> List[int]:
    return [int(v) for v in _get_list(data, key, default)]


# 全局配置实例
_settings: Optional[Settings] = None


def get_settings() -> Settings:
    """获取配置单例（未初始化时返回默认配置）"""
    global _settings
    if _settings is None:
        _settings = Settings()
    return _settings


def init_settings(path: Optional[Path] = None, **overrides: Any) -> Settings:
    """
    初始化配置单例

    Args:
        path: 配置文件路径（.toml / .json），None 使用默认路径
        overrides: 覆盖字段（如 OUT_DIR、WORKERS、SEED）

    Returns:
        配置实例
    """
    global _settings
    _settings = Settings.load(path).with_overrides(**overrides)
    return _settings
