"""
异常定义
所有库内错误都派生自 CarveError，CLI 入口统一捕获
"""


class CarveError(Exception):
    """carvetree 错误基类"""


class ConfigError(CarveError):
    """配置文件错误（语法、未知键、取值非法）"""


class MeshError(CarveError):
    """几何输入错误（STL 读取失败、网格不封闭等）"""


class TreeError(CarveError):
    """八叉树错误（非法键、种子未排序、树未平衡等）"""


class PartitionError(CarveError):
    """分区 / ghost 交换错误"""


class SolverError(CarveError):
    """求解器错误（维度不匹配、不收敛等）"""
