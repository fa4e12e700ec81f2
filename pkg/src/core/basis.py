"""
单元基函数与积分

参考单元 [-1, 1]^d 上的张量积 Lagrange 基（等距节点），Gauss-Legendre 积分，
以及父单元基函数在子单元节点处的插值表（悬挂节点用）。
局部节点编号 x 轴最快：j = j0 + (p+1) j1 + (p+1)^2 j2
"""

from functools import lru_cache
from typing import Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss

from src.models.errors import TreeError

SUPPORTED_ORDERS = (1, 2)


def check_order(order: int) -> None:
    if order not in SUPPORTED_ORDERS:
        raise TreeError(f"不支持的单元阶数: {order}（仅支持 1 或 2）")


def lagrange_nodes(order: int) -> np.ndarray:
    """一维等距插值节点"""
    check_order(order)
    return np.linspace(-1.0, 1.0, order + 1)


def lagrange_values(order: int, xi: np.ndarray) -> np.ndarray:
    """
    一维 Lagrange 基在 xi 处的取值

    Returns:
        (len(xi), order + 1)
    """
    nodes = lagrange_nodes(order)
    xi = np.asarray(xi, dtype=np.float64).reshape(-1)
    values = np.ones((len(xi), order + 1))
    for a in range(order + 1):
        for b in range(order + 1):
            if a != b:
                values[:, a] *= (xi - nodes[b]) / (nodes[a] - nodes[b])
    return values


def lagrange_derivatives(order: int, xi: np.ndarray) -> np.ndarray:
    """一维 Lagrange 基导数，(len(xi), order + 1)"""
    nodes = lagrange_nodes(order)
    xi = np.asarray(xi, dtype=np.float64).reshape(-1)
    result = np.zeros((len(xi), order + 1))
    for a in range(order + 1):
        others = [b for b in range(order + 1) if b != a]
        for skip in others:
            term = np.full(len(xi), 1.0 / (nodes[a] - nodes[skip]))
            for b in others:
                if b != skip:
                    term *= (xi - nodes[b]) / (nodes[a] - nodes[b])
            result[:, a] += term
    return result


def gauss_legendre(points: int) -> Tuple[np.ndarray, np.ndarray]:
    """[-1, 1] 上 points 点 Gauss-Legendre 积分 (节点, 权重)"""
    return leggauss(points)


@lru_cache(maxsize=None)
def local_offsets(dim: int, order: int) -> np.ndarray:
    """(m, d) 单元局部节点的整数偏移 (0..order)，x 轴最快"""
    offsets = np.stack(np.unravel_index(np.arange((order + 1) ** dim), (order + 1,) * dim)[::-1], axis=1)
    offsets.setflags(write=False)
    return offsets


def tensor_values(dim: int, order: int, points: np.ndarray) -> np.ndarray:
    """
    张量积基在参考坐标点处的取值

    Args:
        points: (q, d) 参考坐标

    Returns:
        (q, m)
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, dim)
    offsets = local_offsets(dim, order)
    values = np.ones((len(points), len(offsets)))
    for axis in range(dim):
        values *= lagrange_values(order, points[:, axis])[:, offsets[:, axis]]
    return values


def tensor_points(dim: int, nodes_1d: np.ndarray) -> np.ndarray:
    """一维点集的张量积，x 轴最快，(n^d, d)"""
    n = len(nodes_1d)
    idx = np.stack(np.unravel_index(np.arange(n ** dim), (n,) * dim)[::-1], axis=1)
    return nodes_1d[idx]


def tensor_weights(dim: int, weights_1d: np.ndarray) -> np.ndarray:
    n = len(weights_1d)
    idx = np.stack(np.unravel_index(np.arange(n ** dim), (n,) * dim)[::-1], axis=1)
    return np.prod(weights_1d[idx], axis=1)


@lru_cache(maxsize=None)
def child_interpolation_table(dim: int, order: int) -> np.ndarray:
    """
    父单元基函数在各子单元局部节点处的取值

    W[c, j, k] = 父基函数 k 在子单元 c（Morton 子编号）第 j 个节点处的值；
    每行和为 1，p ≤ 2 时取值为二进制可精确表示的有理数

    Returns:
        (2^d, m, m)
    """
    check_order(order)
    child_nodes = tensor_points(dim, lagrange_nodes(order))
    table = []
    for digit in range(1 << dim):
        shift = np.array([(digit >> axis) & 1 for axis in range(dim)], dtype=np.float64)
        parent_points = shift - 1.0 + (child_nodes + 1.0) / 2.0
        table.append(tensor_values(dim, order, parent_points))
    result = np.stack(table)
    result[np.abs(result) < 1e-15] = 0.0
    result.setflags(write=False)
    return result


@lru_cache(maxsize=None)
def reference_1d(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """[-1, 1] 上的一维 (质量矩阵, 刚度矩阵)，order + 1 点 Gauss-Legendre"""
    xi, w = gauss_legendre(order + 1)
    phi = lagrange_values(order, xi)
    dphi = lagrange_derivatives(order, xi)
    mass = (phi * w[:, None]).T @ phi
    stiffness = (dphi * w[:, None]).T @ dphi
    return mass, stiffness
