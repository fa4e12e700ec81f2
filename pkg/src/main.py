"""
carvetree 命令行
构造挖除域上的不完整八叉树，导出网格，运行求解与各项数值研究
"""

import argparse
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from src.config.settings import Settings, init_settings
from src.core.console import log
from src.core.csv_logger import ReportWriter
from src.core.femops import STIFFNESS
from src.core.ghost import build_ghost_layout, partition_stats
from src.core.octree import refinement_seeds, seeds_from_cells
from src.core.partition import DistributedTree
from src.core.solver import ManufacturedSolution, PoissonProblem, solve_poisson
from src.core.studies import (
    Discretization,
    build_distributed,
    condition_study,
    condition_trends,
    convergence_study,
    dof_element_comparison,
    matvec_bench,
    sweep_ratio,
    voxelization_error_study,
)
from src.core.tree_io import save_tree
from src.core.vtu_writer import write_vtu
from src.geometry.builder import build_subdomain
from src.geometry.subdomain import Subdomain
from src.models.errors import CarveError

COMMANDS = ("mesh", "solve", "convergence", "condition", "dof-compare", "sdf-study", "matvec-bench")


class CarveApp:
    """命令执行器"""

    def __init__(self, settings: Settings, config_path: Optional[Path] = None):
        self.settings = settings
        self.base_dir = config_path.resolve().parent if config_path is not None else Path.cwd()
        self.writer = ReportWriter(settings.OUT_DIR)

    def _log(self, message: str):
        log(message)

    def _subdomain(self) -> Subdomain:
        return build_subdomain(self.settings, self.base_dir)

    def _pipeline(self, subdomain: Subdomain, order: Optional[int] = None):
        """种子 → 平衡树（多 rank）→ 节点 → 约束"""
        s = self.settings
        extra = seeds_from_cells(s.SEEDS, s.DIMENSION)
        seeds = refinement_seeds(subdomain, s.BASE_LEVEL, s.BOUNDARY_LEVEL, extra)
        return build_distributed(subdomain, seeds, order or s.ORDER, s.RANK_COUNT, s.LOAD_TOL, s.WORKERS)

    def _write_partition(self, dtree: DistributedTree, disc: Discretization) -> Dict[str, float]:
        layout = build_ghost_layout(dtree, disc.node_set, disc.governance)
        rows, summary = partition_stats(layout)
        self.writer.write_rows("partition", [r.to_row() for r in rows])
        return summary

    def cmd_mesh(self) -> int:
        subdomain = self._subdomain()
        dtree, disc = self._pipeline(subdomain)
        save_tree(disc.tree, self.writer.base_path / "tree.bin")
        write_vtu(self.writer.base_path / "mesh.vtu", disc.tree, disc.node_set, disc.governance, subdomain.mapping)
        self.writer.write_nodes(disc.node_set, subdomain.mapping)
        partition = self._write_partition(dtree, disc)
        summary = {
            "dimension": self.settings.DIMENSION,
            "order": self.settings.ORDER,
            "elements": len(disc.tree),
            "dofs": len(disc.node_set),
            "boundary_nodes": int(disc.node_set.boundary.sum()),
            "hanging_nodes": disc.governance.hanging_count,
            "max_level": disc.tree.max_level,
            "partition": partition,
        }
        self.writer.write_json("mesh.json", summary)
        self._log(f"网格: {summary['elements']} 个单元, {summary['dofs']} 个自由度, "
                  f"{summary['hanging_nodes']} 个悬挂节点")
        return 0

    def cmd_solve(self) -> int:
        s = self.settings
        subdomain = self._subdomain()
        dtree, disc = self._pipeline(subdomain)
        problem = PoissonProblem(subdomain, s.ORDER, ManufacturedSolution(s.MANUFACTURED), s.DIRICHLET_MODE)
        u, report = solve_poisson(
            problem, disc.tree, disc.node_set, disc.governance,
            rel_tol=s.REL_TOL, abs_tol=s.ABS_TOL, max_iter=s.MAX_ITER, jacobi=s.JACOBI,
            solve_mode=s.SOLVE_MODE, dtree=dtree, workers=s.WORKERS,
        )
        exact = problem.solution.exact(disc.node_set.physical_coordinates(subdomain.mapping))
        write_vtu(
            self.writer.base_path / "solution.vtu", disc.tree, disc.node_set, disc.governance, subdomain.mapping,
            fields={"u_h": u, "u_exact": exact, "error": u - exact},
        )
        self.writer.write_json("solve.json", report.to_dict())
        if not report.converged:
            self._log(f"警告: CG 未在 {s.MAX_ITER} 步内收敛（相对残差 {report.relative_residual:.3e}）")
        return 0

    def cmd_convergence(self) -> int:
        s = self.settings
        table = convergence_study(
            self._subdomain(), s.CONVERGENCE_LEVELS, s.ORDER, s.MANUFACTURED, s.DIRICHLET_MODE,
            max_iter=max(s.MAX_ITER, 50000), jacobi=s.JACOBI,
        )
        self.writer.write_rows("convergence", [r.to_row() for r in table.rows])
        self.writer.write_json("convergence.json", {**table.to_dict(), "order": s.ORDER})
        return 0 if table.aborted_at is None else 1

    def cmd_condition(self) -> int:
        s = self.settings
        rows = condition_study(s.CONDITION_LENGTHS, s.CONDITION_LEVEL, s.CONDITION_NORM)
        self.writer.write_rows("condition", [r.to_row() for r in rows])
        self.writer.write_json("condition.json", {
            "level": s.CONDITION_LEVEL,
            "norm": s.CONDITION_NORM,
            "rows": [r.to_row() for r in rows],
            "trends": condition_trends(rows),
        })
        return 0

    def cmd_dof_compare(self) -> int:
        s = self.settings
        subdomain = self._subdomain()
        results = [
            dof_element_comparison(subdomain, s.DOF_BASE_LEVEL, level, s.ORDER, s.DOF_MAX_ELEMENTS)
            for level in s.DOF_OBJECT_LEVELS
        ]
        self.writer.write_rows("dof-compare", [row for r in results for row in r.to_rows()])
        self.writer.write_json("dof-compare.json", {
            "base_level": s.DOF_BASE_LEVEL,
            "rows": [r.to_dict() for r in results],
        })
        return 0

    def cmd_sdf_study(self) -> int:
        s = self.settings
        rows = voxelization_error_study(self._subdomain(), s.SDF_LEVELS, s.BASE_LEVEL)
        self.writer.write_rows("sdf-study", [r.to_row() for r in rows])
        self.writer.write_json("sdf-study.json", {
            "rows": [r.to_row() for r in rows],
            "mean_ratio": sweep_ratio([r.max_abs_distance for r in rows]),
        })
        return 0

    def cmd_matvec_bench(self) -> int:
        s = self.settings
        subdomain = self._subdomain()
        dtree, disc = self._pipeline(subdomain)
        runs: List[Dict] = []
        for workers in s.BENCH_SWEEP or [s.WORKERS]:
            phases, meta = matvec_bench(
                dtree, disc.node_set, disc.governance, STIFFNESS, subdomain.mapping,
                s.BENCH_ITERATIONS, s.BENCH_WARMUP, workers, s.SEED,
            )
            name = "bench.csv" if not s.BENCH_SWEEP else f"bench_w{workers}.csv"
            self.writer.write_rows("bench", [p.to_row() for p in phases], name)
            runs.append({"meta": meta, "phases": [p.to_row() for p in phases]})
        self.writer.write_json("bench.json", {"iterations": s.BENCH_ITERATIONS, "runs": runs})
        return 0

    def run(self, command: str) -> int:
        handlers: Dict[str, Callable[[], int]] = {
            "mesh": self.cmd_mesh,
            "solve": self.cmd_solve,
            "convergence": self.cmd_convergence,
            "condition": self.cmd_condition,
            "dof-compare": self.cmd_dof_compare,
            "sdf-study": self.cmd_sdf_study,
            "matvec-bench": self.cmd_matvec_bench,
        }
        self._log(f"=== carvetree {command} ===")
        return handlers[command]()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="carvetree", description="挖除域不完整八叉树有限元工具")
    parser.add_argument("--config", type=Path, default=None, help="配置文件（.toml / .json）")
    parser.add_argument("--out", default=None, help="输出目录（覆盖 out_dir）")
    parser.add_argument("--workers", type=int, default=None, help="模拟 rank 的并行 worker 数")
    parser.add_argument("--seed", type=int, default=None, help="随机种子")
    parser.add_argument("command", choices=COMMANDS)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """主函数，返回退出码"""
    args = build_parser().parse_args(argv)
    try:
        settings = init_settings(args.config, OUT_DIR=args.out, WORKERS=args.workers, SEED=args.seed)
        return CarveApp(settings, args.config).run(args.command)
    except CarveError as e:
        print(f"错误: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
