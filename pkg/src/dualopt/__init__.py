"""Two-phase divide-and-optimize solver for large Euclidean TSP instances."""

from .grid import (GridCell, GridConfig, PartialRoute, break_edges,
                   compress_partial_routes, default_n_iter, grid_count, partition,
                   run_grid_phase, solve_grids_parallel)
from .instances import (Instance, generate_random, load_tsplib, nearest_neighbor,
                        parse_tsplib, random_insertion, read_tour, save_tsplib,
                        serialize_tsplib, tour_length, validate_tour, write_tour)
from .openpath import (ExhaustiveOpenPathSolver, HeuristicOpenPathSolver,
                       OpenPathProblem, solve_open_path, solve_open_path_batch,
                       solve_open_path_exhaustive)
from .pathopt import (PathPhaseConfig, SubPath, divide_solution, merge_subpaths,
                      normalize_subpath, optimize_subpath_batch, run_path_phase)
from .pipeline import RunConfig, run_pipeline
from .report import InstanceResult, RunReport, compute_gap, emit_report, read_report
from .subsolver import (Budget, ExhaustiveSolver, ExternalSolver, LocalSearchSolver,
                        SubProblem, solve_exhaustive, solve_local_search,
                        solve_via_external)

__version__ = "0.1.0"
