"""Finite-element approximation of the dynamic Laplacian for finite-time coherent sets.

Modules
-------
mesh          simplicial meshes, periodic Delaunay, alpha complexes
flows         benchmark dynamics, flow maps, Cauchy-Green tensors
trajectories  trajectory datasets with missing observations
fem           P1 stiffness and mass assembly
dynlap        averaged dynamic-Laplacian assembly (CG, TO, adaptive TO, missing data)
spectral      generalized eigenproblem and eigengap
extraction    k-means and level-set partitions, dynamic Cheeger ratios
pipeline, cli configuration-driven runs
"""
from .dynlap import (AssemblyResult, assemble_cg, assemble_missing, assemble_to_adaptive,
                     assemble_to_nonadapted)
from .exceptions import (AssemblyError, CoherentFEMError, ConfigError, GeometryError,
                         InfeasibleError, IntegrationError, ParseError, SingularityError,
                         SolverError, ValidationError)
from .extraction import (Partition, check_cheeger_bounds, cheeger_ratio, kmeans_partition,
                         level_set_partition, optimal_level_set)
from .fem import assemble_mass, assemble_stiffness, compute_node_weights
from .flows import builtin_field, flow_jacobian_fd, flow_map, inv_cauchy_green
from .mesh import Mesh, periodic_delaunay, regular_grid, triangulate
from .spectral import Spectrum, eigengap, solve_assembly, solve_gevp
from .trajectories import (TrajectoryDataset, delete_random, generate_trajectories,
                           load_trajectories, save_trajectories)

__version__ = "0.1.0"
