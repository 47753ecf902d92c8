from .adr import AdrModel, AdrModelParams, AdrOracle
from .fem import FemDiscretization, Grid2D, assemble_fem, assemble_fem_1d, difference_operators, interpolation_matrix
from .matern import MaternObsOracle, MaternSpde, MaternSpdeParams, matern_exact_cov, matern_spde_matvec
from .nonstationary import nonstationary_1d_cov, nonstationary_matrix, nonstationary_oracle
from .simulate import Dataset, grid_scheme, regular_grid, simulate_adr, simulate_data, simulate_wind, subsample_grid
from .wind import WindModel, WindModelParams, WindOracle

__all__ = [
    "AdrModel", "AdrModelParams", "AdrOracle", "FemDiscretization", "Grid2D", "assemble_fem", "assemble_fem_1d",
    "difference_operators", "interpolation_matrix", "MaternObsOracle", "MaternSpde", "MaternSpdeParams",
    "matern_exact_cov", "matern_spde_matvec", "nonstationary_1d_cov", "nonstationary_matrix", "nonstationary_oracle",
    "Dataset", "grid_scheme", "regular_grid", "simulate_adr", "simulate_data", "simulate_wind", "subsample_grid",
    "WindModel", "WindModelParams", "WindOracle",
]
