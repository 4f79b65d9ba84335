"""Shape derivatives of minimized elliptic energies and crack release rates."""

from .deformation import (Deformation, VelocityField, bilipschitz_margin,
                          crack_extension_field, rotate_field, stretch_x_field,
                          translate_field, velocity_field)
from .fem import (CoefficientSet, DiscreteField, LinearSystem, assemble,
                  coefficient_set, energy, pulled_back_energy, solve,
                  solve_problem, weak_residual)
from .mesh import (TriMesh, deform_mesh, gen_rect_mesh, insert_crack_slit,
                   read_mesh, validate, write_mesh)
from .param_variation import (EnergyFamily, MinimizerRecord,
                              envelope_derivative, envelope_second_derivative,
                              find_minimizer, minimizer_continuity_probe,
                              minimizer_sensitivity)
from .shape import (AnalyticField, ContourSpec, GriffithVerdict,
                    ShapeDerivativeReport, dirichlet_boundary_formula,
                    energy_release_rate, fd_oracle, griffith_check,
                    inner_variation_check, j_integral, mode3_tip_field,
                    shape_derivative_domain)

__version__ = "0.1.0"

__all__ = [
    "AnalyticField", "CoefficientSet", "ContourSpec", "Deformation",
    "DiscreteField", "EnergyFamily", "GriffithVerdict", "LinearSystem",
    "MinimizerRecord", "ShapeDerivativeReport", "TriMesh", "VelocityField",
    "assemble", "bilipschitz_margin", "coefficient_set",
    "crack_extension_field", "deform_mesh", "dirichlet_boundary_formula",
    "energy", "energy_release_rate", "envelope_derivative",
    "envelope_second_derivative", "fd_oracle", "find_minimizer",
    "gen_rect_mesh", "griffith_check", "inner_variation_check",
    "insert_crack_slit", "j_integral", "minimizer_continuity_probe",
    "minimizer_sensitivity", "mode3_tip_field", "pulled_back_energy",
    "read_mesh", "rotate_field", "shape_derivative_domain", "solve",
    "solve_problem", "stretch_x_field", "translate_field", "validate",
    "velocity_field", "weak_residual", "write_mesh",
]
