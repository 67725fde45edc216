//! Lagrangian and Hamiltonian mechanics on Dirac algebroids.
//!
//! Skew algebroids in one chart ([`algebroid`]), linear almost Dirac structures on the dual
//! bundle ([`dirac`]), constraint induction ([`constraints`]), implicit Euler-Lagrange, Hamilton
//! and Pontryagin residual systems ([`dynamics`]) and their integration ([`solver`]).

pub mod algebroid;
pub mod constraints;
pub mod dirac;
pub mod dynamics;
pub mod error;
pub mod numeric;
pub mod solver;
pub mod systems;

pub use algebroid::{Chart, SectionField, SkewAlgebroid, StructureTensor};
pub use constraints::{
    check_integrability, induce, induce_affine, pointwise_induce, AffineConstraint,
    IntegrabilityReport, LinearConstraint,
};
pub use dirac::{pairing, DiracAlgebroid, PontryaginPoint, VelocityPair};
pub use error::{Error, Result};
pub use dynamics::{
    el_problem, el_residual, hamilton_problem, hamilton_residual, legendre_map, legendre_transform,
    nonholonomic_el_residual, pmp_problem, pmp_residual, time_extend, ControlSystem, HamiltonianDef,
    LagrangianDef,
};
pub use solver::{
    admissibility_report, energy_monitor, integrate, project_initial, solve_rate, ImplicitProblem,
    Mechanics, Method, Trajectory,
};
