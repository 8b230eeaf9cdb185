//! Topology optimization of unsteady fluid flows driven by actively moving
//! rigid bodies.
//!
//! The solver keeps two grids: a *design grid* that carries the pseudo-density
//! field and undergoes prescribed rigid motion, and a fixed *analysis grid* on
//! which the flow is computed with a lattice kinetic scheme (an LBM variant
//! that stores only macroscopic fields). At every time step the moved design
//! grid is overlapped onto the analysis grid through a smoothed kernel, which
//! transfers the Brinkman penalization coefficient and the solid velocity.
//! Design sensitivities come from a backward-in-time adjoint sweep that is the
//! exact discrete transpose of the forward step, and designs are updated with
//! the method of moving asymptotes.

pub mod adjoint;
pub mod boundary;
pub mod cli;
pub mod config;
pub mod design;
pub mod forward;
pub mod grid;
pub mod lattice;
pub mod mma;
pub mod motion;
pub mod objectives;
pub mod optimize;
pub mod overlap;
pub mod verify;
pub mod vtk;

pub use boundary::{BoundarySet, FaceCondition};
pub use design::{BrinkmanParams, DesignField, FilterSettings};
pub use forward::{ForwardProblem, ForwardRunConfig, FlowState, History, HistoryMode, RunResult};
pub use grid::{ScalarField, TensorField, UniformGrid, VectorField};
pub use lattice::LatticeModel;
pub use motion::{MotionSpec, RotationLaw, TranslationLaw};
pub use objectives::{ConstraintSpec, ObjectiveKind, ObjectiveSpec, Region};
