//! Linear layouts: tensor-to-hardware mappings as linear maps over the
//! two-element field, together with the machinery the mapping problem needs
//! end to end: constructors for the standard GPU layout families, transfer
//! functions for shape-changing ops, a conversion planner (register
//! permutations, warp shuffles, swizzled shared memory round trips), and a
//! simulator that executes plans against a small hardware model to verify
//! them and count shuffle rounds and bank-conflict wavefronts.

pub mod constructors;
pub mod gf2;
pub mod graph;
pub mod layout;
pub mod planner;
pub mod shapeops;
pub mod simulator;

pub use constructors::{BlockedSpec, BuildError, MmaKind, MmaOperand, MmaSpec, SwizzleSpec};
pub use gf2::{Basis, BitMatrix, BitVector, Gf2Error};
pub use layout::{DimLabel, HwPoint, LayoutError, LinearLayout, TensorPoint};
pub use planner::{
    plan_convert, plan_convert_with, BankConfig, ConversionPlan, GatherPlan, MemoryPlan,
    PlanBody, PlanConfig, PlanError, PlanStats, SharedMemoryPlan, ShufflePlan, SwizzleVariant,
    TileMatch, TilePattern,
};
pub use simulator::{
    sim_bank_count, sim_convert, sim_gather, GatherReport, LaneState, Mismatch, SimError,
    SimReport,
};
