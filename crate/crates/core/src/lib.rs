//! Instruction-labeled base policies in a gridworld, task-adaptation
//! sampling between instructions, and a pairwise classifier that predicts
//! which base policy adapts best to a new instruction.

pub mod adaptation;
pub mod gridworld;
pub mod instructions;
pub mod learner;
pub mod nn;
pub mod scalar;
pub mod seed;
pub mod transfer;

pub use instructions::{Color, Instruction, ObjectKind, Verb};
pub use scalar::Scalar;

pub type QFunctionF64 = learner::QFunction<f64>;
pub type QFunctionF32 = learner::QFunction<f32>;
pub type PolicySnapshotF64 = learner::PolicySnapshot<f64>;
pub type PolicySnapshotF32 = learner::PolicySnapshot<f32>;
