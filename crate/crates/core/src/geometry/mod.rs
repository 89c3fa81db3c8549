//! Constraint sets, budget set, recession and null-investment geometry.

mod constraint;
pub mod polyhedral;
mod recession;

pub use constraint::{ConstraintKind, ConstraintSet, Halfspace};
pub use recession::{
    attainment_check, budget_feasible, null_investment_member, recession_cone_member,
    recession_function, Attainment, RecessionData,
};
