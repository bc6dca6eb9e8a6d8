//! Dense matrix engine with operation counting.

mod counter;
mod fill;
mod matrix;

pub use counter::{scope_active, FlopScope};
pub use fill::{gaussian_with, seeded_fill, Fill};
pub use matrix::{relative_error, DenseMatrix};
