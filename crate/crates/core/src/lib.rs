pub mod action;
pub mod chart;
pub mod dirac;
pub mod error;
pub mod expr;
pub mod fields;
pub mod flow;
pub mod halton;
pub mod lattice;
pub mod linalg;
pub mod quadrature;
pub mod report;
pub mod runner;
pub mod scenario;
pub mod pointwise;
pub mod system;
pub mod tol;
pub mod torus;

pub use chart::Chart;
pub use error::CoreError;
pub use expr::Expression;
