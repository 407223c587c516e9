pub mod aux_agent;
pub mod cvrp;
pub mod cvrplib;
pub mod policy;
pub mod seeding;
pub mod trainer;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;

pub use error::{CoreError, Result};
