//! Capacitated vehicle routing: instances, trajectories, costs and
//! reference solvers.

mod augment;
mod instance;
mod oracle;
mod trajectory;

pub use augment::{augment, transform_point, NUM_AUGMENTATIONS};
pub use instance::{
    capacity_for, generate_instance, generate_set, generate_with, parse_records, write_records,
    DemandDistribution, Instance, Point, LOAD_EPS,
};
pub use oracle::{brute_force_optimal, clarke_wright, optimal_split, BRUTE_FORCE_LIMIT};
pub use trajectory::{
    from_routes, to_routes, trajectory_cost, validate_trajectory, walk_length, RouteSet,
    StartRule, Trajectory, Violation, DEPOT,
};
