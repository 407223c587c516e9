use std::collections::BTreeSet;
use std::fmt;

use super::instance::{Instance, LOAD_EPS};
use crate::error::{CoreError, Result};

pub const DEPOT: usize = 0;

/// One decoded solution: customers in visiting order, with `0` marking a
/// return to the depot between vehicle routes. The walk implicitly starts
/// and ends at the depot, so neither end carries a depot action.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub actions: Vec<usize>,
    pub log_prob: f64,
    pub reward: f64,
}

impl Trajectory {
    /// Wraps an action sequence, dropping a leading or trailing depot.
    pub fn from_actions(mut actions: Vec<usize>) -> Self {
        if actions.first() == Some(&DEPOT) {
            actions.remove(0);
        }
        if actions.last() == Some(&DEPOT) {
            actions.pop();
        }
        Self {
            actions,
            log_prob: 0.0,
            reward: 0.0,
        }
    }

    pub fn start_node(&self) -> usize {
        self.actions.first().copied().unwrap_or(DEPOT)
    }

    pub fn cost(&self) -> f64 {
        -self.reward
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Empty,
    OutOfRange(usize),
    Unvisited(BTreeSet<usize>),
    Duplicate(usize),
    ConsecutiveDepot { position: usize },
    Capacity { leg: usize, load: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "empty trajectory"),
            Violation::OutOfRange(i) => write!(f, "node {i} out of range"),
            Violation::Unvisited(set) => {
                let items: Vec<String> = set.iter().map(ToString::to_string).collect();
                write!(f, "unvisited: {{{}}}", items.join(", "))
            }
            Violation::Duplicate(i) => write!(f, "customer {i} visited more than once"),
            Violation::ConsecutiveDepot { position } => {
                write!(f, "consecutive depot visits at position {position}")
            }
            Violation::Capacity { leg, load } => {
                write!(f, "leg {leg} carries {load:.4} of capacity")
            }
        }
    }
}

/// Checks every trajectory invariant and reports all violations.
pub fn validate_trajectory(inst: &Instance, actions: &[usize]) -> std::result::Result<(), Vec<Violation>> {
    let n = inst.n();
    let mut violations = Vec::new();
    if actions.is_empty() {
        violations.push(Violation::Empty);
    }
    let mut seen = vec![false; n + 1];
    let mut leg_loads = vec![0.0];
    for (pos, &a) in actions.iter().enumerate() {
        if a > n {
            violations.push(Violation::OutOfRange(a));
        } else if a == DEPOT {
            if pos > 0 && actions[pos - 1] == DEPOT {
                violations.push(Violation::ConsecutiveDepot { position: pos });
            }
            leg_loads.push(0.0);
        } else {
            if seen[a] {
                violations.push(Violation::Duplicate(a));
            }
            seen[a] = true;
            *leg_loads.last_mut().expect("nonempty") += inst.demand_fraction(a);
        }
    }
    for (leg, &load) in leg_loads.iter().enumerate() {
        if load > 1.0 + LOAD_EPS {
            violations.push(Violation::Capacity { leg, load });
        }
    }
    let missing: BTreeSet<usize> = (1..=n).filter(|&i| !seen[i]).collect();
    if !missing.is_empty() {
        violations.push(Violation::Unvisited(missing));
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Length of the closed walk depot → actions → depot, without validation.
pub fn walk_length(inst: &Instance, actions: &[usize]) -> f64 {
    let mut prev = DEPOT;
    let mut total = 0.0;
    for &a in actions {
        total += inst.dist(prev, a);
        prev = a;
    }
    total + inst.dist(prev, DEPOT)
}

pub fn trajectory_cost(inst: &Instance, traj: &Trajectory) -> Result<f64> {
    validate_trajectory(inst, &traj.actions).map_err(CoreError::InvalidTrajectory)?;
    Ok(walk_length(inst, &traj.actions))
}

/// Vehicle routes, each a nonempty sequence of customers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RouteSet {
    pub routes: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartRule {
    /// Routes in stored order and orientation.
    AsGiven,
    /// The route containing this customer goes first, oriented and rotated
    /// so that the customer is the first action.
    Customer(usize),
}

impl RouteSet {
    pub fn cost(&self, inst: &Instance) -> f64 {
        self.routes
            .iter()
            .map(|r| walk_length(inst, r))
            .sum()
    }

    /// Partition of `1..=n` with every route within capacity.
    pub fn validate(&self, inst: &Instance) -> std::result::Result<(), Vec<Violation>> {
        let mut v = Vec::new();
        if self.routes.iter().any(Vec::is_empty) {
            v.push(Violation::Empty);
        }
        let flat = self.to_actions();
        if let Err(mut e) = validate_trajectory(inst, &flat) {
            v.append(&mut e);
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    fn to_actions(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (k, r) in self.routes.iter().enumerate() {
            if k > 0 {
                out.push(DEPOT);
            }
            out.extend_from_slice(r);
        }
        out
    }
}

/// Splits a trajectory into routes at depot actions.
pub fn to_routes(traj: &Trajectory) -> Result<RouteSet> {
    let actions = &Trajectory::from_actions(traj.actions.clone()).actions;
    let mut routes = Vec::new();
    for (k, segment) in actions.split(|&a| a == DEPOT).enumerate() {
        if segment.is_empty() {
            return Err(CoreError::Contract(format!("empty route at index {k}")));
        }
        routes.push(segment.to_vec());
    }
    Ok(RouteSet { routes })
}

/// Joins routes with depot actions. A closed route may be reversed or
/// rotated through the depot without changing its length; `StartRule`
/// only uses reversal, which keeps the route's customer order intact.
pub fn from_routes(rs: &RouteSet, rule: StartRule) -> Result<Trajectory> {
    if rs.routes.is_empty() || rs.routes.iter().any(Vec::is_empty) {
        return Err(CoreError::Contract("route set contains an empty route".into()));
    }
    let mut routes = rs.routes.clone();
    if let StartRule::Customer(c) = rule {
        let k = routes
            .iter()
            .position(|r| r.contains(&c))
            .ok_or_else(|| CoreError::Contract(format!("customer {c} is in no route")))?;
        let mut first = routes.remove(k);
        if first[0] != c {
            if *first.last().expect("nonempty") == c {
                first.reverse();
            } else {
                return Err(CoreError::Contract(format!(
                    "customer {c} is interior to its route and cannot start a trajectory"
                )));
            }
        }
        routes.insert(0, first);
    }
    Ok(Trajectory::from_actions(
        RouteSet { routes }.to_actions(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvrp::instance::Point;

    fn line3() -> Instance {
        Instance::new(
            "l",
            Point::new(0.0, 0.0),
            vec![Point::new(0.1, 0.0), Point::new(0.2, 0.0), Point::new(0.3, 0.0)],
            vec![10.0, 10.0, 12.0],
            30.0,
        )
        .unwrap()
    }

    #[test]
    fn single_out_and_back() {
        let inst =
            Instance::new("s", Point::new(0.0, 0.0), vec![Point::new(0.3, 0.4)], vec![1.0], 30.0)
                .unwrap();
        let t = Trajectory::from_actions(vec![1]);
        assert!((trajectory_cost(&inst, &t).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn coincident_customers_cost_nothing() {
        let p = Point::new(0.5, 0.5);
        let inst = Instance::new("c", p, vec![p, p], vec![1.0, 1.0], 30.0).unwrap();
        let t = Trajectory::from_actions(vec![1, 2]);
        assert_eq!(trajectory_cost(&inst, &t).unwrap(), 0.0);
    }

    #[test]
    fn reports_every_violation() {
        let inst = line3();
        let err = validate_trajectory(&inst, &[1, 2]).unwrap_err();
        assert_eq!(err.len(), 1);
        assert_eq!(err[0].to_string(), "unvisited: {3}");

        let err = validate_trajectory(&inst, &[1, 2, 3]).unwrap_err();
        assert!(matches!(err[0], Violation::Capacity { leg: 0, load } if (load - 32.0 / 30.0).abs() < 1e-12));

        let err = validate_trajectory(&inst, &[1, 0, 0, 2, 2, 5]).unwrap_err();
        assert!(err.contains(&Violation::ConsecutiveDepot { position: 2 }));
        assert!(err.contains(&Violation::Duplicate(2)));
        assert!(err.contains(&Violation::OutOfRange(5)));
        assert!(err.iter().any(|v| matches!(v, Violation::Unvisited(_))));
    }

    #[test]
    fn leading_and_trailing_depot_are_normalized() {
        let t = Trajectory::from_actions(vec![0, 1, 2, 0, 3, 0]);
        assert_eq!(t.actions, vec![1, 2, 0, 3]);
        assert_eq!(t.start_node(), 1);
    }

    #[test]
    fn route_splitting() {
        let t = Trajectory::from_actions(vec![1, 2, 0, 3]);
        assert_eq!(to_routes(&t).unwrap().routes, vec![vec![1, 2], vec![3]]);
        let t = Trajectory::from_actions(vec![1, 0, 2, 0, 3]);
        assert_eq!(to_routes(&t).unwrap().routes, vec![vec![1], vec![2], vec![3]]);
        let t = Trajectory::from_actions(vec![1, 0, 0, 3]);
        assert!(to_routes(&t).is_err());
    }

    #[test]
    fn start_rule_reorients_route() {
        let rs = RouteSet {
            routes: vec![vec![1, 2], vec![4, 3]],
        };
        let t = from_routes(&rs, StartRule::Customer(3)).unwrap();
        assert_eq!(t.actions, vec![3, 4, 0, 1, 2]);
        assert!(from_routes(&RouteSet { routes: vec![vec![]] }, StartRule::AsGiven).is_err());
        let rs3 = RouteSet {
            routes: vec![vec![1, 2, 3]],
        };
        assert!(from_routes(&rs3, StartRule::Customer(2)).is_err());
    }
}
