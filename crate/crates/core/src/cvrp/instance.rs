use std::fmt::Write as _;

use rand::Rng;

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A CVRP instance. Node 0 is the depot, nodes `1..=n` are customers.
///
/// Demands are kept in the same units as `capacity`; the decoder works
/// with [`Instance::demand_fraction`], i.e. demands normalized so that a
/// vehicle holds 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub depot: Point,
    pub customers: Vec<Point>,
    pub demands: Vec<f64>,
    pub capacity: f64,
}

/// Tolerance on load comparisons, in capacity fractions.
pub const LOAD_EPS: f64 = 1e-9;

impl Instance {
    pub fn new(
        id: impl Into<String>,
        depot: Point,
        customers: Vec<Point>,
        demands: Vec<f64>,
        capacity: f64,
    ) -> Result<Self> {
        let inst = Self {
            id: id.into(),
            depot,
            customers,
            demands,
            capacity,
        };
        inst.check()?;
        Ok(inst)
    }

    pub fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(CoreError::InvalidInstance(format!("{}: {msg}", self.id)));
        if self.customers.is_empty() {
            return bad("needs at least one customer".into());
        }
        if self.customers.len() != self.demands.len() {
            return bad(format!(
                "{} customers but {} demands",
                self.customers.len(),
                self.demands.len()
            ));
        }
        if !(self.capacity > 0.0 && self.capacity.is_finite()) {
            return bad(format!("capacity {} must be positive", self.capacity));
        }
        for (i, &d) in self.demands.iter().enumerate() {
            if !(d > 0.0 && d <= self.capacity) {
                return bad(format!(
                    "demand of customer {} is {d}, outside (0, {}]",
                    i + 1,
                    self.capacity
                ));
            }
        }
        let all = std::iter::once(&self.depot).chain(&self.customers);
        if all.clone().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return bad("non-finite coordinate".into());
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.customers.len()
    }

    /// Coordinates of node `i` (0 = depot).
    pub fn node(&self, i: usize) -> Point {
        if i == 0 {
            self.depot
        } else {
            self.customers[i - 1]
        }
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.node(i).dist(self.node(j))
    }

    /// Demand of customer `i` (1-based) as a fraction of capacity.
    pub fn demand_fraction(&self, i: usize) -> f64 {
        self.demands[i - 1] / self.capacity
    }

    pub fn in_unit_square(&self) -> bool {
        std::iter::once(&self.depot)
            .chain(&self.customers)
            .all(|p| (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DemandDistribution {
    /// Integers uniform in `{1, …, 9}`.
    #[default]
    IntegerUniform,
    /// Continuous uniform on `(0, 10]`.
    ContinuousUniform,
}

/// Vehicle capacity used for a given number of customers: 30, 40 and 50
/// for 20, 50 and 100 customers; otherwise `round(30 + 20 (n - 20) / 80)`
/// clamped to `[30, 50]`.
pub fn capacity_for(n_customers: usize) -> f64 {
    match n_customers {
        20 => 30.0,
        50 => 40.0,
        100 => 50.0,
        n => (30.0 + 20.0 * (n as f64 - 20.0) / 80.0).round().clamp(30.0, 50.0),
    }
}

pub fn generate_instance<R: Rng + ?Sized>(n_customers: usize, rng: &mut R) -> Result<Instance> {
    generate_with(n_customers, DemandDistribution::IntegerUniform, "inst", rng)
}

/// Depot and customers uniform in the unit square.
pub fn generate_with<R: Rng + ?Sized>(
    n_customers: usize,
    demand: DemandDistribution,
    id: impl Into<String>,
    rng: &mut R,
) -> Result<Instance> {
    if n_customers == 0 {
        return Err(CoreError::Parameter {
            name: "n_customers",
            detail: "must be at least 1".into(),
        });
    }
    let point = |rng: &mut R| Point::new(rng.gen::<f64>(), rng.gen::<f64>());
    let depot = point(rng);
    let customers: Vec<Point> = (0..n_customers).map(|_| point(rng)).collect();
    let demands = (0..n_customers)
        .map(|_| match demand {
            DemandDistribution::IntegerUniform => rng.gen_range(1..=9) as f64,
            DemandDistribution::ContinuousUniform => 10.0 * (1.0 - rng.gen::<f64>()),
        })
        .collect();
    Instance::new(id, depot, customers, demands, capacity_for(n_customers))
}

/// Generates `count` instances with ids `{prefix}-{index:06}`.
pub fn generate_set<R: Rng + ?Sized>(
    n_customers: usize,
    count: usize,
    demand: DemandDistribution,
    prefix: &str,
    rng: &mut R,
) -> Result<Vec<Instance>> {
    (0..count)
        .map(|i| generate_with(n_customers, demand, format!("{prefix}-{i:06}"), rng))
        .collect()
}

/// Writes instances as text records:
///
/// ```text
/// instance <id> <n> <capacity>
/// depot <x> <y>
/// <x> <y> <demand>      (n rows)
/// end
/// ```
pub fn write_records(instances: &[Instance]) -> String {
    let mut out = String::new();
    for inst in instances {
        let _ = writeln!(out, "instance {} {} {}", inst.id, inst.n(), inst.capacity);
        let _ = writeln!(out, "depot {} {}", inst.depot.x, inst.depot.y);
        for (p, d) in inst.customers.iter().zip(&inst.demands) {
            let _ = writeln!(out, "{} {} {}", p.x, p.y, d);
        }
        out.push_str("end\n");
    }
    out
}

pub fn parse_records(text: &str) -> Result<Vec<Instance>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let perr = |line: usize, detail: String| CoreError::Parse { line, detail };
    let nums = |line: usize, fields: &[&str]| -> Result<Vec<f64>> {
        fields
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| perr(line, format!("not a number: {f}")))
            })
            .collect()
    };
    let mut out = Vec::new();
    while let Some((ln, header)) = lines.next() {
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 || h[0] != "instance" {
            return Err(perr(ln, format!("expected 'instance <id> <n> <capacity>', got '{header}'")));
        }
        let n: usize = h[2]
            .parse()
            .map_err(|_| perr(ln, format!("bad customer count {}", h[2])))?;
        let capacity = nums(ln, &h[3..4])?[0];
        let (dl, depot_line) = lines.next().ok_or_else(|| perr(ln, "missing depot row".into()))?;
        let d: Vec<&str> = depot_line.split_whitespace().collect();
        if d.len() != 3 || d[0] != "depot" {
            return Err(perr(dl, "expected 'depot <x> <y>'".into()));
        }
        let dxy = nums(dl, &d[1..])?;
        let mut customers = Vec::with_capacity(n);
        let mut demands = Vec::with_capacity(n);
        for _ in 0..n {
            let (cl, row) = lines.next().ok_or_else(|| perr(dl, "missing customer row".into()))?;
            let f: Vec<&str> = row.split_whitespace().collect();
            if f.len() != 3 {
                return Err(perr(cl, "expected '<x> <y> <demand>'".into()));
            }
            let v = nums(cl, &f)?;
            customers.push(Point::new(v[0], v[1]));
            demands.push(v[2]);
        }
        match lines.next() {
            Some((_, "end")) => {}
            Some((el, other)) => return Err(perr(el, format!("expected 'end', got '{other}'"))),
            None => return Err(perr(ln, "record not terminated by 'end'".into())),
        }
        out.push(Instance::new(h[1], Point::new(dxy[0], dxy[1]), customers, demands, capacity)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn capacities_for_reference_sizes() {
        assert_eq!(capacity_for(20), 30.0);
        assert_eq!(capacity_for(50), 40.0);
        assert_eq!(capacity_for(100), 50.0);
        assert_eq!(capacity_for(5), 30.0);
        assert_eq!(capacity_for(60), 40.0);
        assert_eq!(capacity_for(300), 50.0);
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate_instance(20, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = generate_instance(20, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.capacity, 30.0);
        assert!(a.in_unit_square());
        assert!(a.demands.iter().all(|&d| (1.0..=9.0).contains(&d) && d.fract() == 0.0));
        let c = generate_instance(100, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(c.capacity, 50.0);
    }

    #[test]
    fn continuous_demands_are_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set = generate_set(30, 50, DemandDistribution::ContinuousUniform, "c", &mut rng).unwrap();
        for inst in set {
            for i in 1..=inst.n() {
                let f = inst.demand_fraction(i);
                assert!(f > 0.0 && f <= 1.0);
            }
        }
    }

    #[test]
    fn records_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut set = generate_set(5, 3, DemandDistribution::IntegerUniform, "t", &mut rng).unwrap();
        set.extend(generate_set(4, 2, DemandDistribution::ContinuousUniform, "u", &mut rng).unwrap());
        let text = write_records(&set);
        assert_eq!(parse_records(&text).unwrap(), set);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_records("instance a 2 30\ndepot 0 0\n0.1 0.2 3\n").unwrap_err();
        assert!(matches!(err, CoreError::Parse { .. }), "{err}");
        let err = parse_records("instance a 1 30\ndepot 0 0\n0.1 zz 3\nend\n").unwrap_err();
        assert!(matches!(err, CoreError::Parse { line: 3, .. }), "{err}");
        let err = parse_records("instance a 1 30\ndepot 0 0\n0.1 0.1 31\nend\n").unwrap_err();
        assert!(matches!(err, CoreError::InvalidInstance(_)));
    }
}
