//! TSPLIB-format CVRP instances, best-known tables and optimality gaps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;

use log::warn;

use crate::cvrp::{Instance, Point, DEPOT};
use crate::error::{param_err, CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LibInstance {
    pub name: String,
    /// Customers plus the depot.
    pub dimension: usize,
    pub capacity: u64,
    /// Indexed by TSPLIB node id minus one.
    pub coords: Vec<(f64, f64)>,
    pub demands: Vec<u64>,
    /// Zero-based index of the depot node.
    pub depot: usize,
    pub edge_weight_type: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rounding {
    /// Exact Euclidean distances.
    #[default]
    Exact,
    /// TSPLIB `nint` rounding of every edge.
    Nearest,
}

fn perr<T>(line: usize, detail: impl Into<String>) -> Result<T> {
    Err(CoreError::Parse {
        line,
        detail: detail.into(),
    })
}

enum Section {
    Header,
    Coords,
    Demands,
    Depots,
}

pub fn parse_instance(text: &str) -> Result<LibInstance> {
    let mut name = None;
    let mut dimension = None;
    let mut capacity = None;
    let mut edge_weight_type = "EUC_2D".to_string();
    let mut coords: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    let mut demands: BTreeMap<usize, u64> = BTreeMap::new();
    let mut depots: Vec<usize> = Vec::new();
    let mut seen = [false; 3];
    let mut section = Section::Header;
    let mut last_line = 0;

    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        last_line = ln;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let upper = line.to_ascii_uppercase();
        match upper.as_str() {
            "EOF" => break,
            "NODE_COORD_SECTION" => {
                section = Section::Coords;
                seen[0] = true;
                continue;
            }
            "DEMAND_SECTION" => {
                section = Section::Demands;
                seen[1] = true;
                continue;
            }
            "DEPOT_SECTION" => {
                section = Section::Depots;
                seen[2] = true;
                continue;
            }
            _ => {}
        }
        if let Some((key, value)) = line.split_once(':') {
            if key.trim().chars().all(|c| c.is_ascii_uppercase() || c == '_') {
                let value = value.trim();
                section = Section::Header;
                match key.trim() {
                    "NAME" => name = Some(value.to_string()),
                    "DIMENSION" => {
                        dimension = Some(value.parse::<usize>().or_else(|_| {
                            perr(ln, format!("bad DIMENSION '{value}'"))
                        })?)
                    }
                    "CAPACITY" => {
                        capacity = Some(value.parse::<u64>().or_else(|_| {
                            perr(ln, format!("bad CAPACITY '{value}'"))
                        })?)
                    }
                    "EDGE_WEIGHT_TYPE" => edge_weight_type = value.to_string(),
                    "TYPE" | "COMMENT" => {}
                    other => warn!("line {ln}: ignoring unknown key {other}"),
                }
                continue;
            }
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match section {
            Section::Header => {
                warn!("line {ln}: ignoring unrecognized line '{line}'");
            }
            Section::Coords => {
                if fields.len() != 3 {
                    return perr(ln, "expected '<id> <x> <y>' in NODE_COORD_SECTION");
                }
                let id = parse_id(ln, fields[0])?;
                let x = parse_f(ln, fields[1])?;
                let y = parse_f(ln, fields[2])?;
                coords.insert(id, (x, y));
            }
            Section::Demands => {
                if fields.len() != 2 {
                    return perr(ln, "expected '<id> <demand>' in DEMAND_SECTION");
                }
                let id = parse_id(ln, fields[0])?;
                let d = fields[1]
                    .parse::<u64>()
                    .or_else(|_| perr(ln, format!("bad demand '{}'", fields[1])))?;
                demands.insert(id, d);
            }
            Section::Depots => {
                for f in fields {
                    let v = f
                        .parse::<i64>()
                        .or_else(|_| perr(ln, format!("bad depot id '{f}'")))?;
                    if v == -1 {
                        section = Section::Header;
                        break;
                    }
                    if v < 1 {
                        return perr(ln, format!("bad depot id '{f}'"));
                    }
                    depots.push(v as usize);
                }
            }
        }
    }

    let end = last_line.max(1);
    let name = name.ok_or(()).or_else(|_| perr(end, "missing NAME"))?;
    let dimension = dimension.ok_or(()).or_else(|_| perr(end, "missing DIMENSION"))?;
    let capacity = capacity.ok_or(()).or_else(|_| perr(end, "missing CAPACITY"))?;
    for (flag, label) in seen.iter().zip(["NODE_COORD_SECTION", "DEMAND_SECTION", "DEPOT_SECTION"]) {
        if !flag {
            return perr(end, format!("missing {label}"));
        }
    }
    if coords.len() != dimension || coords.keys().copied().ne(1..=dimension) {
        return perr(end, format!("NODE_COORD_SECTION must list nodes 1..={dimension}"));
    }
    if demands.len() != dimension || demands.keys().copied().ne(1..=dimension) {
        return perr(end, format!("DEMAND_SECTION must list nodes 1..={dimension}"));
    }
    if depots.len() != 1 || depots[0] > dimension {
        return perr(end, format!("DEPOT_SECTION must name exactly one node, got {depots:?}"));
    }
    Ok(LibInstance {
        name,
        dimension,
        capacity,
        coords: coords.into_values().collect(),
        demands: demands.into_values().collect(),
        depot: depots[0] - 1,
        edge_weight_type,
    })
}

fn parse_id(ln: usize, s: &str) -> Result<usize> {
    s.parse::<usize>()
        .ok()
        .filter(|&v| v >= 1)
        .map_or_else(|| perr(ln, format!("bad node id '{s}'")), Ok)
}

fn parse_f(ln: usize, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .or_else(|_| perr(ln, format!("bad coordinate '{s}'")))
}

pub fn serialize_instance(inst: &LibInstance) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "NAME : {}", inst.name);
    let _ = writeln!(out, "TYPE : CVRP");
    let _ = writeln!(out, "DIMENSION : {}", inst.dimension);
    let _ = writeln!(out, "EDGE_WEIGHT_TYPE : {}", inst.edge_weight_type);
    let _ = writeln!(out, "CAPACITY : {}", inst.capacity);
    out.push_str("NODE_COORD_SECTION\n");
    for (i, (x, y)) in inst.coords.iter().enumerate() {
        let _ = writeln!(out, "{} {} {}", i + 1, x, y);
    }
    out.push_str("DEMAND_SECTION\n");
    for (i, d) in inst.demands.iter().enumerate() {
        let _ = writeln!(out, "{} {}", i + 1, d);
    }
    out.push_str("DEPOT_SECTION\n");
    let _ = writeln!(out, " {}\n -1\nEOF", inst.depot + 1);
    out
}

impl LibInstance {
    pub fn n_customers(&self) -> usize {
        self.dimension - 1
    }

    /// TSPLIB node indices of the customers, in file order.
    pub fn customer_nodes(&self) -> Vec<usize> {
        (0..self.dimension).filter(|&i| i != self.depot).collect()
    }

    pub fn edge(&self, a: usize, b: usize, rounding: Rounding) -> f64 {
        let (ax, ay) = self.coords[a];
        let (bx, by) = self.coords[b];
        let d = (ax - bx).hypot(ay - by);
        match rounding {
            Rounding::Exact => d,
            Rounding::Nearest => (d + 0.5).floor(),
        }
    }
}

/// A model-space instance together with the similarity transform that
/// produced it.
#[derive(Debug, Clone)]
pub struct NormalizedInstance {
    pub instance: Instance,
    /// Original length = model length × scale.
    pub scale: f64,
    /// `node_map[i]` is the TSPLIB node index of model node `i`.
    pub node_map: Vec<usize>,
}

impl NormalizedInstance {
    pub fn original_cost(&self, model_cost: f64) -> f64 {
        model_cost * self.scale
    }

    /// Cost of a model-space action sequence measured on the original
    /// coordinates.
    pub fn original_walk_cost(&self, lib: &LibInstance, actions: &[usize], rounding: Rounding) -> f64 {
        let mut prev = DEPOT;
        let mut total = 0.0;
        for &a in actions.iter().chain(std::iter::once(&DEPOT)) {
            total += lib.edge(self.node_map[prev], self.node_map[a], rounding);
            prev = a;
        }
        total
    }
}

/// Uniformly scales and centers the coordinates into the unit square and
/// expresses demands against the original capacity.
pub fn normalize(lib: &LibInstance) -> Result<NormalizedInstance> {
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &lib.coords {
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        min_y = min_y.min(y);
        max_y = max_y.max(y);
    }
    let (rx, ry) = (max_x - min_x, max_y - min_y);
    let scale = rx.max(ry);
    if !(scale > 0.0) {
        return Err(CoreError::DegenerateGeometry(format!(
            "{}: all nodes coincide",
            lib.name
        )));
    }
    let (ox, oy) = ((1.0 - rx / scale) / 2.0, (1.0 - ry / scale) / 2.0);
    let map = |i: usize| {
        let (x, y) = lib.coords[i];
        Point::new(
            ((x - min_x) / scale + ox).clamp(0.0, 1.0),
            ((y - min_y) / scale + oy).clamp(0.0, 1.0),
        )
    };
    let customers = lib.customer_nodes();
    let mut node_map = vec![lib.depot];
    node_map.extend(&customers);
    let instance = Instance::new(
        lib.name.clone(),
        map(lib.depot),
        customers.iter().map(|&c| map(c)).collect(),
        customers.iter().map(|&c| lib.demands[c] as f64).collect(),
        lib.capacity as f64,
    )?;
    Ok(NormalizedInstance {
        instance,
        scale,
        node_map,
    })
}

/// Percentage gap of a model cost over a best-known cost. Negative values
/// mean the model beat the reference.
pub fn compute_gap(model_cost: f64, best_known: f64) -> Result<f64> {
    if !(best_known > 0.0) {
        return param_err("best_known", format!("must be positive, got {best_known}"));
    }
    Ok(100.0 * (model_cost - best_known) / best_known)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestKnown {
    pub cost: f64,
    pub vehicles: Option<u32>,
}

/// Reads a `name,cost,k` table. A header row is optional.
pub fn read_best_known<R: Read>(reader: R) -> Result<BTreeMap<String, BestKnown>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CoreError::Parse {
            line: i + 1,
            detail: e.to_string(),
        })?;
        if rec.len() < 2 {
            return perr(i + 1, "expected name,cost[,k]");
        }
        let Ok(cost) = rec[1].parse::<f64>() else {
            if i == 0 {
                continue;
            }
            return perr(i + 1, format!("bad cost '{}'", &rec[1]));
        };
        let vehicles = rec.get(2).and_then(|k| k.parse().ok());
        out.insert(rec[0].to_string(), BestKnown { cost, vehicles });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub name: String,
    pub size: usize,
    pub model_cost: f64,
    pub best_known: Option<f64>,
    pub gap_percent: Option<f64>,
}

impl GapReport {
    pub fn new(name: impl Into<String>, size: usize, model_cost: f64, best_known: Option<f64>) -> Result<Self> {
        let gap_percent = best_known.map(|b| compute_gap(model_cost, b)).transpose()?;
        Ok(Self {
            name: name.into(),
            size,
            model_cost,
            best_known,
            gap_percent,
        })
    }
}

/// Size ranges by customer count: `[1,50]`, `(50,100]`, `(100,150]`,
/// `(150,200]`, `(200,300]`, `(300,∞)`.
pub const BUCKET_UPPER: [Option<usize>; 6] =
    [Some(50), Some(100), Some(150), Some(200), Some(300), None];

pub fn bucket_of(size: usize) -> usize {
    BUCKET_UPPER
        .iter()
        .position(|u| u.is_none_or(|u| size <= u))
        .expect("last bucket is unbounded")
}

pub fn bucket_label(b: usize) -> String {
    let lower = if b == 0 { 1 } else { BUCKET_UPPER[b - 1].expect("bounded") };
    match (b, BUCKET_UPPER[b]) {
        (0, Some(u)) => format!("[{lower},{u}]"),
        (_, Some(u)) => format!("({lower},{u}]"),
        (_, None) => format!("({lower},inf)"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketSummary {
    pub label: String,
    pub count: usize,
    pub mean_gap_percent: Option<f64>,
}

/// Mean gap per size range over the reports that have a best-known cost.
pub fn bucket_reports(reports: &[GapReport]) -> Result<Vec<BucketSummary>> {
    if reports.is_empty() {
        return param_err("reports", "no gap reports to aggregate");
    }
    let mut sums = [0.0; 6];
    let mut counts = [0usize; 6];
    for r in reports {
        if let Some(g) = r.gap_percent {
            let b = bucket_of(r.size);
            sums[b] += g;
            counts[b] += 1;
        }
    }
    Ok((0..BUCKET_UPPER.len())
        .map(|b| BucketSummary {
            label: bucket_label(b),
            count: counts[b],
            mean_gap_percent: (counts[b] > 0).then(|| sums[b] / counts[b] as f64),
        })
        .collect())
}

fn csv_err(e: csv::Error) -> CoreError {
    CoreError::Io(std::io::Error::other(e))
}

pub fn write_gap_csv<W: std::io::Write>(w: W, reports: &[GapReport]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["name", "size", "model_cost", "best_known", "gap_percent"])
        .map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in reports {
        wr.write_record([
            r.name.clone(),
            r.size.to_string(),
            r.model_cost.to_string(),
            opt(r.best_known),
            opt(r.gap_percent),
        ])
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_bucket_csv<W: std::io::Write>(w: W, buckets: &[BucketSummary]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["bucket", "count", "mean_gap_percent"])
        .map_err(csv_err)?;
    for b in buckets {
        wr.write_record([
            b.label.clone(),
            b.count.to_string(),
            b.mean_gap_percent.map(|x| x.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}
