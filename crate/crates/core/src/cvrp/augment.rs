use super::instance::{Instance, Point};
use crate::error::{param_err, Result};

pub const NUM_AUGMENTATIONS: usize = 8;

/// The `k`-th symmetry of the unit square applied to one point.
pub fn transform_point(p: Point, k: usize) -> Point {
    let (x, y) = (p.x, p.y);
    let (nx, ny) = match k {
        0 => (x, y),
        1 => (y, x),
        2 => (x, 1.0 - y),
        3 => (1.0 - x, y),
        4 => (1.0 - x, 1.0 - y),
        5 => (y, 1.0 - x),
        6 => (1.0 - y, x),
        _ => (1.0 - y, 1.0 - x),
    };
    Point::new(nx, ny)
}

/// Applies the `k`-th of the eight unit-square symmetries to every node.
/// Demands and capacity are unchanged.
pub fn augment(inst: &Instance, k: usize) -> Result<Instance> {
    if k >= NUM_AUGMENTATIONS {
        return param_err("augmentation index", format!("{k} is not in 0..8"));
    }
    let mut out = inst.clone();
    out.depot = transform_point(inst.depot, k);
    for p in &mut out.customers {
        *p = transform_point(*p, k);
    }
    Ok(out)
}
