//! Non-learned reference solvers: exhaustive search for tiny instances and
//! the Clarke-Wright parallel savings heuristic.

use std::cmp::Ordering;

use super::instance::{Instance, LOAD_EPS};
use super::trajectory::{RouteSet, DEPOT};
use crate::error::{CoreError, Result};

pub const BRUTE_FORCE_LIMIT: usize = 9;

/// Optimal capacity-feasible partition of a fixed customer order into
/// consecutive routes. Returns the cost and the routes.
pub fn optimal_split(inst: &Instance, order: &[usize]) -> (f64, Vec<Vec<usize>>) {
    let n = order.len();
    let mut best = vec![f64::INFINITY; n + 1];
    let mut from = vec![0usize; n + 1];
    best[0] = 0.0;
    for j in 1..=n {
        let mut load = 0.0;
        let mut inner = 0.0;
        for i in (0..j).rev() {
            load += inst.demand_fraction(order[i]);
            if load > 1.0 + LOAD_EPS {
                break;
            }
            if i + 1 < j {
                inner += inst.dist(order[i], order[i + 1]);
            }
            let c = best[i] + inst.dist(DEPOT, order[i]) + inner + inst.dist(order[j - 1], DEPOT);
            if c < best[j] {
                best[j] = c;
                from[j] = i;
            }
        }
    }
    let mut routes = Vec::new();
    let mut j = n;
    while j > 0 {
        let i = from[j];
        routes.push(order[i..j].to_vec());
        j = i;
    }
    routes.reverse();
    (best[n], routes)
}

/// Exact optimum by enumerating every customer order (Heap's algorithm)
/// with an optimal split of each. Refuses more than nine customers.
pub fn brute_force_optimal(inst: &Instance) -> Result<(RouteSet, f64)> {
    let n = inst.n();
    if n > BRUTE_FORCE_LIMIT {
        return Err(CoreError::TooLarge {
            n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut perm: Vec<usize> = (1..=n).collect();
    let (mut best_cost, mut best_routes) = optimal_split(inst, &perm);
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let (cost, routes) = optimal_split(inst, &perm);
            if cost < best_cost {
                best_cost = cost;
                best_routes = routes;
            }
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok((RouteSet { routes: best_routes }, best_cost))
}

/// Parallel Clarke-Wright savings. Every customer starts on its own route;
/// pairs are taken by descending `s_ij = d_0i + d_0j - d_ij` (ties by
/// ascending `(i, j)`) and two routes are joined when `i` and `j` sit at
/// route ends and the merged load fits.
pub fn clarke_wright(inst: &Instance) -> (RouteSet, f64) {
    let n = inst.n();
    let mut savings = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 1..=n {
        for j in i + 1..=n {
            let s = inst.dist(DEPOT, i) + inst.dist(DEPOT, j) - inst.dist(i, j);
            savings.push((s, i, j));
        }
    }
    savings.sort_by(|a, b| match b.0.total_cmp(&a.0) {
        Ordering::Equal => (a.1, a.2).cmp(&(b.1, b.2)),
        o => o,
    });

    let mut route_of: Vec<usize> = (0..=n).collect();
    let mut members: Vec<Vec<usize>> = (0..=n).map(|i| if i == 0 { vec![] } else { vec![i] }).collect();
    let mut load: Vec<f64> = (0..=n)
        .map(|i| if i == 0 { 0.0 } else { inst.demand_fraction(i) })
        .collect();

    for &(_, i, j) in &savings {
        let (ri, rj) = (route_of[i], route_of[j]);
        if ri == rj || load[ri] + load[rj] > 1.0 + LOAD_EPS {
            continue;
        }
        let at_start = |r: usize, c: usize, m: &Vec<Vec<usize>>| m[r].first() == Some(&c);
        let at_end = |r: usize, c: usize, m: &Vec<Vec<usize>>| m[r].last() == Some(&c);
        // Orient so that route ri ends with i and route rj starts with j.
        if !at_end(ri, i, &members) {
            if at_start(ri, i, &members) {
                members[ri].reverse();
            } else {
                continue;
            }
        }
        if !at_start(rj, j, &members) {
            if at_end(rj, j, &members) {
                members[rj].reverse();
            } else {
                continue;
            }
        }
        let moved = std::mem::take(&mut members[rj]);
        for &c in &moved {
            route_of[c] = ri;
        }
        members[ri].extend(moved);
        load[ri] += load[rj];
        load[rj] = 0.0;
    }

    let routes: Vec<Vec<usize>> = members.into_iter().filter(|r| !r.is_empty()).collect();
    let rs = RouteSet { routes };
    let cost = rs.cost(inst);
    (rs, cost)
}
