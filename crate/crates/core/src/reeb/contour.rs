//! Level-curve extraction on the phase plane.
//!
//! H has no interior maxima (the kinetic term is convex in p), so every
//! sublevel component is simply connected and every regular level component
//! is a single closed loop. Extraction walks cell-edge crossings into loops;
//! crossing locations are refined against the exact Hamiltonian, not the
//! bilinear interpolant, so polygon vertices sit on the true curve up to the
//! root tolerance.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{BoxDomain, HamiltonianModel};
use crate::numerics::bisect;

/// Node-sampled H values on the (nq + 1) x (np + 1) corner lattice.
#[derive(Clone, Debug)]
pub struct NodeGrid {
    pub nq: usize,
    pub np: usize,
    values: Vec<f64>,
}

impl NodeGrid {
    pub fn sample(model: &HamiltonianModel, domain: &BoxDomain) -> Self {
        let (nq, np) = (domain.nq, domain.np);
        let values = crate::par::map_indexed((nq + 1) * (np + 1), |k| {
            let i = k / (np + 1);
            let j = k % (np + 1);
            model.energy(domain.q_node(i), domain.p_node(j))
        });
        Self { nq, np, values }
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * (self.np + 1) + j]
    }

    /// Smallest H over the outer boundary nodes. Levels at or above this may
    /// touch the box edge and cannot be extracted as closed loops.
    pub fn boundary_min(&self) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..=self.nq {
            m = m.min(self.value(i, 0)).min(self.value(i, self.np));
        }
        for j in 0..=self.np {
            m = m.min(self.value(0, j)).min(self.value(self.nq, j));
        }
        m
    }
}

/// Closed loop of points on a level curve. The loop is implicit: the last
/// point connects back to the first.
#[derive(Clone, Debug)]
pub struct LevelPolygon {
    pub h: f64,
    pub points: Vec<(f64, f64)>,
}

impl LevelPolygon {
    pub fn signed_area(&self) -> f64 {
        let n = self.points.len();
        let mut s = 0.0;
        for i in 0..n {
            let (x0, y0) = self.points[i];
            let (x1, y1) = self.points[(i + 1) % n];
            s += x0 * y1 - x1 * y0;
        }
        0.5 * s
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Even-odd point-in-polygon with the half-open crossing rule.
    pub fn contains(&self, q: f64, p: f64) -> bool {
        let n = self.points.len();
        let mut inside = false;
        for i in 0..n {
            let (x0, y0) = self.points[i];
            let (x1, y1) = self.points[(i + 1) % n];
            if (y0 <= p) != (y1 <= p) {
                let xc = x0 + (p - y0) * (x1 - x0) / (y1 - y0);
                if xc > q {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(q, p) in &self.points {
            b.0 = b.0.min(q);
            b.1 = b.1.max(q);
            b.2 = b.2.min(p);
            b.3 = b.3.max(p);
        }
        b
    }
}

/// A crossed edge of the node lattice, identified by its lower-left node.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum GridEdge {
    /// Between nodes (i, j) and (i + 1, j).
    Hor(u32, u32),
    /// Between nodes (i, j) and (i, j + 1).
    Ver(u32, u32),
}

const SIDE_S: u8 = 0;
const SIDE_E: u8 = 1;
const SIDE_N: u8 = 2;
const SIDE_W: u8 = 3;

fn side_edge(i: usize, j: usize, side: u8) -> GridEdge {
    match side {
        SIDE_S => GridEdge::Hor(i as u32, j as u32),
        SIDE_N => GridEdge::Hor(i as u32, j as u32 + 1),
        SIDE_W => GridEdge::Ver(i as u32, j as u32),
        _ => GridEdge::Ver(i as u32 + 1, j as u32),
    }
}

/// Segment endpoints per marching-squares case. Cases 5 and 10 need the cell
/// center to pick between the two pairings.
fn cell_segments(bits: u8, center_inside: impl FnOnce() -> bool) -> ([(u8, u8); 2], usize) {
    let one = |a, b| ([(a, b), (0, 0)], 1);
    match bits {
        0 | 15 => ([(0, 0); 2], 0),
        1 => one(SIDE_S, SIDE_W),
        2 => one(SIDE_S, SIDE_E),
        3 => one(SIDE_W, SIDE_E),
        4 => one(SIDE_E, SIDE_N),
        5 => {
            if center_inside() {
                ([(SIDE_S, SIDE_E), (SIDE_W, SIDE_N)], 2)
            } else {
                ([(SIDE_S, SIDE_W), (SIDE_E, SIDE_N)], 2)
            }
        }
        6 => one(SIDE_S, SIDE_N),
        7 => one(SIDE_W, SIDE_N),
        8 => one(SIDE_W, SIDE_N),
        9 => one(SIDE_S, SIDE_N),
        10 => {
            if center_inside() {
                ([(SIDE_S, SIDE_W), (SIDE_E, SIDE_N)], 2)
            } else {
                ([(SIDE_S, SIDE_E), (SIDE_W, SIDE_N)], 2)
            }
        }
        11 => one(SIDE_E, SIDE_N),
        12 => one(SIDE_W, SIDE_E),
        13 => one(SIDE_S, SIDE_E),
        _ => one(SIDE_S, SIDE_W),
    }
}

/// Crossing location on a grid edge, refined against the exact H.
///
/// Vertical edges solve p^2 = 2 m (h - V) in closed form; horizontal edges
/// bisect V along the segment.
fn crossing_point(
    model: &HamiltonianModel,
    domain: &BoxDomain,
    grid: &NodeGrid,
    h: f64,
    e: GridEdge,
) -> (f64, f64) {
    match e {
        GridEdge::Hor(i, j) => {
            let (i, j) = (i as usize, j as usize);
            let (q0, q1) = (domain.q_node(i), domain.q_node(i + 1));
            let p = domain.p_node(j);
            let target = h - 0.5 * p * p / model.mass();
            let f = |q: f64| model.potential().value(q) - target;
            let (f0, f1) = (f(q0), f(q1));
            let q = if f0 == 0.0 {
                q0
            } else if f1 == 0.0 {
                q1
            } else if f0 * f1 < 0.0 {
                bisect(q0, q1, 1e-12, f)
            } else {
                // node values straddle h but the exact potential does not:
                // fall back to the interpolant on the sampled values
                let (v0, v1) = (grid.value(i, j), grid.value(i + 1, j));
                q0 + (h - v0) / (v1 - v0) * (q1 - q0)
            };
            (q, p)
        }
        GridEdge::Ver(i, j) => {
            let (i, j) = (i as usize, j as usize);
            let q = domain.q_node(i);
            let (p0, p1) = (domain.p_node(j), domain.p_node(j + 1));
            let root2 = 2.0 * model.mass() * (h - model.potential().value(q));
            if root2 >= 0.0 {
                let pr = root2.sqrt();
                let lo = p0.min(p1) - 1e-12;
                let hi = p0.max(p1) + 1e-12;
                if pr >= lo && pr <= hi {
                    return (q, pr);
                }
                if -pr >= lo && -pr <= hi {
                    return (q, -pr);
                }
            }
            let (v0, v1) = (grid.value(i, j), grid.value(i, j + 1));
            (q, p0 + (h - v0) / (v1 - v0) * (p1 - p0))
        }
    }
}

/// All closed components of the level set {H = h} as polygons.
///
/// Errors with [`Error::BoxTooSmall`] if the level can reach the domain
/// boundary.
pub fn extract_components(
    model: &HamiltonianModel,
    domain: &BoxDomain,
    grid: &NodeGrid,
    h: f64,
) -> Result<Vec<LevelPolygon>> {
    if grid.boundary_min() <= h {
        return Err(Error::BoxTooSmall(format!(
            "level {h} reaches the domain boundary (boundary min {})",
            grid.boundary_min()
        )));
    }

    let mut segs: Vec<(GridEdge, GridEdge)> = Vec::new();
    for i in 0..grid.nq {
        for j in 0..grid.np {
            let bits = (grid.value(i, j) < h) as u8
                | ((grid.value(i + 1, j) < h) as u8) << 1
                | ((grid.value(i + 1, j + 1) < h) as u8) << 2
                | ((grid.value(i, j + 1) < h) as u8) << 3;
            let (pairs, n) = cell_segments(bits, || {
                let qc = 0.5 * (domain.q_node(i) + domain.q_node(i + 1));
                let pc = 0.5 * (domain.p_node(j) + domain.p_node(j + 1));
                model.energy(qc, pc) < h
            });
            for &(a, b) in &pairs[..n] {
                segs.push((side_edge(i, j, a), side_edge(i, j, b)));
            }
        }
    }
    if segs.is_empty() {
        return Ok(Vec::new());
    }

    let mut incident: HashMap<GridEdge, [usize; 2]> = HashMap::with_capacity(segs.len());
    for (s, &(a, b)) in segs.iter().enumerate() {
        for e in [a, b] {
            let slot = incident.entry(e).or_insert([usize::MAX; 2]);
            if slot[0] == usize::MAX {
                slot[0] = s;
            } else if slot[1] == usize::MAX {
                slot[1] = s;
            } else {
                return Err(Error::TopologyInconsistent(format!(
                    "grid edge {e:?} crossed by more than two segments at level {h}"
                )));
            }
        }
    }
    for (&e, slot) in &incident {
        if slot[1] == usize::MAX {
            let on_boundary = match e {
                GridEdge::Hor(_, j) => j == 0 || j as usize == grid.np,
                GridEdge::Ver(i, _) => i == 0 || i as usize == grid.nq,
            };
            if on_boundary {
                return Err(Error::BoxTooSmall(format!(
                    "level {h} crosses the domain boundary"
                )));
            }
            return Err(Error::TopologyInconsistent(format!(
                "dangling level-curve segment at {e:?}, level {h}"
            )));
        }
    }

    let mut point_cache: HashMap<GridEdge, (f64, f64)> = HashMap::with_capacity(incident.len());
    let mut point = |e: GridEdge| {
        *point_cache
            .entry(e)
            .or_insert_with(|| crossing_point(model, domain, grid, h, e))
    };

    let mut visited = vec![false; segs.len()];
    let mut loops = Vec::new();
    for start in 0..segs.len() {
        if visited[start] {
            continue;
        }
        let mut points = Vec::new();
        let mut cur = start;
        let mut enter = segs[start].0;
        loop {
            visited[cur] = true;
            points.push(point(enter));
            let exit = if segs[cur].0 == enter { segs[cur].1 } else { segs[cur].0 };
            let pair = incident[&exit];
            let next = if pair[0] == cur { pair[1] } else { pair[0] };
            enter = exit;
            cur = next;
            if cur == start {
                break;
            }
        }
        loops.push(LevelPolygon { h, points });
    }
    Ok(loops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Potential;

    fn harmonic() -> (HamiltonianModel, BoxDomain) {
        let m = HamiltonianModel::new(1.0, Potential::Harmonic { k: 1.0 }).unwrap();
        let d = BoxDomain::square(2.0, 256).unwrap();
        (m, d)
    }

    #[test]
    fn harmonic_level_is_one_circle_of_known_area() {
        let (m, d) = harmonic();
        let grid = NodeGrid::sample(&m, &d);
        // H = (q^2 + p^2) / 2 = 0.5 is the unit circle, area pi
        let comps = extract_components(&m, &d, &grid, 0.5).unwrap();
        assert_eq!(comps.len(), 1);
        let area = comps[0].area();
        assert!((area - std::f64::consts::PI).abs() < 1e-3, "area {area}");
        // every vertex lies on the exact level curve
        for &(q, p) in &comps[0].points {
            assert!((m.energy(q, p) - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn double_well_splits_below_barrier() {
        let m = HamiltonianModel::new(1.0, Potential::DoubleWell { a: 1.0, b: 1.0 }).unwrap();
        let d = BoxDomain::square(2.5, 256).unwrap();
        let grid = NodeGrid::sample(&m, &d);
        let low = extract_components(&m, &d, &grid, 0.125).unwrap();
        assert_eq!(low.len(), 2);
        let high = extract_components(&m, &d, &grid, 0.5).unwrap();
        assert_eq!(high.len(), 1);
        // lobes sit on either side of q = 0
        let c0 = low[0].points.iter().map(|p| p.0).sum::<f64>() / low[0].points.len() as f64;
        let c1 = low[1].points.iter().map(|p| p.0).sum::<f64>() / low[1].points.len() as f64;
        assert!(c0 * c1 < 0.0);
    }

    #[test]
    fn pip_agrees_with_energy() {
        let (m, d) = harmonic();
        let grid = NodeGrid::sample(&m, &d);
        let comps = extract_components(&m, &d, &grid, 0.5).unwrap();
        let poly = &comps[0];
        for (q, p) in [(0.0, 0.0), (0.5, 0.5), (0.9, 0.0), (1.1, 0.0), (0.8, 0.8), (-1.5, 0.3)] {
            let inside_exact = m.energy(q, p) < 0.5;
            assert_eq!(poly.contains(q, p), inside_exact, "at ({q}, {p})");
        }
    }

    #[test]
    fn level_touching_boundary_is_rejected() {
        let (m, d) = harmonic();
        let grid = NodeGrid::sample(&m, &d);
        assert!(matches!(
            extract_components(&m, &d, &grid, 2.1),
            Err(Error::BoxTooSmall(_))
        ));
    }

    #[test]
    fn signed_area_orientation_consistent() {
        let (m, d) = harmonic();
        let grid = NodeGrid::sample(&m, &d);
        let comps = extract_components(&m, &d, &grid, 0.3).unwrap();
        // orientation is consistent within a loop: area from shoelace equals
        // the unsigned area of the disc pi * 2h within discretization error
        assert!((comps[0].area() - std::f64::consts::PI * 0.6).abs() < 1e-3);
    }
}
