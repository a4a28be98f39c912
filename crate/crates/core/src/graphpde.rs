//! Diffusion on the metric graph: the coarse-grained limit equation.
//!
//! Unknown is f = rho_hat / T per edge (the level-set density divided by the
//! orbit time), which is the quantity that is continuous across vertices.
//! The equation in divergence form is d_t (T f) = d_h (TA d_h f), with flux
//! balance at saddles and no condition at minima (TA degenerates to zero) or
//! at the cap (zero-flux face, matching the reflecting phase-space box).
//!
//! Discretization: finite volumes on uniform cells per edge, implicit Euler.
//! Saddle vertices enter as algebraic flux-balance rows; the bordered system
//! [A B; C D] is solved through a Schur complement on the handful of vertex
//! unknowns, with A prefactored per edge. Off-diagonals are nonpositive and
//! the row sums nonnegative, so the step operator is an M-matrix: positivity
//! is preserved and mass is conserved to rounding.

use serde::Serialize;

use crate::coeffs::CoefficientTable;
use crate::error::{Error, Result};
use crate::numerics::{DenseLu, Tridiag};
use crate::reeb::{GraphHistogram, ReebGraph, VertexKind};

#[derive(Clone, Debug)]
pub struct GraphMeshOpts {
    /// Target total node count; cells are uniform within each edge.
    pub nodes_hint: usize,
    /// Excluded fraction of an edge's span next to a saddle vertex.
    pub saddle_exclusion_rel: f64,
    /// Excluded fraction next to a minimum vertex.
    pub min_exclusion_rel: f64,
}

impl Default for GraphMeshOpts {
    fn default() -> Self {
        Self { nodes_hint: 400, saddle_exclusion_rel: 1e-3, min_exclusion_rel: 1e-4 }
    }
}

/// Uniform cell mesh on one edge. Node i sits at the center of cell i.
#[derive(Clone, Debug)]
pub struct EdgeMesh {
    /// 1-based edge id matching the graph.
    pub edge: usize,
    /// Meshed interval (edge span minus the vertex exclusion zones).
    pub a: f64,
    pub b: f64,
    pub n: usize,
    pub dh: f64,
    /// Global index of node 0.
    pub offset: usize,
    /// T at the nodes.
    pub t_node: Vec<f64>,
    /// TA at the n - 1 interior faces.
    pub ta_face: Vec<f64>,
    pub lower_kind: VertexKind,
    pub upper_kind: VertexKind,
}

impl EdgeMesh {
    #[inline]
    pub fn node_h(&self, i: usize) -> f64 {
        self.a + (i as f64 + 0.5) * self.dh
    }
}

/// One saddle vertex constraint: flux balance over the incident edge ends.
#[derive(Clone, Debug)]
struct SaddleCoupling {
    /// (global node index, coupling weight TA_vertex / delta_h).
    terms: Vec<(usize, f64)>,
}

#[derive(Clone, Debug)]
pub struct GraphMesh {
    pub edges: Vec<EdgeMesh>,
    saddles: Vec<SaddleCoupling>,
    pub total_nodes: usize,
    /// Cell masses per unit f: T_i * dh of the owning edge.
    pub cell_weight: Vec<f64>,
}

impl GraphMesh {
    pub fn build(graph: &ReebGraph, table: &CoefficientTable, opts: &GraphMeshOpts) -> Result<Self> {
        let total_span: f64 = graph.edges().iter().map(|e| e.h_hi - e.h_lo).sum();
        let dh_target = total_span / opts.nodes_hint.max(16) as f64;

        let mut edges = Vec::with_capacity(graph.edges().len());
        let mut offset = 0usize;
        for e in graph.edges() {
            let tab = table.edge(e.id);
            if tab.edge != e.id {
                return Err(Error::MeshTableMismatch(format!(
                    "table edge {} does not match graph edge {}",
                    tab.edge, e.id
                )));
            }
            let span = e.h_hi - e.h_lo;
            let lower_kind = graph.vertices()[e.lower - 1].kind;
            let upper_kind = graph.vertices()[e.upper - 1].kind;
            let d_lo = match lower_kind {
                VertexKind::Minimum => opts.min_exclusion_rel * span,
                _ => opts.saddle_exclusion_rel * span,
            };
            let d_hi = match upper_kind {
                VertexKind::Top => 0.0,
                _ => opts.saddle_exclusion_rel * span,
            };
            let (a, b) = (e.h_lo + d_lo, e.h_hi - d_hi);
            let n = ((b - a) / dh_target).round().max(4.0) as usize;
            let dh = (b - a) / n as f64;
            let t_node: Vec<f64> = (0..n).map(|i| tab.t(a + (i as f64 + 0.5) * dh)).collect();
            let ta_face: Vec<f64> = (1..n).map(|i| tab.ta(a + i as f64 * dh)).collect();
            if t_node.iter().any(|&t| !(t > 0.0)) || ta_face.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::MeshTableMismatch(format!(
                    "nonpositive T or TA on edge {}",
                    e.id
                )));
            }
            edges.push(EdgeMesh {
                edge: e.id,
                a,
                b,
                n,
                dh,
                offset,
                t_node,
                ta_face,
                lower_kind,
                upper_kind,
            });
            offset += n;
        }

        let mut saddles = Vec::new();
        for v in graph.vertices().iter().filter(|v| v.kind == VertexKind::Saddle) {
            let mut terms = Vec::new();
            for (ei, e) in graph.edges().iter().enumerate() {
                let tab = table.edge(e.id);
                let em = &edges[ei];
                if e.upper == v.id {
                    // saddle above the edge: couple the last cell
                    let delta = (e.h_hi - em.b) + 0.5 * em.dh;
                    terms.push((em.offset + em.n - 1, tab.ta_hi / delta));
                }
                if e.lower == v.id {
                    let delta = (em.a - e.h_lo) + 0.5 * em.dh;
                    terms.push((em.offset, tab.ta_lo / delta));
                }
            }
            if terms.len() != 3 {
                return Err(Error::TopologyInconsistent(format!(
                    "saddle vertex {} couples {} edge ends, expected 3",
                    v.id,
                    terms.len()
                )));
            }
            if terms.iter().any(|&(_, w)| !(w > 0.0)) {
                return Err(Error::MeshTableMismatch(format!(
                    "nonpositive vertex coupling weight at vertex {}",
                    v.id
                )));
            }
            saddles.push(SaddleCoupling { terms });
        }

        let mut cell_weight = vec![0.0; offset];
        for em in &edges {
            for i in 0..em.n {
                cell_weight[em.offset + i] = em.t_node[i] * em.dh;
            }
        }
        Ok(Self { edges, saddles, total_nodes: offset, cell_weight })
    }

    pub fn edge_mesh(&self, edge_id: usize) -> &EdgeMesh {
        &self.edges[edge_id - 1]
    }

    /// Total mass of a node vector f.
    pub fn mass(&self, f: &[f64]) -> f64 {
        crate::par::sum_indexed(self.total_nodes, |i| self.cell_weight[i] * f[i])
    }

    /// Mass-weighted mean energy.
    pub fn mean_h(&self, f: &[f64]) -> f64 {
        let mut num = 0.0;
        for em in &self.edges {
            for i in 0..em.n {
                num += em.node_h(i) * self.cell_weight[em.offset + i] * f[em.offset + i];
            }
        }
        num / self.mass(f)
    }

    /// Point mass at (edge, h0), spread over the containing cell.
    pub fn delta(&self, edge_id: usize, h0: f64, mass: f64) -> Vec<f64> {
        let mut f = vec![0.0; self.total_nodes];
        let em = self.edge_mesh(edge_id);
        let i = (((h0 - em.a) / em.dh).floor().max(0.0) as usize).min(em.n - 1);
        f[em.offset + i] = mass / self.cell_weight[em.offset + i];
        f
    }

    /// Project a per-edge energy histogram onto the mesh: piecewise-constant
    /// density rho_hat per bin, f = rho_hat / T at each node.
    pub fn project_histogram(&self, hist: &GraphHistogram) -> Result<Vec<f64>> {
        if hist.masses.len() != self.edges.len() {
            return Err(Error::SnapshotMismatch("histogram/mesh edge count".into()));
        }
        let mut f = vec![0.0; self.total_nodes];
        for (ei, em) in self.edges.iter().enumerate() {
            let (lo, hi) = hist.ranges[ei];
            let bw = (hi - lo) / hist.bins_per_edge as f64;
            for i in 0..em.n {
                let h = em.node_h(i);
                let bin =
                    (((h - lo) / bw).floor().max(0.0) as usize).min(hist.bins_per_edge - 1);
                let rho = hist.masses[ei][bin] / bw;
                f[em.offset + i] = rho / em.t_node[i];
            }
        }
        Ok(f)
    }

    /// Bin a node vector into a per-edge energy histogram with the graph's
    /// edge ranges, splitting cell mass by overlap fraction.
    pub fn to_histogram(&self, graph: &ReebGraph, f: &[f64], bins: usize) -> GraphHistogram {
        let mut hist = GraphHistogram::zeros(graph, bins);
        for (ei, em) in self.edges.iter().enumerate() {
            let (lo, hi) = hist.ranges[ei];
            let bw = (hi - lo) / bins as f64;
            for i in 0..em.n {
                let cell_lo = em.a + i as f64 * em.dh;
                let cell_hi = cell_lo + em.dh;
                let m = self.cell_weight[em.offset + i] * f[em.offset + i];
                // distribute over the bins the cell overlaps
                let b0 = (((cell_lo - lo) / bw).floor().max(0.0) as usize).min(bins - 1);
                let b1 = (((cell_hi - lo) / bw).ceil().max(1.0) as usize).min(bins);
                for b in b0..b1 {
                    let (blo, bhi) = (lo + b as f64 * bw, lo + (b + 1) as f64 * bw);
                    let overlap = (cell_hi.min(bhi) - cell_lo.max(blo)).max(0.0);
                    hist.masses[ei][b] += m * overlap / em.dh;
                }
            }
        }
        hist.total_weight = hist.kept_mass();
        hist
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GraphRunDiagnostics {
    /// Largest |mass(n+1) - mass(n)| / mass(0) over all steps.
    pub max_mass_drift_per_step: f64,
    /// Largest flux-balance residual at the vertices, relative.
    pub max_vertex_residual: f64,
    pub steps: usize,
}

pub struct GraphSolution {
    pub mesh: GraphMesh,
    pub f: Vec<f64>,
    /// Vertex values at the final time, one per saddle.
    pub vertex_values: Vec<f64>,
    pub snapshots: Vec<(f64, Vec<f64>)>,
    /// Saddle flux residuals at the snapshot times, same saddle order as
    /// `vertex_values`.
    pub vertex_snapshots: Vec<(f64, Vec<f64>)>,
    pub diagnostics: GraphRunDiagnostics,
}

pub struct GraphSolver {
    mesh: GraphMesh,
    dt: f64,
    factored: Vec<Tridiag>,
    /// Columns of A^{-1} B, one per saddle vertex.
    ainvb: Vec<Vec<f64>>,
    schur: DenseLu,
    /// Scratch order: solve A y = rhs, z = S^{-1}(-C y), f = y - ainvb z.
    c_rows: Vec<Vec<(usize, f64)>>,
}

impl GraphSolver {
    pub fn new(
        graph: &ReebGraph,
        table: &CoefficientTable,
        mesh_opts: &GraphMeshOpts,
        dt: f64,
    ) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParams(format!("graph dt must be positive, got {dt}")));
        }
        let mesh = GraphMesh::build(graph, table, mesh_opts)?;

        // per-edge tridiagonal blocks of M + dt * stiffness
        let mut sub = vec![0.0; mesh.total_nodes];
        let mut diag = vec![0.0; mesh.total_nodes];
        let mut sup = vec![0.0; mesh.total_nodes];
        for em in &mesh.edges {
            for i in 0..em.n {
                diag[em.offset + i] = mesh.cell_weight[em.offset + i];
            }
            for i in 0..em.n - 1 {
                let k = dt * em.ta_face[i] / em.dh;
                diag[em.offset + i] += k;
                diag[em.offset + i + 1] += k;
                sup[em.offset + i] -= k;
                sub[em.offset + i + 1] -= k;
            }
        }
        // saddle faces add to the adjacent diagonals and to B
        for s in &mesh.saddles {
            for &(g, w) in &s.terms {
                diag[g] += dt * w;
            }
        }

        let mut factored = Vec::with_capacity(mesh.edges.len());
        for em in &mesh.edges {
            let r = em.offset..em.offset + em.n;
            factored.push(Tridiag::factor(&sub[r.clone()], &diag[r.clone()], &sup[r])?);
        }

        // A^{-1} B columns and the Schur complement D - C A^{-1} B
        let ns = mesh.saddles.len();
        let mut ainvb = Vec::with_capacity(ns);
        for s in &mesh.saddles {
            let mut col = vec![0.0; mesh.total_nodes];
            for &(g, w) in &s.terms {
                col[g] = -dt * w;
            }
            solve_block(&mesh, &factored, &mut col);
            ainvb.push(col);
        }
        let c_rows: Vec<Vec<(usize, f64)>> =
            mesh.saddles.iter().map(|s| s.terms.clone()).collect();
        let mut schur = vec![0.0; ns * ns];
        for r in 0..ns {
            let w_total: f64 = c_rows[r].iter().map(|&(_, w)| w).sum();
            for c in 0..ns {
                let mut v = if r == c { -w_total } else { 0.0 };
                for &(g, w) in &c_rows[r] {
                    v -= w * ainvb[c][g];
                }
                schur[r * ns + c] = v;
            }
        }
        let schur = if ns > 0 {
            DenseLu::factor(schur, ns)?
        } else {
            DenseLu::factor(vec![1.0], 1)?
        };

        Ok(Self { mesh, dt, factored, ainvb, schur, c_rows })
    }

    pub fn mesh(&self) -> &GraphMesh {
        &self.mesh
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// One implicit Euler step; returns the vertex values.
    pub fn step(&self, f: &mut [f64]) -> Vec<f64> {
        let ns = self.mesh.saddles.len();
        for i in 0..self.mesh.total_nodes {
            f[i] *= self.mesh.cell_weight[i];
        }
        solve_block(&self.mesh, &self.factored, f);
        if ns == 0 {
            return Vec::new();
        }
        let mut rv = vec![0.0; ns];
        for r in 0..ns {
            for &(g, w) in &self.c_rows[r] {
                rv[r] -= w * f[g];
            }
        }
        let z = self.schur.solve(&rv);
        for (s, zs) in z.iter().enumerate() {
            let col = &self.ainvb[s];
            for i in 0..self.mesh.total_nodes {
                f[i] -= col[i] * zs;
            }
        }
        z
    }

    /// Flux-balance residual at each vertex for the current state, relative
    /// to the largest incident term.
    /// Relative flux-balance residual at each saddle, ordered as the saddle
    /// vertices appear in the graph's vertex list.
    pub fn vertex_residuals(&self, f: &[f64], z: &[f64]) -> Vec<f64> {
        self.c_rows
            .iter()
            .enumerate()
            .map(|(s, row)| {
                let mut r = 0.0;
                let mut scale: f64 = 1e-300;
                for &(g, w) in row {
                    r += w * (f[g] - z[s]);
                    scale = scale.max((w * f[g]).abs());
                }
                r.abs() / scale
            })
            .collect()
    }

    fn vertex_residual(&self, f: &[f64], z: &[f64]) -> f64 {
        self.vertex_residuals(f, z).into_iter().fold(0.0, f64::max)
    }

    /// Evolve from `f0` to `t_end`, capturing snapshots at the first step
    /// boundary past each requested time.
    pub fn evolve(&self, f0: &[f64], t_end: f64, snapshot_times: &[f64]) -> Result<GraphSolution> {
        let mut f = f0.to_vec();
        let mass0 = self.mesh.mass(&f);
        if !(mass0 > 0.0) {
            return Err(Error::EmptySource);
        }
        let steps = (t_end / self.dt).ceil() as usize;
        let mut snapshots = Vec::new();
        let mut vertex_snapshots = Vec::new();
        let mut next_snap = 0usize;
        let mut max_drift: f64 = 0.0;
        let mut max_vr: f64 = 0.0;
        let mut prev_mass = mass0;
        let mut z = Vec::new();
        for k in 0..steps {
            z = self.step(&mut f);
            let t = (k + 1) as f64 * self.dt;
            let m = self.mesh.mass(&f);
            max_drift = max_drift.max((m - prev_mass).abs() / mass0);
            prev_mass = m;
            max_vr = max_vr.max(self.vertex_residual(&f, &z));
            while next_snap < snapshot_times.len() && t >= snapshot_times[next_snap] - 1e-12 {
                snapshots.push((t, f.clone()));
                vertex_snapshots.push((t, self.vertex_residuals(&f, &z)));
                next_snap += 1;
            }
        }
        Ok(GraphSolution {
            mesh: self.mesh.clone(),
            f,
            vertex_values: z,
            snapshots,
            vertex_snapshots,
            diagnostics: GraphRunDiagnostics {
                max_mass_drift_per_step: max_drift,
                max_vertex_residual: max_vr,
                steps,
            },
        })
    }
}

/// Solve the block-tridiagonal system edge by edge, in place.
fn solve_block(mesh: &GraphMesh, factored: &[Tridiag], x: &mut [f64]) {
    for (em, tri) in mesh.edges.iter().zip(factored) {
        tri.solve_in_place(&mut x[em.offset..em.offset + em.n]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{tabulate, EdgeTable, TabulateOpts};
    use crate::model::{BoxDomain, HamiltonianModel, Potential};
    use crate::reeb::ReebBuildOpts;

    fn harmonic_graph(h_max: f64) -> ReebGraph {
        let m = HamiltonianModel::new(1.0, Potential::Harmonic { k: 1.0 }).unwrap();
        let half = (2.0 * h_max).sqrt() * 1.35;
        let d = BoxDomain::new(-half, half, -half, half, 96, 96).unwrap();
        ReebGraph::build(&m, &d, &ReebBuildOpts::new(h_max)).unwrap()
    }

    /// Closed-form harmonic table: T = 2 pi, TA = 2 pi h, exact.
    fn harmonic_table(h_max: f64, samples: usize) -> CoefficientTable {
        let tau = std::f64::consts::TAU;
        let h: Vec<f64> = (0..samples)
            .map(|k| 1e-6 + (h_max - 1e-6) * k as f64 / (samples - 1) as f64)
            .collect();
        let ta: Vec<f64> = h.iter().map(|&x| tau * x).collect();
        let t = vec![tau; samples];
        CoefficientTable {
            edges: vec![EdgeTable {
                edge: 1,
                h,
                t: t.clone(),
                ta,
                tb: t,
                h_lo: 0.0,
                h_hi: h_max,
                ta_lo: 0.0,
                ta_hi: tau * h_max,
                lower_kind: VertexKind::Minimum,
                upper_kind: VertexKind::Top,
            }],
            saddle_balance: Vec::new(),
        }
    }

    #[test]
    fn harmonic_similarity_solution_tracked() {
        // d_t f = d_h (h d_h f) has the exact solution f = (1/t) e^{-h/t}
        let h_max = 6.0;
        let g = harmonic_graph(h_max);
        let table = harmonic_table(h_max, 200);
        let solver =
            GraphSolver::new(&g, &table, &GraphMeshOpts { nodes_hint: 600, ..Default::default() }, 5e-4)
                .unwrap();
        let mesh = solver.mesh();
        let (t0, t1) = (0.2, 0.5);
        let em = &mesh.edges[0];
        let mut f0 = vec![0.0; mesh.total_nodes];
        for i in 0..em.n {
            f0[i] = (-em.node_h(i) / t0).exp() / t0;
        }
        let sol = solver.evolve(&f0, t1 - t0, &[]).unwrap();
        let mut worst = 0.0_f64;
        for i in 0..em.n {
            let exact = (-em.node_h(i) / t1).exp() / t1;
            worst = worst.max((sol.f[i] - exact).abs());
        }
        // sup-norm error against the similarity solution, scale f(0) = 1/t1
        assert!(worst * t1 < 0.01, "sup error {worst}");
        assert!(sol.diagnostics.max_mass_drift_per_step < 1e-12);
    }

    #[test]
    fn harmonic_mean_energy_grows_at_rate_one_over_m() {
        let h_max = 8.0;
        let g = harmonic_graph(h_max);
        let table = harmonic_table(h_max, 200);
        let solver = GraphSolver::new(&g, &table, &GraphMeshOpts::default(), 1e-3).unwrap();
        let mesh = solver.mesh();
        let f0 = mesh.delta(1, 0.5, 1.0);
        let sol = solver.evolve(&f0, 1.0, &[]).unwrap();
        let rate = (mesh.mean_h(&sol.f) - mesh.mean_h(&f0)) / 1.0;
        // B = 1/m = 1; the cap is far enough that leakage is negligible
        assert!((rate - 1.0).abs() < 0.02, "rate {rate}");
    }

    fn double_well_setup() -> (ReebGraph, CoefficientTable) {
        let m = HamiltonianModel::new(1.0, Potential::DoubleWell { a: 1.0, b: 1.0 }).unwrap();
        let d = BoxDomain::square(2.6, 192).unwrap();
        let g = ReebGraph::build(&m, &d, &ReebBuildOpts::new(1.2)).unwrap();
        let t = tabulate(&g, &TabulateOpts::default()).unwrap();
        (g, t)
    }

    #[test]
    fn double_well_conserves_mass_and_positivity_through_the_saddle() {
        let (g, table) = double_well_setup();
        let solver = GraphSolver::new(&g, &table, &GraphMeshOpts::default(), 1e-3).unwrap();
        let mesh = solver.mesh();
        // all the mass starts deep in the left lobe
        let left = match g.xi(-1.0, 0.1).unwrap() {
            crate::reeb::Classified::OnEdge { edge, .. } => edge,
            other => panic!("{other:?}"),
        };
        let f0 = mesh.delta(left, 0.05, 1.0);
        let sol = solver.evolve(&f0, 0.8, &[]).unwrap();
        assert!(sol.diagnostics.max_mass_drift_per_step < 1e-11);
        assert!(sol.f.iter().all(|&v| v >= 0.0), "implicit M-matrix step keeps positivity");
        assert!(sol.diagnostics.max_vertex_residual < 1e-9);
        // mass has crossed the saddle into the other lobe
        let right = match g.xi(1.0, 0.1).unwrap() {
            crate::reeb::Classified::OnEdge { edge, .. } => edge,
            other => panic!("{other:?}"),
        };
        let hist = mesh.to_histogram(&g, &sol.f, 8);
        assert!(hist.edge_mass(right) > 0.01, "right lobe mass {}", hist.edge_mass(right));
        assert!((hist.kept_mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn histogram_projection_roundtrip_preserves_mass() {
        let (g, table) = double_well_setup();
        let mesh = GraphMesh::build(&g, &table, &GraphMeshOpts::default()).unwrap();
        let f = mesh.delta(3, 0.7, 2.0);
        let hist = mesh.to_histogram(&g, &f, 20);
        assert!((hist.kept_mass() - 2.0).abs() < 1e-12);
        let f2 = mesh.project_histogram(&hist).unwrap();
        assert!((mesh.mass(&f2) - 2.0).abs() < 0.05, "mass {}", mesh.mass(&f2));
    }

    #[test]
    fn long_run_relaxes_to_constant_f() {
        // zero-flux everywhere means the stationary state has TA f' = 0,
        // hence f constant across the whole graph
        let (g, table) = double_well_setup();
        let solver = GraphSolver::new(&g, &table, &GraphMeshOpts::default(), 5e-3).unwrap();
        let mesh = solver.mesh();
        let f0 = mesh.delta(1, 0.1, 1.0);
        let sol = solver.evolve(&f0, 60.0, &[]).unwrap();
        let fmax = sol.f.iter().cloned().fold(f64::MIN, f64::max);
        let fmin = sol.f.iter().cloned().fold(f64::MAX, f64::min);
        assert!(fmax / fmin < 1.02, "spread {} / {}", fmax, fmin);
    }
}
