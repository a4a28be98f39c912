//! Topological reduction of the Hamiltonian phase plane to a metric graph.
//!
//! Points of the graph are connected components of level sets {H = h}. The
//! construction slices the energy range into bands between consecutive
//! distinct critical values, extracts one polygon per level-set component at
//! each band midpoint, and stitches bands by containment: a lower component
//! belongs to the upper polygon that encloses its bottom critical point.
//! Minima open edges, saddles close two edges and open the merged one, and
//! the energy cap truncates whatever is still open.
//!
//! Point classification (the projection map xi) runs through a per-cell label
//! grid validated against the edge's energy range, with an exact cell-graph
//! flood fill as the fallback for the thin shells the labels cannot cover.

pub mod contour;

use std::collections::{HashMap, VecDeque};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    find_critical_points, BoxDomain, CriticalKind, CriticalPoint, CriticalSearch, HamiltonianModel,
};
use contour::{extract_components, LevelPolygon, NodeGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexKind {
    Minimum,
    Saddle,
    /// Artificial vertex where the energy cap truncates an edge.
    Top,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReebVertex {
    /// 1-based public id.
    pub id: usize,
    pub kind: VertexKind,
    pub h: f64,
    pub location: Option<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct ReebEdge {
    /// 1-based public id.
    pub id: usize,
    pub h_lo: f64,
    pub h_hi: f64,
    /// Vertex ids (1-based) at the lower and upper end.
    pub lower: usize,
    pub upper: usize,
    /// Bottom critical location of the component family: the minimum for a
    /// fresh edge, the saddle for a merged edge. Lies strictly inside every
    /// level component of the edge.
    pub seed: (f64, f64),
    /// Sorted indices (into the critical-point list) of the minima whose
    /// wells drain into this edge. Unique per edge.
    pub minima: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct ReebBuildOpts {
    pub h_max: f64,
    /// Labels are extracted at hi - label_fraction * width of each band.
    pub label_fraction: f64,
    /// Tried in order when the label level yields the wrong component count.
    pub fallback_fractions: Vec<f64>,
    pub cluster_abs_tol: f64,
    pub cluster_rel_tol: f64,
    pub dilation_rounds: usize,
    pub critical: CriticalSearch,
}

impl ReebBuildOpts {
    pub fn new(h_max: f64) -> Self {
        Self {
            h_max,
            label_fraction: 0.05,
            fallback_fractions: vec![0.1, 0.2, 0.35, 0.5],
            cluster_abs_tol: 1e-10,
            cluster_rel_tol: 1e-9,
            dilation_rounds: 3,
            critical: CriticalSearch::default(),
        }
    }
}

/// Outcome of projecting a phase point to the graph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Classified {
    OnEdge { edge: usize, h: f64 },
    /// Energy indistinguishable from a saddle value, or inside the
    /// discretization guard band where lobe membership is not decidable.
    NearCritical { h: f64 },
    AboveCap { h: f64 },
}

#[derive(Clone, Copy)]
enum CachedOutcome {
    Edge(usize),
    Near,
}

pub struct ReebGraph {
    model: HamiltonianModel,
    domain: BoxDomain,
    h_max: f64,
    critical: Vec<CriticalPoint>,
    /// Distinct clustered critical values, ascending.
    levels: Vec<f64>,
    level_of: Vec<usize>,
    vertices: Vec<ReebVertex>,
    edges: Vec<ReebEdge>,
    /// Per-cell edge index (0-based) or u32::MAX, row-major iq * np + jp.
    labels: Vec<u32>,
    signature_map: HashMap<Vec<usize>, usize>,
    /// Critical index of each minimum -> its fresh edge index.
    min_edge: HashMap<usize, usize>,
    /// Flat cell -> critical index, for minima only.
    minima_cells: HashMap<usize, usize>,
    /// Energies within this of a critical value are not classifiable.
    value_eps: f64,
    /// Curvature-scaled discretization guard for the flood-fill fallback.
    bfs_guard: f64,
}

impl ReebGraph {
    pub fn build(
        model: &HamiltonianModel,
        domain: &BoxDomain,
        opts: &ReebBuildOpts,
    ) -> Result<Self> {
        let critical = find_critical_points(model, domain, &opts.critical)?;
        if critical.is_empty() {
            return Err(Error::InvalidDomain("no critical points inside the box".into()));
        }
        if let Some(c) = critical.iter().find(|c| c.degenerate) {
            return Err(Error::DegenerateCritical { q: c.q, hess: c.curvature });
        }

        // cluster critical values into distinct levels
        let mut order: Vec<usize> = (0..critical.len()).collect();
        order.sort_by(|&a, &b| critical[a].value.total_cmp(&critical[b].value));
        let spread = critical[order[order.len() - 1]].value - critical[order[0]].value;
        let cluster_tol = opts.cluster_abs_tol.max(opts.cluster_rel_tol * spread);
        let mut levels: Vec<f64> = Vec::new();
        let mut level_of = vec![0usize; critical.len()];
        let mut cluster: Vec<usize> = Vec::new();
        let flush = |cluster: &mut Vec<usize>, levels: &mut Vec<f64>, level_of: &mut [usize]| {
            if cluster.is_empty() {
                return;
            }
            let v = cluster.iter().map(|&i| critical[i].value).sum::<f64>() / cluster.len() as f64;
            for &i in cluster.iter() {
                level_of[i] = levels.len();
            }
            levels.push(v);
            cluster.clear();
        };
        for &i in &order {
            if let Some(&last) = cluster.last() {
                if critical[i].value - critical[last].value > cluster_tol {
                    flush(&mut cluster, &mut levels, &mut level_of);
                }
            }
            cluster.push(i);
        }
        flush(&mut cluster, &mut levels, &mut level_of);

        let max_crit = *levels.last().unwrap();
        let h_scale = spread.max(opts.h_max.abs()).max(1.0);
        if opts.h_max <= max_crit + 1e-9 * h_scale {
            return Err(Error::CapBelowCritical { h_max: opts.h_max, max_crit });
        }

        let grid = NodeGrid::sample(model, domain);
        if grid.boundary_min() <= opts.h_max {
            return Err(Error::BoxTooSmall(format!(
                "sublevel set at the cap {} reaches the box boundary (boundary min {})",
                opts.h_max,
                grid.boundary_min()
            )));
        }

        // stitch bands bottom-up
        struct OpenEdge {
            idx: usize,
            rep: (f64, f64),
        }
        struct BandRecord {
            lo: f64,
            hi: f64,
            edges: Vec<usize>,
        }

        let mut vertices: Vec<ReebVertex> = Vec::new();
        let mut edges: Vec<ReebEdge> = Vec::new();
        let mut open: Vec<OpenEdge> = Vec::new();
        let mut records: Vec<BandRecord> = Vec::new();

        for bi in 0..levels.len() {
            let lo = levels[bi];
            let hi = if bi + 1 < levels.len() { levels[bi + 1] } else { opts.h_max };
            let mid = 0.5 * (lo + hi);
            let polys = extract_components(model, domain, &grid, mid)?;
            let floor_crit: Vec<usize> =
                (0..critical.len()).filter(|&i| level_of[i] == bi).collect();

            let mut consumed_open = vec![false; open.len()];
            let mut consumed_crit = vec![false; floor_crit.len()];
            let mut next_open: Vec<OpenEdge> = Vec::new();

            for poly in &polys {
                let s: Vec<usize> = (0..open.len())
                    .filter(|&k| poly.contains(open[k].rep.0, open[k].rep.1))
                    .collect();
                let k: Vec<usize> = (0..floor_crit.len())
                    .filter(|&k| poly.contains(critical[floor_crit[k]].q, 0.0))
                    .collect();
                for &i in &s {
                    consumed_open[i] = true;
                }
                for &i in &k {
                    consumed_crit[i] = true;
                }

                match (s.len(), k.len()) {
                    (1, 0) => {
                        next_open.push(OpenEdge { idx: open[s[0]].idx, rep: open[s[0]].rep });
                    }
                    (2, 1) if critical[floor_crit[k[0]]].kind == CriticalKind::Saddle => {
                        let sad = &critical[floor_crit[k[0]]];
                        let vid = vertices.len() + 1;
                        vertices.push(ReebVertex {
                            id: vid,
                            kind: VertexKind::Saddle,
                            h: lo,
                            location: Some((sad.q, 0.0)),
                        });
                        let mut minima = Vec::new();
                        for &si in &s {
                            let e = &mut edges[open[si].idx];
                            e.h_hi = lo;
                            e.upper = vid;
                            minima.extend_from_slice(&e.minima);
                        }
                        minima.sort_unstable();
                        let idx = edges.len();
                        edges.push(ReebEdge {
                            id: idx + 1,
                            h_lo: lo,
                            h_hi: f64::NAN,
                            lower: vid,
                            upper: 0,
                            seed: (sad.q, 0.0),
                            minima,
                        });
                        next_open.push(OpenEdge { idx, rep: (sad.q, 0.0) });
                    }
                    (0, 1) if critical[floor_crit[k[0]]].kind == CriticalKind::Minimum => {
                        let min = &critical[floor_crit[k[0]]];
                        let vid = vertices.len() + 1;
                        vertices.push(ReebVertex {
                            id: vid,
                            kind: VertexKind::Minimum,
                            h: min.value,
                            location: Some((min.q, 0.0)),
                        });
                        let idx = edges.len();
                        edges.push(ReebEdge {
                            id: idx + 1,
                            h_lo: lo,
                            h_hi: f64::NAN,
                            lower: vid,
                            upper: 0,
                            seed: (min.q, 0.0),
                            minima: vec![floor_crit[k[0]]],
                        });
                        next_open.push(OpenEdge { idx, rep: (min.q, 0.0) });
                    }
                    (ns, nk) => {
                        return Err(Error::TopologyInconsistent(format!(
                            "band [{lo}, {hi}]: component with {ns} lower edges and {nk} \
                             critical points cannot be stitched"
                        )));
                    }
                }
            }
            if let Some(i) = consumed_open.iter().position(|c| !c) {
                return Err(Error::TopologyInconsistent(format!(
                    "edge {} lost between bands at level {lo}",
                    edges[open[i].idx].id
                )));
            }
            if let Some(i) = consumed_crit.iter().position(|c| !c) {
                return Err(Error::TopologyInconsistent(format!(
                    "critical point at q = {} not inside any component of its band",
                    critical[floor_crit[i]].q
                )));
            }
            open = next_open;
            records.push(BandRecord { lo, hi, edges: open.iter().map(|o| o.idx).collect() });
        }

        if open.len() != 1 {
            return Err(Error::TopologyInconsistent(format!(
                "{} components remain open at the cap; expected one",
                open.len()
            )));
        }
        for oe in &open {
            let vid = vertices.len() + 1;
            vertices.push(ReebVertex { id: vid, kind: VertexKind::Top, h: opts.h_max, location: None });
            let e = &mut edges[oe.idx];
            e.h_hi = opts.h_max;
            e.upper = vid;
        }

        // per-cell labels: fill each band's components at a level close to
        // the band top so the labels cover almost the whole band
        let mut labels = vec![u32::MAX; domain.cells()];
        for rec in &records {
            let width = rec.hi - rec.lo;
            let mut fractions = vec![opts.label_fraction];
            fractions.extend_from_slice(&opts.fallback_fractions);
            let mut chosen: Option<Vec<LevelPolygon>> = None;
            for frac in fractions {
                let polys = extract_components(model, domain, &grid, rec.hi - frac * width)?;
                if polys.len() == rec.edges.len() {
                    chosen = Some(polys);
                    break;
                }
            }
            let polys = chosen.ok_or_else(|| {
                Error::TopologyInconsistent(format!(
                    "no label level in band [{}, {}] matches its {} edges",
                    rec.lo,
                    rec.hi,
                    rec.edges.len()
                ))
            })?;
            for poly in &polys {
                let owners: Vec<usize> = rec
                    .edges
                    .iter()
                    .copied()
                    .filter(|&e| poly.contains(edges[e].seed.0, edges[e].seed.1))
                    .collect();
                if owners.len() != 1 {
                    return Err(Error::TopologyInconsistent(format!(
                        "label component in band [{}, {}] claimed by {} edges",
                        rec.lo,
                        rec.hi,
                        owners.len()
                    )));
                }
                scanline_fill(poly, domain, &mut labels, owners[0] as u32);
            }
        }

        // dilate into the unlabeled shell under the cap
        let node_grid_hess = {
            let mut m: f64 = 0.0;
            for i in 0..=domain.nq {
                m = m.max(model.potential().hess(domain.q_node(i)).abs());
            }
            m
        };
        for _ in 0..opts.dilation_rounds {
            let mut updates: Vec<(usize, u32)> = Vec::new();
            for iq in 0..domain.nq {
                for jp in 0..domain.np {
                    let f = domain.flat(iq, jp);
                    if labels[f] != u32::MAX {
                        continue;
                    }
                    if model.energy(domain.q_center(iq), domain.p_center(jp)) > opts.h_max {
                        continue;
                    }
                    let mut best = u32::MAX;
                    if iq > 0 {
                        best = best.min(labels[domain.flat(iq - 1, jp)]);
                    }
                    if iq + 1 < domain.nq {
                        best = best.min(labels[domain.flat(iq + 1, jp)]);
                    }
                    if jp > 0 {
                        best = best.min(labels[domain.flat(iq, jp - 1)]);
                    }
                    if jp + 1 < domain.np {
                        best = best.min(labels[domain.flat(iq, jp + 1)]);
                    }
                    if best != u32::MAX {
                        updates.push((f, best));
                    }
                }
            }
            if updates.is_empty() {
                break;
            }
            for (f, l) in updates {
                labels[f] = l;
            }
        }

        let signature_map =
            edges.iter().enumerate().map(|(i, e)| (e.minima.clone(), i)).collect();
        let min_edge = edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.minima.len() == 1 && e.h_lo == critical[e.minima[0]].value)
            .map(|(i, e)| (e.minima[0], i))
            .collect();
        let minima_cells = critical
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == CriticalKind::Minimum)
            .filter_map(|(i, c)| domain.cell_of(c.q, 0.0).map(|(iq, jp)| (domain.flat(iq, jp), i)))
            .collect();

        let dq = domain.dq();
        let dp = domain.dp();
        let bfs_guard = 2.0 * (dq * dq * node_grid_hess + dp * dp / model.mass());

        Ok(Self {
            model: model.clone(),
            domain: domain.clone(),
            h_max: opts.h_max,
            critical,
            levels,
            level_of,
            vertices,
            edges,
            labels,
            signature_map,
            min_edge,
            minima_cells,
            value_eps: 1e-12 * h_scale,
            bfs_guard,
        })
    }

    pub fn model(&self) -> &HamiltonianModel {
        &self.model
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn h_min(&self) -> f64 {
        self.levels[0]
    }

    pub fn vertices(&self) -> &[ReebVertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[ReebEdge] {
        &self.edges
    }

    pub fn edge_by_id(&self, id: usize) -> &ReebEdge {
        &self.edges[id - 1]
    }

    pub fn critical_points(&self) -> &[CriticalPoint] {
        &self.critical
    }

    /// Distinct critical values, ascending.
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Half-width of the energy sliver around saddle values where lobe
    /// membership is below discretization resolution.
    pub fn guard_width(&self) -> f64 {
        self.bfs_guard
    }

    /// The projection map: phase point to (edge, energy).
    pub fn xi(&self, q: f64, p: f64) -> Result<Classified> {
        self.classify_point(q, p)
    }

    pub fn classify_point(&self, q: f64, p: f64) -> Result<Classified> {
        self.classify_inner(q, p, &mut None)
    }

    fn classify_inner(
        &self,
        q: f64,
        p: f64,
        cache: &mut Option<&mut HashMap<(usize, usize), CachedOutcome>>,
    ) -> Result<Classified> {
        let h = self.model.energy(q, p);
        if h > self.h_max {
            return Ok(Classified::AboveCap { h });
        }

        // energies indistinguishable from a critical value resolve to the
        // minimum's fresh edge when the level hosts only minima, and are
        // otherwise not classifiable
        let nearest = self
            .levels
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - h).abs().total_cmp(&(b.1 - h).abs()))
            .unwrap();
        if (nearest.1 - h).abs() <= self.value_eps {
            let members: Vec<usize> =
                (0..self.critical.len()).filter(|&i| self.level_of[i] == nearest.0).collect();
            if members.iter().all(|&i| self.critical[i].kind == CriticalKind::Minimum) {
                let closest = members
                    .iter()
                    .copied()
                    .min_by(|&a, &b| {
                        (self.critical[a].q - q).abs().total_cmp(&(self.critical[b].q - q).abs())
                    })
                    .unwrap();
                let idx = self.min_edge[&closest];
                return Ok(Classified::OnEdge { edge: self.edges[idx].id, h });
            }
            return Ok(Classified::NearCritical { h });
        }

        if let Some((iq, jp)) = self.domain.cell_of(q, p) {
            let lab = self.labels[self.domain.flat(iq, jp)];
            if lab != u32::MAX {
                let e = &self.edges[lab as usize];
                if h >= e.h_lo && h <= e.h_hi {
                    return Ok(Classified::OnEdge { edge: e.id, h });
                }
            }
            let band = self.levels.partition_point(|&c| c < h);
            let key = (self.domain.flat(iq, jp), band);
            if let Some(c) = cache.as_deref() {
                if let Some(&v) = c.get(&key) {
                    return Ok(match v {
                        CachedOutcome::Edge(idx) => {
                            Classified::OnEdge { edge: self.edges[idx].id, h }
                        }
                        CachedOutcome::Near => Classified::NearCritical { h },
                    });
                }
            }
            let out = self.classify_flood(iq, jp, h)?;
            if let Some(c) = cache.as_deref_mut() {
                let v = match out {
                    Classified::OnEdge { edge, .. } => CachedOutcome::Edge(edge - 1),
                    _ => CachedOutcome::Near,
                };
                c.insert(key, v);
            }
            return Ok(out);
        }
        // h <= h_max forces the point inside the box (the cap's sublevel set
        // was verified interior), so this is unreachable for valid graphs
        Err(Error::OutsideDomain(format!("({q}, {p}) outside the box with H = {h}")))
    }

    /// Exact fallback: flood the cell graph of {H <= h} from the query cell,
    /// crossing a face only when the face midpoint is below h, and identify
    /// the edge by the set of minima reached.
    fn classify_flood(&self, iq0: usize, jp0: usize, h: f64) -> Result<Classified> {
        let d = &self.domain;
        let mut visited = vec![false; d.cells()];
        let mut queue = VecDeque::new();
        let start = d.flat(iq0, jp0);
        visited[start] = true;
        queue.push_back((iq0, jp0));
        let mut sig: Vec<usize> = Vec::new();
        if let Some(&ci) = self.minima_cells.get(&start) {
            sig.push(ci);
        }
        while let Some((iq, jp)) = queue.pop_front() {
            let qc = d.q_center(iq);
            let pc = d.p_center(jp);
            let try_step = |ni: usize, nj: usize, fq: f64, fp: f64,
                                visited: &mut Vec<bool>,
                                queue: &mut VecDeque<(usize, usize)>,
                                sig: &mut Vec<usize>| {
                let f = d.flat(ni, nj);
                if !visited[f] && self.model.energy(fq, fp) <= h {
                    visited[f] = true;
                    if let Some(&ci) = self.minima_cells.get(&f) {
                        sig.push(ci);
                    }
                    queue.push_back((ni, nj));
                }
            };
            if iq > 0 {
                try_step(iq - 1, jp, d.q_node(iq), pc, &mut visited, &mut queue, &mut sig);
            }
            if iq + 1 < d.nq {
                try_step(iq + 1, jp, d.q_node(iq + 1), pc, &mut visited, &mut queue, &mut sig);
            }
            if jp > 0 {
                try_step(iq, jp - 1, qc, d.p_node(jp), &mut visited, &mut queue, &mut sig);
            }
            if jp + 1 < d.np {
                try_step(iq, jp + 1, qc, d.p_node(jp + 1), &mut visited, &mut queue, &mut sig);
            }
        }
        sig.sort_unstable();
        sig.dedup();
        let near = self.levels.iter().any(|&c| (c - h).abs() <= self.bfs_guard);
        match self.signature_map.get(&sig) {
            Some(&idx) => {
                let e = &self.edges[idx];
                if h >= e.h_lo && h <= e.h_hi {
                    Ok(Classified::OnEdge { edge: e.id, h })
                } else if near {
                    Ok(Classified::NearCritical { h })
                } else {
                    Err(Error::TopologyInconsistent(format!(
                        "flood fill at H = {h} reached minima of edge {} whose range is \
                         [{}, {}]",
                        e.id, e.h_lo, e.h_hi
                    )))
                }
            }
            None if near || sig.is_empty() => Ok(Classified::NearCritical { h }),
            None => Err(Error::TopologyInconsistent(format!(
                "flood fill at H = {h} reached minima {sig:?} matching no edge"
            ))),
        }
    }

    /// Push an empirical measure onto per-edge energy histograms. Mass near
    /// saddle values and above the cap is reported separately, never dropped
    /// silently.
    pub fn empirical_pushforward(
        &self,
        points: &[(f64, f64)],
        bins: usize,
    ) -> Result<GraphHistogram> {
        if points.is_empty() {
            return Err(Error::EmptySource);
        }
        let mut hist = GraphHistogram::zeros(self, bins);
        let w = 1.0 / points.len() as f64;
        let mut cache: HashMap<(usize, usize), CachedOutcome> = HashMap::new();
        for &(q, p) in points {
            match self.classify_inner(q, p, &mut Some(&mut cache))? {
                Classified::OnEdge { edge, h } => hist.deposit(edge, h, w),
                Classified::NearCritical { .. } => hist.near_critical += w,
                Classified::AboveCap { .. } => hist.above_cap += w,
            }
        }
        hist.total_weight = 1.0;
        Ok(hist)
    }

    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct EdgeJson {
            k: usize,
            h_lo: f64,
            h_hi: f64,
            incidence: Vec<(usize, i8)>,
            seed: (f64, f64),
        }
        #[derive(Serialize)]
        struct GraphJson<'a> {
            h_max: f64,
            truncated_top: bool,
            vertices: &'a [ReebVertex],
            edges: Vec<EdgeJson>,
        }
        let edges = self
            .edges
            .iter()
            .map(|e| EdgeJson {
                k: e.id,
                h_lo: e.h_lo,
                h_hi: e.h_hi,
                incidence: vec![(e.lower, -1), (e.upper, 1)],
                seed: e.seed,
            })
            .collect();
        let g = GraphJson {
            h_max: self.h_max,
            truncated_top: self.vertices.iter().any(|v| v.kind == VertexKind::Top),
            vertices: &self.vertices,
            edges,
        };
        serde_json::to_value(g).expect("graph serialization cannot fail")
    }
}

/// Reusable classifier carrying a cell-level cache for the flood-fill
/// fallback. Queries landing in the same cell and energy band share results.
pub struct Classifier<'a> {
    graph: &'a ReebGraph,
    cache: HashMap<(usize, usize), CachedOutcome>,
}

impl<'a> Classifier<'a> {
    pub fn new(graph: &'a ReebGraph) -> Self {
        Self { graph, cache: HashMap::new() }
    }

    pub fn classify(&mut self, q: f64, p: f64) -> Result<Classified> {
        self.graph.classify_inner(q, p, &mut Some(&mut self.cache))
    }
}

/// Mass histogram over the graph: per-edge uniform energy bins plus the
/// spill accounts.
#[derive(Clone, Debug, Serialize)]
pub struct GraphHistogram {
    pub bins_per_edge: usize,
    /// Edge energy ranges, aligned with `masses`.
    pub ranges: Vec<(f64, f64)>,
    pub masses: Vec<Vec<f64>>,
    pub near_critical: f64,
    pub above_cap: f64,
    pub total_weight: f64,
}

impl GraphHistogram {
    pub fn zeros(graph: &ReebGraph, bins: usize) -> Self {
        Self {
            bins_per_edge: bins,
            ranges: graph.edges().iter().map(|e| (e.h_lo, e.h_hi)).collect(),
            masses: vec![vec![0.0; bins]; graph.edges().len()],
            near_critical: 0.0,
            above_cap: 0.0,
            total_weight: 0.0,
        }
    }

    /// Add mass at energy h on the 1-based edge id.
    pub fn deposit(&mut self, edge: usize, h: f64, w: f64) {
        let (lo, hi) = self.ranges[edge - 1];
        let t = ((h - lo) / (hi - lo) * self.bins_per_edge as f64).floor();
        let bin = (t.max(0.0) as usize).min(self.bins_per_edge - 1);
        self.masses[edge - 1][bin] += w;
    }

    pub fn edge_mass(&self, edge: usize) -> f64 {
        self.masses[edge - 1].iter().sum()
    }

    pub fn kept_mass(&self) -> f64 {
        self.masses.iter().map(|m| m.iter().sum::<f64>()).sum()
    }

    /// L1 distance between the bin distributions after renormalizing each
    /// side to unit kept mass.
    pub fn l1_renormalized(&self, other: &Self) -> Result<f64> {
        if self.masses.len() != other.masses.len() || self.bins_per_edge != other.bins_per_edge {
            return Err(Error::SnapshotMismatch("histogram shapes differ".into()));
        }
        let (ka, kb) = (self.kept_mass(), other.kept_mass());
        if ka <= 0.0 || kb <= 0.0 {
            return Err(Error::EmptySource);
        }
        let mut d = 0.0;
        for (ea, eb) in self.masses.iter().zip(&other.masses) {
            for (&a, &b) in ea.iter().zip(eb) {
                d += (a / ka - b / kb).abs();
            }
        }
        Ok(d)
    }
}

/// Fill cells whose center lies inside the polygon, leaving existing labels
/// in place. Even-odd crossings per cell-center row.
fn scanline_fill(poly: &LevelPolygon, domain: &BoxDomain, labels: &mut [u32], label: u32) {
    let (_, _, pmin, pmax) = poly.bbox();
    let n = poly.points.len();
    let jp_lo = (((pmin - domain.p_min) / domain.dp() - 0.5).ceil().max(0.0)) as usize;
    for jp in jp_lo..domain.np {
        let pc = domain.p_center(jp);
        if pc > pmax {
            break;
        }
        let mut xs: Vec<f64> = Vec::new();
        for i in 0..n {
            let (x0, y0) = poly.points[i];
            let (x1, y1) = poly.points[(i + 1) % n];
            if (y0 <= pc) != (y1 <= pc) {
                xs.push(x0 + (pc - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let lo = ((pair[0] - domain.q_min) / domain.dq() - 0.5).ceil().max(0.0) as usize;
            let hi_f = (pair[1] - domain.q_min) / domain.dq() - 0.5;
            if hi_f < 0.0 {
                continue;
            }
            let hi = (hi_f.floor() as usize).min(domain.nq.saturating_sub(1));
            for iq in lo..=hi.min(domain.nq - 1) {
                let f = domain.flat(iq, jp);
                if labels[f] == u32::MAX {
                    labels[f] = label;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Potential;

    fn build(pot: Potential, half: f64, res: usize, h_max: f64) -> ReebGraph {
        let m = HamiltonianModel::new(1.0, pot).unwrap();
        let d = BoxDomain::square(half, res).unwrap();
        ReebGraph::build(&m, &d, &ReebBuildOpts::new(h_max)).unwrap()
    }

    #[test]
    fn harmonic_graph_is_one_edge() {
        let g = build(Potential::Harmonic { k: 1.0 }, 3.0, 128, 1.0);
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.vertices().len(), 2);
        assert_eq!(g.vertices()[0].kind, VertexKind::Minimum);
        assert_eq!(g.vertices()[1].kind, VertexKind::Top);
        let e = &g.edges()[0];
        assert_eq!((e.h_lo, e.h_hi), (0.0, 1.0));
        match g.xi(0.5, 0.5).unwrap() {
            Classified::OnEdge { edge, h } => {
                assert_eq!(edge, 1);
                assert!((h - 0.25).abs() < 1e-15);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn double_well_graph_shape() {
        let g = build(Potential::DoubleWell { a: 1.0, b: 1.0 }, 2.6, 192, 1.0);
        assert_eq!(g.edges().len(), 3);
        let kinds: Vec<VertexKind> = g.vertices().iter().map(|v| v.kind).collect();
        assert_eq!(kinds.iter().filter(|k| **k == VertexKind::Minimum).count(), 2);
        assert_eq!(kinds.iter().filter(|k| **k == VertexKind::Saddle).count(), 1);
        assert_eq!(kinds.iter().filter(|k| **k == VertexKind::Top).count(), 1);

        // lobes are separate edges below the barrier, merged above
        let left = match g.xi(-1.0, 0.3).unwrap() {
            Classified::OnEdge { edge, .. } => edge,
            other => panic!("{other:?}"),
        };
        let right = match g.xi(1.0, 0.3).unwrap() {
            Classified::OnEdge { edge, .. } => edge,
            other => panic!("{other:?}"),
        };
        assert_ne!(left, right);
        assert_eq!(g.edge_by_id(left).minima.len(), 1);
        let top = match g.xi(0.0, 1.2).unwrap() {
            Classified::OnEdge { edge, .. } => edge,
            other => panic!("{other:?}"),
        };
        assert_eq!(g.edge_by_id(top).minima.len(), 2);
        assert_eq!(g.edge_by_id(top).h_hi, 1.0);
    }

    #[test]
    fn saddle_energy_is_near_critical() {
        let g = build(Potential::DoubleWell { a: 1.0, b: 1.0 }, 2.6, 192, 1.0);
        // the saddle point itself sits exactly at the barrier value
        assert!(matches!(g.xi(0.0, 0.0).unwrap(), Classified::NearCritical { .. }));
    }

    #[test]
    fn minimum_energy_resolves_to_its_lobe() {
        let g = build(Potential::DoubleWell { a: 1.0, b: 1.0 }, 2.6, 192, 1.0);
        let at_min = g.xi(-1.0, 0.0).unwrap();
        let nearby = g.xi(-1.0, 0.05).unwrap();
        match (at_min, nearby) {
            (Classified::OnEdge { edge: a, .. }, Classified::OnEdge { edge: b, .. }) => {
                assert_eq!(a, b)
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn above_cap_detected() {
        let g = build(Potential::DoubleWell { a: 1.0, b: 1.0 }, 2.6, 192, 1.0);
        assert!(matches!(g.xi(0.0, 2.0).unwrap(), Classified::AboveCap { .. }));
    }

    #[test]
    fn tilted_triple_well_edge_spans_foreign_level() {
        let g = build(
            Potential::TripleWell { c: 0.1, tilt: 0.05, shift: 0.0 },
            3.4,
            256,
            2.2,
        );
        assert_eq!(g.edges().len(), 5);
        assert_eq!(
            g.vertices().iter().filter(|v| v.kind == VertexKind::Saddle).count(),
            2
        );
        // some lobe edge crosses the other side's saddle value strictly inside
        let spans_foreign = g.edges().iter().any(|e| {
            g.levels()
                .iter()
                .any(|&c| c > e.h_lo + 1e-9 && c < e.h_hi - 1e-9)
        });
        assert!(spans_foreign, "expected an edge spanning a foreign critical value");
    }

    #[test]
    fn pushforward_accounts_for_all_mass() {
        let g = build(Potential::DoubleWell { a: 1.0, b: 1.0 }, 2.6, 192, 1.0);
        let pts: Vec<(f64, f64)> = (0..500)
            .map(|i| {
                let t = i as f64 / 500.0;
                (-1.2 + 2.4 * t, -1.3 + 2.6 * (0.5 - (t * 7.0).fract()).abs())
            })
            .collect();
        let h = g.empirical_pushforward(&pts, 16).unwrap();
        let total = h.kept_mass() + h.near_critical + h.above_cap;
        assert!((total - 1.0).abs() < 1e-12, "mass accounted: {total}");
        assert!(h.kept_mass() > 0.5);
    }

    #[test]
    fn graph_json_shape() {
        let g = build(Potential::DoubleWell { a: 1.0, b: 1.0 }, 2.6, 128, 1.0);
        let v = g.to_json();
        assert_eq!(v["edges"].as_array().unwrap().len(), 3);
        assert_eq!(v["truncated_top"], serde_json::json!(true));
        let e0 = &v["edges"][0];
        assert!(e0["k"].is_u64());
        assert_eq!(e0["incidence"][0][1], serde_json::json!(-1));
        assert_eq!(e0["incidence"][1][1], serde_json::json!(1));
    }

    #[test]
    fn classifier_cache_matches_uncached() {
        let g = build(Potential::DoubleWell { a: 1.0, b: 1.0 }, 2.6, 96, 1.0);
        let mut c = Classifier::new(&g);
        for i in 0..200 {
            let q = -2.0 + 4.0 * (i as f64 / 199.0);
            let p = (i as f64 * 0.7).sin();
            let a = g.classify_point(q, p).unwrap();
            let b = c.classify(q, p).unwrap();
            assert_eq!(a, b, "at ({q}, {p})");
        }
    }
}
