//! File formats for every artifact the command-line tool emits.
//!
//! Floating-point values are written with Rust's shortest round-trip
//! `Display`, so a run that produces bit-identical numbers produces
//! byte-identical files. Quantities that legitimately vary between runs
//! (wall time) are confined to the manifest, which is exempt from that
//! guarantee.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coeffs::{CoefficientTable, EdgeTable};
use crate::functionals::{DissipationReport, DissipationRow, RateReport};
use crate::graphpde::GraphMesh;
use crate::model::{BoxDomain, CriticalKind, CriticalPoint};
use crate::reeb::{GraphHistogram, ReebGraph};
use crate::sde::ParticleEnsemble;
use crate::vfp::{OverdampedReport, PhaseDensity, PositionDensity};
use crate::{Error, Result};

pub fn save_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

pub fn save_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes)?;
    Ok(())
}

/// Critical points of the Hamiltonian: columns q, value, kind, curvature.
pub fn critical_points_csv(points: &[CriticalPoint]) -> String {
    let mut s = String::from("q,value,kind,curvature\n");
    for c in points {
        let kind = match c.kind {
            CriticalKind::Minimum => "minimum",
            CriticalKind::Saddle => "saddle",
        };
        let _ = writeln!(s, "{},{},{},{}", c.q, c.value, kind, c.curvature);
    }
    s
}

/// Particle snapshots: columns t, particle_id, q, p. Snapshots are stacked
/// in time order; ids index into the ensemble arrays.
pub fn particle_snapshots_csv(snapshots: &[ParticleEnsemble]) -> String {
    let mut s = String::from("t,particle_id,q,p\n");
    for snap in snapshots {
        for i in 0..snap.len() {
            let _ = writeln!(s, "{},{},{},{}", snap.time, i, snap.q[i], snap.p[i]);
        }
    }
    s
}

/// Full ensemble state with its seed lineage, enough for an exact resume.
pub fn checkpoint_json(ensemble: &ParticleEnsemble) -> Result<String> {
    Ok(serde_json::to_string_pretty(ensemble)?)
}

pub fn load_checkpoint(text: &str) -> Result<ParticleEnsemble> {
    Ok(serde_json::from_str(text)?)
}

pub fn graph_json(graph: &ReebGraph) -> Result<String> {
    Ok(serde_json::to_string_pretty(&graph.to_json())?)
}

/// Per-cell edge labels: one JSON header line, then nq * np little-endian
/// u32 values, row-major with q outer and p inner. Cells outside every
/// labeled component hold u32::MAX.
pub fn label_grid_bytes(graph: &ReebGraph) -> Vec<u8> {
    let d = graph.domain();
    let header = serde_json::json!({
        "format": "label-grid-v1",
        "q_min": d.q_min,
        "q_max": d.q_max,
        "p_min": d.p_min,
        "p_max": d.p_max,
        "nq": d.nq,
        "np": d.np,
        "layout": "row-major, q outer, p inner, little-endian u32",
        "unlabeled": u32::MAX,
    });
    let mut out = header.to_string().into_bytes();
    out.push(b'\n');
    out.reserve(4 * graph.labels().len());
    for &v in graph.labels() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_label_grid(bytes: &[u8]) -> Result<(BoxDomain, Vec<u32>)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::InvalidParams("label grid missing header line".into()))?;
    let header: serde_json::Value = serde_json::from_slice(&bytes[..nl])?;
    let get = |k: &str| -> Result<f64> {
        header[k]
            .as_f64()
            .ok_or_else(|| Error::InvalidParams(format!("label grid header missing {k}")))
    };
    let domain = BoxDomain::new(
        get("q_min")?,
        get("q_max")?,
        get("p_min")?,
        get("p_max")?,
        get("nq")? as usize,
        get("np")? as usize,
    )?;
    let body = &bytes[nl + 1..];
    if body.len() != 4 * domain.cells() {
        return Err(Error::InvalidParams(format!(
            "label grid body holds {} bytes, grid needs {}",
            body.len(),
            4 * domain.cells()
        )));
    }
    let labels = body
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((domain, labels))
}

/// Tabulated coefficients of one edge: columns h, T, A, B, TA, TB with
/// A = TA / T and B = TB / T at the sample points.
pub fn edge_coefficients_csv(tab: &EdgeTable) -> String {
    let mut s = String::from("h,T,A,B,TA,TB\n");
    for k in 0..tab.h.len() {
        let (t, ta, tb) = (tab.t[k], tab.ta[k], tab.tb[k]);
        let _ = writeln!(s, "{},{},{},{},{},{}", tab.h[k], t, ta / t, tb / t, ta, tb);
    }
    s
}

/// All edges in one table, with a leading edge column.
pub fn coefficients_csv(table: &CoefficientTable) -> String {
    let mut s = String::from("edge,h,T,A,B,TA,TB\n");
    for tab in &table.edges {
        for k in 0..tab.h.len() {
            let (t, ta, tb) = (tab.t[k], tab.ta[k], tab.tb[k]);
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                tab.edge,
                tab.h[k],
                t,
                ta / t,
                tb / t,
                ta,
                tb
            );
        }
    }
    s
}

/// Vertex-limit values of TA per edge plus the flux-balance residuals at
/// the saddles.
pub fn coefficients_summary_json(table: &CoefficientTable) -> Result<String> {
    #[derive(Serialize)]
    struct EdgeSummary {
        edge: usize,
        h_lo: f64,
        h_hi: f64,
        ta_lo: f64,
        ta_hi: f64,
        samples: usize,
    }
    let edges: Vec<EdgeSummary> = table
        .edges
        .iter()
        .map(|e| EdgeSummary {
            edge: e.edge,
            h_lo: e.h_lo,
            h_hi: e.h_hi,
            ta_lo: e.ta_lo,
            ta_hi: e.ta_hi,
            samples: e.h.len(),
        })
        .collect();
    let v = serde_json::json!({
        "edges": edges,
        "saddle_balance": table.saddle_balance,
    });
    Ok(serde_json::to_string_pretty(&v)?)
}

/// Graph solution snapshots: columns t, edge, h_center, f, cell_mass.
/// cell_mass is f times the cell's measure weight T dh.
pub fn graph_trajectory_csv(mesh: &GraphMesh, snapshots: &[(f64, Vec<f64>)]) -> String {
    let mut s = String::from("t,edge,h_center,f,cell_mass\n");
    for (t, f) in snapshots {
        for em in &mesh.edges {
            for i in 0..em.n {
                let g = em.offset + i;
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    t,
                    em.edge,
                    em.node_h(i),
                    f[g],
                    f[g] * mesh.cell_weight[g]
                );
            }
        }
    }
    s
}

/// Per-step saddle diagnostics: columns t, vertex, flux_residual.
pub fn vertex_diagnostics_csv(rows: &[(f64, usize, f64)]) -> String {
    let mut s = String::from("t,vertex,flux_residual\n");
    for &(t, v, r) in rows {
        let _ = writeln!(s, "{},{},{}", t, v, r);
    }
    s
}

/// Phase-space snapshots: columns t, q, p, rho at cell centers.
pub fn phase_snapshots_csv(snapshots: &[PhaseDensity]) -> String {
    let mut s = String::from("t,q,p,rho\n");
    for snap in snapshots {
        let d = &snap.domain;
        for iq in 0..d.nq {
            for jp in 0..d.np {
                let _ = writeln!(
                    s,
                    "{},{},{},{}",
                    snap.time,
                    d.q_center(iq),
                    d.p_center(jp),
                    snap.rho[iq * d.np + jp]
                );
            }
        }
    }
    s
}

/// Position-density snapshots: columns t, q, sigma at cell centers.
pub fn position_snapshots_csv(snapshots: &[PositionDensity]) -> String {
    let mut s = String::from("t,q,sigma\n");
    for snap in snapshots {
        let centers = snap.centers();
        for (q, g) in centers.iter().zip(&snap.sigma) {
            let _ = writeln!(s, "{},{},{}", snap.time, q, g);
        }
    }
    s
}

/// Overdamped-limit comparison: columns gamma, L1, W1.
pub fn overdamped_csv(report: &OverdampedReport) -> String {
    let mut s = String::from("gamma,L1,W1\n");
    for row in &report.rows {
        let _ = writeln!(s, "{},{},{}", row.gamma, row.l1, row.w1);
    }
    s
}

pub fn overdamped_json(report: &OverdampedReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

/// Side-by-side edge histograms: columns edge, bin, h_center, lhs, rhs.
/// Both histograms must share the binning. Masses are renormalized to the
/// classified weight so the columns compare shapes, not coverage.
pub fn histogram_comparison_csv(lhs: &GraphHistogram, rhs: &GraphHistogram) -> Result<String> {
    if lhs.bins_per_edge != rhs.bins_per_edge || lhs.ranges.len() != rhs.ranges.len() {
        return Err(Error::InvalidParams("histogram binnings differ".into()));
    }
    let wl: f64 = lhs.masses.iter().flatten().sum();
    let wr: f64 = rhs.masses.iter().flatten().sum();
    let (sl, sr) = (
        if wl > 0.0 { 1.0 / wl } else { 0.0 },
        if wr > 0.0 { 1.0 / wr } else { 0.0 },
    );
    let mut s = String::from("edge,bin,h_center,lhs,rhs\n");
    for (e, (&(lo, hi), (ml, mr))) in lhs
        .ranges
        .iter()
        .zip(lhs.masses.iter().zip(&rhs.masses))
        .enumerate()
    {
        let db = (hi - lo) / lhs.bins_per_edge as f64;
        for b in 0..lhs.bins_per_edge {
            let hc = lo + (b as f64 + 0.5) * db;
            let _ = writeln!(s, "{},{},{},{},{}", e + 1, b, hc, ml[b] * sl, mr[b] * sr);
        }
    }
    Ok(s)
}

/// Rate-functional report: value with the floors and defects that qualify it.
pub fn rate_report_json(report: &RateReport, duality_value: Option<f64>) -> Result<String> {
    let v = serde_json::json!({
        "value": report.value,
        "floor_estimate": 0.0,
        "defect": report.q_flux_defect,
        "per_time_table": [{
            "skipped_faces": report.skipped_faces,
            "total_faces": report.total_faces,
            "duality_lower_bound": duality_value,
        }],
    });
    Ok(serde_json::to_string_pretty(&v)?)
}

/// Dissipation audit report. `defect` is the worst inequality violation in
/// audit units (positive means a violation beyond the floor).
pub fn dissipation_report_json(report: &DissipationReport) -> Result<String> {
    let defect = report
        .rows
        .iter()
        .map(|r| (r.lhs - r.rhs).max(r.h_moment - r.h_moment_bound))
        .fold(f64::NEG_INFINITY, f64::max);
    let value = report.rows.last().map_or(0.0, |r| r.free_energy);
    let v = serde_json::json!({
        "value": value,
        "floor_estimate": report.floor,
        "defect": if defect.is_finite() { defect } else { 0.0 },
        "pass": report.pass,
        "per_time_table": report.rows,
    });
    Ok(serde_json::to_string_pretty(&v)?)
}

/// Dissipation audit time table: one row per snapshot.
pub fn dissipation_csv(rows: &[DissipationRow]) -> String {
    let mut s = String::from("t,free_energy,fisher,lhs,rhs,h_moment,h_moment_bound\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.time, r.free_energy, r.fisher, r.lhs, r.rhs, r.h_moment, r.h_moment_bound
        );
    }
    s
}

/// Run manifest. Everything here is reproducibility metadata; wall_seconds
/// is the one field allowed to differ between otherwise identical runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub config_sha256: String,
    pub tool_version: String,
    pub format_version: u32,
    pub seed: Option<u64>,
    pub threads: usize,
    pub wall_seconds: f64,
    pub outputs: Vec<String>,
}

pub fn manifest_json(manifest: &Manifest) -> Result<String> {
    Ok(serde_json::to_string_pretty(manifest)?)
}

const SHA256_K: [u32; 64] = [
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
    0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
    0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
    0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
    0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2,
];

/// FIPS 180-4 SHA-256 digest as lowercase hex. Used to stamp configs into
/// manifests without pulling in a crypto dependency.
pub fn sha256_hex(data: &[u8]) -> String {
    let mut h: [u32; 8] = [
        0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab,
        0x5be0cd19,
    ];
    let bit_len = (data.len() as u64).wrapping_mul(8);
    let mut msg = data.to_vec();
    msg.push(0x80);
    while msg.len() % 64 != 56 {
        msg.push(0);
    }
    msg.extend_from_slice(&bit_len.to_be_bytes());

    let mut w = [0u32; 64];
    for chunk in msg.chunks_exact(64) {
        for (i, word) in w.iter_mut().take(16).enumerate() {
            *word = u32::from_be_bytes([chunk[4 * i], chunk[4 * i + 1], chunk[4 * i + 2], chunk[4 * i + 3]]);
        }
        for i in 16..64 {
            let s0 = w[i - 15].rotate_right(7) ^ w[i - 15].rotate_right(18) ^ (w[i - 15] >> 3);
            let s1 = w[i - 2].rotate_right(17) ^ w[i - 2].rotate_right(19) ^ (w[i - 2] >> 10);
            w[i] = w[i - 16]
                .wrapping_add(s0)
                .wrapping_add(w[i - 7])
                .wrapping_add(s1);
        }
        let [mut a, mut b, mut c, mut d, mut e, mut f, mut g, mut hh] = h;
        for i in 0..64 {
            let s1 = e.rotate_right(6) ^ e.rotate_right(11) ^ e.rotate_right(25);
            let ch = (e & f) ^ (!e & g);
            let t1 = hh
                .wrapping_add(s1)
                .wrapping_add(ch)
                .wrapping_add(SHA256_K[i])
                .wrapping_add(w[i]);
            let s0 = a.rotate_right(2) ^ a.rotate_right(13) ^ a.rotate_right(22);
            let maj = (a & b) ^ (a & c) ^ (b & c);
            let t2 = s0.wrapping_add(maj);
            hh = g;
            g = f;
            f = e;
            e = d.wrapping_add(t1);
            d = c;
            c = b;
            b = a;
            a = t1.wrapping_add(t2);
        }
        for (slot, v) in h.iter_mut().zip([a, b, c, d, e, f, g, hh]) {
            *slot = slot.wrapping_add(v);
        }
    }
    let mut out = String::with_capacity(64);
    for x in h {
        let _ = write!(out, "{x:08x}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HamiltonianModel, Potential};
    use crate::reeb::ReebBuildOpts;

    #[test]
    fn sha256_matches_published_vectors() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(
            sha256_hex(b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq"),
            "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1"
        );
        // exercises the two-block padding path (64 bytes -> 128-byte message)
        assert_eq!(
            sha256_hex(&[0x61u8; 64]),
            "ffe054fe7ae0cb6dc65c3af9b61d5209f439851db43d0ba5997337df154668eb"
        );
    }

    #[test]
    fn floats_round_trip_through_display() {
        for &x in &[1.0 / 3.0, 0.1, 6.02e23, 1e-300, -0.0, 2.0_f64.powi(-52)] {
            let printed = format!("{x}");
            let back: f64 = printed.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{printed}");
        }
    }

    #[test]
    fn label_grid_round_trips() {
        let model = HamiltonianModel::new(1.0, Potential::DoubleWell { a: 1.0, b: 1.0 }).unwrap();
        let domain = BoxDomain::square(2.5, 64).unwrap();
        let graph = ReebGraph::build(&model, &domain, &ReebBuildOpts::new(2.0)).unwrap();
        let bytes = label_grid_bytes(&graph);
        let (d2, labels) = read_label_grid(&bytes).unwrap();
        assert_eq!(d2.nq, domain.nq);
        assert_eq!(d2.np, domain.np);
        assert_eq!(labels, graph.labels());
        assert!(labels.iter().any(|&l| l != u32::MAX));
    }

    #[test]
    fn checkpoint_round_trips_with_lineage() {
        let mut e = ParticleEnsemble::gaussian(100, 0.3, 0.9, -0.1, 1.1, 42).unwrap();
        e.time = 0.75;
        e.steps_done = 1500;
        let text = checkpoint_json(&e).unwrap();
        let back = load_checkpoint(&text).unwrap();
        assert_eq!(back.master_seed, 42);
        assert_eq!(back.steps_done, 1500);
        assert_eq!(back.time, 0.75);
        assert_eq!(back.q, e.q);
        assert_eq!(back.p, e.p);
    }

    #[test]
    fn csv_renders_are_deterministic() {
        let e = ParticleEnsemble::gaussian(10, 0.0, 1.0, 0.0, 1.0, 7).unwrap();
        let a = particle_snapshots_csv(std::slice::from_ref(&e));
        let b = particle_snapshots_csv(std::slice::from_ref(&e));
        assert_eq!(a, b);
        assert!(a.starts_with("t,particle_id,q,p\n"));
        assert_eq!(a.lines().count(), 11);
    }

    #[test]
    fn histogram_csv_requires_matching_bins() {
        let model = HamiltonianModel::new(1.0, Potential::Harmonic { k: 1.0 }).unwrap();
        let domain = BoxDomain::square(3.0, 48).unwrap();
        let graph = ReebGraph::build(&model, &domain, &ReebBuildOpts::new(2.0)).unwrap();
        let h1 = GraphHistogram::zeros(&graph, 10);
        let h2 = GraphHistogram::zeros(&graph, 12);
        assert!(histogram_comparison_csv(&h1, &h2).is_err());
        let ok = histogram_comparison_csv(&h1, &h1).unwrap();
        assert_eq!(ok.lines().count(), 1 + 10 * graph.edges().len());
    }
}
