//! Hamiltonian models on the phase plane.
//!
//! H(q, p) = p^2 / (2 m) + V(q) with a confining potential V >= 0 and an
//! optional symmetric pair interaction psi. The momentum Laplacian of H is
//! the constant dim / m; several downstream identities lean on that, so it is
//! exposed as [`HamiltonianModel::laplacian_p`] rather than recomputed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::bisect;

fn one() -> f64 {
    1.0
}

/// Confining potential presets plus free-form polynomials.
///
/// `value`/`grad`/`hess` are closed-form; nothing is sampled or fitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum Potential {
    /// V(q) = k q^2 / 2.
    Harmonic {
        #[serde(default = "one")]
        k: f64,
    },
    /// V(q) = a (q^2 - b^2)^2 / 4: two wells at +-b, barrier a b^4 / 4 at 0.
    DoubleWell {
        #[serde(default = "one")]
        a: f64,
        #[serde(default = "one")]
        b: f64,
    },
    /// V(q) = c q^4 / 4. The origin is a degenerate minimum (V'' = 0).
    Quartic {
        #[serde(default = "one")]
        c: f64,
    },
    /// Tilted triple well: c (q^6/6 - 5 q^4/4 + 2 q^2) + tilt q + shift.
    /// For small tilt the minima sit near 0 and +-2, the saddles near +-1,
    /// and the tilt splits the two saddle values.
    TripleWell {
        #[serde(default = "default_triple_c")]
        c: f64,
        #[serde(default = "default_triple_tilt")]
        tilt: f64,
        #[serde(default = "one")]
        shift: f64,
    },
    /// V(q) = sum_k coeffs[k] q^k.
    Poly { coeffs: Vec<f64> },
}

fn default_triple_c() -> f64 {
    0.1
}

fn default_triple_tilt() -> f64 {
    0.05
}

impl Potential {
    pub fn value(&self, q: f64) -> f64 {
        match self {
            Potential::Harmonic { k } => 0.5 * k * q * q,
            Potential::DoubleWell { a, b } => {
                let u = q * q - b * b;
                0.25 * a * u * u
            }
            Potential::Quartic { c } => 0.25 * c * q.powi(4),
            Potential::TripleWell { c, tilt, shift } => {
                c * (q.powi(6) / 6.0 - 1.25 * q.powi(4) + 2.0 * q * q) + tilt * q + shift
            }
            Potential::Poly { coeffs } => horner(coeffs, q),
        }
    }

    pub fn grad(&self, q: f64) -> f64 {
        match self {
            Potential::Harmonic { k } => k * q,
            Potential::DoubleWell { a, b } => a * (q * q - b * b) * q,
            Potential::Quartic { c } => c * q.powi(3),
            Potential::TripleWell { c, tilt, .. } => {
                c * (q.powi(5) - 5.0 * q.powi(3) + 4.0 * q) + tilt
            }
            Potential::Poly { coeffs } => horner(&diff(coeffs), q),
        }
    }

    pub fn hess(&self, q: f64) -> f64 {
        match self {
            Potential::Harmonic { k } => *k,
            Potential::DoubleWell { a, b } => a * (3.0 * q * q - b * b),
            Potential::Quartic { c } => 3.0 * c * q * q,
            Potential::TripleWell { c, .. } => c * (5.0 * q.powi(4) - 15.0 * q * q + 4.0),
            Potential::Poly { coeffs } => horner(&diff(&diff(coeffs)), q),
        }
    }
}

fn horner(coeffs: &[f64], q: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * q + c)
}

fn diff(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, &c)| k as f64 * c)
        .collect()
}

/// Symmetric pair interaction psi(x) = psi(-x), entering only through its
/// gradient convolved with the position marginal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InteractionKernel {
    /// psi identically zero. Distinct from "no kernel": the convolution is
    /// defined and returns 0.
    Zero,
    /// psi(x) = strength x^2 / 2.
    Quadratic {
        #[serde(default = "one")]
        strength: f64,
    },
    /// psi(x) = amplitude exp(-x^2 / (2 width^2)); bounded with bounded
    /// derivatives of all orders.
    Gaussian {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one")]
        width: f64,
    },
}

impl InteractionKernel {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            InteractionKernel::Zero => 0.0,
            InteractionKernel::Quadratic { strength } => 0.5 * strength * x * x,
            InteractionKernel::Gaussian { amplitude, width } => {
                amplitude * (-0.5 * x * x / (width * width)).exp()
            }
        }
    }

    pub fn grad(&self, x: f64) -> f64 {
        match self {
            InteractionKernel::Zero => 0.0,
            InteractionKernel::Quadratic { strength } => strength * x,
            InteractionKernel::Gaussian { amplitude, width } => {
                -amplitude * x / (width * width) * (-0.5 * x * x / (width * width)).exp()
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            InteractionKernel::Zero => true,
            InteractionKernel::Quadratic { strength } => *strength == 0.0,
            InteractionKernel::Gaussian { amplitude, .. } => *amplitude == 0.0,
        }
    }
}

/// The model: mass, dimension, potential, optional interaction.
///
/// Only dim = 1 is implemented by the solvers and graph machinery; the field
/// exists so the energy bookkeeping (laplacian_p = dim / m) stays honest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HamiltonianModel {
    mass: f64,
    dim: usize,
    potential: Potential,
    #[serde(default)]
    interaction: Option<InteractionKernel>,
}

impl HamiltonianModel {
    pub fn new(mass: f64, potential: Potential) -> Result<Self> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::InvalidParams(format!("mass must be positive, got {mass}")));
        }
        Ok(Self { mass, dim: 1, potential, interaction: None })
    }

    pub fn with_interaction(mut self, kernel: InteractionKernel) -> Self {
        self.interaction = Some(kernel);
        self
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn interaction(&self) -> Option<&InteractionKernel> {
        self.interaction.as_ref()
    }

    /// H(q, p) = p^2 / (2 m) + V(q).
    #[inline]
    pub fn energy(&self, q: f64, p: f64) -> f64 {
        0.5 * p * p / self.mass + self.potential.value(q)
    }

    /// dH/dq = V'(q).
    #[inline]
    pub fn grad_q(&self, q: f64) -> f64 {
        self.potential.grad(q)
    }

    /// dH/dp = p / m.
    #[inline]
    pub fn grad_p(&self, p: f64) -> f64 {
        p / self.mass
    }

    /// |grad H|.
    #[inline]
    pub fn grad_norm(&self, q: f64, p: f64) -> f64 {
        self.grad_q(q).hypot(self.grad_p(p))
    }

    /// Momentum Laplacian of H: exactly dim / m, independent of the state.
    #[inline]
    pub fn laplacian_p(&self) -> f64 {
        self.dim as f64 / self.mass
    }

    /// (grad psi * rho_n)(q) for an empirical measure: the mean of
    /// psi'(q - q_j) over the ensemble, self-term included (psi'(0) = 0 for
    /// symmetric psi). This is the drift that enters the particle system with
    /// a minus sign.
    pub fn conv_force_ensemble(&self, positions: &[f64], q: f64) -> Result<f64> {
        let kernel = self.interaction.as_ref().ok_or(Error::MissingInteraction)?;
        if positions.is_empty() {
            return Err(Error::EmptySource);
        }
        if kernel.is_zero() {
            return Ok(0.0);
        }
        if let InteractionKernel::Quadratic { strength } = kernel {
            // psi'(x) = strength x, so the convolution collapses to the mean.
            let mean = crate::par::sum_slice(positions) / positions.len() as f64;
            return Ok(strength * (q - mean));
        }
        let n = positions.len();
        let s = crate::par::sum_indexed(n, |j| kernel.grad(q - positions[j]));
        Ok(s / n as f64)
    }

    /// (grad psi * sigma)(q) for a gridded position density with cell masses
    /// `weights[i]` at `points[i]`.
    pub fn conv_force_grid(&self, points: &[f64], weights: &[f64], q: f64) -> Result<f64> {
        let kernel = self.interaction.as_ref().ok_or(Error::MissingInteraction)?;
        if points.len() != weights.len() {
            return Err(Error::SnapshotMismatch("points/weights length".into()));
        }
        if kernel.is_zero() {
            return Ok(0.0);
        }
        if let InteractionKernel::Quadratic { strength } = kernel {
            let mass = crate::par::sum_slice(weights);
            if mass <= 0.0 {
                return Err(Error::EmptySource);
            }
            let mean = crate::par::sum_indexed(points.len(), |i| points[i] * weights[i]) / mass;
            return Ok(strength * mass * (q - mean));
        }
        Ok(crate::par::sum_indexed(points.len(), |i| kernel.grad(q - points[i]) * weights[i]))
    }

    /// Growth and symmetry conditions, reported (not enforced): the smallest
    /// C with |V'|^2 <= C (1 + V) on the sampled range, the minimum of V, and
    /// the worst asymmetry of psi.
    pub fn validate_conditions(&self, q_lo: f64, q_hi: f64, samples: usize) -> ConditionsReport {
        let n = samples.max(16);
        let mut c_growth: f64 = 0.0;
        let mut v_min = f64::INFINITY;
        for i in 0..=n {
            let q = q_lo + (q_hi - q_lo) * i as f64 / n as f64;
            let v = self.potential.value(q);
            let g = self.potential.grad(q);
            c_growth = c_growth.max(g * g / (1.0 + v.max(0.0)));
            v_min = v_min.min(v);
        }
        let psi_asym = self.interaction.as_ref().map(|k| {
            (0..=n)
                .map(|i| {
                    let x = q_lo + (q_hi - q_lo) * i as f64 / n as f64;
                    (k.value(x) - k.value(-x)).abs()
                })
                .fold(0.0_f64, f64::max)
        });
        ConditionsReport { growth_constant: c_growth, potential_min: v_min, psi_asymmetry: psi_asym }
    }
}

/// See [`HamiltonianModel::validate_conditions`].
#[derive(Clone, Debug, Serialize)]
pub struct ConditionsReport {
    pub growth_constant: f64,
    pub potential_min: f64,
    pub psi_asymmetry: Option<f64>,
}

/// Rectangular phase-space domain with a uniform cell grid.
///
/// Cells are indexed (iq, jp), flattened row-major as iq * np + jp. Nodes are
/// the (nq + 1) x (np + 1) cell corners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub q_min: f64,
    pub q_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub nq: usize,
    pub np: usize,
}

impl BoxDomain {
    pub fn new(q_min: f64, q_max: f64, p_min: f64, p_max: f64, nq: usize, np: usize) -> Result<Self> {
        if !(q_min < q_max && p_min < p_max) {
            return Err(Error::InvalidDomain(format!(
                "degenerate box [{q_min}, {q_max}] x [{p_min}, {p_max}]"
            )));
        }
        if nq < 8 || np < 8 {
            return Err(Error::InvalidDomain(format!("resolution {nq} x {np} below 8")));
        }
        Ok(Self { q_min, q_max, p_min, p_max, nq, np })
    }

    /// Square box [-a, a]^2 at resolution n x n.
    pub fn square(a: f64, n: usize) -> Result<Self> {
        Self::new(-a, a, -a, a, n, n)
    }

    #[inline]
    pub fn dq(&self) -> f64 {
        (self.q_max - self.q_min) / self.nq as f64
    }

    #[inline]
    pub fn dp(&self) -> f64 {
        (self.p_max - self.p_min) / self.np as f64
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.dq() * self.dp()
    }

    pub fn cells(&self) -> usize {
        self.nq * self.np
    }

    #[inline]
    pub fn q_center(&self, iq: usize) -> f64 {
        self.q_min + (iq as f64 + 0.5) * self.dq()
    }

    #[inline]
    pub fn p_center(&self, jp: usize) -> f64 {
        self.p_min + (jp as f64 + 0.5) * self.dp()
    }

    #[inline]
    pub fn q_node(&self, iq: usize) -> f64 {
        self.q_min + iq as f64 * self.dq()
    }

    #[inline]
    pub fn p_node(&self, jp: usize) -> f64 {
        self.p_min + jp as f64 * self.dp()
    }

    #[inline]
    pub fn contains(&self, q: f64, p: f64) -> bool {
        q >= self.q_min && q <= self.q_max && p >= self.p_min && p <= self.p_max
    }

    /// Cell containing (q, p), clamped to the index range on the closed box.
    pub fn cell_of(&self, q: f64, p: f64) -> Option<(usize, usize)> {
        if !self.contains(q, p) {
            return None;
        }
        let iq = (((q - self.q_min) / self.dq()) as usize).min(self.nq - 1);
        let jp = (((p - self.p_min) / self.dp()) as usize).min(self.np - 1);
        Some((iq, jp))
    }

    #[inline]
    pub fn flat(&self, iq: usize, jp: usize) -> usize {
        iq * self.np + jp
    }
}

/// Classification of a non-degenerate critical point of H. Minima of V are
/// minima of H; maxima of V are saddles of H (the p^2 term is convex).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalKind {
    Minimum,
    Saddle,
}

#[derive(Clone, Debug, Serialize)]
pub struct CriticalPoint {
    pub q: f64,
    pub p: f64,
    pub value: f64,
    pub kind: CriticalKind,
    /// |V''| at the root fell below tolerance; kind comes from sign sampling.
    pub degenerate: bool,
    pub curvature: f64,
}

#[derive(Clone, Debug)]
pub struct CriticalSearch {
    /// Scan points for bracketing roots of V'.
    pub scan_points: usize,
    /// Bisection interval tolerance (absolute, in q).
    pub refine_tol: f64,
    /// |V''| below this (times the local curvature scale) flags degeneracy.
    pub hess_tol: f64,
    /// Two saddle values closer than this (relative to the critical-value
    /// spread) are a collision.
    pub saddle_value_rel_tol: f64,
}

impl Default for CriticalSearch {
    fn default() -> Self {
        Self { scan_points: 4096, refine_tol: 1e-10, hess_tol: 1e-6, saddle_value_rel_tol: 1e-8 }
    }
}

/// All critical points of H in the box's q-range (p = 0 by structure),
/// sorted by location. Degenerate points are reported with the flag set, not
/// errored; graph construction is where degeneracy becomes fatal.
pub fn find_critical_points(
    model: &HamiltonianModel,
    domain: &BoxDomain,
    opts: &CriticalSearch,
) -> Result<Vec<CriticalPoint>> {
    let (lo, hi) = (domain.q_min, domain.q_max);
    let n = opts.scan_points.max(64);
    let dq = (hi - lo) / n as f64;
    let grad = |q: f64| model.grad_q(q);

    let mut roots: Vec<f64> = Vec::new();
    let mut prev_q = lo;
    let mut prev_g = grad(lo);
    for i in 1..=n {
        let q = lo + i as f64 * dq;
        let g = grad(q);
        if prev_g == 0.0 {
            roots.push(prev_q);
        } else if prev_g * g < 0.0 {
            roots.push(bisect(prev_q, q, opts.refine_tol, grad));
        }
        prev_q = q;
        prev_g = g;
    }
    if prev_g == 0.0 {
        roots.push(prev_q);
    }
    roots.dedup_by(|a, b| (*a - *b).abs() < 10.0 * opts.refine_tol.max(1e-12));

    let mut points = Vec::with_capacity(roots.len());
    let probe = dq.max(1e-7);
    for q in roots {
        let h2 = model.potential.hess(q);
        // curvature scale from the neighbors, for a relative degeneracy test
        let scale = model.potential.hess(q - probe).abs().max(model.potential.hess(q + probe).abs()).max(1.0);
        let degenerate = h2.abs() <= opts.hess_tol * scale;
        let kind = if degenerate {
            // classify by the sign change of V' across the root
            let (gl, gr) = (grad(q - probe), grad(q + probe));
            if gl < 0.0 && gr > 0.0 {
                CriticalKind::Minimum
            } else {
                CriticalKind::Saddle
            }
        } else if h2 > 0.0 {
            CriticalKind::Minimum
        } else {
            CriticalKind::Saddle
        };
        points.push(CriticalPoint {
            q,
            p: 0.0,
            value: model.potential.value(q),
            kind,
            degenerate,
            curvature: h2,
        });
    }
    points.sort_by(|a, b| a.q.total_cmp(&b.q));

    // saddle values must be pairwise distinct
    let spread = points
        .iter()
        .map(|c| c.value)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let scale = (spread.1 - spread.0).max(1.0);
    let saddles: Vec<&CriticalPoint> =
        points.iter().filter(|c| c.kind == CriticalKind::Saddle).collect();
    for i in 0..saddles.len() {
        for j in i + 1..saddles.len() {
            if (saddles[i].value - saddles[j].value).abs() <= opts.saddle_value_rel_tol * scale {
                return Err(Error::SaddleValueCollision {
                    v0: saddles[i].value,
                    v1: saddles[j].value,
                });
            }
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_well() -> HamiltonianModel {
        HamiltonianModel::new(1.0, Potential::DoubleWell { a: 1.0, b: 1.0 }).unwrap()
    }

    #[test]
    fn energy_value() {
        // p^2/(2m) with m = 2 plus the double-well barrier shape
        let m = HamiltonianModel::new(2.0, Potential::DoubleWell { a: 1.0, b: 1.0 }).unwrap();
        assert!((m.energy(0.0, 2.0) - 1.25).abs() < 1e-15);
        assert_eq!(m.laplacian_p(), 0.5);
    }

    #[test]
    fn conv_force_two_particles() {
        let m = double_well().with_interaction(InteractionKernel::Quadratic { strength: 1.0 });
        // particles at +-1: force at q = 1 is -(psi' * rho)(1) = -1
        let f = m.conv_force_ensemble(&[1.0, -1.0], 1.0).unwrap();
        assert!((f - 1.0).abs() < 1e-15); // conv itself is +1; the drift applies the minus
    }

    #[test]
    fn conv_force_zero_kernel() {
        let m = double_well().with_interaction(InteractionKernel::Zero);
        assert_eq!(m.conv_force_ensemble(&[0.3, -2.0, 1.0], 0.7).unwrap(), 0.0);
    }

    #[test]
    fn conv_force_missing_kernel() {
        assert!(matches!(
            double_well().conv_force_ensemble(&[0.0], 0.0),
            Err(Error::MissingInteraction)
        ));
    }

    #[test]
    fn critical_points_double_well() {
        let dom = BoxDomain::square(2.0, 64).unwrap();
        let pts = find_critical_points(&double_well(), &dom, &CriticalSearch::default()).unwrap();
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[0].kind, CriticalKind::Minimum);
        assert_eq!(pts[1].kind, CriticalKind::Saddle);
        assert_eq!(pts[2].kind, CriticalKind::Minimum);
        assert!((pts[0].q + 1.0).abs() < 1e-9);
        assert!((pts[1].q).abs() < 1e-9);
        assert!((pts[2].q - 1.0).abs() < 1e-9);
        assert!(pts[1].value > 0.2499 && pts[1].value < 0.2501);
        assert!(pts.iter().all(|c| !c.degenerate));
    }

    #[test]
    fn quartic_origin_flagged_degenerate() {
        let m = HamiltonianModel::new(1.0, Potential::Quartic { c: 1.0 }).unwrap();
        let dom = BoxDomain::square(2.0, 64).unwrap();
        let pts = find_critical_points(&m, &dom, &CriticalSearch::default()).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].kind, CriticalKind::Minimum);
        assert!(pts[0].degenerate);
    }

    #[test]
    fn triple_well_has_two_distinct_saddles() {
        let m = HamiltonianModel::new(1.0, Potential::TripleWell { c: 0.1, tilt: 0.05, shift: 1.0 })
            .unwrap();
        let dom = BoxDomain::new(-3.0, 3.0, -3.0, 3.0, 64, 64).unwrap();
        let pts = find_critical_points(&m, &dom, &CriticalSearch::default()).unwrap();
        let saddles: Vec<_> = pts.iter().filter(|c| c.kind == CriticalKind::Saddle).collect();
        let minima: Vec<_> = pts.iter().filter(|c| c.kind == CriticalKind::Minimum).collect();
        assert_eq!(saddles.len(), 2);
        assert_eq!(minima.len(), 3);
        assert!((saddles[0].value - saddles[1].value).abs() > 1e-3);
    }

    #[test]
    fn saddle_collision_detected() {
        // untilted triple well: both saddles at the same value
        let m = HamiltonianModel::new(1.0, Potential::TripleWell { c: 0.1, tilt: 0.0, shift: 1.0 })
            .unwrap();
        let dom = BoxDomain::new(-3.0, 3.0, -3.0, 3.0, 64, 64).unwrap();
        assert!(matches!(
            find_critical_points(&m, &dom, &CriticalSearch::default()),
            Err(Error::SaddleValueCollision { .. })
        ));
    }

    #[test]
    fn critical_points_stable_under_refinement() {
        let dom = BoxDomain::square(2.0, 64).unwrap();
        let coarse = find_critical_points(
            &double_well(),
            &dom,
            &CriticalSearch { scan_points: 512, ..Default::default() },
        )
        .unwrap();
        let fine = find_critical_points(
            &double_well(),
            &dom,
            &CriticalSearch { scan_points: 16384, ..Default::default() },
        )
        .unwrap();
        assert_eq!(coarse.len(), fine.len());
        for (a, b) in coarse.iter().zip(&fine) {
            assert!((a.q - b.q).abs() < 4.0 / 512.0);
        }
    }

    #[test]
    fn box_validation() {
        assert!(BoxDomain::new(1.0, -1.0, -1.0, 1.0, 32, 32).is_err());
        assert!(BoxDomain::new(-1.0, 1.0, -1.0, 1.0, 4, 32).is_err());
        let b = BoxDomain::square(2.0, 16).unwrap();
        assert_eq!(b.cell_of(2.0, 2.0), Some((15, 15)));
        assert_eq!(b.cell_of(2.1, 0.0), None);
    }
}
