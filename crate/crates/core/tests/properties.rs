//! Randomized structural properties, checked against independent oracles:
//! graph topology of random multi-well potentials versus a flood-fill on
//! the energy sublevel sets, the duality bound never crossing the flux-form
//! action, conservation across the solvers, and the counter-based particle
//! streams.

use std::collections::VecDeque;

use proptest::prelude::*;

use hamcg_core::coeffs::{tabulate, TabulateOpts};
use hamcg_core::functionals::{
    rate_functional_h, rate_lower_bound_duality, Dictionary, RateOpts,
};
use hamcg_core::graphpde::{GraphMeshOpts, GraphSolver};
use hamcg_core::model::{BoxDomain, CriticalKind, HamiltonianModel, Potential};
use hamcg_core::reeb::{Classified, ReebBuildOpts, ReebGraph, VertexKind};
use hamcg_core::sde::{simulate_vfp_particles, ParticleEnsemble, SdeParams};
use hamcg_core::vfp::{
    generator_trajectory, solve_vfp, KineticForm, KineticGenerator, PhaseDensity,
};

/// V with V'(q) = c * prod (q - roots[i]), as power-basis coefficients.
/// Odd-indexed roots (0-based: even positions) are minima of V, the ones
/// between them are maxima, so `2 wells - 1` roots give `wells` minima.
fn integrated_polynomial(c: f64, roots: &[f64]) -> Vec<f64> {
    let mut deriv = vec![1.0];
    for &r in roots {
        let mut next = vec![0.0; deriv.len() + 1];
        for (k, &a) in deriv.iter().enumerate() {
            next[k + 1] += a;
            next[k] -= r * a;
        }
        deriv = next;
    }
    let mut coeffs = vec![0.0; deriv.len() + 1];
    for (k, &a) in deriv.iter().enumerate() {
        coeffs[k + 1] = c * a / (k + 1) as f64;
    }
    coeffs
}

fn poly_value(coeffs: &[f64], q: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &a| acc * q + a)
}

/// Flood fill on {H <= h} over an independent lattice. Sublevel components
/// of H are simply connected (H has no interior maxima in the plane), so
/// the minima reached from (q0, p0) are exactly the minima enclosed by the
/// level-set component through that point.
fn reachable_minima(
    model: &HamiltonianModel,
    domain: &BoxDomain,
    q0: f64,
    p0: f64,
    h: f64,
    minima: &[(usize, f64)],
) -> Vec<usize> {
    let (nq, np) = (220usize, 220usize);
    let dq = (domain.q_max - domain.q_min) / nq as f64;
    let dp = (domain.p_max - domain.p_min) / np as f64;
    let center = |i: usize, j: usize| {
        (domain.q_min + (i as f64 + 0.5) * dq, domain.p_min + (j as f64 + 0.5) * dp)
    };
    let cell_of = |q: f64, p: f64| {
        let i = (((q - domain.q_min) / dq) as usize).min(nq - 1);
        let j = (((p - domain.p_min) / dp) as usize).min(np - 1);
        (i, j)
    };
    let inside = |i: usize, j: usize| {
        let (q, p) = center(i, j);
        model.energy(q, p) <= h
    };

    let mut visited = vec![false; nq * np];
    let mut queue = VecDeque::new();
    // the start cell is admitted unconditionally: (q0, p0) sits exactly on
    // its level curve, so the cell center can fall just above h
    let (i0, j0) = cell_of(q0, p0);
    visited[i0 * np + j0] = true;
    queue.push_back((i0, j0));
    while let Some((i, j)) = queue.pop_front() {
        let mut push = |i: usize, j: usize| {
            if !visited[i * np + j] && inside(i, j) {
                visited[i * np + j] = true;
                queue.push_back((i, j));
            }
        };
        if i > 0 {
            push(i - 1, j);
        }
        if i + 1 < nq {
            push(i + 1, j);
        }
        if j > 0 {
            push(i, j - 1);
        }
        if j + 1 < np {
            push(i, j + 1);
        }
    }

    minima
        .iter()
        .filter(|(_, q)| {
            let (i, j) = cell_of(*q, 0.0);
            visited[i * np + j]
        })
        .map(|(idx, _)| *idx)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Random confining multi-well potentials: the graph is a tree with one
    /// vertex per critical point plus a top, one fresh edge per well, and
    /// one merged edge per saddle; classification agrees with the
    /// flood-fill oracle about which wells each level component encloses.
    #[test]
    fn random_multiwell_graphs_match_the_flood_fill_oracle(
        wells in 1usize..=3,
        gaps in proptest::collection::vec(0.55f64..1.2, 5),
        c in 0.5f64..2.0,
    ) {
        let n_roots = 2 * wells - 1;
        let mut roots = vec![0.0; n_roots];
        for i in 1..n_roots {
            roots[i] = roots[i - 1] + gaps[i - 1];
        }
        let mid = (roots[0] + roots[n_roots - 1]) / 2.0;
        for r in &mut roots {
            *r -= mid;
        }
        let coeffs = integrated_polynomial(c, &roots);

        // saddle values must be pairwise distinct for the merge order to
        // be well defined; random roots occasionally tie them
        let crit_values: Vec<f64> = roots.iter().map(|&r| poly_value(&coeffs, r)).collect();
        let v_lo = crit_values.iter().cloned().fold(f64::INFINITY, f64::min);
        let v_hi = crit_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let h_max = v_hi + 1.0;
        let span = h_max - v_lo;
        let saddle_values: Vec<f64> =
            (1..n_roots).step_by(2).map(|i| crit_values[i]).collect();
        for (a, sa) in saddle_values.iter().enumerate() {
            for sb in saddle_values.iter().skip(a + 1) {
                prop_assume!((sa - sb).abs() > 0.05 * span);
            }
        }

        let model = HamiltonianModel::new(1.0, Potential::Poly { coeffs: coeffs.clone() }).unwrap();
        let mut q_lo = roots[0] - 0.3;
        while poly_value(&coeffs, q_lo) < h_max + 0.3 {
            q_lo -= 0.1;
        }
        let mut q_hi = roots[n_roots - 1] + 0.3;
        while poly_value(&coeffs, q_hi) < h_max + 0.3 {
            q_hi += 0.1;
        }
        let p_max = (2.0 * (h_max - v_lo)).sqrt() * 1.05 + 0.3;
        let domain = BoxDomain::new(q_lo, q_hi, -p_max, p_max, 192, 192).unwrap();
        let graph = ReebGraph::build(&model, &domain, &ReebBuildOpts::new(h_max)).unwrap();

        // tree shape: wells fresh edges, wells - 1 merges, one top vertex
        let n_min = graph.vertices().iter().filter(|v| v.kind == VertexKind::Minimum).count();
        let n_sad = graph.vertices().iter().filter(|v| v.kind == VertexKind::Saddle).count();
        let n_top = graph.vertices().iter().filter(|v| v.kind == VertexKind::Top).count();
        prop_assert_eq!(n_min, wells);
        prop_assert_eq!(n_sad, wells - 1);
        prop_assert_eq!(n_top, 1);
        prop_assert_eq!(graph.edges().len(), n_min + n_sad);
        prop_assert_eq!(graph.edges().len() + 1, graph.vertices().len());

        let minima: Vec<(usize, f64)> = graph
            .critical_points()
            .iter()
            .enumerate()
            .filter(|(_, cp)| cp.kind == CriticalKind::Minimum)
            .map(|(i, cp)| (i, cp.q))
            .collect();
        let top_edge = graph
            .edges()
            .iter()
            .find(|e| graph.vertices()[e.upper - 1].kind == VertexKind::Top)
            .unwrap();
        prop_assert_eq!(top_edge.minima.len(), wells);

        // probe lattice: classify each admissible point and compare the
        // edge's well set against the flood fill
        let mut probes = 0usize;
        'outer: for iq in 1..14usize {
            for jp in 1..10usize {
                if probes >= 8 {
                    break 'outer;
                }
                let q = q_lo + (q_hi - q_lo) * iq as f64 / 14.0;
                let p = -p_max + 2.0 * p_max * jp as f64 / 10.0;
                let h = model.energy(q, p);
                if h > h_max - 0.05 * span {
                    continue;
                }
                if crit_values.iter().any(|&v| (h - v).abs() < 0.03 * span) {
                    continue;
                }
                let edge = match graph.classify_point(q, p).unwrap() {
                    Classified::OnEdge { edge, .. } => edge,
                    // the guard band around critical levels is allowed to
                    // refuse; the probe filter keeps this rare
                    _ => continue,
                };
                let expected = reachable_minima(&model, &domain, q, p, h, &minima);
                prop_assert_eq!(
                    &graph.edge_by_id(edge).minima, &expected,
                    "point ({}, {}) at h = {}", q, p, h
                );
                probes += 1;
            }
        }
        prop_assert!(probes >= 3, "only {} usable probes", probes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// The variational lower bound shares its flux and floors with the
    /// flux-form action, so it can never exceed it, whatever trajectory the
    /// driven generator produces.
    #[test]
    fn duality_bound_never_exceeds_the_flux_form(
        gamma in 1.0f64..3.0,
        hj in -1.0f64..1.0,
        mu in -1.0f64..1.0,
        vq in 0.5f64..1.5,
        vp in 0.5f64..1.5,
    ) {
        let model = HamiltonianModel::new(1.0, Potential::Harmonic { k: 1.0 }).unwrap();
        let domain = BoxDomain::square(4.0, 40).unwrap();
        let form = KineticForm::Friction { gamma };
        let plain = KineticGenerator::new(&model, &domain, form, None).unwrap();
        let driven =
            KineticGenerator::new(&model, &domain, form, Some(&move |_q, _p| hj)).unwrap();
        let init = PhaseDensity::from_fn(&domain, |q, p| {
            (-(q - mu) * (q - mu) / (2.0 * vq) - p * p / (2.0 * vp)).exp()
        })
        .normalized()
        .unwrap();
        let traj = generator_trajectory(&driven, &init, 0.02, 8).unwrap();

        let opts = RateOpts::default();
        let value = rate_functional_h(&plain, &traj.snapshots, &opts).unwrap().value;
        let dict = Dictionary::for_rate(&domain);
        let bound = rate_lower_bound_duality(&plain, &traj.snapshots, &dict, &opts)
            .unwrap()
            .value;
        prop_assert!(
            bound <= value * (1.0 + 1e-9) + 1e-12,
            "bound {} exceeds value {}",
            bound,
            value
        );
    }

    /// Mass conservation and positivity of the phase-space solver under
    /// random friction strengths and initial Gaussians.
    #[test]
    fn phase_solver_conserves_mass_for_random_parameters(
        gamma in 0.5f64..5.0,
        mu in -1.0f64..1.0,
        sq in 0.5f64..1.0,
        sp in 0.6f64..1.0,
    ) {
        let model = HamiltonianModel::new(1.0, Potential::Harmonic { k: 1.0 }).unwrap();
        let domain = BoxDomain::new(-6.0, 6.0, -6.5, 6.5, 48, 52).unwrap();
        let init = PhaseDensity::from_fn(&domain, |q, p| {
            (-(q - mu) * (q - mu) / (2.0 * sq * sq) - p * p / (2.0 * sp * sp)).exp()
        })
        .normalized()
        .unwrap();
        let traj =
            solve_vfp(&model, KineticForm::Friction { gamma }, &init, 2e-3, 0.05, &[]).unwrap();
        prop_assert!(traj.diagnostics.max_mass_drift <= 1e-8, "{}", traj.diagnostics.max_mass_drift);
        prop_assert_eq!(traj.diagnostics.negative_cells, 0);
        prop_assert!(traj.snapshots.last().unwrap().min_value() >= 0.0);
    }

    /// Mass conservation of the graph solver for random double wells and
    /// random delta initial data.
    #[test]
    fn graph_solver_conserves_mass_for_random_parameters(
        a in 0.5f64..2.0,
        b in 0.7f64..1.3,
        frac in 0.15f64..0.85,
    ) {
        let model = HamiltonianModel::new(1.0, Potential::DoubleWell { a, b }).unwrap();
        let barrier = a * b.powi(4) / 4.0;
        let h_max = barrier + 1.5;
        let half = b + (2.0 * h_max / a).powf(0.25) + 0.4;
        let p_half = (2.0 * h_max).sqrt() + 0.4;
        let domain = BoxDomain::new(-half, half, -p_half, p_half, 160, 160).unwrap();
        let graph = ReebGraph::build(&model, &domain, &ReebBuildOpts::new(h_max)).unwrap();
        let table = tabulate(&graph, &TabulateOpts::default()).unwrap();
        let solver = GraphSolver::new(&graph, &table, &GraphMeshOpts::default(), 1e-3).unwrap();

        // place the delta a fixed fraction up the first edge's span
        let edge = graph.edge_by_id(1);
        let h0 = edge.h_lo + frac * (edge.h_hi - edge.h_lo);
        let f0 = solver.mesh().delta(1, h0, 1.0);
        let sol = solver.evolve(&f0, 0.1, &[]).unwrap();
        prop_assert!(
            sol.diagnostics.max_mass_drift_per_step <= 1e-10,
            "{}",
            sol.diagnostics.max_mass_drift_per_step
        );
        prop_assert!(sol.f.iter().all(|&x| x >= 0.0));
    }

    /// Particle streams are counter-based: the first n particles of a
    /// larger ensemble reproduce the smaller run exactly, and snapshot
    /// requests never perturb the dynamics.
    #[test]
    fn particle_streams_are_stable_under_extension_and_snapshots(
        seed in proptest::num::u64::ANY,
        gamma in 0.5f64..3.0,
    ) {
        let model = HamiltonianModel::new(1.0, Potential::Harmonic { k: 1.0 }).unwrap();
        let params = SdeParams::vfp(gamma, 1.0, 1e-3, 0.02);
        let small = ParticleEnsemble::gaussian(12, 0.5, 0.0, 0.8, 1.0, seed).unwrap();
        let large = ParticleEnsemble::gaussian(24, 0.5, 0.0, 0.8, 1.0, seed).unwrap();

        let run_small = simulate_vfp_particles(&model, &params, &small, &[]).unwrap();
        let run_large = simulate_vfp_particles(&model, &params, &large, &[]).unwrap();
        for i in 0..12 {
            prop_assert_eq!(
                run_small.final_state.q[i].to_bits(),
                run_large.final_state.q[i].to_bits()
            );
            prop_assert_eq!(
                run_small.final_state.p[i].to_bits(),
                run_large.final_state.p[i].to_bits()
            );
        }

        let with_snaps = simulate_vfp_particles(&model, &params, &small, &[0.01]).unwrap();
        for i in 0..12 {
            prop_assert_eq!(
                run_small.final_state.q[i].to_bits(),
                with_snaps.final_state.q[i].to_bits()
            );
        }
    }
}
