//! The acceptance gate: eleven end-to-end checks, each reduced to one
//! PASS/FAIL line with the measured numbers in the detail string.
//!
//! Every check is deterministic: fixed seeds, fixed grids, fixed step
//! sizes. A check that errors out (unstable step, boundary leak) fails
//! with the error text instead of aborting the suite.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::coeffs::{ta_by_area, tabulate, CoefficientTable, TabulateOpts};
use crate::functionals::{
    energy_dissipation_check, entropy_dissipation_check, rate_functional_h,
    rate_lower_bound_duality, Dictionary, RateOpts,
};
use crate::graphpde::{GraphMeshOpts, GraphSolver};
use crate::io;
use crate::model::{BoxDomain, HamiltonianModel, Potential};
use crate::reeb::{Classified, Classifier, GraphHistogram, ReebBuildOpts, ReebGraph};
use crate::sde::{
    simulate_perturbed_hamiltonian, simulate_vfp_particles, ParticleEnsemble, SdeParams,
};
use crate::vfp::{
    generator_trajectory, overdamped_convergence_report, solve_smoluchowski, solve_vfp,
    suggested_dt, KineticForm, KineticGenerator, PhaseDensity, PositionDensity,
};
use crate::Result;

#[derive(Debug, Clone, Serialize)]
pub struct CriterionOutcome {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub outcomes: Vec<CriterionOutcome>,
    pub pass: bool,
}

impl VerifyReport {
    /// Human-readable PASS/FAIL table, one criterion per line.
    pub fn table(&self) -> String {
        let mut s = String::new();
        for o in &self.outcomes {
            let _ = writeln!(
                s,
                "C{:02}  {}  {:<44}  {} ({:.1}s)",
                o.id,
                if o.pass { "PASS" } else { "FAIL" },
                o.name,
                o.detail,
                o.seconds
            );
        }
        let _ = writeln!(s, "overall: {}", if self.pass { "PASS" } else { "FAIL" });
        s
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("id,name,pass,seconds,detail\n");
        for o in &self.outcomes {
            let _ = writeln!(
                s,
                "{},{},{},{},\"{}\"",
                o.id,
                o.name,
                o.pass,
                o.seconds,
                o.detail.replace('"', "'")
            );
        }
        s
    }
}

/// Shared artifacts and collected diagnostics. The expensive double-well
/// graph is built once and reused; every solver run deposits its
/// conservation numbers here for the aggregate check.
#[derive(Default)]
struct Ctx {
    double_well: Option<(ReebGraph, CoefficientTable)>,
    /// (label, relative mass drift, negative cells, min cell value)
    phase_runs: Vec<(&'static str, f64, usize, f64)>,
    /// (label, mass drift per step, max vertex residual, min cell value)
    graph_runs: Vec<(&'static str, f64, f64, f64)>,
}

impl Ctx {
    fn double_well(&mut self) -> Result<&(ReebGraph, CoefficientTable)> {
        if self.double_well.is_none() {
            let model = HamiltonianModel::new(1.0, Potential::DoubleWell { a: 1.0, b: 1.0 })?;
            let domain = BoxDomain::square(2.7, 192)?;
            let graph = ReebGraph::build(&model, &domain, &ReebBuildOpts::new(2.5))?;
            let table = tabulate(&graph, &TabulateOpts::default())?;
            self.double_well = Some((graph, table));
        }
        Ok(self.double_well.as_ref().unwrap())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// C1: the tabulated coefficients satisfy their own structure on the
/// double well: d(TA)/dh = TB away from the saddle ends, the TA limits
/// balance at the saddle, and the contour quadrature agrees with a plain
/// area count.
fn c01(ctx: &mut Ctx) -> Result<(bool, String)> {
    let (graph, table) = ctx.double_well()?;
    let dta = table.ta_derivative_residual(0.02);
    let kirchhoff = table.max_saddle_residual();
    let mut area_worst = 0.0_f64;
    // one lobe below the saddle, the merged orbit above it
    let top = graph.edges().iter().find(|e| e.minima.len() == 2).unwrap().id;
    let lobe = graph.edges().iter().find(|e| e.minima.len() == 1).unwrap().id;
    for (edge, h) in [(lobe, 0.15), (top, 0.6), (top, 1.8)] {
        let by_area = ta_by_area(graph, edge, h, 768)?;
        let by_contour = table.edge(edge).ta(h);
        area_worst = area_worst.max(rel(by_area, by_contour));
    }
    let pass = dta <= 1e-2 && kirchhoff <= 1e-2 && area_worst <= 1e-2;
    Ok((pass, format!("ta' vs tb {dta:.2e}; saddle balance {kirchhoff:.2e}; area vs contour {area_worst:.2e} (tol 1e-2)")))
}

/// C2: harmonic oscillator closed forms, T = 2 pi and A(h) = h.
fn c02(_ctx: &mut Ctx) -> Result<(bool, String)> {
    let model = HamiltonianModel::new(1.0, Potential::Harmonic { k: 1.0 })?;
    let domain = BoxDomain::square(2.5, 192)?;
    let graph = ReebGraph::build(&model, &domain, &ReebBuildOpts::new(2.3))?;
    let table = tabulate(&graph, &TabulateOpts::default())?;
    let tau = std::f64::consts::TAU;
    let edge = &table.edges[0];
    let t_worst = edge.t.iter().map(|&t| rel(t, tau)).fold(0.0, f64::max);
    let a_worst = [0.1, 0.5, 1.0, 2.0]
        .iter()
        .map(|&h| rel(edge.ta(h) / edge.t(h), h))
        .fold(0.0, f64::max);
    let pass = t_worst <= 1e-3 && a_worst <= 1e-3;
    Ok((pass, format!("max |T-2pi|/2pi {t_worst:.2e}; max |A(h)-h|/h {a_worst:.2e} (tol 1e-3)")))
}

/// C3: the momentum diffusion coefficient B = TB/T equals 1/m at every
/// sample, on the double well (m = 1) and a heavy harmonic model (m = 2).
fn c03(ctx: &mut Ctx) -> Result<(bool, String)> {
    let mut worst = 0.0_f64;
    let mut samples = 0usize;
    {
        let (_, table) = ctx.double_well()?;
        for e in &table.edges {
            for k in 0..e.h.len() {
                worst = worst.max((e.tb[k] / e.t[k] - 1.0).abs());
                samples += 1;
            }
        }
    }
    let m2 = HamiltonianModel::new(2.0, Potential::Harmonic { k: 1.0 })?;
    let domain = BoxDomain::new(-2.5, 2.5, -3.4, 3.4, 160, 192)?;
    let graph = ReebGraph::build(&m2, &domain, &ReebBuildOpts::new(2.3))?;
    let table = tabulate(&graph, &TabulateOpts::default())?;
    for e in &table.edges {
        for k in 0..e.h.len() {
            worst = worst.max((2.0 * e.tb[k] / e.t[k] - 1.0).abs());
            samples += 1;
        }
    }
    Ok((worst <= 1e-3, format!("max |m B - 1| {worst:.2e} over {samples} samples (tol 1e-3)")))
}

/// C4: mean energy production d<H>/dt = 1/m measured three independent
/// ways (particles, phase-space solver, graph solver), on the harmonic
/// model at m = 2 and the double well at m = 1.
fn c04(ctx: &mut Ctx) -> Result<(bool, String)> {
    let mut detail = String::new();
    let mut pass = true;

    // particles: gain over [0, t] within 3 monte carlo standard errors
    for (label, model, q0) in [
        ("sde dw m=1", HamiltonianModel::new(1.0, Potential::DoubleWell { a: 1.0, b: 1.0 })?, 1.0),
        ("sde harm m=2", HamiltonianModel::new(2.0, Potential::Harmonic { k: 1.0 })?, 1.0),
    ] {
        let params = SdeParams::perturbed(0.05, 2e-3, 1.0);
        let init = ParticleEnsemble::at_point(10_000, q0, 0.0, 11)?;
        let run = simulate_perturbed_hamiltonian(&model, &params, &init, &[1.0])?;
        let snap = &run.snapshots[0];
        let gain = snap.mean_energy(&model) - init.mean_energy(&model) - 1.0 / model.mass();
        let se = snap.energy_stderr(&model).max(1e-9);
        if gain.abs() > 3.0 * se {
            pass = false;
        }
        let _ = write!(detail, "{label} {:+.1}se; ", gain / se);
    }

    // phase-space solver: slope of <H> within 2 percent
    // the winding length scale * t_end controls the transport error, so the
    // stiff double well runs at a larger eps than the harmonic case
    let pde_cases = [
        (
            "pde harm m=2",
            HamiltonianModel::new(2.0, Potential::Harmonic { k: 1.0 })?,
            BoxDomain::square(8.0, 192)?,
            0.05,
        ),
        (
            "pde dw m=1",
            HamiltonianModel::new(1.0, Potential::DoubleWell { a: 1.0, b: 1.0 })?,
            BoxDomain::new(-4.0, 4.0, -7.0, 7.0, 160, 240)?,
            0.1,
        ),
    ];
    for (label, model, domain, eps) in pde_cases {
        let sigma =
            PositionDensity::gaussian(domain.q_min, domain.q_max, domain.nq, 0.0, 0.5)?;
        let init = PhaseDensity::product(&domain, &sigma, &model)?;
        let t_end = 0.3;
        let traj =
            solve_vfp(&model, KineticForm::SmallNoise { eps }, &init, 1e-3, t_end, &[])?;
        let last = traj.snapshots.last().unwrap();
        let rate = (last.mean_energy(&model) - init.mean_energy(&model)) / t_end;
        let err = rel(rate, 1.0 / model.mass());
        if err > 0.02 {
            pass = false;
        }
        ctx.phase_runs.push((
            "energy law pde",
            traj.diagnostics.max_mass_drift,
            traj.diagnostics.negative_cells,
            traj.diagnostics.min_cell_value,
        ));
        let _ = write!(detail, "{label} {:.1}%; ", 100.0 * err);
    }

    // graph solver: d<h>/dt = B = 1/m
    {
        let (graph, table) = ctx.double_well()?;
        let edge = match graph.xi(1.0, 0.2)? {
            Classified::OnEdge { edge, .. } => edge,
            other => return Err(crate::Error::SolveFailure(format!("seed point: {other:?}"))),
        };
        let solver = GraphSolver::new(graph, table, &GraphMeshOpts::default(), 1e-3)?;
        let f0 = solver.mesh().delta(edge, 0.05, 1.0);
        let sol = solver.evolve(&f0, 0.3, &[])?;
        let rate = (solver.mesh().mean_h(&sol.f) - solver.mesh().mean_h(&f0)) / 0.3;
        let err = rel(rate, 1.0);
        if err > 0.02 {
            pass = false;
        }
        let min_cell = sol.f.iter().cloned().fold(f64::INFINITY, f64::min);
        ctx.graph_runs.push((
            "energy law dw",
            sol.diagnostics.max_mass_drift_per_step,
            sol.diagnostics.max_vertex_residual,
            min_cell,
        ));
        let _ = write!(detail, "graph dw m=1 {:.1}%; ", 100.0 * err);
    }
    {
        let m2 = HamiltonianModel::new(2.0, Potential::Harmonic { k: 1.0 })?;
        let domain = BoxDomain::new(-2.5, 2.5, -3.4, 3.4, 160, 192)?;
        let graph = ReebGraph::build(&m2, &domain, &ReebBuildOpts::new(2.3))?;
        let table = tabulate(&graph, &TabulateOpts::default())?;
        let solver = GraphSolver::new(&graph, &table, &GraphMeshOpts::default(), 1e-3)?;
        let f0 = solver.mesh().delta(1, 0.4, 1.0);
        let sol = solver.evolve(&f0, 0.4, &[])?;
        let rate = (solver.mesh().mean_h(&sol.f) - solver.mesh().mean_h(&f0)) / 0.4;
        let err = rel(rate, 0.5);
        if err > 0.02 {
            pass = false;
        }
        let min_cell = sol.f.iter().cloned().fold(f64::INFINITY, f64::min);
        ctx.graph_runs.push((
            "energy law harm",
            sol.diagnostics.max_mass_drift_per_step,
            sol.diagnostics.max_vertex_residual,
            min_cell,
        ));
        let _ = write!(detail, "graph harm m=2 {:.1}%", 100.0 * err);
    }
    Ok((pass, detail))
}

/// C5: the empirical pushforward of the randomly perturbed flow lands on
/// the graph-solver prediction, L1 over 20 bins per edge within 0.10.
fn c05(ctx: &mut Ctx) -> Result<(bool, String)> {
    let (q0, p0) = (1.0, 0.5);
    let (t_end, n, bins) = (0.5, 10_000usize, 20usize);
    let (graph, table) = ctx.double_well()?;
    let model = graph.model().clone();
    let h0 = model.energy(q0, p0);
    let edge0 = match graph.xi(q0, p0)? {
        Classified::OnEdge { edge, .. } => edge,
        other => return Err(crate::Error::SolveFailure(format!("seed point: {other:?}"))),
    };

    let solver = GraphSolver::new(graph, table, &GraphMeshOpts::default(), 1e-3)?;
    let f0 = solver.mesh().delta(edge0, h0, 1.0);
    let sol = solver.evolve(&f0, t_end, &[])?;
    let predicted = solver.mesh().to_histogram(graph, &sol.f, bins);
    let min_cell = sol.f.iter().cloned().fold(f64::INFINITY, f64::min);
    let graph_diag = (
        "pushforward",
        sol.diagnostics.max_mass_drift_per_step,
        sol.diagnostics.max_vertex_residual,
        min_cell,
    );

    let params = SdeParams::perturbed(1e-3, 1e-4, t_end);
    let init = ParticleEnsemble::at_point(n, q0, p0, 23)?;
    let run = simulate_perturbed_hamiltonian(&model, &params, &init, &[])?;
    let mut empirical = GraphHistogram::zeros(graph, bins);
    let w = 1.0 / n as f64;
    let mut classifier = Classifier::new(graph);
    for i in 0..n {
        empirical.total_weight += w;
        match classifier.classify(run.final_state.q[i], run.final_state.p[i])? {
            Classified::OnEdge { edge, h } => empirical.deposit(edge, h, w),
            Classified::NearCritical { .. } => empirical.near_critical += w,
            Classified::AboveCap { .. } => empirical.above_cap += w,
        }
    }
    let l1 = empirical.l1_renormalized(&predicted)?;
    let kept = empirical.kept_mass();
    ctx.graph_runs.push(graph_diag);
    Ok((l1 <= 0.10, format!("L1 {l1:.3} (tol 0.10); classified mass {kept:.3}")))
}

/// C6: the friction family collapses onto the Smoluchowski solution
/// monotonically, and the Smoluchowski solver itself tracks the OU
/// variance law to 1 percent.
fn c06(ctx: &mut Ctx) -> Result<(bool, String)> {
    let model = HamiltonianModel::new(1.0, Potential::Harmonic { k: 1.0 })?;
    let sigma0 = PositionDensity::gaussian(-5.5, 5.5, 128, 1.0, 0.5)?;
    let phase_domain = BoxDomain::square(5.5, 128)?;
    let report = overdamped_convergence_report(
        &model,
        &[5.0, 10.0, 20.0],
        &sigma0,
        &phase_domain,
        1.0,
        5e-4,
    )?;
    let last_l1 = report.rows.last().unwrap().l1;

    let init = PositionDensity::gaussian(-6.0, 6.0, 400, 0.0, 2.0_f64.sqrt())?;
    let traj = solve_smoluchowski(&model, &init, 5e-4, 1.0, &[])?;
    let s = traj.snapshots.last().unwrap().variance();
    let exact = 1.0 + (2.0 - 1.0) * (-2.0_f64).exp();
    let var_err = rel(s, exact);
    ctx.phase_runs.push((
        "smoluchowski ou",
        traj.diagnostics.max_mass_drift,
        traj.diagnostics.negative_cells,
        traj.diagnostics.min_cell_value,
    ));

    let pass = report.l1_strictly_decreasing && last_l1 <= 0.05 && var_err <= 0.01;
    let seq: Vec<String> = report.rows.iter().map(|r| format!("{:.3}", r.l1)).collect();
    Ok((pass, format!("L1 at gamma 5,10,20: {} (last tol 0.05); ou variance {var_err:.2e} (tol 1e-2)", seq.join(","))))
}

/// C7: at gamma = 20 the conditional momentum distributions are
/// Maxwellian to 0.05 in aggregate L1 after one unit of time.
fn c07(ctx: &mut Ctx) -> Result<(bool, String)> {
    let model = HamiltonianModel::new(1.0, Potential::Harmonic { k: 1.0 })?;
    let domain = BoxDomain::new(-5.0, 5.0, -6.0, 6.0, 176, 208)?;
    let init = PhaseDensity::from_fn(&domain, |q, p| {
        (-(q - 0.5) * (q - 0.5) / 0.8 - p * p / 4.0).exp()
    })
    .normalized()?;
    let gamma = 20.0;
    let form = KineticForm::Friction { gamma };
    let dt = suggested_dt(&model, &form);
    let traj = solve_vfp(&model, form, &init, dt, 1.0, &[])?;
    let d = traj.snapshots.last().unwrap().conditional_maxwellian_l1(&model);
    ctx.phase_runs.push((
        "strong friction",
        traj.diagnostics.max_mass_drift,
        traj.diagnostics.negative_cells,
        traj.diagnostics.min_cell_value,
    ));
    Ok((d <= 0.05, format!("aggregate conditional L1 {d:.3} (tol 0.05)")))
}

/// C8: the rate functional vanishes on exact trajectories, prices an
/// injected uniform perturbation at h0^2 T / 2, and the variational lower
/// bound never exceeds the closed form over randomized trajectories.
fn c08(_ctx: &mut Ctx) -> Result<(bool, String)> {
    let model = HamiltonianModel::new(1.0, Potential::Harmonic { k: 1.0 })?;
    let gamma = 2.0;
    let opts = RateOpts::default();

    let domain = BoxDomain::square(4.5, 64)?;
    let plain = KineticGenerator::new(&model, &domain, KineticForm::Friction { gamma }, None)?;
    let init = PhaseDensity::from_fn(&domain, |q, p| {
        (-(q - 0.5) * (q - 0.5) / 1.6 - p * p / 2.8).exp()
    })
    .normalized()?;
    let exact = generator_trajectory(&plain, &init, 0.01, 40)?;
    let exact_rate = rate_functional_h(&plain, &exact.snapshots, &opts)?.value;

    let h0 = 0.5;
    let driven = KineticGenerator::new(
        &model,
        &domain,
        KineticForm::Friction { gamma },
        Some(&move |_q, _p| h0),
    )?;
    let gibbs = PhaseDensity::gibbs(&domain, &model)?;
    let (dt, steps) = (0.01, 50usize);
    let traj = generator_trajectory(&driven, &gibbs, dt, steps)?;
    let recovered = rate_functional_h(&plain, &traj.snapshots, &opts)?.value;
    let expected = 0.5 * h0 * h0 * dt * steps as f64;
    let rec_err = rel(recovered, expected);

    // randomized duality sweep: the lower bound may never cross the h-form
    let small = BoxDomain::square(4.0, 48)?;
    let plain_small =
        KineticGenerator::new(&model, &small, KineticForm::Friction { gamma }, None)?;
    let dict = Dictionary::for_rate(&small);
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    let mut rand = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut violations = 0usize;
    for _ in 0..100 {
        let hj = 2.0 * rand() - 1.0;
        let driven = KineticGenerator::new(
            &model,
            &small,
            KineticForm::Friction { gamma },
            Some(&move |_q, _p| hj),
        )?;
        let mu = 2.0 * rand() - 1.0;
        let (vq, vp) = (0.5 + rand(), 0.5 + rand());
        let start = PhaseDensity::from_fn(&small, |q, p| {
            (-(q - mu) * (q - mu) / (2.0 * vq) - p * p / (2.0 * vp)).exp()
        })
        .normalized()?;
        let t = generator_trajectory(&driven, &start, 0.02, 10)?;
        let h_form = rate_functional_h(&plain_small, &t.snapshots, &opts)?.value;
        let dual = rate_lower_bound_duality(&plain_small, &t.snapshots, &dict, &opts)?.value;
        if !(dual >= -1e-12 && dual <= h_form * (1.0 + 1e-9) + 1e-12) {
            violations += 1;
        }
    }

    let pass = exact_rate <= 1e-4 && rec_err <= 0.05 && violations == 0;
    Ok((pass, format!("exact action {exact_rate:.1e} (tol 1e-4); injection error {:.1}% (tol 5%); duality violations {violations}/100", 100.0 * rec_err)))
}

/// C9: the free-energy inequality holds along friction-solver output and
/// the Boltzmann-entropy inequality holds along perturbed-solver output,
/// with zero rows beyond the audit floor.
fn c09(ctx: &mut Ctx) -> Result<(bool, String)> {
    let model = HamiltonianModel::new(1.0, Potential::Harmonic { k: 1.0 })?;
    let domain = BoxDomain::new(-6.0, 6.0, -8.5, 8.5, 96, 136)?;
    let init = PhaseDensity::from_fn(&domain, |q, p| {
        (-(q - 0.5) * (q - 0.5) - p * p / 4.0).exp()
    })
    .normalized()?;
    let times: Vec<f64> = (0..=6).map(|k| 0.1 * k as f64).collect();
    let traj =
        solve_vfp(&model, KineticForm::Friction { gamma: 2.0 }, &init, 2e-3, 0.6, &times)?;
    let free = energy_dissipation_check(&model, 2.0, &traj.snapshots, 0.0)?;
    ctx.phase_runs.push((
        "dissipation audit",
        traj.diagnostics.max_mass_drift,
        traj.diagnostics.negative_cells,
        traj.diagnostics.min_cell_value,
    ));

    let times2 = [0.0, 0.025, 0.05];
    let traj2 =
        solve_vfp(&model, KineticForm::SmallNoise { eps: 0.1 }, &init, 2e-3, 0.05, &times2)?;
    let entropy = entropy_dissipation_check(&traj2.snapshots, 0.0)?;

    let count = |rows: &[crate::functionals::DissipationRow], floor: f64| {
        rows.iter().filter(|r| r.lhs > r.rhs + floor || r.h_moment > r.h_moment_bound + floor).count()
    };
    let v1 = count(&free.rows, free.floor);
    let v2 = count(&entropy.rows, entropy.floor);
    let pass = free.pass && entropy.pass && v1 == 0 && v2 == 0;
    Ok((pass, format!("free energy {} rows, {v1} beyond floor; entropy {} rows, {v2} beyond floor", free.rows.len(), entropy.rows.len())))
}

/// C10: every solver run in the suite conserved mass (1e-8 phase, 1e-10
/// per step on the graph) and produced no negative cells.
fn c10(ctx: &mut Ctx) -> Result<(bool, String)> {
    if ctx.phase_runs.is_empty() || ctx.graph_runs.is_empty() {
        return Ok((false, "no diagnostics collected".into()));
    }
    let worst_phase = ctx.phase_runs.iter().map(|r| r.1).fold(0.0, f64::max);
    let negatives: usize = ctx.phase_runs.iter().map(|r| r.2).sum();
    let worst_graph = ctx.graph_runs.iter().map(|r| r.1).fold(0.0, f64::max);
    let worst_vertex = ctx.graph_runs.iter().map(|r| r.2).fold(0.0, f64::max);
    let graph_min = ctx.graph_runs.iter().map(|r| r.3).fold(f64::INFINITY, f64::min);
    let pass = worst_phase <= 1e-8 && negatives == 0 && worst_graph <= 1e-10 && graph_min >= 0.0;
    Ok((pass, format!(
        "phase drift {worst_phase:.1e} over {} runs (tol 1e-8); negatives {negatives}; graph drift/step {worst_graph:.1e} (tol 1e-10); vertex residual {worst_vertex:.1e}",
        ctx.phase_runs.len()
    )))
}

/// C11: rerunning each pipeline with the same seeds reproduces the output
/// files byte for byte.
fn c11(ctx: &mut Ctx) -> Result<(bool, String)> {
    let model = HamiltonianModel::new(1.0, Potential::Harmonic { k: 1.0 })?;
    let mut pairs = Vec::new();

    let sde_csv = || -> Result<String> {
        let params = SdeParams::vfp(1.0, 1.0, 1e-3, 0.1);
        let init = ParticleEnsemble::gaussian(300, 0.5, 0.0, 0.8, 1.0, 7)?;
        let run = simulate_vfp_particles(&model, &params, &init, &[0.05, 0.1])?;
        Ok(io::particle_snapshots_csv(&run.snapshots))
    };
    pairs.push(("sde", sde_csv()?, sde_csv()?));

    let pde_csv = || -> Result<String> {
        let domain = BoxDomain::new(-5.0, 5.0, -6.0, 6.0, 80, 96)?;
        let init = PhaseDensity::from_fn(&domain, |q, p| (-q * q - p * p / 2.0).exp())
            .normalized()?;
        let traj =
            solve_vfp(&model, KineticForm::Friction { gamma: 2.0 }, &init, 5e-3, 0.05, &[0.05])?;
        Ok(io::phase_snapshots_csv(&traj.snapshots))
    };
    pairs.push(("pde", pde_csv()?, pde_csv()?));

    let coeff_csv = |ctx: &mut Ctx| -> Result<String> {
        Ok(io::coefficients_csv(&ctx.double_well()?.1))
    };
    let reference = coeff_csv(ctx)?;
    {
        // force a fresh tabulation for the second copy
        let (graph, _) = ctx.double_well()?;
        let fresh = tabulate(graph, &TabulateOpts::default())?;
        pairs.push(("coeffs", reference, io::coefficients_csv(&fresh)));
    }

    let graph_csv = |ctx: &mut Ctx| -> Result<String> {
        let (graph, table) = ctx.double_well()?;
        let solver = GraphSolver::new(graph, table, &GraphMeshOpts::default(), 1e-3)?;
        let f0 = solver.mesh().delta(1, 0.4, 1.0);
        let sol = solver.evolve(&f0, 0.1, &[0.05, 0.1])?;
        Ok(io::graph_trajectory_csv(solver.mesh(), &sol.snapshots))
    };
    pairs.push(("graph", graph_csv(ctx)?, graph_csv(ctx)?));

    let matching = pairs.iter().filter(|(_, a, b)| a == b).count();
    let names: Vec<&str> =
        pairs.iter().filter(|(_, a, b)| a != b).map(|(n, _, _)| *n).collect();
    let pass = matching == pairs.len();
    let detail = if pass {
        format!("{matching}/{} artifact pairs byte-identical", pairs.len())
    } else {
        format!("{matching}/{} byte-identical; differing: {}", pairs.len(), names.join(","))
    };
    Ok((pass, detail))
}

type Criterion = fn(&mut Ctx) -> Result<(bool, String)>;

const CRITERIA: [(u32, &str, Criterion); 11] = [
    (1, "coefficient identities on the double well", c01),
    (2, "harmonic closed forms", c02),
    (3, "momentum diffusion coefficient is 1/m", c03),
    (4, "mean energy production three ways", c04),
    (5, "particle pushforward matches the graph solver", c05),
    (6, "overdamped limit collapses to Smoluchowski", c06),
    (7, "strong friction relaxes conditionals", c07),
    (8, "rate functional identities", c08),
    (9, "energy dissipation inequalities", c09),
    (10, "conservation and positivity", c10),
    (11, "byte-identical reruns", c11),
];

/// Criterion ids behind a suite name. The conservation and determinism
/// checks (10, 11) aggregate diagnostics over the whole sweep, so they run
/// only in the full suite.
pub fn suite_ids(name: &str) -> Option<&'static [u32]> {
    match name {
        "all" => Some(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]),
        "coefficients" => Some(&[1, 2, 3]),
        "limits" => Some(&[4, 5, 6, 7]),
        "functionals" => Some(&[8, 9]),
        _ => None,
    }
}

/// Run all eleven checks in order. Numeric failures inside a check turn
/// into FAIL lines; only filesystem problems writing `out_dir` abort.
pub fn run_all(out_dir: Option<&Path>) -> Result<VerifyReport> {
    run_subset(suite_ids("all").unwrap(), out_dir)
}

/// Run the checks whose ids are listed, in ascending id order.
pub fn run_subset(ids: &[u32], out_dir: Option<&Path>) -> Result<VerifyReport> {
    let mut ctx = Ctx::default();
    let mut outcomes = Vec::with_capacity(ids.len());
    for (id, name, f) in CRITERIA {
        if !ids.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match f(&mut ctx) {
            Ok((pass, detail)) => (pass, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        outcomes.push(CriterionOutcome {
            id,
            name,
            pass,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let report = VerifyReport { pass: outcomes.iter().all(|o| o.pass), outcomes };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        io::save_text(&dir.join("verify_table.csv"), &report.csv())?;
        io::save_text(
            &dir.join("verify_report.json"),
            &serde_json::to_string_pretty(&report)?,
        )?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    // the full run_all sweep is exercised by the acceptance test target;
    // here only the cheap report plumbing
    #[test]
    fn report_table_formats_one_line_per_criterion() {
        let report = VerifyReport {
            outcomes: vec![
                CriterionOutcome {
                    id: 1,
                    name: "x",
                    pass: true,
                    detail: "ok".into(),
                    seconds: 0.5,
                },
                CriterionOutcome {
                    id: 2,
                    name: "y",
                    pass: false,
                    detail: "off by 1".into(),
                    seconds: 1.5,
                },
            ],
            pass: false,
        };
        let t = report.table();
        assert_eq!(t.lines().count(), 3);
        assert!(t.contains("C01  PASS"));
        assert!(t.contains("C02  FAIL"));
        assert!(t.ends_with("overall: FAIL\n"));
        let csv = report.csv();
        assert_eq!(csv.lines().next().unwrap(), "id,name,pass,seconds,detail");
        assert_eq!(csv.lines().count(), 3);
    }
}
