//! One function per scenario. Each builds its inputs from the validated
//! config, runs the corresponding core pipeline, and writes the artifact
//! files; the returned listing goes into the run manifest.

use std::path::Path;

use hamcg_core::coeffs::{tabulate, TabulateOpts};
use hamcg_core::graphpde::{GraphMeshOpts, GraphSolver};
use hamcg_core::io;
use hamcg_core::model::{find_critical_points, CriticalSearch, HamiltonianModel};
use hamcg_core::reeb::{Classified, ReebGraph, VertexKind};
use hamcg_core::sde::{
    simulate_perturbed_hamiltonian, simulate_vfp_particles, ParticleEnsemble, SdeParams, SdeRun,
};
use hamcg_core::vfp::{self, solve_smoluchowski, solve_vfp, suggested_dt, KineticForm};

use crate::config::{require, RunConfig, Scenario};
use crate::error::{Error, Result};

pub struct ScenarioOutput {
    /// File names written into the output directory, manifest excluded.
    pub files: Vec<String>,
    /// Master seed the run actually consumed, if any.
    pub seed: Option<u64>,
    /// Set by the verify scenario only.
    pub verify_pass: Option<bool>,
}

impl ScenarioOutput {
    fn deterministic(files: Vec<String>) -> Self {
        Self { files, seed: None, verify_pass: None }
    }
}

pub fn run(cfg: &RunConfig, out: &Path, seed_override: Option<u64>) -> Result<ScenarioOutput> {
    match cfg.scenario {
        Scenario::CriticalPoints => critical_points(cfg, out),
        Scenario::BuildGraph => build_graph(cfg, out),
        Scenario::Coefficients => coefficients(cfg, out),
        Scenario::SimulateSde => simulate_sde(cfg, out, seed_override),
        Scenario::SolveVfp => solve_vfp_scenario(cfg, out),
        Scenario::SolveSmoluchowski => solve_smoluchowski_scenario(cfg, out),
        Scenario::SolveGraph => solve_graph(cfg, out),
        Scenario::OverdampedReport => overdamped_report(cfg, out),
        Scenario::GraphLimitReport => graph_limit_report(cfg, out, seed_override),
        Scenario::Verify => verify(cfg, out),
    }
}

fn write(out: &Path, name: &str, text: &str, files: &mut Vec<String>) -> Result<()> {
    io::save_text(&out.join(name), text)?;
    files.push(name.to_string());
    Ok(())
}

fn snapshot_times(list: &Option<Vec<f64>>, t_end: f64) -> Vec<f64> {
    list.clone().unwrap_or_else(|| vec![t_end])
}

fn build_reeb(cfg: &RunConfig) -> Result<ReebGraph> {
    let model = require(&cfg.model, "model")?.build()?;
    let domain = require(&cfg.grid, "grid")?.build()?;
    let opts = require(&cfg.graph, "graph")?.build_opts();
    Ok(ReebGraph::build(&model, &domain, &opts)?)
}

fn tabulate_opts(cfg: &RunConfig) -> TabulateOpts {
    let mut opts = TabulateOpts::default();
    if let Some(c) = &cfg.coefficients {
        if let Some(n) = c.samples_per_edge {
            opts.samples_per_edge = n;
        }
        if let Some(n) = c.quad_order {
            opts.quad_order = n;
        }
    }
    opts
}

fn critical_points(cfg: &RunConfig, out: &Path) -> Result<ScenarioOutput> {
    let model = require(&cfg.model, "model")?.build()?;
    let domain = require(&cfg.grid, "grid")?.build()?;
    let points = find_critical_points(&model, &domain, &CriticalSearch::default())?;
    let mut files = Vec::new();
    write(out, "critical_points.csv", &io::critical_points_csv(&points), &mut files)?;
    Ok(ScenarioOutput::deterministic(files))
}

fn build_graph(cfg: &RunConfig, out: &Path) -> Result<ScenarioOutput> {
    let graph = build_reeb(cfg)?;
    let mut files = Vec::new();
    write(out, "graph.json", &io::graph_json(&graph)?, &mut files)?;
    io::save_bytes(&out.join("labels.bin"), &io::label_grid_bytes(&graph))?;
    files.push("labels.bin".to_string());
    Ok(ScenarioOutput::deterministic(files))
}

fn coefficients(cfg: &RunConfig, out: &Path) -> Result<ScenarioOutput> {
    let graph = build_reeb(cfg)?;
    let table = tabulate(&graph, &tabulate_opts(cfg))?;
    let mut files = Vec::new();
    write(out, "coefficients.csv", &io::coefficients_csv(&table), &mut files)?;
    write(out, "coefficients_summary.json", &io::coefficients_summary_json(&table)?, &mut files)?;
    Ok(ScenarioOutput::deterministic(files))
}

fn simulate_sde(cfg: &RunConfig, out: &Path, seed_override: Option<u64>) -> Result<ScenarioOutput> {
    let model = require(&cfg.model, "model")?.build()?;
    let s = require(&cfg.sde, "sde")?;
    let seed = seed_override.or(s.seed).unwrap_or(0);
    let init = match s.init.kind.as_str() {
        "point" => {
            ParticleEnsemble::at_point(s.n_particles, s.init.q.unwrap(), s.init.p.unwrap(), seed)?
        }
        _ => ParticleEnsemble::gaussian(
            s.n_particles,
            s.init.q_mean.unwrap(),
            s.init.p_mean.unwrap(),
            s.init.q_sd.unwrap(),
            s.init.p_sd.unwrap(),
            seed,
        )?,
    };
    let mut params = match s.form.as_str() {
        "friction" => SdeParams::vfp(s.gamma.unwrap(), vfp::THETA, s.dt, s.t_end),
        _ => SdeParams::perturbed(s.eps.unwrap(), s.dt, s.t_end),
    };
    if let Some(ns) = s.noise_scale {
        params = params.with_noise_scale(ns);
    }
    let times = snapshot_times(&s.snapshots, s.t_end);
    let run: SdeRun = match s.form.as_str() {
        "friction" => simulate_vfp_particles(&model, &params, &init, &times)?,
        _ => simulate_perturbed_hamiltonian(&model, &params, &init, &times)?,
    };
    let mut files = Vec::new();
    write(out, "particles.csv", &io::particle_snapshots_csv(&run.snapshots), &mut files)?;
    write(out, "checkpoint.json", &io::checkpoint_json(&run.final_state)?, &mut files)?;
    Ok(ScenarioOutput { files, seed: Some(seed), verify_pass: None })
}

fn solve_vfp_scenario(cfg: &RunConfig, out: &Path) -> Result<ScenarioOutput> {
    let model = require(&cfg.model, "model")?.build()?;
    let domain = require(&cfg.grid, "grid")?.build()?;
    let v = require(&cfg.vfp, "vfp")?;
    let form = match v.form.as_str() {
        "friction" => KineticForm::Friction { gamma: v.gamma.unwrap() },
        _ => KineticForm::SmallNoise { eps: v.eps.unwrap() },
    };
    let dt = v.dt.unwrap_or_else(|| suggested_dt(&model, &form));
    let init = v.init.build(&domain, &model)?;
    let times = snapshot_times(&v.snapshots, v.t_end);
    let traj = solve_vfp(&model, form, &init, dt, v.t_end, &times)?;
    let mut files = Vec::new();
    write(out, "phase.csv", &io::phase_snapshots_csv(&traj.snapshots), &mut files)?;
    write(out, "diagnostics.json", &serde_json::to_string_pretty(&traj.diagnostics)?, &mut files)?;
    Ok(ScenarioOutput::deterministic(files))
}

fn solve_smoluchowski_scenario(cfg: &RunConfig, out: &Path) -> Result<ScenarioOutput> {
    let model = require(&cfg.model, "model")?.build()?;
    let s = require(&cfg.smoluchowski, "smoluchowski")?;
    let init = s.init.build(&model)?;
    let times = snapshot_times(&s.snapshots, s.t_end);
    let traj = solve_smoluchowski(&model, &init, s.dt, s.t_end, &times)?;
    let mut files = Vec::new();
    write(out, "position.csv", &io::position_snapshots_csv(&traj.snapshots), &mut files)?;
    write(out, "diagnostics.json", &serde_json::to_string_pretty(&traj.diagnostics)?, &mut files)?;
    Ok(ScenarioOutput::deterministic(files))
}

/// Locate the delta initial condition on the graph, classifying a phase
/// point when the edge is not given directly.
fn delta_location(
    graph: &ReebGraph,
    model: &HamiltonianModel,
    edge: Option<usize>,
    h: Option<f64>,
    q: Option<f64>,
    p: Option<f64>,
) -> Result<(usize, f64)> {
    if let (Some(e), Some(h0)) = (edge, h) {
        if e == 0 || e > graph.edges().len() {
            return Err(Error::Run(format!(
                "edge {e} is out of range (the graph has {} edges)",
                graph.edges().len()
            )));
        }
        return Ok((e, h0));
    }
    let (q0, p0) = (q.unwrap(), p.unwrap());
    match graph.classify_point(q0, p0)? {
        Classified::OnEdge { edge, h } => Ok((edge, h)),
        other => Err(Error::Run(format!(
            "initial point ({q0}, {p0}) with H = {:.6} does not classify onto an edge: {other:?}",
            model.energy(q0, p0)
        ))),
    }
}

fn solve_graph(cfg: &RunConfig, out: &Path) -> Result<ScenarioOutput> {
    let model = require(&cfg.model, "model")?.build()?;
    let graph = build_reeb(cfg)?;
    let table = tabulate(&graph, &tabulate_opts(cfg))?;
    let g = require(&cfg.graph_pde, "graph_pde")?;
    let mut mesh_opts = GraphMeshOpts::default();
    if let Some(n) = g.nodes_hint {
        mesh_opts.nodes_hint = n;
    }
    let solver = GraphSolver::new(&graph, &table, &mesh_opts, g.dt)?;
    let (edge, h0) =
        delta_location(&graph, &model, g.init.edge, g.init.h, g.init.q, g.init.p)?;
    let f0 = solver.mesh().delta(edge, h0, 1.0);
    let times = snapshot_times(&g.snapshots, g.t_end);
    let sol = solver.evolve(&f0, g.t_end, &times)?;

    let saddle_ids: Vec<usize> = graph
        .vertices()
        .iter()
        .filter(|v| v.kind == VertexKind::Saddle)
        .map(|v| v.id)
        .collect();
    let mut vertex_rows = Vec::new();
    for (t, residuals) in &sol.vertex_snapshots {
        for (&id, &r) in saddle_ids.iter().zip(residuals) {
            vertex_rows.push((*t, id, r));
        }
    }

    let mut files = Vec::new();
    write(out, "graph.json", &io::graph_json(&graph)?, &mut files)?;
    write(
        out,
        "graph_trajectory.csv",
        &io::graph_trajectory_csv(solver.mesh(), &sol.snapshots),
        &mut files,
    )?;
    write(out, "vertex_diagnostics.csv", &io::vertex_diagnostics_csv(&vertex_rows), &mut files)?;
    write(out, "diagnostics.json", &serde_json::to_string_pretty(&sol.diagnostics)?, &mut files)?;
    Ok(ScenarioOutput::deterministic(files))
}

fn overdamped_report(cfg: &RunConfig, out: &Path) -> Result<ScenarioOutput> {
    let model = require(&cfg.model, "model")?.build()?;
    let domain = require(&cfg.grid, "grid")?.build()?;
    let o = require(&cfg.overdamped, "overdamped")?;
    let sigma0 = o.sigma0.build(&model)?;
    let report = vfp::overdamped_convergence_report(
        &model,
        &o.gammas,
        &sigma0,
        &domain,
        o.t_probe,
        o.dt,
    )?;
    let mut files = Vec::new();
    write(out, "overdamped.csv", &io::overdamped_csv(&report), &mut files)?;
    write(out, "overdamped.json", &io::overdamped_json(&report)?, &mut files)?;
    Ok(ScenarioOutput::deterministic(files))
}

fn graph_limit_report(
    cfg: &RunConfig,
    out: &Path,
    seed_override: Option<u64>,
) -> Result<ScenarioOutput> {
    let model = require(&cfg.model, "model")?.build()?;
    let graph = build_reeb(cfg)?;
    let table = tabulate(&graph, &tabulate_opts(cfg))?;
    let gl = require(&cfg.graph_limit, "graph_limit")?;
    let seed = seed_override.or(gl.seed).unwrap_or(0);

    let init = ParticleEnsemble::at_point(gl.n_particles, gl.q0, gl.p0, seed)?;
    let params = SdeParams::perturbed(gl.eps, gl.dt, gl.t_end);
    let run = simulate_perturbed_hamiltonian(&model, &params, &init, &[])?;
    let empirical = graph.empirical_pushforward(&run.final_state.points(), gl.bins_per_edge)?;

    let mut mesh_opts = GraphMeshOpts::default();
    if let Some(n) = gl.nodes_hint {
        mesh_opts.nodes_hint = n;
    }
    let solver = GraphSolver::new(&graph, &table, &mesh_opts, gl.dt_graph)?;
    let (edge, h0) = delta_location(&graph, &model, None, None, Some(gl.q0), Some(gl.p0))?;
    let f0 = solver.mesh().delta(edge, h0, 1.0);
    let sol = solver.evolve(&f0, gl.t_end, &[])?;
    let predicted = solver.mesh().to_histogram(&graph, &sol.f, gl.bins_per_edge);

    let l1 = empirical.l1_renormalized(&predicted)?;
    let summary = serde_json::json!({
        "l1_renormalized": l1,
        "kept_mass_particles": empirical.kept_mass(),
        "near_critical_mass": empirical.near_critical,
        "above_cap_mass": empirical.above_cap,
        "n_particles": gl.n_particles,
        "eps": gl.eps,
        "t_end": gl.t_end,
        "bins_per_edge": gl.bins_per_edge,
        "seed": seed,
    });

    let mut files = Vec::new();
    write(
        out,
        "histogram_comparison.csv",
        &io::histogram_comparison_csv(&empirical, &predicted)?,
        &mut files,
    )?;
    write(out, "graph_limit.json", &serde_json::to_string_pretty(&summary)?, &mut files)?;
    Ok(ScenarioOutput { files, seed: Some(seed), verify_pass: None })
}

fn verify(cfg: &RunConfig, out: &Path) -> Result<ScenarioOutput> {
    let suite = cfg
        .verify
        .as_ref()
        .and_then(|v| v.suite.as_deref())
        .unwrap_or("all");
    let ids = hamcg_core::verify::suite_ids(suite)
        .ok_or_else(|| Error::Config(format!("unknown verify suite {suite:?}")))?;
    let report = hamcg_core::verify::run_subset(ids, Some(out))?;
    print!("{}", report.table());
    Ok(ScenarioOutput {
        files: vec!["verify_table.csv".into(), "verify_report.json".into()],
        seed: None,
        verify_pass: Some(report.pass),
    })
}
