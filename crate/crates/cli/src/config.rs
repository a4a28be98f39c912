//! Run configuration: one TOML file drives one scenario.
//!
//! Parsing is strict. Every key has to be part of the schema; unknown keys
//! anywhere in the document are collected and reported together. Preset
//! parameters that belong to a different preset are rejected by name, and
//! each scenario checks that its required sections are present before any
//! computation starts. Sections a scenario does not read may still be
//! present, so one file can be re-pointed at several scenarios by editing
//! the `scenario` line alone.

use serde::Deserialize;

use hamcg_core::model::{BoxDomain, HamiltonianModel, InteractionKernel, Potential};
use hamcg_core::reeb::ReebBuildOpts;
use hamcg_core::vfp::{PhaseDensity, PositionDensity};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    CriticalPoints,
    BuildGraph,
    Coefficients,
    SimulateSde,
    SolveVfp,
    SolveSmoluchowski,
    SolveGraph,
    OverdampedReport,
    GraphLimitReport,
    Verify,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::CriticalPoints => "critical-points",
            Scenario::BuildGraph => "build-graph",
            Scenario::Coefficients => "coefficients",
            Scenario::SimulateSde => "simulate-sde",
            Scenario::SolveVfp => "solve-vfp",
            Scenario::SolveSmoluchowski => "solve-smoluchowski",
            Scenario::SolveGraph => "solve-graph",
            Scenario::OverdampedReport => "overdamped-report",
            Scenario::GraphLimitReport => "graph-limit-report",
            Scenario::Verify => "verify",
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct RunConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub output: OutputConfig,
    pub model: Option<ModelConfig>,
    pub grid: Option<GridConfig>,
    pub graph: Option<GraphConfig>,
    pub coefficients: Option<CoefficientsConfig>,
    pub sde: Option<SdeConfig>,
    pub vfp: Option<VfpConfig>,
    pub smoluchowski: Option<SmoluchowskiConfig>,
    pub graph_pde: Option<GraphPdeConfig>,
    pub overdamped: Option<OverdampedConfig>,
    pub graph_limit: Option<GraphLimitConfig>,
    pub verify: Option<VerifyConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: String,
    pub threads: Option<usize>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into(), threads: None }
    }
}

#[derive(Debug, Deserialize)]
pub struct ModelConfig {
    /// harmonic | double_well | quartic | triple_well | poly.
    pub preset: String,
    #[serde(default = "one")]
    pub mass: f64,
    pub k: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub tilt: Option<f64>,
    pub shift: Option<f64>,
    pub coeffs: Option<Vec<f64>>,
    pub interaction: Option<InteractionConfig>,
}

fn one() -> f64 {
    1.0
}

const PRESETS: &str = "harmonic, double_well, quartic, triple_well, poly";

impl ModelConfig {
    pub fn build(&self) -> Result<HamiltonianModel> {
        let allowed: &[&str] = match self.preset.as_str() {
            "harmonic" => &["k"],
            "double_well" => &["a", "b"],
            "quartic" => &["c"],
            "triple_well" => &["c", "tilt", "shift"],
            "poly" => &["coeffs"],
            other => {
                return Err(Error::Config(format!(
                    "[model] unknown preset {other:?} (expected one of {PRESETS})"
                )))
            }
        };
        let given: [(&str, bool); 6] = [
            ("k", self.k.is_some()),
            ("a", self.a.is_some()),
            ("b", self.b.is_some()),
            ("c", self.c.is_some()),
            ("tilt", self.tilt.is_some()),
            ("shift", self.shift.is_some()),
        ];
        let stray: Vec<&str> = given
            .iter()
            .filter(|(key, set)| *set && !allowed.contains(key))
            .map(|(key, _)| *key)
            .chain((self.coeffs.is_some() && self.preset != "poly").then_some("coeffs"))
            .collect();
        if !stray.is_empty() {
            return Err(Error::Config(format!(
                "[model] keys {} do not apply to preset {:?}",
                stray.join(", "),
                self.preset
            )));
        }
        let potential = match self.preset.as_str() {
            "harmonic" => Potential::Harmonic { k: self.k.unwrap_or(1.0) },
            "double_well" => {
                Potential::DoubleWell { a: self.a.unwrap_or(1.0), b: self.b.unwrap_or(1.0) }
            }
            "quartic" => Potential::Quartic { c: self.c.unwrap_or(1.0) },
            "triple_well" => Potential::TripleWell {
                c: self.c.unwrap_or(0.1),
                tilt: self.tilt.unwrap_or(0.05),
                shift: self.shift.unwrap_or(1.0),
            },
            _ => Potential::Poly {
                coeffs: self
                    .coeffs
                    .clone()
                    .ok_or_else(|| Error::Config("[model] preset poly requires `coeffs`".into()))?,
            },
        };
        let model = HamiltonianModel::new(self.mass, potential)
            .map_err(|e| Error::Config(format!("[model] {e}")))?;
        Ok(match &self.interaction {
            Some(i) => model.with_interaction(i.build()?),
            None => model,
        })
    }
}

#[derive(Debug, Deserialize)]
pub struct InteractionConfig {
    /// zero | quadratic | gaussian.
    pub kind: String,
    pub strength: Option<f64>,
    pub amplitude: Option<f64>,
    pub width: Option<f64>,
}

impl InteractionConfig {
    pub fn build(&self) -> Result<InteractionKernel> {
        let ctx = "[model.interaction]";
        match self.kind.as_str() {
            "zero" => {
                refuse(self.strength, "strength", ctx)?;
                refuse(self.amplitude, "amplitude", ctx)?;
                refuse(self.width, "width", ctx)?;
                Ok(InteractionKernel::Zero)
            }
            "quadratic" => {
                refuse(self.amplitude, "amplitude", ctx)?;
                refuse(self.width, "width", ctx)?;
                Ok(InteractionKernel::Quadratic { strength: need(self.strength, "strength", ctx)? })
            }
            "gaussian" => {
                refuse(self.strength, "strength", ctx)?;
                Ok(InteractionKernel::Gaussian {
                    amplitude: need(self.amplitude, "amplitude", ctx)?,
                    width: need(self.width, "width", ctx)?,
                })
            }
            other => Err(Error::Config(format!(
                "{ctx} unknown kind {other:?} (expected zero, quadratic, or gaussian)"
            ))),
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct GridConfig {
    pub q_min: f64,
    pub q_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub nq: usize,
    pub np: usize,
}

impl GridConfig {
    pub fn build(&self) -> Result<BoxDomain> {
        BoxDomain::new(self.q_min, self.q_max, self.p_min, self.p_max, self.nq, self.np)
            .map_err(|e| Error::Config(format!("[grid] {e}")))
    }
}

#[derive(Debug, Deserialize)]
pub struct GraphConfig {
    /// Energy cap of the graph; must exceed every critical value.
    pub h_max: f64,
    pub label_fraction: Option<f64>,
}

impl GraphConfig {
    pub fn check(&self) -> Result<()> {
        positive(self.h_max, "[graph] h_max")?;
        if let Some(f) = self.label_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!(
                    "[graph] label_fraction must lie in (0, 1), got {f}"
                )));
            }
        }
        Ok(())
    }

    pub fn build_opts(&self) -> ReebBuildOpts {
        let mut opts = ReebBuildOpts::new(self.h_max);
        if let Some(f) = self.label_fraction {
            opts.label_fraction = f;
        }
        opts
    }
}

#[derive(Debug, Deserialize)]
pub struct CoefficientsConfig {
    pub samples_per_edge: Option<usize>,
    pub quad_order: Option<usize>,
}

impl CoefficientsConfig {
    pub fn check(&self) -> Result<()> {
        if let Some(n) = self.samples_per_edge {
            at_least(n, 8, "[coefficients] samples_per_edge")?;
        }
        if let Some(n) = self.quad_order {
            at_least(n, 2, "[coefficients] quad_order")?;
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
pub struct SdeConfig {
    /// friction | perturbed.
    pub form: String,
    pub gamma: Option<f64>,
    pub eps: Option<f64>,
    pub noise_scale: Option<f64>,
    pub n_particles: usize,
    pub dt: f64,
    pub t_end: f64,
    pub snapshots: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub init: SdeInitConfig,
}

impl SdeConfig {
    pub fn check(&self) -> Result<()> {
        let ctx = "[sde]";
        match self.form.as_str() {
            "friction" => {
                need(self.gamma, "gamma", ctx)?;
                refuse(self.eps, "eps (friction form)", ctx)?;
            }
            "perturbed" => {
                need(self.eps, "eps", ctx)?;
                refuse(self.gamma, "gamma (perturbed form)", ctx)?;
            }
            other => {
                return Err(Error::Config(format!(
                    "{ctx} unknown form {other:?} (expected friction or perturbed)"
                )))
            }
        }
        at_least(self.n_particles, 1, "[sde] n_particles")?;
        positive(self.dt, "[sde] dt")?;
        positive(self.t_end, "[sde] t_end")?;
        self.init.check()
    }
}

#[derive(Debug, Deserialize)]
pub struct SdeInitConfig {
    /// point | gaussian.
    pub kind: String,
    pub q: Option<f64>,
    pub p: Option<f64>,
    pub q_mean: Option<f64>,
    pub p_mean: Option<f64>,
    pub q_sd: Option<f64>,
    pub p_sd: Option<f64>,
}

impl SdeInitConfig {
    pub fn check(&self) -> Result<()> {
        let ctx = "[sde.init]";
        match self.kind.as_str() {
            "point" => {
                need(self.q, "q", ctx)?;
                need(self.p, "p", ctx)?;
                refuse(self.q_mean, "q_mean (point init)", ctx)?;
                refuse(self.p_mean, "p_mean (point init)", ctx)?;
                refuse(self.q_sd, "q_sd (point init)", ctx)?;
                refuse(self.p_sd, "p_sd (point init)", ctx)?;
            }
            "gaussian" => {
                need(self.q_mean, "q_mean", ctx)?;
                need(self.p_mean, "p_mean", ctx)?;
                positive(need(self.q_sd, "q_sd", ctx)?, "[sde.init] q_sd")?;
                positive(need(self.p_sd, "p_sd", ctx)?, "[sde.init] p_sd")?;
                refuse(self.q, "q (gaussian init)", ctx)?;
                refuse(self.p, "p (gaussian init)", ctx)?;
            }
            other => {
                return Err(Error::Config(format!(
                    "{ctx} unknown kind {other:?} (expected point or gaussian)"
                )))
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
pub struct VfpConfig {
    /// friction | small-noise.
    pub form: String,
    pub gamma: Option<f64>,
    pub eps: Option<f64>,
    /// Defaults to the solver's suggested step for the chosen form.
    pub dt: Option<f64>,
    pub t_end: f64,
    pub snapshots: Option<Vec<f64>>,
    pub init: PhaseInitConfig,
}

impl VfpConfig {
    pub fn check(&self) -> Result<()> {
        let ctx = "[vfp]";
        match self.form.as_str() {
            "friction" => {
                need(self.gamma, "gamma", ctx)?;
                refuse(self.eps, "eps (friction form)", ctx)?;
            }
            "small-noise" => {
                need(self.eps, "eps", ctx)?;
                refuse(self.gamma, "gamma (small-noise form)", ctx)?;
            }
            other => {
                return Err(Error::Config(format!(
                    "{ctx} unknown form {other:?} (expected friction or small-noise)"
                )))
            }
        }
        if let Some(dt) = self.dt {
            positive(dt, "[vfp] dt")?;
        }
        positive(self.t_end, "[vfp] t_end")?;
        self.init.check("[vfp.init]")
    }
}

#[derive(Debug, Deserialize)]
pub struct PhaseInitConfig {
    /// gaussian | gibbs.
    pub kind: String,
    pub q_mean: Option<f64>,
    pub p_mean: Option<f64>,
    pub q_sd: Option<f64>,
    pub p_sd: Option<f64>,
}

impl PhaseInitConfig {
    pub fn check(&self, ctx: &str) -> Result<()> {
        match self.kind.as_str() {
            "gaussian" => {
                need(self.q_mean, "q_mean", ctx)?;
                need(self.p_mean, "p_mean", ctx)?;
                positive(need(self.q_sd, "q_sd", ctx)?, "q_sd")?;
                positive(need(self.p_sd, "p_sd", ctx)?, "p_sd")?;
            }
            "gibbs" => {
                refuse(self.q_mean, "q_mean (gibbs init)", ctx)?;
                refuse(self.p_mean, "p_mean (gibbs init)", ctx)?;
                refuse(self.q_sd, "q_sd (gibbs init)", ctx)?;
                refuse(self.p_sd, "p_sd (gibbs init)", ctx)?;
            }
            other => {
                return Err(Error::Config(format!(
                    "{ctx} unknown kind {other:?} (expected gaussian or gibbs)"
                )))
            }
        }
        Ok(())
    }

    pub fn build(&self, domain: &BoxDomain, model: &HamiltonianModel) -> Result<PhaseDensity> {
        match self.kind.as_str() {
            "gaussian" => {
                let (qm, pm) = (self.q_mean.unwrap(), self.p_mean.unwrap());
                let (qs, ps) = (self.q_sd.unwrap(), self.p_sd.unwrap());
                let rho = PhaseDensity::from_fn(domain, |q, p| {
                    (-0.5 * ((q - qm) / qs).powi(2) - 0.5 * ((p - pm) / ps).powi(2)).exp()
                });
                Ok(rho.normalized()?)
            }
            _ => Ok(PhaseDensity::gibbs(domain, model)?),
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct SmoluchowskiConfig {
    pub dt: f64,
    pub t_end: f64,
    pub snapshots: Option<Vec<f64>>,
    pub init: PositionDensityConfig,
}

impl SmoluchowskiConfig {
    pub fn check(&self) -> Result<()> {
        positive(self.dt, "[smoluchowski] dt")?;
        positive(self.t_end, "[smoluchowski] t_end")?;
        self.init.check("[smoluchowski.init]")
    }
}

/// A 1-d density on its own uniform grid; used both as the Smoluchowski
/// initial state and as the lifted initial marginal of the overdamped sweep.
#[derive(Debug, Deserialize)]
pub struct PositionDensityConfig {
    pub q_min: f64,
    pub q_max: f64,
    pub nq: usize,
    /// gaussian | gibbs.
    pub kind: String,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

impl PositionDensityConfig {
    pub fn check(&self, ctx: &str) -> Result<()> {
        if !(self.q_max > self.q_min) {
            return Err(Error::Config(format!(
                "{ctx} needs q_max > q_min, got [{}, {}]",
                self.q_min, self.q_max
            )));
        }
        at_least(self.nq, 2, "grid size nq")?;
        match self.kind.as_str() {
            "gaussian" => {
                need(self.mean, "mean", ctx)?;
                positive(need(self.sd, "sd", ctx)?, "sd")?;
            }
            "gibbs" => {
                refuse(self.mean, "mean (gibbs init)", ctx)?;
                refuse(self.sd, "sd (gibbs init)", ctx)?;
            }
            other => {
                return Err(Error::Config(format!(
                    "{ctx} unknown kind {other:?} (expected gaussian or gibbs)"
                )))
            }
        }
        Ok(())
    }

    pub fn build(&self, model: &HamiltonianModel) -> Result<PositionDensity> {
        match self.kind.as_str() {
            "gaussian" => Ok(PositionDensity::gaussian(
                self.q_min,
                self.q_max,
                self.nq,
                self.mean.unwrap(),
                self.sd.unwrap(),
            )?),
            _ => Ok(PositionDensity::gibbs(self.q_min, self.q_max, self.nq, model)?),
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct GraphPdeConfig {
    pub dt: f64,
    pub t_end: f64,
    pub snapshots: Option<Vec<f64>>,
    pub nodes_hint: Option<usize>,
    pub init: GraphInitConfig,
}

impl GraphPdeConfig {
    pub fn check(&self) -> Result<()> {
        positive(self.dt, "[graph_pde] dt")?;
        positive(self.t_end, "[graph_pde] t_end")?;
        if let Some(n) = self.nodes_hint {
            at_least(n, 8, "[graph_pde] nodes_hint")?;
        }
        self.init.check()
    }
}

/// Point mass on the graph, placed either directly at (edge, h) or by
/// classifying a phase point (q, p) onto its edge.
#[derive(Debug, Deserialize)]
pub struct GraphInitConfig {
    /// delta.
    pub kind: String,
    pub edge: Option<usize>,
    pub h: Option<f64>,
    pub q: Option<f64>,
    pub p: Option<f64>,
}

impl GraphInitConfig {
    pub fn check(&self) -> Result<()> {
        let ctx = "[graph_pde.init]";
        if self.kind != "delta" {
            return Err(Error::Config(format!(
                "{ctx} unknown kind {:?} (expected delta)",
                self.kind
            )));
        }
        match (self.edge, self.h, self.q, self.p) {
            (Some(_), Some(_), None, None) => Ok(()),
            (None, None, Some(_), Some(_)) => Ok(()),
            _ => Err(Error::Config(format!(
                "{ctx} takes either `edge` and `h`, or a phase point `q` and `p`"
            ))),
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct OverdampedConfig {
    pub gammas: Vec<f64>,
    pub t_probe: f64,
    /// Step of the Smoluchowski reference solve; the kinetic runs pick
    /// their own friction-dependent steps.
    pub dt: f64,
    pub sigma0: PositionDensityConfig,
}

impl OverdampedConfig {
    pub fn check(&self) -> Result<()> {
        if self.gammas.is_empty() {
            return Err(Error::Config("[overdamped] gammas must be nonempty".into()));
        }
        for &g in &self.gammas {
            positive(g, "[overdamped] gammas entries")?;
        }
        positive(self.t_probe, "[overdamped] t_probe")?;
        positive(self.dt, "[overdamped] dt")?;
        self.sigma0.check("[overdamped.sigma0]")
    }
}

#[derive(Debug, Deserialize)]
pub struct GraphLimitConfig {
    pub eps: f64,
    pub n_particles: usize,
    pub dt: f64,
    pub t_end: f64,
    pub bins_per_edge: usize,
    pub dt_graph: f64,
    /// Common initial phase point of the particle cloud and the graph delta.
    pub q0: f64,
    pub p0: f64,
    pub seed: Option<u64>,
    pub nodes_hint: Option<usize>,
}

impl GraphLimitConfig {
    pub fn check(&self) -> Result<()> {
        positive(self.eps, "[graph_limit] eps")?;
        at_least(self.n_particles, 1, "[graph_limit] n_particles")?;
        positive(self.dt, "[graph_limit] dt")?;
        positive(self.t_end, "[graph_limit] t_end")?;
        at_least(self.bins_per_edge, 1, "[graph_limit] bins_per_edge")?;
        positive(self.dt_graph, "[graph_limit] dt_graph")?;
        if let Some(n) = self.nodes_hint {
            at_least(n, 8, "[graph_limit] nodes_hint")?;
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
pub struct VerifyConfig {
    /// all | coefficients | limits | functionals. Defaults to all.
    pub suite: Option<String>,
}

impl VerifyConfig {
    pub fn check(&self) -> Result<()> {
        if let Some(name) = &self.suite {
            if hamcg_core::verify::suite_ids(name).is_none() {
                return Err(Error::Config(format!(
                    "[verify] unknown suite {name:?} (expected all, coefficients, limits, or functionals)"
                )));
            }
        }
        Ok(())
    }
}

fn need(v: Option<f64>, key: &str, ctx: &str) -> Result<f64> {
    v.ok_or_else(|| Error::Config(format!("{ctx} requires `{key}`")))
}

fn refuse(v: Option<f64>, key: &str, ctx: &str) -> Result<()> {
    if v.is_some() {
        return Err(Error::Config(format!("{ctx} does not take `{key}`")));
    }
    Ok(())
}

fn positive(x: f64, what: &str) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} must be positive and finite, got {x}")))
    }
}

fn at_least(n: usize, min: usize, what: &str) -> Result<()> {
    if n < min {
        return Err(Error::Config(format!("{what} must be at least {min}, got {n}")));
    }
    Ok(())
}

pub fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T> {
    section
        .as_ref()
        .ok_or_else(|| Error::Config(format!("this scenario requires a [{name}] section")))
}

/// Strict parse: TOML syntax, schema fields, then cross-field validation.
/// Unknown keys anywhere are an error listing every offender.
pub fn parse(raw: &[u8]) -> Result<RunConfig> {
    let text = std::str::from_utf8(raw)
        .map_err(|e| Error::Config(format!("config is not UTF-8: {e}")))?;
    let de = toml::Deserializer::new(text);
    let mut unknown: Vec<String> = Vec::new();
    let cfg: RunConfig = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
        .map_err(|e| Error::Config(e.to_string()))?;
    if !unknown.is_empty() {
        return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
    }
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Presence of required sections, then internal validity of every
    /// section that is present (used by this scenario or not).
    fn validate(&self) -> Result<()> {
        use Scenario::*;
        if self.scenario != Verify {
            require(&self.model, "model")?;
        }
        if matches!(
            self.scenario,
            CriticalPoints | BuildGraph | Coefficients | SolveVfp | SolveGraph | OverdampedReport
                | GraphLimitReport
        ) {
            require(&self.grid, "grid")?;
        }
        if matches!(self.scenario, BuildGraph | Coefficients | SolveGraph | GraphLimitReport) {
            require(&self.graph, "graph")?;
        }
        match self.scenario {
            SimulateSde => require(&self.sde, "sde").map(drop)?,
            SolveVfp => require(&self.vfp, "vfp").map(drop)?,
            SolveSmoluchowski => require(&self.smoluchowski, "smoluchowski").map(drop)?,
            SolveGraph => require(&self.graph_pde, "graph_pde").map(drop)?,
            OverdampedReport => require(&self.overdamped, "overdamped").map(drop)?,
            GraphLimitReport => require(&self.graph_limit, "graph_limit").map(drop)?,
            _ => {}
        }

        if let Some(m) = &self.model {
            m.build().map(drop)?;
        }
        if let Some(g) = &self.grid {
            g.build().map(drop)?;
        }
        if let Some(g) = &self.graph {
            g.check()?;
        }
        if let Some(c) = &self.coefficients {
            c.check()?;
        }
        if let Some(s) = &self.sde {
            s.check()?;
        }
        if let Some(v) = &self.vfp {
            v.check()?;
        }
        if let Some(s) = &self.smoluchowski {
            s.check()?;
        }
        if let Some(g) = &self.graph_pde {
            g.check()?;
        }
        if let Some(o) = &self.overdamped {
            o.check()?;
        }
        if let Some(g) = &self.graph_limit {
            g.check()?;
        }
        if let Some(v) = &self.verify {
            v.check()?;
        }
        Ok(())
    }
}
