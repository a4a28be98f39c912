//! Phase-space and position-space solvers: the kinetic equation in its
//! friction-rescaled and small-noise forms, the limiting Smoluchowski
//! equation, and the coarse-graining pushforward connecting them.
//!
//! The split solver alternates conservative van-Leer-limited upwind
//! transport sweeps (exact per line: the advecting velocity is constant
//! along each row and column) with an implicit Chang-Cooper momentum step
//! whose discrete equilibrium is the cell-center Maxwellian. Walls are
//! zero-flux; the mass that first-order upwinding would have pushed through
//! them is tracked as a leak proxy and turns into an error when the box is
//! too small for the run.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{BoxDomain, HamiltonianModel};
use crate::numerics::{interp_clamped, Banded, Tridiag};
use crate::par;

/// Rescaled temperature of the kinetic family.
pub const THETA: f64 = 1.0;

#[derive(Clone, Debug)]
pub struct PhaseDensity {
    pub domain: BoxDomain,
    /// Cell-average densities, flat index iq * np + jp (p fastest).
    pub rho: Vec<f64>,
    pub time: f64,
}

impl PhaseDensity {
    pub fn from_fn(domain: &BoxDomain, f: impl Fn(f64, f64) -> f64 + Sync + Send) -> Self {
        let np = domain.np;
        let rho = par::map_indexed(domain.cells(), |k| {
            f(domain.q_center(k / np), domain.p_center(k % np))
        });
        Self { domain: domain.clone(), rho, time: 0.0 }
    }

    pub fn normalized(mut self) -> Result<Self> {
        let m = self.mass();
        if !(m > 0.0) {
            return Err(Error::EmptySource);
        }
        for v in &mut self.rho {
            *v /= m;
        }
        Ok(self)
    }

    /// Stationary kinetic profile e^{-H} normalized on the box.
    pub fn gibbs(domain: &BoxDomain, model: &HamiltonianModel) -> Result<Self> {
        Self::from_fn(domain, |q, p| (-model.energy(q, p) / THETA).exp()).normalized()
    }

    /// Product of a position density (interpolated to cell centers) and the
    /// discretely normalized Maxwellian, the well-prepared initial state.
    pub fn product(domain: &BoxDomain, sigma: &PositionDensity, model: &HamiltonianModel) -> Result<Self> {
        let maxw = discrete_maxwellian(domain, model.mass());
        let qs = sigma.centers();
        let np = domain.np;
        let rho = par::map_indexed(domain.cells(), |k| {
            let s = interp_clamped(&qs, &sigma.sigma, domain.q_center(k / np)).max(0.0);
            s * maxw[k % np]
        });
        Self { domain: domain.clone(), rho, time: 0.0 }.normalized()
    }

    pub fn mass(&self) -> f64 {
        par::sum_slice(&self.rho) * self.domain.cell_area()
    }

    pub fn mean_energy(&self, model: &HamiltonianModel) -> f64 {
        let np = self.domain.np;
        let num = par::sum_indexed(self.rho.len(), |k| {
            self.rho[k] * model.energy(self.domain.q_center(k / np), self.domain.p_center(k % np))
        });
        num / par::sum_slice(&self.rho)
    }

    pub fn l1(&self, other: &PhaseDensity) -> Result<f64> {
        if other.rho.len() != self.rho.len() {
            return Err(Error::SnapshotMismatch("phase grids differ".into()));
        }
        Ok(par::sum_indexed(self.rho.len(), |k| (self.rho[k] - other.rho[k]).abs())
            * self.domain.cell_area())
    }

    /// Marginal in q on the same q-cells.
    pub fn q_marginal(&self) -> PositionDensity {
        let (nq, np) = (self.domain.nq, self.domain.np);
        let dp = self.domain.dp();
        let sigma = (0..nq)
            .map(|i| self.rho[i * np..(i + 1) * np].iter().sum::<f64>() * dp)
            .collect();
        PositionDensity {
            q_min: self.domain.q_min,
            q_max: self.domain.q_max,
            sigma,
            time: self.time,
        }
    }

    /// Mass-weighted aggregate L1 distance between the conditional momentum
    /// densities and the Maxwellian.
    pub fn conditional_maxwellian_l1(&self, model: &HamiltonianModel) -> f64 {
        let (nq, np) = (self.domain.nq, self.domain.np);
        let dp = self.domain.dp();
        let maxw = discrete_maxwellian(&self.domain, model.mass());
        let mut total = 0.0;
        let mut acc = 0.0;
        for i in 0..nq {
            let col = &self.rho[i * np..(i + 1) * np];
            let colmass: f64 = col.iter().sum::<f64>() * dp;
            if colmass <= 0.0 {
                continue;
            }
            let l1: f64 =
                col.iter().zip(&maxw).map(|(&r, &m)| (r / colmass - m).abs()).sum::<f64>() * dp;
            acc += colmass * l1;
            total += colmass;
        }
        acc / total
    }

    pub fn negative_cells(&self) -> usize {
        self.rho.iter().filter(|&&v| v < 0.0).count()
    }

    pub fn min_value(&self) -> f64 {
        self.rho.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Cell-center Maxwellian in p, normalized so its discrete dp-sum is 1.
/// This is the exact fixed point of the Chang-Cooper momentum flux.
pub fn discrete_maxwellian(domain: &BoxDomain, mass: f64) -> Vec<f64> {
    let dp = domain.dp();
    let mut w: Vec<f64> = (0..domain.np)
        .map(|j| {
            let p = domain.p_center(j);
            (-p * p / (2.0 * mass * THETA)).exp()
        })
        .collect();
    let z: f64 = w.iter().sum::<f64>() * dp;
    for v in &mut w {
        *v /= z;
    }
    w
}

#[derive(Clone, Debug)]
pub struct PositionDensity {
    pub q_min: f64,
    pub q_max: f64,
    pub sigma: Vec<f64>,
    pub time: f64,
}

impl PositionDensity {
    pub fn from_fn(q_min: f64, q_max: f64, n: usize, f: impl Fn(f64) -> f64) -> Self {
        let dq = (q_max - q_min) / n as f64;
        let sigma = (0..n).map(|i| f(q_min + (i as f64 + 0.5) * dq)).collect();
        Self { q_min, q_max, sigma, time: 0.0 }
    }

    pub fn gaussian(q_min: f64, q_max: f64, n: usize, mean: f64, sd: f64) -> Result<Self> {
        if !(sd > 0.0) {
            return Err(Error::InvalidParams(format!("sd {sd} must be positive")));
        }
        let z = sd * (std::f64::consts::TAU).sqrt();
        Self::from_fn(q_min, q_max, n, |q| (-((q - mean) / sd).powi(2) / 2.0).exp() / z)
            .normalized()
    }

    /// Stationary profile e^{-V} normalized on the interval.
    pub fn gibbs(q_min: f64, q_max: f64, n: usize, model: &HamiltonianModel) -> Result<Self> {
        Self::from_fn(q_min, q_max, n, |q| (-model.potential().value(q)).exp()).normalized()
    }

    pub fn n(&self) -> usize {
        self.sigma.len()
    }

    pub fn dq(&self) -> f64 {
        (self.q_max - self.q_min) / self.sigma.len() as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        let dq = self.dq();
        (0..self.sigma.len()).map(|i| self.q_min + (i as f64 + 0.5) * dq).collect()
    }

    pub fn mass(&self) -> f64 {
        self.sigma.iter().sum::<f64>() * self.dq()
    }

    pub fn normalized(mut self) -> Result<Self> {
        let m = self.mass();
        if !(m > 0.0) {
            return Err(Error::EmptySource);
        }
        for v in &mut self.sigma {
            *v /= m;
        }
        Ok(self)
    }

    pub fn mean(&self) -> f64 {
        let dq = self.dq();
        let m = self.mass();
        self.centers().iter().zip(&self.sigma).map(|(&q, &s)| q * s * dq).sum::<f64>() / m
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        let dq = self.dq();
        let m = self.mass();
        self.centers()
            .iter()
            .zip(&self.sigma)
            .map(|(&q, &s)| (q - mu) * (q - mu) * s * dq)
            .sum::<f64>()
            / m
    }

    pub fn l1(&self, other: &PositionDensity) -> Result<f64> {
        self.check_grid(other)?;
        Ok(self
            .sigma
            .iter()
            .zip(&other.sigma)
            .map(|(&a, &b)| (a - b).abs())
            .sum::<f64>()
            * self.dq())
    }

    /// 1-D Wasserstein-1 distance between the normalized densities.
    pub fn w1(&self, other: &PositionDensity) -> Result<f64> {
        self.check_grid(other)?;
        let (ma, mb) = (self.mass(), other.mass());
        let dq = self.dq();
        let mut ca = 0.0;
        let mut cb = 0.0;
        let mut acc = 0.0;
        for (&a, &b) in self.sigma.iter().zip(&other.sigma) {
            ca += a * dq / ma;
            cb += b * dq / mb;
            acc += (ca - cb).abs() * dq;
        }
        Ok(acc)
    }

    fn check_grid(&self, other: &PositionDensity) -> Result<()> {
        if self.sigma.len() != other.sigma.len()
            || (self.q_min - other.q_min).abs() > 1e-12
            || (self.q_max - other.q_max).abs() > 1e-12
        {
            return Err(Error::SnapshotMismatch("position grids differ".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum KineticForm {
    /// Friction-rescaled equation: transport speed gamma, collision
    /// gamma^2 (friction toward p = 0 plus unit-temperature diffusion).
    Friction { gamma: f64 },
    /// Small-noise form: transport speed 1/eps, pure unit diffusion in p.
    SmallNoise { eps: f64 },
}

impl KineticForm {
    pub fn transport_scale(&self) -> Result<f64> {
        match *self {
            KineticForm::Friction { gamma } => {
                if !(gamma > 0.0) {
                    return Err(Error::InvalidParams(format!("gamma {gamma} must be positive")));
                }
                Ok(gamma)
            }
            KineticForm::SmallNoise { eps } => {
                if !(eps > 0.0) {
                    return Err(Error::InvalidParams(format!("eps {eps} must be positive")));
                }
                Ok(1.0 / eps)
            }
        }
    }

    /// (collision prefactor, friction drift on) for the momentum operator.
    fn collision(&self) -> (f64, bool) {
        match *self {
            KineticForm::Friction { gamma } => (gamma * gamma, true),
            KineticForm::SmallNoise { .. } => (1.0, false),
        }
    }
}

/// Suggested step size: resolves the collision time scale m/(factor) and
/// keeps a few steps per transport crossing of a cell at bulk speeds. The
/// schemes are stable for larger dt (implicit collision, subcycled
/// transport); this is the accuracy guideline the contract reports.
pub fn suggested_dt(model: &HamiltonianModel, form: &KineticForm) -> f64 {
    let (factor, _) = form.collision();
    0.5 * model.mass() / factor
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct RunDiagnostics {
    /// max |mass(t) - mass(0)| / mass(0)
    pub max_mass_drift: f64,
    /// cells that ever went negative (the schemes should keep none)
    pub negative_cells: usize,
    pub min_cell_value: f64,
    /// worst outward wall flux that zero-flux walls suppressed, mass/time
    pub max_boundary_leak: f64,
    pub steps: usize,
    pub dt: f64,
}

pub struct PhaseTrajectory {
    pub snapshots: Vec<PhaseDensity>,
    pub diagnostics: RunDiagnostics,
}

/// Limited second-order upwind update of one line over time tau with
/// constant velocity u; subcycles to honor the CFL bound.
fn advect_line(rho: &mut [f64], u: f64, delta: f64, tau: f64, flux: &mut [f64], slope: &mut [f64]) {
    let n = rho.len();
    if u == 0.0 || tau == 0.0 {
        return;
    }
    let nsub = ((u.abs() * tau / (0.9 * delta)).ceil() as usize).max(1);
    let ts = tau / nsub as f64;
    let nu = u.abs() * ts / delta;
    for _ in 0..nsub {
        for i in 0..n {
            let a = if i > 0 { rho[i] - rho[i - 1] } else { 0.0 };
            let b = if i + 1 < n { rho[i + 1] - rho[i] } else { 0.0 };
            slope[i] = if a * b > 0.0 { 2.0 * a * b / (a + b) } else { 0.0 };
        }
        flux[0] = 0.0;
        flux[n] = 0.0;
        if u > 0.0 {
            for k in 1..n {
                flux[k] = u * (rho[k - 1] + 0.5 * (1.0 - nu) * slope[k - 1]);
            }
        } else {
            for k in 1..n {
                flux[k] = u * (rho[k] - 0.5 * (1.0 - nu) * slope[k]);
            }
        }
        for i in 0..n {
            rho[i] -= ts / delta * (flux[i + 1] - flux[i]);
        }
    }
}

/// Chang-Cooper face weight on the lower cell; 1/2 at zero drift.
fn cc_delta(w: f64) -> f64 {
    if w.abs() < 1e-4 {
        0.5 - w / 12.0
    } else {
        1.0 / w - 1.0 / w.exp_m1()
    }
}

/// Implicit momentum operator shared by every q-column: friction drift
/// (optional) plus diffusion at unit temperature, scaled by `factor`.
struct CollisionOp {
    tri: Tridiag,
}

impl CollisionOp {
    fn new(domain: &BoxDomain, mass: f64, factor: f64, drift: bool, dt: f64) -> Result<Self> {
        let np = domain.np;
        let dp = domain.dp();
        // face coefficients: flux G_f = lower * rho_j + upper * rho_{j+1}
        let mut lower = vec![0.0; np - 1];
        let mut upper = vec![0.0; np - 1];
        for f in 0..np - 1 {
            let a = if drift { domain.p_node(f + 1) / mass } else { 0.0 };
            let w = a * dp / THETA;
            let d = cc_delta(w);
            lower[f] = factor * (a * d - THETA / dp);
            upper[f] = factor * (a * (1.0 - d) + THETA / dp);
        }
        let mut sub = vec![0.0; np];
        let mut diag = vec![1.0; np];
        let mut sup = vec![0.0; np];
        for j in 0..np {
            if j + 1 < np {
                diag[j] -= dt / dp * lower[j];
                sup[j] = -dt / dp * upper[j];
            }
            if j > 0 {
                diag[j] += dt / dp * upper[j - 1];
                sub[j] = dt / dp * lower[j - 1];
            }
        }
        Ok(Self { tri: Tridiag::factor(&sub, &diag, &sup)? })
    }

    fn step_columns(&self, rho: &mut [f64], np: usize) {
        par::for_each_mut_chunks(rho, np, |col| self.tri.solve_in_place(col));
    }
}

/// Mean-field drift term (psi' * sigma)(q) at the q-cell centers from the
/// current marginal; zeros when the model has no interaction.
fn mean_field_drift(model: &HamiltonianModel, rho: &PhaseDensity) -> Result<Vec<f64>> {
    match model.interaction() {
        None => Ok(vec![0.0; rho.domain.nq]),
        Some(k) if k.is_zero() => Ok(vec![0.0; rho.domain.nq]),
        Some(_) => {
            let marg = rho.q_marginal();
            let total = marg.mass();
            let centers = marg.centers();
            let dq = marg.dq();
            let weights: Vec<f64> = marg.sigma.iter().map(|&s| s * dq / total).collect();
            (0..rho.domain.nq)
                .map(|i| model.conv_force_grid(&centers, &weights, rho.domain.q_center(i)))
                .collect()
        }
    }
}

/// Evolve the kinetic equation by Strang splitting. Snapshots are taken at
/// the first step boundary at or past each requested time.
pub fn solve_vfp(
    model: &HamiltonianModel,
    form: KineticForm,
    init: &PhaseDensity,
    dt: f64,
    t_end: f64,
    snapshot_times: &[f64],
) -> Result<PhaseTrajectory> {
    let scale = form.transport_scale()?;
    let (factor, drift) = form.collision();
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(Error::InvalidParams(format!("dt {dt}, t_end {t_end} out of range")));
    }
    let domain = &init.domain;
    let (nq, np) = (domain.nq, domain.np);
    let dq = domain.dq();
    let m = model.mass();
    let collision = CollisionOp::new(domain, m, factor, drift, dt)?;
    let u_rows: Vec<f64> = (0..np).map(|j| scale * domain.p_center(j) / m).collect();
    let grad_v: Vec<f64> = (0..nq).map(|i| model.grad_q(domain.q_center(i))).collect();

    let mut rho = init.rho.clone();
    let mass0 = par::sum_slice(&rho) * domain.cell_area();
    if !(mass0 > 0.0) {
        return Err(Error::EmptySource);
    }
    let steps = if t_end <= init.time { 0 } else { ((t_end - init.time) / dt - 1e-9).ceil() as usize };
    let mut diag = RunDiagnostics { min_cell_value: f64::INFINITY, dt, steps, ..Default::default() };
    let mut snapshots = Vec::new();
    let mut next_snap = 0usize;
    let capture = |rho: &[f64], t: f64, next: &mut usize, snaps: &mut Vec<PhaseDensity>| {
        while *next < snapshot_times.len() && t >= snapshot_times[*next] - 1e-12 {
            snaps.push(PhaseDensity { domain: domain.clone(), rho: rho.to_vec(), time: t });
            *next += 1;
        }
    };
    capture(&rho, init.time, &mut next_snap, &mut snapshots);

    for k in 0..steps {
        let half = 0.5 * dt;
        transport_q(&mut rho, &u_rows, nq, np, dq, half);
        transport_p(model, &mut rho, domain, &grad_v, scale, half)?;
        collision.step_columns(&mut rho, np);
        let conv = transport_p(model, &mut rho, domain, &grad_v, scale, half)?;
        transport_q(&mut rho, &u_rows, nq, np, dq, half);
        let leak = wall_leak_proxy(&rho, domain, &u_rows, &grad_v, &conv, scale, factor, drift, m);
        diag.max_boundary_leak = diag.max_boundary_leak.max(leak);
        if leak > 1e-4 {
            return Err(Error::BoundaryLeak { rate: leak, limit: 1e-4 });
        }
        if rho.iter().any(|v| !v.is_finite()) {
            return Err(Error::UnstableStep { dt, halvings: 0 });
        }
        let t = init.time + (k + 1) as f64 * dt;
        let mass = par::sum_slice(&rho) * domain.cell_area();
        diag.max_mass_drift = diag.max_mass_drift.max((mass - mass0).abs() / mass0);
        let min = rho.iter().cloned().fold(f64::INFINITY, f64::min);
        diag.min_cell_value = diag.min_cell_value.min(min);
        if min < 0.0 {
            diag.negative_cells += rho.iter().filter(|&&v| v < 0.0).count();
        }
        capture(&rho, t, &mut next_snap, &mut snapshots);
    }
    if snapshots.is_empty() || (snapshots.last().unwrap().time - (init.time + steps as f64 * dt)).abs() > 1e-12 {
        snapshots.push(PhaseDensity {
            domain: domain.clone(),
            rho,
            time: init.time + steps as f64 * dt,
        });
    }
    Ok(PhaseTrajectory { snapshots, diagnostics: diag })
}

/// Signed collision-operator flux through an interior p-face, with the same
/// exponential-fitting weights the implicit solve uses; it vanishes exactly
/// on the discrete Maxwellian.
fn cc_face_flux(p_face: f64, lo: f64, hi: f64, factor: f64, drift: bool, m: f64, dp: f64) -> f64 {
    let a = if drift { p_face / m } else { 0.0 };
    let delta = cc_delta(a * dp / THETA);
    factor * ((a * delta - THETA / dp) * lo + (a * (1.0 - delta) + THETA / dp) * hi)
}

/// Outward mass flow per unit time that the zero-flux walls are blocking.
/// The momentum flux is probed two cells inside the wall: the outermost
/// face carries a transient refill flux whenever advection drains the wall
/// cell (inflow the box cannot supply), which is not mass trying to leave.
/// One face further in, the combined upwind-advective and collision flux
/// vanishes exactly on the discrete Maxwellian and still exposes genuine
/// tails pressing against the box. Only positive (outward) components count.
#[allow(clippy::too_many_arguments)]
fn wall_leak_proxy(
    rho: &[f64],
    domain: &BoxDomain,
    u_rows: &[f64],
    grad_v: &[f64],
    conv: &[f64],
    scale: f64,
    factor: f64,
    drift: bool,
    m: f64,
) -> f64 {
    let (nq, np) = (domain.nq, domain.np);
    let (dq, dp) = (domain.dq(), domain.dp());
    let mut out = 0.0;
    for j in 0..np {
        let u = u_rows[j];
        let up_r = if u > 0.0 { rho[(nq - 2) * np + j] } else { rho[(nq - 1) * np + j] };
        out += (u * up_r).max(0.0) * dp;
        let up_l = if u > 0.0 { rho[j] } else { rho[np + j] };
        out += (-u * up_l).max(0.0) * dp;
    }
    let pf_top = domain.p_node(np - 2);
    let pf_bot = domain.p_node(2);
    for i in 0..nq {
        let v = -scale * (grad_v[i] + conv[i]);
        let lo = rho[i * np + np - 3];
        let hi = rho[i * np + np - 2];
        let adv = v * if v > 0.0 { lo } else { hi };
        let j_top = adv - cc_face_flux(pf_top, lo, hi, factor, drift, m, dp);
        out += j_top.max(0.0) * dq;
        let lo0 = rho[i * np + 1];
        let hi0 = rho[i * np + 2];
        let adv0 = v * if v > 0.0 { lo0 } else { hi0 };
        let j_bot = adv0 - cc_face_flux(pf_bot, lo0, hi0, factor, drift, m, dp);
        out += (-j_bot).max(0.0) * dq;
    }
    out
}

/// q-sweep: each p-row advects at its own constant speed.
fn transport_q(rho: &mut [f64], u_rows: &[f64], nq: usize, np: usize, dq: f64, tau: f64) {
    let lines = par::map_indexed(np, |j| {
        let mut line = vec![0.0; nq];
        for i in 0..nq {
            line[i] = rho_at(rho, i, j, np);
        }
        let mut flux = vec![0.0; nq + 1];
        let mut slope = vec![0.0; nq];
        advect_line(&mut line, u_rows[j], dq, tau, &mut flux, &mut slope);
        (j, line)
    });
    for (j, line) in lines {
        for (i, v) in line.into_iter().enumerate() {
            rho[i * np + j] = v;
        }
    }
}

/// p-sweep: each q-column advects at -scale * (V' + psi' * sigma).
fn transport_p(
    model: &HamiltonianModel,
    rho: &mut [f64],
    domain: &BoxDomain,
    grad_v: &[f64],
    scale: f64,
    tau: f64,
) -> Result<Vec<f64>> {
    let np = domain.np;
    let dp = domain.dp();
    let conv = mean_field_drift(
        model,
        &PhaseDensity { domain: domain.clone(), rho: rho.to_vec(), time: 0.0 },
    )?;
    let cols = par::map_indexed(domain.nq, |i| {
        let col_start = i * np;
        let u = -scale * (grad_v[i] + conv[i]);
        let mut col = rho[col_start..col_start + np].to_vec();
        let mut flux = vec![0.0; np + 1];
        let mut slope = vec![0.0; np];
        advect_line(&mut col, u, dp, tau, &mut flux, &mut slope);
        (i, col)
    });
    for (i, col) in cols {
        rho[i * np..(i + 1) * np].copy_from_slice(&col);
    }
    Ok(conv)
}

#[inline]
fn rho_at(rho: &[f64], iq: usize, jp: usize, np: usize) -> f64 {
    rho[iq * np + jp]
}

pub struct PositionTrajectory {
    pub snapshots: Vec<PositionDensity>,
    pub diagnostics: RunDiagnostics,
}

/// Implicit Chang-Cooper solve of the Smoluchowski equation
/// d_t sigma = d_q(sigma (V' + psi' * sigma)) + d_qq sigma.
pub fn solve_smoluchowski(
    model: &HamiltonianModel,
    init: &PositionDensity,
    dt: f64,
    t_end: f64,
    snapshot_times: &[f64],
) -> Result<PositionTrajectory> {
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(Error::InvalidParams(format!("dt {dt}, t_end {t_end} out of range")));
    }
    let n = init.n();
    let dq = init.dq();
    let centers = init.centers();
    let mean_field = model.interaction().map_or(false, |k| !k.is_zero());
    let mut sigma = init.sigma.clone();
    let mass0 = init.mass();
    if !(mass0 > 0.0) {
        return Err(Error::EmptySource);
    }

    let assemble = |drift: &[f64]| -> Result<Tridiag> {
        let mut sub = vec![0.0; n];
        let mut diag = vec![1.0; n];
        let mut sup = vec![0.0; n];
        for f in 0..n - 1 {
            // face between cells f and f+1; flux G = b sigma + d_q sigma
            let b = 0.5 * (drift[f] + drift[f + 1]);
            let w = b * dq;
            let d = cc_delta(w);
            let lower = b * d - 1.0 / dq;
            let upper = b * (1.0 - d) + 1.0 / dq;
            diag[f] -= dt / dq * lower;
            sup[f] = -dt / dq * upper;
            diag[f + 1] += dt / dq * upper;
            sub[f + 1] = dt / dq * lower;
        }
        Tridiag::factor(&sub, &diag, &sup)
    };
    let base_drift: Vec<f64> = centers.iter().map(|&q| model.grad_q(q)).collect();
    let fixed = if mean_field { None } else { Some(assemble(&base_drift)?) };

    let steps = if t_end <= init.time { 0 } else { ((t_end - init.time) / dt - 1e-9).ceil() as usize };
    let mut diagn = RunDiagnostics { min_cell_value: f64::INFINITY, dt, steps, ..Default::default() };
    let mut snapshots = Vec::new();
    let mut next_snap = 0usize;
    let capture = |s: &[f64], t: f64, next: &mut usize, out: &mut Vec<PositionDensity>| {
        while *next < snapshot_times.len() && t >= snapshot_times[*next] - 1e-12 {
            out.push(PositionDensity {
                q_min: init.q_min,
                q_max: init.q_max,
                sigma: s.to_vec(),
                time: t,
            });
            *next += 1;
        }
    };
    capture(&sigma, init.time, &mut next_snap, &mut snapshots);

    for k in 0..steps {
        match &fixed {
            Some(tri) => tri.solve_in_place(&mut sigma),
            None => {
                let total: f64 = sigma.iter().sum::<f64>() * dq;
                let weights: Vec<f64> = sigma.iter().map(|&s| s * dq / total).collect();
                let drift: Vec<f64> = centers
                    .iter()
                    .map(|&q| Ok(model.grad_q(q) + model.conv_force_grid(&centers, &weights, q)?))
                    .collect::<Result<_>>()?;
                assemble(&drift)?.solve_in_place(&mut sigma);
            }
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::UnstableStep { dt, halvings: 0 });
        }
        let t = init.time + (k + 1) as f64 * dt;
        let mass: f64 = sigma.iter().sum::<f64>() * dq;
        diagn.max_mass_drift = diagn.max_mass_drift.max((mass - mass0).abs() / mass0);
        let min = sigma.iter().cloned().fold(f64::INFINITY, f64::min);
        diagn.min_cell_value = diagn.min_cell_value.min(min);
        if min < 0.0 {
            diagn.negative_cells += sigma.iter().filter(|&&v| v < 0.0).count();
        }
        capture(&sigma, t, &mut next_snap, &mut snapshots);
    }
    if snapshots.is_empty()
        || (snapshots.last().unwrap().time - (init.time + steps as f64 * dt)).abs() > 1e-12
    {
        snapshots.push(PositionDensity {
            q_min: init.q_min,
            q_max: init.q_max,
            sigma,
            time: init.time + steps as f64 * dt,
        });
    }
    Ok(PositionTrajectory { snapshots, diagnostics: diagn })
}

/// Pushforward under xi^gamma(q, p) = q + p/gamma by 4-point subsampling of
/// each phase cell; mass outside the target interval lands in the end bins.
pub fn pushforward_xi_gamma(
    rho: &PhaseDensity,
    gamma: f64,
    q_min: f64,
    q_max: f64,
    n: usize,
) -> Result<PositionDensity> {
    if !(gamma > 0.0) || n == 0 || !(q_max > q_min) {
        return Err(Error::InvalidParams("pushforward needs gamma > 0 and a real interval".into()));
    }
    let np = rho.domain.np;
    let (dq, dp) = (rho.domain.dq(), rho.domain.dp());
    let bw = (q_max - q_min) / n as f64;
    let quarter = [(-0.25, -0.25), (-0.25, 0.25), (0.25, -0.25), (0.25, 0.25)];
    let mut bins = vec![0.0; n];
    for (k, &r) in rho.rho.iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        let qc = rho.domain.q_center(k / np);
        let pc = rho.domain.p_center(k % np);
        let m = r * rho.domain.cell_area() / 4.0;
        for (oq, op) in quarter {
            let y = (qc + oq * dq) + (pc + op * dp) / gamma;
            let b = (((y - q_min) / bw).floor().max(0.0) as usize).min(n - 1);
            bins[b] += m;
        }
    }
    for v in &mut bins {
        *v /= bw;
    }
    Ok(PositionDensity { q_min, q_max, sigma: bins, time: rho.time })
}

#[derive(Clone, Debug, Serialize)]
pub struct OverdampedRow {
    pub gamma: f64,
    pub l1: f64,
    pub w1: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct OverdampedReport {
    pub rows: Vec<OverdampedRow>,
    pub l1_strictly_decreasing: bool,
    pub w1_strictly_decreasing: bool,
    pub t_probe: f64,
}

/// For each friction strength: solve the kinetic equation from the lifted
/// initial state, push forward through xi^gamma at t_probe, and measure the
/// distance to the Smoluchowski solution on the same grid.
pub fn overdamped_convergence_report(
    model: &HamiltonianModel,
    gammas: &[f64],
    sigma0: &PositionDensity,
    phase_domain: &BoxDomain,
    t_probe: f64,
    dt_smoluchowski: f64,
) -> Result<OverdampedReport> {
    if gammas.is_empty() {
        return Err(Error::InvalidParams("no gamma values".into()));
    }
    let reference = solve_smoluchowski(model, sigma0, dt_smoluchowski, t_probe, &[])?
        .snapshots
        .pop()
        .ok_or_else(|| Error::SolveFailure("no reference snapshot".into()))?;
    let init = PhaseDensity::product(phase_domain, sigma0, model)?;
    let mut rows = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        // a fixed fraction of the collision stability bound keeps the
        // splitting defect shrinking with gamma instead of saturating
        let dt = (0.1 * model.mass() / (gamma * gamma)).min(0.01);
        let traj = solve_vfp(model, KineticForm::Friction { gamma }, &init, dt, t_probe, &[])?;
        let last = traj.snapshots.last().unwrap();
        let push = pushforward_xi_gamma(last, gamma, sigma0.q_min, sigma0.q_max, sigma0.n())?;
        rows.push(OverdampedRow {
            gamma,
            l1: push.l1(&reference)?,
            w1: push.w1(&reference)?,
        });
    }
    let l1_dec = rows.windows(2).all(|w| w[1].l1 < w[0].l1);
    let w1_dec = rows.windows(2).all(|w| w[1].w1 < w[0].w1);
    Ok(OverdampedReport {
        rows,
        l1_strictly_decreasing: l1_dec,
        w1_strictly_decreasing: w1_dec,
        t_probe,
    })
}

/// Unsplit generator discretization used by the rate-functional machinery:
/// central transport fluxes plus the Chang-Cooper momentum operator, with an
/// optional constant-in-time momentum perturbation h acting through the flux
/// -transport_scale * d_p(rho h). Mean-field terms are not supported here.
#[derive(Debug)]
pub struct KineticGenerator {
    pub domain: BoxDomain,
    pub form: KineticForm,
    diag: Vec<f64>,
    up_p: Vec<f64>,
    dn_p: Vec<f64>,
    up_q: Vec<f64>,
    dn_q: Vec<f64>,
}

impl KineticGenerator {
    pub fn new(
        model: &HamiltonianModel,
        domain: &BoxDomain,
        form: KineticForm,
        perturbation: Option<&dyn Fn(f64, f64) -> f64>,
    ) -> Result<Self> {
        if model.interaction().map_or(false, |k| !k.is_zero()) {
            return Err(Error::InvalidParams(
                "the unsplit generator requires zero interaction".into(),
            ));
        }
        let scale = form.transport_scale()?;
        let (factor, drift) = form.collision();
        let (nq, np) = (domain.nq, domain.np);
        let (dq, dp) = (domain.dq(), domain.dp());
        let m = model.mass();
        let cells = domain.cells();
        let mut g = Self {
            domain: domain.clone(),
            form,
            diag: vec![0.0; cells],
            up_p: vec![0.0; cells],
            dn_p: vec![0.0; cells],
            up_q: vec![0.0; cells],
            dn_q: vec![0.0; cells],
        };
        // transport in q: central flux u (rho_i + rho_{i+1})/2, zero at walls
        for j in 0..np {
            let u = scale * domain.p_center(j) / m;
            for i in 0..nq {
                let k = i * np + j;
                if i + 1 < nq {
                    g.diag[k] -= u / (2.0 * dq);
                    g.up_q[k] -= u / (2.0 * dq);
                    g.diag[k + np] += u / (2.0 * dq);
                    g.dn_q[k + np] += u / (2.0 * dq);
                }
            }
        }
        // transport in p: velocity -scale V'(q)
        for i in 0..nq {
            let v = -scale * model.grad_q(domain.q_center(i));
            for j in 0..np - 1 {
                let k = i * np + j;
                g.diag[k] -= v / (2.0 * dp);
                g.up_p[k] -= v / (2.0 * dp);
                g.diag[k + 1] += v / (2.0 * dp);
                g.dn_p[k + 1] += v / (2.0 * dp);
            }
        }
        // collision: Chang-Cooper faces, same coefficients in every column
        for j in 0..np - 1 {
            let a = if drift { domain.p_node(j + 1) / m } else { 0.0 };
            let w = a * dp / THETA;
            let d = cc_delta(w);
            let lower = factor * (a * d - THETA / dp);
            let upper = factor * (a * (1.0 - d) + THETA / dp);
            for i in 0..nq {
                let k = i * np + j;
                g.diag[k] += lower / dp;
                g.up_p[k] += upper / dp;
                g.diag[k + 1] -= upper / dp;
                g.dn_p[k + 1] -= lower / dp;
            }
        }
        // momentum perturbation: flux scale * h * (rho_j + rho_{j+1})/2
        if let Some(h) = perturbation {
            for i in 0..nq {
                let q = domain.q_center(i);
                for j in 0..np - 1 {
                    let amp = scale * h(q, domain.p_node(j + 1));
                    let k = i * np + j;
                    g.diag[k] -= amp / (2.0 * dp);
                    g.up_p[k] -= amp / (2.0 * dp);
                    g.diag[k + 1] += amp / (2.0 * dp);
                    g.dn_p[k + 1] += amp / (2.0 * dp);
                }
            }
        }
        Ok(g)
    }

    /// Apply the generator to a cell vector.
    pub fn apply(&self, rho: &[f64]) -> Vec<f64> {
        let np = self.domain.np;
        par::map_indexed(rho.len(), |k| {
            let mut v = self.diag[k] * rho[k];
            if k % np + 1 < np {
                v += self.up_p[k] * rho[k + 1];
            }
            if k % np > 0 {
                v += self.dn_p[k] * rho[k - 1];
            }
            if k + np < rho.len() {
                v += self.up_q[k] * rho[k + np];
            }
            if k >= np {
                v += self.dn_q[k] * rho[k - np];
            }
            v
        })
    }

    /// Prefactored Crank-Nicolson stepper for this generator.
    pub fn crank_nicolson(&self, dt: f64) -> Result<CnStepper<'_>> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParams(format!("dt {dt} must be positive")));
        }
        let n = self.domain.cells();
        let np = self.domain.np;
        let mut m = Banded::zeros(n, np);
        for k in 0..n {
            m.add(k, k, 1.0 - 0.5 * dt * self.diag[k]);
            if k % np + 1 < np {
                m.add(k, k + 1, -0.5 * dt * self.up_p[k]);
            }
            if k % np > 0 {
                m.add(k, k - 1, -0.5 * dt * self.dn_p[k]);
            }
            if k + np < n {
                m.add(k, k + np, -0.5 * dt * self.up_q[k]);
            }
            if k >= np {
                m.add(k, k - np, -0.5 * dt * self.dn_q[k]);
            }
        }
        m.factor()?;
        Ok(CnStepper { generator: self, lu: m, dt })
    }
}

pub struct CnStepper<'a> {
    generator: &'a KineticGenerator,
    lu: Banded,
    dt: f64,
}

impl CnStepper<'_> {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step(&self, rho: &mut Vec<f64>) {
        let l = self.generator.apply(rho);
        for (v, dl) in rho.iter_mut().zip(&l) {
            *v += 0.5 * self.dt * dl;
        }
        self.lu.solve_in_place(rho);
    }
}

/// Evolve the unsplit generator, keeping every step as a snapshot; the rate
/// functional needs consecutive states.
pub fn generator_trajectory(
    generator: &KineticGenerator,
    init: &PhaseDensity,
    dt: f64,
    steps: usize,
) -> Result<PhaseTrajectory> {
    if init.rho.len() != generator.domain.cells() {
        return Err(Error::SnapshotMismatch("generator/init grid".into()));
    }
    let stepper = generator.crank_nicolson(dt)?;
    let mut rho = init.rho.clone();
    let mass0 = par::sum_slice(&rho) * generator.domain.cell_area();
    let mut diag = RunDiagnostics { min_cell_value: f64::INFINITY, dt, steps, ..Default::default() };
    let mut snapshots = Vec::with_capacity(steps + 1);
    snapshots.push(PhaseDensity {
        domain: generator.domain.clone(),
        rho: rho.clone(),
        time: init.time,
    });
    for k in 0..steps {
        stepper.step(&mut rho);
        if rho.iter().any(|v| !v.is_finite()) {
            return Err(Error::UnstableStep { dt, halvings: 0 });
        }
        let mass = par::sum_slice(&rho) * generator.domain.cell_area();
        diag.max_mass_drift = diag.max_mass_drift.max((mass - mass0).abs() / mass0.abs().max(1e-300));
        let min = rho.iter().cloned().fold(f64::INFINITY, f64::min);
        diag.min_cell_value = diag.min_cell_value.min(min);
        if min < 0.0 {
            diag.negative_cells += rho.iter().filter(|&&v| v < 0.0).count();
        }
        snapshots.push(PhaseDensity {
            domain: generator.domain.clone(),
            rho: rho.clone(),
            time: init.time + (k + 1) as f64 * dt,
        });
    }
    Ok(PhaseTrajectory { snapshots, diagnostics: diag })
}
