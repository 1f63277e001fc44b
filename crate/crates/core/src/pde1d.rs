//! Conservative finite-volume solver for
//! `d rho/dt = d/dx( rho d/dx( beta U + phi'(rho) ) )` on the circle `R / (L Z)`.
//!
//! Unknowns are nodal densities with respect to the normalized measure. The
//! face flux is written in chemical-potential form,
//!
//! ```text
//! F_{i+1/2} = rho_{i+1/2} (xi_{i+1} - xi_i) / dx,   xi = beta U + phi'(rho),
//! ```
//!
//! with arithmetic-mean face mobility. Fluxes telescope, so mass is conserved,
//! `psi(c* - beta U_i)` is an exact discrete fixed point, and the discrete
//! energy `mean(beta U rho + phi(rho))` decreases at the rate
//! `J = mean(rho_{i+1/2} ((xi_{i+1} - xi_i) / dx)^2)`.
//!
//! Two integrators share that spatial operator: the explicit [`step`] (with
//! the stability bound [`suggest_dt`]) and backward Euler with a damped Newton
//! iteration, used by [`evolve`] by default. Backward Euler inherits the
//! monotone energy from the convexity of `phi` for every step size.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{mean, CircleGrid};
use crate::landscape::Landscape;
use crate::potentials::PotentialSpec;
use crate::schedules::Schedule;
use crate::stationary::{penalized_cost, solve_on_nodes, StationaryMeasure};

/// Smallest density the explicit step tolerates before renormalizing.
pub const FLOOR_EPS: f64 = 1e-14;
/// Safety factor applied to the explicit stability bound.
pub const CFL_SAFETY: f64 = 0.4;

const NEWTON_MAX_ITERS: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridDensity {
    #[serde(skip)]
    grid: CircleGrid,
    rho: Vec<f64>,
    t: f64,
}

impl GridDensity {
    pub fn new(grid: CircleGrid, rho: Vec<f64>, t: f64) -> Result<Self> {
        if rho.len() != grid.n() {
            return Err(Error::GridMismatch {
                left: rho.len(),
                right: grid.n(),
            });
        }
        if rho.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
            return Err(Error::invalid("rho", "densities must be finite and nonnegative"));
        }
        Ok(Self { grid, rho, t })
    }

    /// `rho == 1`.
    pub fn uniform(grid: CircleGrid) -> Self {
        Self {
            rho: vec![1.0; grid.n()],
            grid,
            t: 0.0,
        }
    }

    /// Samples `f` at the nodes and rescales to unit mass.
    pub fn from_fn(grid: CircleGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let raw: Vec<f64> = grid.points().into_iter().map(f).collect();
        let z = mean(&raw);
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::invalid("rho", "initial profile must have positive finite mass"));
        }
        Self::new(grid, raw.into_iter().map(|r| r / z).collect(), 0.0)
    }

    pub fn grid(&self) -> CircleGrid {
        self.grid
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn mass(&self) -> f64 {
        mean(&self.rho)
    }
}

/// The spatial operator with `U` sampled once.
struct Operator<'a> {
    spec: &'a PotentialSpec,
    u: Vec<f64>,
    dx: f64,
}

impl<'a> Operator<'a> {
    fn new(spec: &'a PotentialSpec, l: &Landscape, grid: CircleGrid) -> Result<Self> {
        if l.dim() != 1 {
            return Err(Error::invalid("landscape", "pde1d needs a circle landscape"));
        }
        if (l.period() - grid.perimeter()).abs() > 1e-12 * l.period() {
            return Err(Error::invalid("perimeter", "grid and landscape periods differ"));
        }
        Ok(Self {
            spec,
            u: l.sample_circle(grid.n()),
            dx: grid.dx(),
        })
    }

    fn chemical(&self, beta: f64, rho: &[f64]) -> Vec<f64> {
        rho.iter()
            .zip(&self.u)
            .map(|(&r, &u)| beta * u + self.spec.phi_prime_unchecked(r))
            .collect()
    }

    /// `G(rho)` with `d rho / dt = G(rho)`.
    fn rhs(&self, beta: f64, rho: &[f64], out: &mut [f64]) {
        let n = rho.len();
        let xi = self.chemical(beta, rho);
        let inv = 1.0 / (self.dx * self.dx);
        let flux = |i: usize| {
            let j = (i + 1) % n;
            0.5 * (rho[i] + rho[j]) * (xi[j] - xi[i])
        };
        let mut left = flux(n - 1);
        for i in 0..n {
            let right = flux(i);
            out[i] = (right - left) * inv;
            left = right;
        }
    }

    /// Face-form dissipation rate `mean(rho_face (D xi)^2)`.
    fn dissipation(&self, beta: f64, rho: &[f64]) -> f64 {
        let n = rho.len();
        let xi = self.chemical(beta, rho);
        let terms: Vec<f64> = (0..n)
            .map(|i| {
                let j = (i + 1) % n;
                0.5 * (rho[i] + rho[j]) * ((xi[j] - xi[i]) / self.dx).powi(2)
            })
            .collect();
        mean(&terms)
    }

    fn energy(&self, beta: f64, rho: &[f64]) -> f64 {
        penalized_cost(self.spec, beta, &self.u, rho)
    }

    fn stable_dt(&self, beta: f64, rho: &[f64]) -> f64 {
        let n = rho.len();
        let mut v_max: f64 = 0.0;
        let mut d_max: f64 = 0.0;
        for i in 0..n {
            let j = (i + 1) % n;
            v_max = v_max.max(beta * (self.u[j] - self.u[i]).abs() / self.dx);
            let face = 0.5 * (rho[i] + rho[j]);
            let curv = self.spec.phi_second_unchecked(rho[i]).max(self.spec.phi_second_unchecked(rho[j]));
            d_max = d_max.max(face * curv);
        }
        let advective = if v_max > 0.0 { self.dx / v_max } else { f64::INFINITY };
        let diffusive = if d_max > 0.0 {
            self.dx * self.dx / (2.0 * d_max)
        } else {
            f64::INFINITY
        };
        CFL_SAFETY * advective.min(diffusive)
    }

    /// One backward Euler step by damped Newton. `None` when Newton fails.
    fn implicit_step(&self, beta: f64, rho_old: &[f64], dt: f64, tol: f64) -> Option<(Vec<f64>, usize)> {
        let n = rho_old.len();
        let inv = 1.0 / (self.dx * self.dx);
        let mut rho = rho_old.to_vec();
        let mut g = vec![0.0; n];
        let (mut sub, mut diag, mut sup) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut res = vec![0.0; n];
        for iter in 0..NEWTON_MAX_ITERS {
            self.rhs(beta, &rho, &mut g);
            let mut res_max: f64 = 0.0;
            for i in 0..n {
                res[i] = rho[i] - rho_old[i] - dt * g[i];
                res_max = res_max.max(res[i].abs());
            }
            if !res_max.is_finite() {
                return None;
            }
            if res_max <= tol {
                return Some((rho, iter));
            }
            let xi = self.chemical(beta, &rho);
            let curv: Vec<f64> = rho.iter().map(|&r| self.spec.phi_second_unchecked(r)).collect();
            for i in 0..n {
                let (p, q) = ((i + n - 1) % n, (i + 1) % n);
                let m_right = 0.5 * (rho[i] + rho[q]);
                let m_left = 0.5 * (rho[p] + rho[i]);
                let d_right = xi[q] - xi[i];
                let d_left = xi[i] - xi[p];
                let dg_q = (0.5 * d_right + m_right * curv[q]) * inv;
                let dg_p = (-0.5 * d_left + m_left * curv[p]) * inv;
                let dg_i = (0.5 * d_right - m_right * curv[i] - 0.5 * d_left - m_left * curv[i]) * inv;
                sub[i] = -dt * dg_p;
                diag[i] = 1.0 - dt * dg_i;
                sup[i] = -dt * dg_q;
                res[i] = -res[i];
            }
            let delta = solve_cyclic(&sub, &diag, &sup, &res)?;
            let mut lambda: f64 = 1.0;
            for (&r, &d) in rho.iter().zip(&delta) {
                if !d.is_finite() {
                    return None;
                }
                if r + d < 0.2 * r {
                    lambda = lambda.min(0.8 * r / (-d));
                }
            }
            let mut change: f64 = 0.0;
            for (r, d) in rho.iter_mut().zip(&delta) {
                *r += lambda * d;
                change = change.max((lambda * d).abs());
            }
            // The residual has a roundoff floor of order dt / dx^2, so a
            // negligible full Newton update also counts as convergence.
            if lambda == 1.0 && change <= tol {
                return Some((rho, iter + 1));
            }
        }
        None
    }
}

/// Solves the cyclic tridiagonal system
/// `sub[i] x[i-1] + diag[i] x[i] + sup[i] x[i+1] = rhs[i]` (indices mod n)
/// by Sherman-Morrison on top of the Thomas algorithm.
pub fn solve_cyclic(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    if n < 3 {
        return None;
    }
    let corner_low = sup[n - 1];
    let corner_high = sub[0];
    let gamma = -diag[0];
    let mut bb = diag.to_vec();
    bb[0] -= gamma;
    bb[n - 1] -= corner_low * corner_high / gamma;
    let x = thomas(sub, &bb, sup, rhs)?;
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = corner_low;
    let z = thomas(sub, &bb, sup, &u)?;
    let fact = (x[0] + corner_high * x[n - 1] / gamma) / (1.0 + z[0] + corner_high * z[n - 1] / gamma);
    let out: Vec<f64> = x.iter().zip(&z).map(|(&xi, &zi)| xi - fact * zi).collect();
    out.iter().all(|v| v.is_finite()).then_some(out)
}

fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut bet = diag[0];
    if bet == 0.0 {
        return None;
    }
    x[0] = rhs[0] / bet;
    for i in 1..n {
        c[i] = sup[i - 1] / bet;
        bet = diag[i] - sub[i] * c[i];
        if bet == 0.0 {
            return None;
        }
        x[i] = (rhs[i] - sub[i] * x[i - 1]) / bet;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i + 1] * x[i + 1];
    }
    Some(x)
}

/// Largest stable explicit step: `0.4 min(dx / |v|max, dx^2 / (2 Dmax))`
/// with `v = beta U'` and `D = rho_face phi''(rho)`.
pub fn suggest_dt(state: &GridDensity, spec: &PotentialSpec, l: &Landscape, beta: f64) -> Result<f64> {
    let op = Operator::new(spec, l, state.grid)?;
    Ok(op.stable_dt(beta, &state.rho))
}

/// One explicit Euler step of the finite-volume scheme.
pub fn step(
    state: &GridDensity,
    spec: &PotentialSpec,
    l: &Landscape,
    beta: f64,
    dt: f64,
) -> Result<GridDensity> {
    let op = Operator::new(spec, l, state.grid)?;
    explicit_update(&op, state, beta, dt)
}

fn explicit_update(op: &Operator<'_>, state: &GridDensity, beta: f64, dt: f64) -> Result<GridDensity> {
    let mut g = vec![0.0; state.rho.len()];
    op.rhs(beta, &state.rho, &mut g);
    let mut rho: Vec<f64> = state.rho.iter().zip(&g).map(|(&r, &gi)| r + dt * gi).collect();
    let t = state.t + dt;
    if let Some(bad) = rho.iter().find(|r| !r.is_finite() || **r < -1e-10) {
        return Err(Error::NumericalAbort {
            t,
            reason: format!(
                "explicit step produced density {bad}; dt = {dt} exceeds the stability bound {}",
                op.stable_dt(beta, &state.rho)
            ),
        });
    }
    if rho.iter().any(|&r| r < FLOOR_EPS) {
        let mass = mean(&rho);
        rho.iter_mut().for_each(|r| *r = r.max(FLOOR_EPS));
        let scale = mass / mean(&rho);
        rho.iter_mut().for_each(|r| *r *= scale);
    }
    Ok(GridDensity {
        grid: state.grid,
        rho,
        t,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DtPolicy {
    /// Explicit steps at `safety / CFL_SAFETY` times [`suggest_dt`].
    Explicit { safety: f64 },
    /// Backward Euler with adaptive steps in `[dt_min, dt_max]`.
    Implicit {
        dt0: f64,
        dt_min: f64,
        dt_max: f64,
        growth: f64,
        newton_tol: f64,
    },
}

impl Default for DtPolicy {
    fn default() -> Self {
        DtPolicy::Implicit {
            dt0: 1e-6,
            dt_min: 1e-14,
            dt_max: 1.0,
            growth: 1.5,
            newton_tol: 1e-12,
        }
    }
}

impl DtPolicy {
    pub fn implicit_with_max(dt_max: f64) -> Self {
        match Self::default() {
            DtPolicy::Implicit {
                dt0,
                dt_min,
                growth,
                newton_tol,
                ..
            } => DtPolicy::Implicit {
                dt0: dt0.min(dt_max),
                dt_min,
                dt_max,
                growth,
                newton_tol,
            },
            explicit => explicit,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct EvolveOptions {
    pub policy: DtPolicy,
    /// Times at which a [`Snapshot`] is taken (the final time is always recorded).
    pub record_times: Vec<f64>,
    /// Times at which the full profile is kept.
    pub profile_times: Vec<f64>,
}

/// Diagnostics at one recorded time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub beta: f64,
    /// Reduced cost `U_beta[rho] - U_beta[mu_beta]`.
    pub i: f64,
    /// Face-form entropy production.
    pub j: f64,
    /// `int U rho`.
    pub mean_u: f64,
    /// `int |rho - mu_beta|`.
    pub l1_to_mu: f64,
    pub mass: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub profiles: Vec<(f64, Vec<f64>)>,
    pub final_state: GridDensity,
    pub steps: usize,
    pub rejected: usize,
    /// Largest increase of the energy over one accepted step at unchanged `beta`.
    pub max_energy_increase: f64,
    /// Largest `|mass - mass(0)|` seen over all accepted steps.
    pub max_mass_drift: f64,
}

/// Evenly spaced record times in `(t_start, t_end]`.
pub fn uniform_times(t_start: f64, t_end: f64, count: usize) -> Vec<f64> {
    (1..=count)
        .map(|k| t_start + (t_end - t_start) * k as f64 / count as f64)
        .collect()
}

/// Geometric record times from `t_first` to `t_end` inclusive.
pub fn geometric_times(t_first: f64, t_end: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![t_end];
    }
    let ratio = (t_end / t_first).ln() / (count - 1) as f64;
    (0..count)
        .map(|k| if k + 1 == count { t_end } else { t_first * (ratio * k as f64).exp() })
        .collect()
}

fn snapshot(
    op: &Operator<'_>,
    grid: CircleGrid,
    beta: f64,
    state: &GridDensity,
    cached: &mut Option<StationaryMeasure>,
) -> Result<Snapshot> {
    let mu = match cached {
        Some(mu) if mu.beta() == beta => mu,
        _ => cached.insert(solve_on_nodes(op.spec, beta, grid, op.u.clone(), 1e-14)?),
    };
    let rho = &state.rho;
    let i = (op.energy(beta, rho) - op.energy(beta, mu.values())).max(0.0);
    let weighted: Vec<f64> = rho.iter().zip(&op.u).map(|(&r, &u)| r * u).collect();
    let dist: Vec<f64> = rho.iter().zip(mu.values()).map(|(&r, &m)| (r - m).abs()).collect();
    Ok(Snapshot {
        t: state.t,
        beta,
        i,
        j: op.dissipation(beta, rho),
        mean_u: mean(&weighted),
        l1_to_mu: mean(&dist),
        mass: mean(rho),
    })
}

/// Integrates from `state.t` to `t_end` with `beta = schedule.beta_at(t)`.
pub fn evolve(
    state: &GridDensity,
    spec: &PotentialSpec,
    l: &Landscape,
    schedule: &Schedule,
    t_end: f64,
    options: &EvolveOptions,
) -> Result<Trajectory> {
    if !(t_end > state.t) {
        return Err(Error::invalid("t_end", format!("must exceed the start time {}", state.t)));
    }
    let grid = state.grid;
    let op = Operator::new(spec, l, grid)?;
    let mut stops: Vec<f64> = options
        .record_times
        .iter()
        .chain(&options.profile_times)
        .copied()
        .filter(|&t| t > state.t && t <= t_end)
        .chain(std::iter::once(t_end))
        .collect();
    stops.sort_by(f64::total_cmp);
    stops.dedup();

    let mass0 = state.mass();
    let mut cur = state.clone();
    let mut cached = None;
    let mut traj = Trajectory {
        snapshots: vec![snapshot(&op, grid, schedule.beta_at(cur.t), &cur, &mut cached)?],
        profiles: Vec::new(),
        final_state: cur.clone(),
        steps: 0,
        rejected: 0,
        max_energy_increase: 0.0,
        max_mass_drift: 0.0,
    };
    if options.profile_times.contains(&cur.t) {
        traj.profiles.push((cur.t, cur.rho.clone()));
    }
    let mut dt = match options.policy {
        DtPolicy::Implicit { dt0, .. } => dt0,
        DtPolicy::Explicit { .. } => 0.0,
    };
    for &stop in &stops {
        while cur.t < stop {
            let t_next_max = stop;
            let beta_old = schedule.beta_at(cur.t);
            let next = match options.policy {
                DtPolicy::Explicit { safety } => {
                    let limit = op.stable_dt(beta_old, &cur.rho) * safety / CFL_SAFETY;
                    let h = limit.min(t_next_max - cur.t);
                    let mut s = explicit_update(&op, &cur, beta_old, h)?;
                    if t_next_max - cur.t <= limit {
                        s.t = t_next_max;
                    }
                    s
                }
                DtPolicy::Implicit {
                    dt_min,
                    dt_max,
                    growth,
                    newton_tol,
                    ..
                } => {
                    let mut h = dt.min(dt_max).min(t_next_max - cur.t);
                    let lands = h >= t_next_max - cur.t;
                    let t_new = if lands { t_next_max } else { cur.t + h };
                    h = t_new - cur.t;
                    let beta_new = schedule.beta_at(t_new);
                    let tol = newton_tol * cur.rho.iter().copied().fold(1.0, f64::max);
                    match op.implicit_step(beta_new, &cur.rho, h, tol) {
                        Some((rho, iters)) => {
                            if iters <= 4 && !lands {
                                dt = (h * growth).min(dt_max);
                            } else if !lands {
                                dt = h;
                            }
                            GridDensity { grid, rho, t: t_new }
                        }
                        None => {
                            traj.rejected += 1;
                            dt = 0.25 * h;
                            if dt < dt_min {
                                return Err(Error::NumericalAbort {
                                    t: cur.t,
                                    reason: format!("Newton failed down to dt = {h}"),
                                });
                            }
                            continue;
                        }
                    }
                }
            };
            let beta_new = schedule.beta_at(next.t);
            if beta_new == beta_old {
                let rise = op.energy(beta_new, &next.rho) - op.energy(beta_old, &cur.rho);
                traj.max_energy_increase = traj.max_energy_increase.max(rise);
            }
            traj.max_mass_drift = traj.max_mass_drift.max((next.mass() - mass0).abs());
            traj.steps += 1;
            cur = next;
        }
        if options.record_times.contains(&stop) || stop == t_end {
            traj.snapshots
                .push(snapshot(&op, grid, schedule.beta_at(cur.t), &cur, &mut cached)?);
        }
        if options.profile_times.contains(&stop) {
            traj.profiles.push((stop, cur.rho.clone()));
        }
    }
    traj.final_state = cur;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::f64::consts::TAU;

    use super::*;
    use crate::stationary::solve_stationary;

    fn land(name: &str) -> Landscape {
        Landscape::builtin(name, &BTreeMap::new(), 1, 1.0).unwrap()
    }

    fn glued() -> PotentialSpec {
        PotentialSpec::glued(0.25).unwrap()
    }

    fn bump(grid: CircleGrid) -> GridDensity {
        GridDensity::from_fn(grid, |x| 0.05 + (-(x - 0.3f64).powi(2) / 0.005).exp()).unwrap()
    }

    fn l1(a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
        mean(&d)
    }

    #[test]
    fn cyclic_solver_matches_dense_product() {
        let n = 7;
        let sub: Vec<f64> = (0..n).map(|i| -0.3 - 0.01 * i as f64).collect();
        let sup: Vec<f64> = (0..n).map(|i| -0.2 + 0.02 * i as f64).collect();
        let diag: Vec<f64> = (0..n).map(|i| 2.0 + 0.1 * i as f64).collect();
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 0.5).collect();
        let rhs: Vec<f64> = (0..n)
            .map(|i| sub[i] * x_true[(i + n - 1) % n] + diag[i] * x_true[i] + sup[i] * x_true[(i + 1) % n])
            .collect();
        let x = solve_cyclic(&sub, &diag, &sup, &rhs).unwrap();
        for (a, b) in x.iter().zip(&x_true) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn uniform_constant_is_fixed() {
        let grid = CircleGrid::new(64, 1.0).unwrap();
        let s = GridDensity::uniform(grid);
        let l = land("constant");
        let next = step(&s, &glued(), &l, 3.0, 1e-4).unwrap();
        assert_eq!(next.rho(), s.rho());
        let dt = suggest_dt(&s, &glued(), &l, 3.0).unwrap();
        assert!((dt - 0.2 * grid.dx().powi(2)).abs() < 1e-18);
        let fine = GridDensity::uniform(grid.refined());
        let dt_fine = suggest_dt(&fine, &glued(), &l, 3.0).unwrap();
        assert!((dt / dt_fine - 4.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_density_is_a_fixed_point() {
        let l = land("two_well");
        let spec = glued();
        let mu = solve_stationary(&spec, &l, 5.0, 512, 1e-14).unwrap();
        let s = GridDensity::new(mu.grid(), mu.values().to_vec(), 0.0).unwrap();
        let dt = suggest_dt(&s, &spec, &l, 5.0).unwrap();
        let next = step(&s, &spec, &l, 5.0, dt).unwrap();
        assert!(l1(next.rho(), mu.values()) < 1e-8);
        let traj = evolve(&s, &spec, &l, &Schedule::constant(5.0).unwrap(), 10.0, &EvolveOptions::default()).unwrap();
        assert!(l1(traj.final_state.rho(), mu.values()) < 1e-8);
    }

    #[test]
    fn large_beta_is_diffusion_limited_on_two_well() {
        let l = land("two_well");
        let spec = glued();
        let grid = CircleGrid::new(2048, 1.0).unwrap();
        let mu = solve_stationary(&spec, &l, 5.0, 2048, 1e-14).unwrap();
        let s = GridDensity::new(grid, mu.values().to_vec(), 0.0).unwrap();
        // Diffusive bound dx^2 / (2 Dmax) is far below the advective dx / |v|.
        let op = Operator::new(&spec, &l, grid).unwrap();
        let d1 = op.stable_dt(5.0, s.rho());
        let d2 = op.stable_dt(10.0, s.rho());
        assert_eq!(d1, d2);
    }

    #[test]
    fn explicit_steps_conserve_mass_and_dissipate() {
        let l = land("single_cos");
        let spec = glued();
        let grid = CircleGrid::new(64, 1.0).unwrap();
        let mut s = bump(grid);
        let op = Operator::new(&spec, &l, grid).unwrap();
        let mass0 = s.mass();
        let mut energy = op.energy(2.0, s.rho());
        for _ in 0..100_000 {
            let dt = suggest_dt(&s, &spec, &l, 2.0).unwrap();
            s = step(&s, &spec, &l, 2.0, dt).unwrap();
            let e = op.energy(2.0, s.rho());
            assert!(e <= energy + 1e-12);
            energy = e;
        }
        assert!((s.mass() - mass0).abs() < 1e-8);
    }

    #[test]
    fn oversized_explicit_step_aborts() {
        let l = land("single_cos");
        let grid = CircleGrid::new(256, 1.0).unwrap();
        let s = bump(grid);
        let dt = suggest_dt(&s, &glued(), &l, 2.0).unwrap();
        let mut cur = s;
        let mut failed = false;
        for _ in 0..50 {
            match step(&cur, &glued(), &l, 2.0, 100.0 * dt) {
                Ok(next) => cur = next,
                Err(Error::NumericalAbort { .. }) => {
                    failed = true;
                    break;
                }
                Err(e) => panic!("{e}"),
            }
        }
        assert!(failed);
    }

    #[test]
    fn fast_diffusion_relaxes_to_uniform() {
        let l = land("constant");
        let spec = glued();
        let grid = CircleGrid::new(256, 1.0).unwrap();
        let mu = solve_stationary(&spec, &l, 1.0, 256, 1e-14).unwrap();
        let traj = evolve(&bump(grid), &spec, &l, &Schedule::constant(1.0).unwrap(), 20.0, &EvolveOptions::default()).unwrap();
        assert!(l1(traj.final_state.rho(), mu.values()) < 1e-8);
    }

    #[test]
    fn implicit_energy_monotone_and_mass_exact() {
        let l = land("two_well");
        let spec = glued();
        let grid = CircleGrid::new(512, 1.0).unwrap();
        let opts = EvolveOptions {
            record_times: uniform_times(0.0, 5.0, 50),
            ..Default::default()
        };
        let traj = evolve(&GridDensity::uniform(grid), &spec, &l, &Schedule::constant(5.0).unwrap(), 5.0, &opts).unwrap();
        assert!(traj.max_energy_increase <= 1e-8, "{}", traj.max_energy_increase);
        assert!(traj.max_mass_drift <= 1e-10);
        let is: Vec<f64> = traj.snapshots.iter().map(|s| s.i).collect();
        assert!(is.windows(2).all(|w| w[1] <= w[0] + 1e-8));
        assert!(is.last().unwrap() < &1e-6, "{is:?}");
    }

    #[test]
    fn dissipation_matches_energy_decrease() {
        let l = land("single_cos");
        let spec = glued();
        let grid = CircleGrid::new(256, 1.0).unwrap();
        let op = Operator::new(&spec, &l, grid).unwrap();
        let s = GridDensity::from_fn(grid, |x| 1.0 + 0.5 * (TAU * x + 0.4).sin()).unwrap();
        let opts = EvolveOptions {
            policy: DtPolicy::implicit_with_max(1e-7),
            ..Default::default()
        };
        let sched = Schedule::constant(2.0).unwrap();
        let mut cur = s;
        for _ in 0..5 {
            let before = op.energy(2.0, cur.rho());
            let j = op.dissipation(2.0, cur.rho());
            let t_next = cur.t() + 1e-4;
            let traj = evolve(&cur, &spec, &l, &sched, t_next, &opts).unwrap();
            let next = traj.final_state;
            let drop = before - op.energy(2.0, next.rho());
            assert!((drop - 1e-4 * j).abs() < 0.05 * drop, "{drop} vs {}", 1e-4 * j);
            cur = next;
        }
    }

    #[test]
    fn spatial_error_shrinks_with_refinement() {
        let l = land("two_well");
        let spec = glued();
        let sched = Schedule::constant(3.0).unwrap();
        let opts = EvolveOptions {
            policy: DtPolicy::implicit_with_max(2e-5),
            ..Default::default()
        };
        let init = |x: f64| 1.0 + 0.8 * (TAU * x).sin();
        let run = |n: usize| {
            let g = CircleGrid::new(n, 1.0).unwrap();
            let s = GridDensity::from_fn(g, init).unwrap();
            evolve(&s, &spec, &l, &sched, 0.02, &opts).unwrap().final_state
        };
        let errors: Vec<f64> = [32usize, 64]
            .iter()
            .map(|&n| {
                let coarse = run(n);
                let fine = run(4 * n);
                let injected: Vec<f64> = (0..n).map(|i| fine.rho()[4 * i]).collect();
                l1(coarse.rho(), &injected)
            })
            .collect();
        assert!(errors[1] <= 0.5 * errors[0], "{errors:?}");
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let grid = CircleGrid::new(16, 1.0).unwrap();
        assert!(GridDensity::new(grid, vec![1.0; 8], 0.0).is_err());
        assert!(GridDensity::new(grid, vec![-1.0; 16], 0.0).is_err());
        let other = Landscape::builtin("single_cos", &BTreeMap::new(), 1, 2.0).unwrap();
        assert!(step(&GridDensity::uniform(grid), &glued(), &other, 1.0, 1e-6).is_err());
        let s = GridDensity::uniform(grid);
        assert!(evolve(&s, &glued(), &land("constant"), &Schedule::constant(1.0).unwrap(), 0.0, &EvolveOptions::default()).is_err());
    }
}
