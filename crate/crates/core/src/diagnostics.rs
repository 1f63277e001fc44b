//! Functionals of the flow and checkers for the inequalities that drive it.
//!
//! - `I[rho]`, the reduced cost, in Bregman form and in direct form.
//! - `J[rho] = int |D(phi'(rho) - phi'(mu))|^2 rho`, the entropy production.
//! - The circle inequality `J >= c(beta) Omega(I)` together with the
//!   intermediate bounds of its proof, and the transport inequality
//!   `I >= d(beta) omega(W2)`.
//! - `W2` on the circle.
//! - The scalar comparison ODE `v' = -c(beta) Omega(v) + delta |beta'|`.
//!
//! Gradients use centered differences with physical spacing `L / n`;
//! integrals are means over the nodes (normalized measure).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{mean, CircleGrid};
use crate::landscape::Landscape;
use crate::pde1d::GridDensity;
use crate::potentials::{GluedPower, PotentialSpec};
use crate::schedules::{COfBeta, Schedule};
use crate::stationary::{penalized_cost, solve_stationary, wedge_bounds, StationaryMeasure};

/// Relative slack granted to grid inequalities before they count as violated.
pub const DEFAULT_GRID_SLACK: f64 = 1e-3;

fn check_grids(rho: &GridDensity, mu: &StationaryMeasure) -> Result<()> {
    if rho.grid().n() != mu.grid_n() {
        return Err(Error::GridMismatch {
            left: rho.grid().n(),
            right: mu.grid_n(),
        });
    }
    if rho.grid().perimeter() != mu.grid().perimeter() {
        return Err(Error::invalid("perimeter", "density and stationary measure live on different circles"));
    }
    Ok(())
}

/// `int [phi(rho) - phi(mu) - phi'(mu)(rho - mu)]`.
pub fn reduced_cost(rho: &GridDensity, mu: &StationaryMeasure, spec: &PotentialSpec) -> Result<f64> {
    check_grids(rho, mu)?;
    let terms: Vec<f64> = rho
        .rho()
        .iter()
        .zip(mu.values())
        .map(|(&r, &m)| {
            spec.phi_unchecked(r) - spec.phi_unchecked(m) - spec.phi_prime_unchecked(m) * (r - m)
        })
        .collect();
    Ok(mean(&terms).max(0.0))
}

/// `U_beta[rho] - U_beta[mu]`, computed from the penalized cost itself.
pub fn reduced_cost_direct(rho: &GridDensity, mu: &StationaryMeasure, spec: &PotentialSpec) -> Result<f64> {
    check_grids(rho, mu)?;
    let u = mu.u_values();
    Ok(penalized_cost(spec, mu.beta(), u, rho.rho()) - penalized_cost(spec, mu.beta(), u, mu.values()))
}

fn g_values(rho: &[f64], mu: &StationaryMeasure, spec: &PotentialSpec) -> Vec<f64> {
    rho.iter()
        .zip(mu.values())
        .map(|(&r, &m)| spec.phi_prime_unchecked(r) - spec.phi_prime_unchecked(m))
        .collect()
}

/// `mean(rho_i |D_x(phi'(rho) - phi'(mu))|_i^2)` with centered differences.
pub fn entropy_production(rho: &GridDensity, mu: &StationaryMeasure, spec: &PotentialSpec) -> Result<f64> {
    check_grids(rho, mu)?;
    let g = g_values(rho.rho(), mu, spec);
    let dg = rho.grid().centered_derivative(&g);
    let terms: Vec<f64> = dg.iter().zip(rho.rho()).map(|(&d, &r)| r * d * d).collect();
    Ok(mean(&terms))
}

/// Which `mu_min` feeds the constants `C1 -> C2 -> c(beta)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MuMinSource {
    /// The minimum of the computed stationary density.
    Actual,
    /// The a-priori lower bound from `beta` and `osc(U)`.
    Bound { osc: f64 },
}

fn mu_min_of(glued: &GluedPower, mu: &StationaryMeasure, source: MuMinSource) -> f64 {
    match source {
        MuMinSource::Actual => mu.mu_min().min(1.0),
        MuMinSource::Bound { osc } => wedge_bounds(glued, mu.beta(), osc).0.min(mu.mu_min()).min(1.0),
    }
}

/// `c(beta)` for the stationary measure `mu`.
pub fn c_beta(glued: &GluedPower, mu: &StationaryMeasure, source: MuMinSource) -> Result<f64> {
    let k = glued.constants(mu_min_of(glued, mu, source))?;
    Ok(k.c_of_beta(mu.grid().perimeter()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FiCheck {
    pub i: f64,
    pub j: f64,
    pub rhs: f64,
    /// `J / rhs` (infinite when `rhs = 0 < J`, one when both vanish).
    pub ratio: f64,
    pub pass: bool,
    pub mu_min: f64,
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if rhs > 0.0 {
        lhs / rhs
    } else if lhs > 0.0 {
        f64::INFINITY
    } else {
        1.0
    }
}

/// `J >= c(beta) Omega(I)` on the grid, with `pass` meaning `J >= rhs (1 - grid_slack)`.
pub fn check_functional_inequality(
    rho: &GridDensity,
    mu: &StationaryMeasure,
    spec: &PotentialSpec,
    source: MuMinSource,
    grid_slack: f64,
) -> Result<FiCheck> {
    let glued = spec.glued_params()?;
    let i = reduced_cost(rho, mu, spec)?;
    let j = entropy_production(rho, mu, spec)?;
    let mu_min = mu_min_of(glued, mu, source);
    let rhs = c_beta(glued, mu, source)? * glued.omega_big(i);
    Ok(FiCheck {
        i,
        j,
        rhs,
        ratio: ratio(j, rhs),
        pass: j >= rhs * (1.0 - grid_slack),
        mu_min,
    })
}

/// The intermediate inequalities of the proof, with `g = phi'(rho) - phi'(mu)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChainCheck {
    /// `I <= int g^2`.
    pub reduced_cost_bound: bool,
    /// `J >= int |D theta(g)|^2` (up to grid slack).
    pub theta_gradient: bool,
    /// `max theta(g)^2 <= (L/2) int |D theta(g)|^2` (up to grid slack).
    pub sup_bound: bool,
    /// `C1 |theta(g_i)| >= min(|g_i|^(3/2), |g_i|^eta)` at every node.
    pub theta_lower: bool,
}

impl ChainCheck {
    pub fn all(&self) -> bool {
        self.reduced_cost_bound && self.theta_gradient && self.sup_bound && self.theta_lower
    }
}

pub fn check_chain(
    rho: &GridDensity,
    mu: &StationaryMeasure,
    spec: &PotentialSpec,
    grid_slack: f64,
) -> Result<ChainCheck> {
    let glued = spec.glued_params()?;
    let mu_min = mu.mu_min().min(1.0);
    let consts = glued.constants(mu_min)?;
    let g = g_values(rho.rho(), mu, spec);
    let i = reduced_cost(rho, mu, spec)?;
    let j = entropy_production(rho, mu, spec)?;
    let g2: Vec<f64> = g.iter().map(|v| v * v).collect();
    let theta: Vec<f64> = g
        .iter()
        .map(|&v| glued.theta(v, mu_min))
        .collect::<Result<_>>()?;
    let dtheta = rho.grid().centered_derivative(&theta);
    let dtheta2: Vec<f64> = dtheta.iter().map(|v| v * v).collect();
    let grad_energy = mean(&dtheta2);
    let sup = theta.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let eta = glued.eta();
    let theta_lower = g.iter().zip(&theta).all(|(&gi, &ti)| {
        let a = gi.abs();
        let bound = a.powf(1.5).min(a.powf(eta));
        consts.c1 * ti.abs() >= bound * (1.0 - 1e-12)
    });
    Ok(ChainCheck {
        reduced_cost_bound: i <= mean(&g2) * (1.0 + 1e-12) + 1e-300,
        theta_gradient: j >= grad_energy * (1.0 - grid_slack),
        sup_bound: sup * sup * (1.0 - grid_slack) <= 0.5 * rho.grid().perimeter() * grad_energy,
        theta_lower,
    })
}

/// Quantile function of a piecewise-constant cell density, lifted to the real
/// line by `Q(t + k) = Q(t) + k L`.
struct LiftedQuantile {
    /// Cumulative masses at cell boundaries, `cum[0] = 0`, `cum[n] = 1`.
    cum: Vec<f64>,
    /// Physical cell boundaries, starting half a cell left of node 0.
    edges: Vec<f64>,
    perimeter: f64,
}

impl LiftedQuantile {
    fn new(rho: &[f64], grid: CircleGrid) -> Self {
        let n = rho.len();
        let total: f64 = rho.iter().sum();
        let mut cum = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        cum.push(0.0);
        for &r in rho {
            acc += r / total;
            cum.push(acc);
        }
        cum[n] = 1.0;
        let dx = grid.dx();
        let edges = (0..=n).map(|i| (i as f64 - 0.5) * dx).collect();
        Self {
            cum,
            edges,
            perimeter: grid.perimeter(),
        }
    }

    /// Breakpoints of `Q` inside `[lo, lo + 1)`, sorted, lifted.
    fn breaks(&self, lo: f64, out: &mut Vec<f64>) {
        let k0 = lo.floor();
        for k in [k0, k0 + 1.0] {
            for &c in &self.cum[..self.cum.len() - 1] {
                let s = c + k;
                if s >= lo && s < lo + 1.0 {
                    out.push(s);
                }
            }
        }
    }

    fn eval(&self, s: f64) -> f64 {
        let k = s.floor();
        let t = s - k;
        // Last boundary with cum <= t among cells of positive mass.
        let idx = match self.cum.partition_point(|&c| c <= t) {
            0 => 0,
            p => (p - 1).min(self.cum.len() - 2),
        };
        let (c0, c1) = (self.cum[idx], self.cum[idx + 1]);
        let (e0, e1) = (self.edges[idx], self.edges[idx + 1]);
        let x = if c1 > c0 { e0 + (e1 - e0) * (t - c0) / (c1 - c0) } else { e0 };
        x + k * self.perimeter
    }
}

/// `int_0^1 |Q_rho(t) - Q_sigma(t - theta)|^2 dt`, exact for piecewise-linear quantiles.
fn shifted_cost(a: &LiftedQuantile, b: &LiftedQuantile, theta: f64) -> f64 {
    let mut pts = vec![0.0, 1.0];
    a.breaks(0.0, &mut pts);
    let mut shifted = Vec::new();
    b.breaks(-theta, &mut shifted);
    pts.extend(shifted.into_iter().map(|s| s + theta));
    pts.retain(|&p| (0.0..=1.0).contains(&p));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 <= t0 {
            continue;
        }
        // Evaluate strictly inside the piece to stay on one linear branch.
        let eps = (t1 - t0) * 1e-9;
        let d0 = a.eval(t0 + eps) - b.eval(t0 + eps - theta);
        let d1 = a.eval(t1 - eps) - b.eval(t1 - eps - theta);
        let (d0, d1) = extrapolate(d0, d1, eps, t1 - t0);
        total += (t1 - t0) * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
    }
    total
}

/// Linear values at the ends of a piece from samples taken `eps` inside it.
fn extrapolate(d0: f64, d1: f64, eps: f64, len: f64) -> (f64, f64) {
    let inner = len - 2.0 * eps;
    if inner <= 0.0 {
        return (d0, d1);
    }
    let slope = (d1 - d0) / inner;
    (d0 - slope * eps, d1 + slope * eps)
}

/// Quadratic Wasserstein distance between two grid densities on the circle.
///
/// The densities are read as piecewise constant on cells centered at the
/// nodes. The cost of the lifted quantile coupling shifted by `theta` is
/// convex in `theta`; it is scanned at every cut shift `F(x_k) - G(x_k)` and
/// then minimized by golden section around the best cut.
pub fn w2_circle(rho: &GridDensity, sigma: &GridDensity) -> Result<f64> {
    if rho.grid() != sigma.grid() {
        return Err(Error::GridMismatch {
            left: rho.grid().n(),
            right: sigma.grid().n(),
        });
    }
    let grid = rho.grid();
    let a = LiftedQuantile::new(rho.rho(), grid);
    let b = LiftedQuantile::new(sigma.rho(), grid);
    // Cut shifts, thinned to at most 64 evenly spaced candidates.
    let n = grid.n();
    let stride = (n / 64).max(1);
    let mut best = (0.0, shifted_cost(&a, &b, 0.0));
    for k in (0..n).step_by(stride) {
        let theta = a.cum[k] - b.cum[k];
        let c = shifted_cost(&a, &b, theta);
        if c < best.1 {
            best = (theta, c);
        }
    }
    let width = 2.0 * stride as f64 / n as f64 + 1e-3;
    let (mut lo, mut hi) = (best.0 - width, best.0 + width);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (shifted_cost(&a, &b, c), shifted_cost(&a, &b, d));
    for _ in 0..80 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = shifted_cost(&a, &b, c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = shifted_cost(&a, &b, d);
        }
    }
    let cost = best.1.min(fc).min(fd);
    Ok(cost.max(0.0).sqrt())
}

/// The cut-point formulation: cut both densities at the same cell boundary,
/// unroll to an interval and couple quantiles. An upper bound of `W2^2`;
/// `O(n^2)`, kept as an independent cross-check.
pub fn w2_circle_cuts(rho: &GridDensity, sigma: &GridDensity) -> Result<f64> {
    if rho.grid() != sigma.grid() {
        return Err(Error::GridMismatch {
            left: rho.grid().n(),
            right: sigma.grid().n(),
        });
    }
    let grid = rho.grid();
    let a = LiftedQuantile::new(rho.rho(), grid);
    let b = LiftedQuantile::new(sigma.rho(), grid);
    let best = (0..grid.n())
        .map(|k| shifted_cost(&a, &b, a.cum[k] - b.cum[k]))
        .fold(f64::INFINITY, f64::min);
    Ok(best.max(0.0).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TalagrandCheck {
    pub i: f64,
    pub w2: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub pass: bool,
}

/// `I[rho] >= d(beta) omega(W2(rho, mu))` with `d(beta) = kappa_tal c(beta)`.
pub fn check_talagrand(
    rho: &GridDensity,
    mu: &StationaryMeasure,
    spec: &PotentialSpec,
    source: MuMinSource,
    kappa_tal: f64,
) -> Result<TalagrandCheck> {
    let glued = spec.glued_params()?;
    let i = reduced_cost(rho, mu, spec)?;
    let mu_density = GridDensity::new(mu.grid(), mu.values().to_vec(), 0.0)?;
    let w2 = w2_circle(rho, &mu_density)?;
    let rhs = kappa_tal * c_beta(glued, mu, source)? * glued.omega_small(w2);
    Ok(TalagrandCheck {
        i,
        w2,
        rhs,
        ratio: ratio(i, rhs),
        pass: i >= rhs,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub i: f64,
    pub j: f64,
    /// `J / (c(beta) Omega(I))` with the actual `mu_min`.
    pub ratio: f64,
    pub w2: f64,
    pub gap: f64,
}

pub fn report(
    rho: &GridDensity,
    mu: &StationaryMeasure,
    spec: &PotentialSpec,
    l: &Landscape,
) -> Result<DiagnosticsReport> {
    let fi = check_functional_inequality(rho, mu, spec, MuMinSource::Actual, DEFAULT_GRID_SLACK)?;
    let mu_density = GridDensity::new(mu.grid(), mu.values().to_vec(), 0.0)?;
    Ok(DiagnosticsReport {
        i: fi.i,
        j: fi.j,
        ratio: fi.ratio,
        w2: w2_circle(rho, &mu_density)?,
        gap: crate::stationary::gap_of(spec, l, mu),
    })
}

/// A smooth positive perturbation `mu exp(p) / Z` with `p` a seeded
/// trigonometric polynomial.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RandomDensity {
    /// `(k, cos coefficient, sin coefficient)`.
    terms: Vec<(u32, f64, f64)>,
}

impl RandomDensity {
    /// Order uniform in `1..=max_order`, amplitude log-uniform in `[0.01, 3]`,
    /// coefficients of mode `k` uniform in `[-A/k, A/k]`.
    pub fn seeded(seed: u64, max_order: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let order = rng.random_range(1..=max_order.max(1));
        let amplitude = (rng.random_range(0.01f64.ln()..3f64.ln())).exp();
        let terms = (1..=order)
            .map(|k| {
                let a = amplitude / k as f64;
                (k, rng.random_range(-a..a), rng.random_range(-a..a))
            })
            .collect();
        Self { terms }
    }

    pub fn log_perturbation(&self, x: f64, perimeter: f64) -> f64 {
        let w = std::f64::consts::TAU * x / perimeter;
        self.terms
            .iter()
            .map(|&(k, a, b)| a * (k as f64 * w).cos() + b * (k as f64 * w).sin())
            .sum()
    }

    /// Perturbs `mu` on its own grid and renormalizes.
    pub fn apply(&self, mu: &StationaryMeasure) -> Result<GridDensity> {
        let grid = mu.grid();
        let raw: Vec<f64> = mu
            .values()
            .iter()
            .enumerate()
            .map(|(i, &m)| m * self.log_perturbation(grid.x(i), grid.perimeter()).exp())
            .collect();
        let z = mean(&raw);
        GridDensity::new(grid, raw.into_iter().map(|r| r / z).collect(), 0.0)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub seed: u64,
    pub beta: f64,
    pub m: f64,
    pub i: f64,
    pub j: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// Ratio with `mu_min` taken from the a-priori bound.
    pub ratio_bound: f64,
    pub refined: bool,
    pub pass: bool,
    pub chain: ChainCheck,
    pub talagrand: TalagrandCheck,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepSummary {
    pub total: usize,
    pub passed: usize,
    pub refined: usize,
    pub chain_passed: usize,
    pub talagrand_passed: usize,
    pub min_ratio: f64,
    pub min_ratio_bound: f64,
    pub min_talagrand_ratio: f64,
    /// Densities with `I < 1` and `I >= 1`.
    pub small_i: usize,
    pub large_i: usize,
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub betas: Vec<f64>,
    pub ms: Vec<f64>,
    pub per_cell: usize,
    pub grid_n: usize,
    pub grid_slack: f64,
    pub max_order: u32,
    pub kappa_tal: f64,
    pub base_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            betas: vec![1.0, 5.0, 20.0],
            ms: vec![0.1, 0.25, 0.4],
            per_cell: 112,
            grid_n: 2048,
            grid_slack: DEFAULT_GRID_SLACK,
            max_order: 8,
            kappa_tal: 1.0,
            base_seed: 0,
        }
    }
}

/// Checks every random density against the functional inequality, its chain
/// and the transport inequality. A failure at `grid_n` is retried once on a
/// grid twice as fine before it is recorded.
pub fn sweep(l: &Landscape, config: &SweepConfig) -> Result<(Vec<SweepRow>, SweepSummary)> {
    let mut rows = Vec::new();
    for &m in &config.ms {
        let spec = PotentialSpec::glued(m)?;
        for &beta in &config.betas {
            let mu = solve_stationary(&spec, l, beta, config.grid_n, 1e-14)?;
            let mut fine: Option<StationaryMeasure> = None;
            for k in 0..config.per_cell {
                let seed = config
                    .base_seed
                    .wrapping_add((rows.len() as u64).wrapping_mul(0x9E37_79B9))
                    .wrapping_add(k as u64);
                let density = RandomDensity::seeded(seed, config.max_order);
                let rho = density.apply(&mu)?;
                let mut fi = check_functional_inequality(&rho, &mu, &spec, MuMinSource::Actual, config.grid_slack)?;
                let mut chain = check_chain(&rho, &mu, &spec, config.grid_slack)?;
                let mut refined = false;
                if !fi.pass || !chain.all() {
                    refined = true;
                    let mu2 = match &fine {
                        Some(f) => f,
                        None => fine.insert(solve_stationary(&spec, l, beta, 2 * config.grid_n, 1e-14)?),
                    };
                    let rho2 = density.apply(mu2)?;
                    fi = check_functional_inequality(&rho2, mu2, &spec, MuMinSource::Actual, config.grid_slack)?;
                    chain = check_chain(&rho2, mu2, &spec, config.grid_slack)?;
                }
                let bound = check_functional_inequality(
                    &rho,
                    &mu,
                    &spec,
                    MuMinSource::Bound { osc: l.osc() },
                    config.grid_slack,
                )?;
                let talagrand = check_talagrand(&rho, &mu, &spec, MuMinSource::Actual, config.kappa_tal)?;
                rows.push(SweepRow {
                    seed,
                    beta,
                    m,
                    i: fi.i,
                    j: fi.j,
                    rhs: fi.rhs,
                    ratio: fi.ratio,
                    ratio_bound: bound.ratio,
                    refined,
                    pass: fi.pass,
                    chain,
                    talagrand,
                });
            }
        }
    }
    let summary = SweepSummary {
        total: rows.len(),
        passed: rows.iter().filter(|r| r.pass).count(),
        refined: rows.iter().filter(|r| r.refined).count(),
        chain_passed: rows.iter().filter(|r| r.chain.all()).count(),
        talagrand_passed: rows.iter().filter(|r| r.talagrand.pass).count(),
        min_ratio: rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min),
        min_ratio_bound: rows.iter().map(|r| r.ratio_bound).fold(f64::INFINITY, f64::min),
        min_talagrand_ratio: rows.iter().map(|r| r.talagrand.ratio).fold(f64::INFINITY, f64::min),
        small_i: rows.iter().filter(|r| r.i < 1.0).count(),
        large_i: rows.iter().filter(|r| r.i >= 1.0).count(),
    };
    Ok((rows, summary))
}

/// Least-squares slope of `log c(beta)` against `log beta`, with `mu_min`
/// taken from the a-priori bound.
pub fn c_beta_log_slope(glued: &GluedPower, osc: f64, perimeter: f64, betas: &[f64]) -> f64 {
    let c = COfBeta::Explicit {
        glued: *glued,
        osc,
        perimeter,
    };
    let pts: Vec<(f64, f64)> = betas.iter().map(|&b| (b.ln(), c.eval(b).ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LyapunovPoint {
    pub t: f64,
    pub v: f64,
    pub beta: f64,
}

/// Integrates `v' = -c(beta(t)) Omega(v) + delta |beta'(t)|` from `t0` to `t_end`
/// with the Dormand-Prince 5(4) pair, sampling at `record_times`.
pub fn lyapunov_bound(
    v0: f64,
    schedule: &Schedule,
    c_of_beta: impl Fn(f64) -> f64,
    omega: impl Fn(f64) -> f64,
    delta: f64,
    t0: f64,
    t_end: f64,
    record_times: &[f64],
) -> Result<Vec<LyapunovPoint>> {
    if !(v0 >= 0.0) || !(delta >= 0.0) {
        return Err(Error::invalid("lyapunov", "v0 and delta must be nonnegative"));
    }
    if !(t_end > t0) {
        return Err(Error::invalid("t_end", "must exceed t0"));
    }
    let rhs = |t: f64, v: f64| {
        -c_of_beta(schedule.beta_at(t)) * omega(v.max(0.0)) + delta * schedule.beta_dot_at(t).abs()
    };
    let mut stops: Vec<f64> = record_times
        .iter()
        .copied()
        .filter(|&t| t > t0 && t <= t_end)
        .chain(std::iter::once(t_end))
        .collect();
    stops.sort_by(f64::total_cmp);
    stops.dedup();

    const A: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const C: [f64; 6] = [0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
    let (rtol, atol) = (1e-10, 1e-14);
    let mut t = t0;
    let mut v = v0;
    let mut h = 1e-6 * (1.0 + t0.abs());
    let mut out = vec![LyapunovPoint {
        t,
        v,
        beta: schedule.beta_at(t),
    }];
    let mut iterations = 0usize;
    for &stop in &stops {
        while t < stop {
            iterations += 1;
            if iterations > 10_000_000 {
                return Err(Error::NonConvergence {
                    what: "lyapunov ODE",
                    iterations,
                });
            }
            let step = h.min(stop - t);
            let mut k = [0.0; 7];
            k[0] = rhs(t, v);
            for s in 0..6 {
                let vs = v + step * (0..=s).map(|j| A[s][j] * k[j]).sum::<f64>();
                k[s + 1] = rhs(t + C[s] * step, vs);
            }
            let v_new = v + step * (0..6).map(|j| A[5][j] * k[j]).sum::<f64>();
            let err = step * (0..7).map(|j| E[j] * k[j]).sum::<f64>();
            let scale = atol + rtol * v.abs().max(v_new.abs());
            let ratio = (err / scale).abs();
            if ratio <= 1.0 {
                t = if step == stop - t { stop } else { t + step };
                v = v_new.max(0.0);
            }
            let factor = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
            h = step * factor;
        }
        out.push(LyapunovPoint {
            t,
            v,
            beta: schedule.beta_at(t),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::f64::consts::TAU;

    use super::*;

    fn land(name: &str) -> Landscape {
        Landscape::builtin(name, &BTreeMap::new(), 1, 1.0).unwrap()
    }

    fn setup(beta: f64, n: usize) -> (PotentialSpec, Landscape, StationaryMeasure) {
        let spec = PotentialSpec::glued(0.25).unwrap();
        let l = land("single_cos");
        let mu = solve_stationary(&spec, &l, beta, n, 1e-14).unwrap();
        (spec, l, mu)
    }

    fn as_density(mu: &StationaryMeasure) -> GridDensity {
        GridDensity::new(mu.grid(), mu.values().to_vec(), 0.0).unwrap()
    }

    #[test]
    fn everything_vanishes_at_mu() {
        let (spec, _, mu) = setup(5.0, 512);
        let rho = as_density(&mu);
        assert_eq!(reduced_cost(&rho, &mu, &spec).unwrap(), 0.0);
        assert_eq!(entropy_production(&rho, &mu, &spec).unwrap(), 0.0);
        let fi = check_functional_inequality(&rho, &mu, &spec, MuMinSource::Actual, 1e-3).unwrap();
        assert!(fi.pass && fi.j == 0.0 && fi.rhs == 0.0);
        assert!(check_talagrand(&rho, &mu, &spec, MuMinSource::Actual, 1.0).unwrap().pass);
        assert!(w2_circle(&rho, &rho).unwrap() < 1e-9);
    }

    #[test]
    fn bregman_equals_direct_form() {
        let (spec, _, mu) = setup(5.0, 2048);
        let uniform = GridDensity::uniform(mu.grid());
        let a = reduced_cost(&uniform, &mu, &spec).unwrap();
        let b = reduced_cost_direct(&uniform, &mu, &spec).unwrap();
        assert!(a > 0.0);
        assert!((a - b).abs() < 1e-9);
        for seed in 0..50 {
            let rho = RandomDensity::seeded(seed, 8).apply(&mu).unwrap();
            let a = reduced_cost(&rho, &mu, &spec).unwrap();
            let b = reduced_cost_direct(&rho, &mu, &spec).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn entropy_production_converges_at_second_order() {
        // Boltzmann pair with closed forms: mu = 1 (U constant), rho = e^{s sin} / I0(s).
        // g = s sin(2 pi x) - ln I0(s), J = int rho (2 pi s cos)^2
        //   = (2 pi)^2 s I1(s) / I0(s).
        let spec = PotentialSpec::boltzmann();
        let l = land("constant");
        let s = 0.7f64;
        let (i0, i1) = (1.126_303_018_306_809, 0.371_879_677_777_008_64);
        let exact = TAU * TAU * s * i1 / i0;
        let errors: Vec<f64> = [32usize, 64, 128]
            .iter()
            .map(|&n| {
                let mu = solve_stationary(&spec, &l, 1.0, n, 1e-14).unwrap();
                let rho = GridDensity::from_fn(mu.grid(), |x| (s * (TAU * x).sin()).exp()).unwrap();
                (entropy_production(&rho, &mu, &spec).unwrap() - exact).abs()
            })
            .collect();
        assert!(errors[1] < errors[0] / 3.5 && errors[2] < errors[1] / 3.5, "{errors:?}");
    }

    #[test]
    fn chain_holds_on_random_densities() {
        let (spec, _, mu) = setup(5.0, 2048);
        for seed in 0..100 {
            let rho = RandomDensity::seeded(seed, 8).apply(&mu).unwrap();
            let chain = check_chain(&rho, &mu, &spec, DEFAULT_GRID_SLACK).unwrap();
            assert!(chain.all(), "seed {seed}: {chain:?}");
        }
    }

    #[test]
    fn w2_of_translated_bumps() {
        let grid = CircleGrid::new(2048, 1.0).unwrap();
        let bump = |c: f64, w: f64| {
            move |x: f64| {
                let d = crate::landscape::torus_delta(x, c, 1.0);
                1e-9 + (-(d / w).powi(2)).exp()
            }
        };
        for s in [0.05, 0.2, 0.45] {
            let a = GridDensity::from_fn(grid, bump(0.9, 0.004)).unwrap();
            let b = GridDensity::from_fn(grid, bump(0.9 + s, 0.004)).unwrap();
            let w = w2_circle(&a, &b).unwrap();
            assert!((w - s).abs() < 2e-3, "{s}: {w}");
            let back = w2_circle(&b, &a).unwrap();
            assert!((w - back).abs() < 1e-10);
        }
    }

    #[test]
    fn w2_never_exceeds_cut_formulation() {
        let (_, _, mu) = setup(5.0, 256);
        let target = as_density(&mu);
        for seed in 0..10 {
            let rho = RandomDensity::seeded(seed, 8).apply(&mu).unwrap();
            let fast = w2_circle(&rho, &target).unwrap();
            let cuts = w2_circle_cuts(&rho, &target).unwrap();
            assert!(fast <= cuts + 1e-12, "{fast} > {cuts}");
            assert!(cuts - fast < 0.05 * cuts + 1e-3);
            let back = w2_circle(&target, &rho).unwrap();
            assert!((fast - back).abs() < 1e-10);
        }
    }

    #[test]
    fn omega_branch_values() {
        let g = GluedPower::new(0.25).unwrap();
        assert!((g.omega_small(1.0 - 1e-15) - 1.6).abs() < 1e-12);
        assert!((g.omega_small(1.0) - 4.0 * 0.75 / 2.5).abs() < 1e-15);
    }

    #[test]
    fn asymptotic_slope_of_c() {
        for m in [0.1, 0.25, 0.4] {
            let g = GluedPower::new(m).unwrap();
            let slope = c_beta_log_slope(&g, 2.0, 1.0, &[1e2, 1e3, 1e4]);
            assert!((slope + g.gamma()).abs() < 0.1 * g.gamma(), "{m}: {slope} vs {}", -g.gamma());
        }
    }

    #[test]
    fn lyapunov_closed_form() {
        // v' = -c v^(3/2), v(0) = 1  =>  v = (1 + c t / 2)^-2
        let sched = Schedule::constant(1.0).unwrap();
        let c = 0.3;
        let times: Vec<f64> = (1..=20).map(|k| k as f64 * 5.0).collect();
        let pts = lyapunov_bound(1.0, &sched, |_| c, |v| v.powf(1.5), 0.0, 0.0, 100.0, &times).unwrap();
        for p in &pts {
            let exact = (1.0 + c * p.t / 2.0).powi(-2);
            assert!((p.v - exact).abs() < 1e-6, "{}: {} vs {exact}", p.t, p.v);
        }
    }
}
