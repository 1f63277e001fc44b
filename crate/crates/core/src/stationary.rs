//! The stationary density `mu_beta = psi(c* - beta U)` on a circle grid.
//!
//! `c*` is found by bisection on the increasing map
//! `c -> mean(psi(c - beta U_i)) - 1`, which is bracketed by
//! `[beta min U, beta max U]` since `psi(0) = 1`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{mean, CircleGrid};
use crate::landscape::Landscape;
use crate::potentials::{pow, GluedPower, PotentialSpec};

/// Default cell count for 1-D stationary solves.
pub const DEFAULT_GRID_N: usize = 2048;
/// Bisection budget.
pub const MAX_BISECTIONS: usize = 200;

#[derive(Clone, Debug, Serialize)]
pub struct StationaryMeasure {
    beta: f64,
    c_star: f64,
    values: Vec<f64>,
    u: Vec<f64>,
    mu_min: f64,
    mu_max: f64,
    #[serde(skip)]
    grid: CircleGrid,
}

impl StationaryMeasure {
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn c_star(&self) -> f64 {
        self.c_star
    }

    /// Nodal densities with respect to the normalized measure.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `U` sampled at the grid nodes.
    pub fn u_values(&self) -> &[f64] {
        &self.u
    }

    pub fn mu_min(&self) -> f64 {
        self.mu_min
    }

    pub fn mu_max(&self) -> f64 {
        self.mu_max
    }

    pub fn grid(&self) -> CircleGrid {
        self.grid
    }

    pub fn grid_n(&self) -> usize {
        self.grid.n()
    }

    /// Largest `|phi'(mu_i) + beta U_i - c*|` over the grid.
    pub fn residual(&self, spec: &PotentialSpec) -> f64 {
        self.values
            .iter()
            .zip(&self.u)
            .map(|(&mu, &u)| (spec.phi_prime_unchecked(mu) + self.beta * u - self.c_star).abs())
            .fold(0.0, f64::max)
    }

    /// Mass carried by nodes farther than `radius` (on the circle) from `center`.
    pub fn mass_outside(&self, center: f64, radius: f64) -> f64 {
        let l = self.grid.perimeter();
        let far: Vec<f64> = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &mu)| {
                let d = crate::landscape::torus_delta(self.grid.x(i), center, l).abs();
                if d > radius {
                    mu
                } else {
                    0.0
                }
            })
            .collect();
        mean(&far)
    }
}

/// `U_beta[rho] = beta int U rho + int phi(rho)` on the grid.
pub fn penalized_cost(spec: &PotentialSpec, beta: f64, u: &[f64], rho: &[f64]) -> f64 {
    let terms: Vec<f64> = u
        .iter()
        .zip(rho)
        .map(|(&ui, &r)| beta * ui * r + spec.phi_unchecked(r))
        .collect();
    mean(&terms)
}

/// A-priori bounds `(lower, upper)` on `mu_beta`:
/// `(1 + (1-m) beta osc)^(1/(m-1)) <= mu_min` and `mu_max <= beta osc + 1`.
pub fn wedge_bounds(glued: &GluedPower, beta: f64, osc: f64) -> (f64, f64) {
    let m = glued.m();
    let lower = pow(1.0 + (1.0 - m) * beta * osc, 1.0 / (m - 1.0));
    (lower, beta * osc + 1.0)
}

fn check_circle(l: &Landscape) -> Result<()> {
    if l.dim() != 1 {
        return Err(Error::invalid(
            "landscape",
            format!("grid solvers need a circle, got dimension {}", l.dim()),
        ));
    }
    Ok(())
}

/// Solves for `c*` and `mu_beta` on `grid_n` uniform nodes.
///
/// `tol` bounds the width of the final bisection bracket relative to `max(1, |c*|)`.
pub fn solve_stationary(
    spec: &PotentialSpec,
    l: &Landscape,
    beta: f64,
    grid_n: usize,
    tol: f64,
) -> Result<StationaryMeasure> {
    check_circle(l)?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid("beta", format!("must be positive, got {beta}")));
    }
    if grid_n < 16 {
        return Err(Error::invalid("grid_n", format!("need at least 16 cells, got {grid_n}")));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", "must be positive"));
    }
    let grid = CircleGrid::new(grid_n, l.period())?;
    let u = l.sample_circle(grid_n);
    solve_on_nodes(spec, beta, grid, u, tol)
}

/// As [`solve_stationary`] with `U` already sampled at the nodes of `grid`.
pub fn solve_on_nodes(
    spec: &PotentialSpec,
    beta: f64,
    grid: CircleGrid,
    u: Vec<f64>,
    tol: f64,
) -> Result<StationaryMeasure> {
    if u.len() != grid.n() {
        return Err(Error::GridMismatch {
            left: u.len(),
            right: grid.n(),
        });
    }
    let u_min = u.iter().copied().fold(f64::INFINITY, f64::min);
    let u_max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let excess = |c: f64| {
        let vals: Vec<f64> = u.iter().map(|&ui| spec.psi(c - beta * ui)).collect();
        mean(&vals) - 1.0
    };
    let (mut lo, mut hi) = (beta * u_min, beta * u_max);
    let (f_lo, f_hi) = (excess(lo), excess(hi));
    if f_lo > 0.0 || f_hi < 0.0 {
        return Err(Error::BracketFailure { lo, hi });
    }
    let mut iterations = 0;
    while hi > lo && iterations < MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if excess(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    if hi - lo > tol * lo.abs().max(hi.abs()).max(1.0) {
        return Err(Error::NonConvergence {
            what: "stationary bisection",
            iterations,
        });
    }
    let c_star = if excess(lo).abs() <= excess(hi).abs() {
        lo
    } else {
        hi
    };
    let values: Vec<f64> = u.iter().map(|&ui| spec.psi(c_star - beta * ui)).collect();
    let mu_min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mu_max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(StationaryMeasure {
        beta,
        c_star,
        values,
        u,
        mu_min,
        mu_max,
        grid,
    })
}

/// `gap(beta) = U_beta[mu_beta] / beta - min U`.
pub fn gap(spec: &PotentialSpec, l: &Landscape, beta: f64, grid_n: usize) -> Result<f64> {
    let mu = solve_stationary(spec, l, beta, grid_n, 1e-14)?;
    Ok(gap_of(spec, l, &mu))
}

/// The gap of an already solved stationary measure.
pub fn gap_of(spec: &PotentialSpec, l: &Landscape, mu: &StationaryMeasure) -> f64 {
    let cost = penalized_cost(spec, mu.beta, &mu.u, &mu.values);
    (cost / mu.beta - l.min_value()).max(0.0)
}
