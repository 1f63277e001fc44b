//! N-particle Euler-Maruyama simulator of the swarm SDE
//!
//! ```text
//! dX_n = -beta_t grad U(X_n) dt + sqrt(noise_factor alpha(rho_{N,h}(X_n))) dB_n
//! ```
//!
//! on the unit torus, where `rho_{N,h}` is the periodic kernel density
//! estimate of the empirical measure. With `noise_factor = 2` (the default)
//! the mean-field limit is the nonlinear Fokker-Planck flow solved by
//! [`crate::pde1d`]; `noise_factor = 1` is the literal `sqrt(alpha) dB` form.
//!
//! Randomness is counter based: the Gaussian increments of particle `n` at
//! step `k` come from a generator keyed by `(seed, k, n)`, so results do not
//! depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{mean, CircleGrid};
use crate::landscape::{torus_delta, wrap, Landscape};
use crate::potentials::PotentialSpec;
use crate::quadrature::integrate;
use crate::schedules::Schedule;
use crate::stationary::solve_stationary;

/// Density floor applied before evaluating `alpha`.
pub const FLOOR_EPS: f64 = 1e-12;
/// Default hard cap on `alpha`.
pub const DEFAULT_ALPHA_CAP: f64 = 1e3;
/// Particle count from which KDE queries go through a cell list.
pub const CELL_LIST_THRESHOLD: usize = 512;

/// Product bump kernel `prod_i c exp(-1 / (1 - (4 u_i)^2))`, supported in `[-1/4, 1/4]^d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Kernel {
    dim: usize,
    /// Normalization of the 1-D factor.
    c: f64,
}

impl Kernel {
    pub fn bump(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be positive"));
        }
        let q = integrate(|u| bump_profile(u), -0.25, 0.25, 1e-15)?;
        Ok(Self { dim, c: 1.0 / q.value })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `K(u)` for a displacement already reduced to the minimal representative.
    #[inline]
    pub fn value(&self, u: &[f64]) -> f64 {
        let mut k = 1.0;
        for &ui in u {
            if ui.abs() >= 0.25 {
                return 0.0;
            }
            k *= self.c * bump_profile(ui);
        }
        k
    }

    /// The 1-D factor `c exp(-1 / (1 - 16 u^2))`.
    #[inline]
    pub fn factor(&self, u: f64) -> f64 {
        if u.abs() >= 0.25 {
            0.0
        } else {
            self.c * bump_profile(u)
        }
    }
}

#[inline]
fn bump_profile(u: f64) -> f64 {
    let s = 1.0 - 16.0 * u * u;
    if s <= 0.0 {
        0.0
    } else {
        (-1.0 / s).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SwarmState {
    /// Row-major `N x d` coordinates in `[0, 1)`.
    positions: Vec<f64>,
    dim: usize,
    t: f64,
    h: f64,
    seed: u64,
    step: u64,
}

impl SwarmState {
    pub fn new(positions: Vec<f64>, dim: usize, h: f64, seed: u64) -> Result<Self> {
        if dim == 0 || positions.len() % dim != 0 {
            return Err(Error::invalid("positions", "length must be a multiple of dim"));
        }
        if positions.len() / dim < 2 {
            return Err(Error::invalid("N", "need at least two particles"));
        }
        check_bandwidth(h)?;
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("positions", "must be finite"));
        }
        Ok(Self {
            positions: positions.into_iter().map(|p| wrap(p, 1.0)).collect(),
            dim,
            t: 0.0,
            h,
            seed,
            step: 0,
        })
    }

    /// `n` iid uniform particles drawn from the stream of `seed`.
    pub fn uniform(n: usize, dim: usize, h: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, u64::MAX]));
        let dist = Uniform::new(0.0, 1.0).expect("valid range");
        let positions = (0..n * dim).map(|_| dist.sample(&mut rng)).collect();
        Self::new(positions, dim, h, seed)
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn n(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn set_h(&mut self, h: f64) -> Result<()> {
        check_bandwidth(h)?;
        self.h = h;
        Ok(())
    }
}

fn check_bandwidth(h: f64) -> Result<()> {
    if !(h > 0.0 && h < 0.5) {
        return Err(Error::invalid("h", format!("bandwidth must lie in (0, 1/2), got {h}")));
    }
    Ok(())
}

/// SplitMix64 finalizer folded over the words.
fn mix(words: &[u64]) -> u64 {
    let mut z: u64 = 0x9E37_79B9_7F4A_7C15;
    for &w in words {
        z = z.wrapping_add(w).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Uniform cell list over the unit torus with cells at least `h / 4` wide.
struct CellList {
    per_axis: usize,
    dim: usize,
    starts: Vec<usize>,
    members: Vec<usize>,
}

impl CellList {
    fn build(state: &SwarmState) -> Option<Self> {
        let per_axis = (4.0 / state.h).floor() as usize;
        let dim = state.dim;
        let total = per_axis.checked_pow(dim as u32)?;
        if per_axis < 3 || total > 4 * state.n() + 1024 {
            return None;
        }
        let cell_of = |i: usize| {
            state.particle(i).iter().rev().fold(0usize, |acc, &c| {
                acc * per_axis + ((c * per_axis as f64) as usize).min(per_axis - 1)
            })
        };
        let cells: Vec<usize> = (0..state.n()).map(cell_of).collect();
        let mut starts = vec![0usize; total + 1];
        for &c in &cells {
            starts[c + 1] += 1;
        }
        for k in 0..total {
            starts[k + 1] += starts[k];
        }
        let mut fill = starts.clone();
        let mut members = vec![0usize; state.n()];
        for (i, &c) in cells.iter().enumerate() {
            members[fill[c]] = i;
            fill[c] += 1;
        }
        Some(Self {
            per_axis,
            dim,
            starts,
            members,
        })
    }

    fn for_each_candidate(&self, x: &[f64], mut f: impl FnMut(usize)) {
        let p = self.per_axis as i64;
        let base: Vec<i64> = x
            .iter()
            .map(|&c| ((c * self.per_axis as f64) as i64).min(p - 1))
            .collect();
        let combos = 3usize.pow(self.dim as u32);
        for combo in 0..combos {
            let mut rest = combo;
            let mut flat = 0usize;
            let mut stride = 1usize;
            for &b in &base {
                let off = (rest % 3) as i64 - 1;
                rest /= 3;
                flat += (b + off).rem_euclid(p) as usize * stride;
                stride *= self.per_axis;
            }
            for &i in &self.members[self.starts[flat]..self.starts[flat + 1]] {
                f(i);
            }
        }
    }
}

fn kernel_sum(state: &SwarmState, kernel: &Kernel, x: &[f64], candidates: impl Iterator<Item = usize>) -> f64 {
    let inv_h = 1.0 / state.h;
    let mut total = 0.0;
    for i in candidates {
        let mut k = 1.0;
        for (&xi, &pi) in x.iter().zip(state.particle(i)) {
            k *= kernel.factor(torus_delta(xi, pi, 1.0) * inv_h);
            if k == 0.0 {
                break;
            }
        }
        total += k;
    }
    total * inv_h.powi(state.dim as i32) / state.n() as f64
}

/// `rho_{N,h}(x) = (1/N) sum_n h^-d K((x - X_n) / h)` by direct summation.
pub fn kde_at(state: &SwarmState, kernel: &Kernel, x: &[f64]) -> f64 {
    kernel_sum(state, kernel, x, 0..state.n())
}

/// KDE at many query points (row-major, `dim` coordinates each).
pub fn kde_many(state: &SwarmState, kernel: &Kernel, points: &[f64]) -> Vec<f64> {
    let dim = state.dim;
    let cells = if state.n() >= CELL_LIST_THRESHOLD {
        CellList::build(state)
    } else {
        None
    };
    points
        .par_chunks(dim)
        .map(|x| {
            let x: Vec<f64> = x.iter().map(|&c| wrap(c, 1.0)).collect();
            match &cells {
                Some(cl) => {
                    let mut cand = Vec::new();
                    cl.for_each_candidate(&x, |i| cand.push(i));
                    kernel_sum(state, kernel, &x, cand.into_iter())
                }
                None => kernel_sum(state, kernel, &x, 0..state.n()),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GrowthPolicy {
    None,
    /// Every `interval` steps, copy `count` randomly chosen particles, up to `max_n`.
    Duplicate {
        interval: u64,
        count: usize,
        max_n: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepOptions {
    /// Variance of the increment is `noise_factor alpha dt` per axis.
    pub noise_factor: f64,
    pub alpha_cap: f64,
    pub growth: GrowthPolicy,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            noise_factor: 2.0,
            alpha_cap: DEFAULT_ALPHA_CAP,
            growth: GrowthPolicy::None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StepStats {
    /// Particles whose `alpha` was capped at `alpha_cap`.
    pub alpha_cap_hits: usize,
    /// Particles whose density estimate fell below the floor.
    pub floor_hits: usize,
    pub duplicated: usize,
}

fn check_torus(state: &SwarmState, l: &Landscape, kernel: &Kernel) -> Result<()> {
    if l.period() != 1.0 {
        return Err(Error::invalid("landscape.period", "the swarm runs on the unit torus"));
    }
    if l.dim() != state.dim || kernel.dim() != state.dim {
        return Err(Error::invalid("dim", "state, landscape and kernel dimensions differ"));
    }
    Ok(())
}

/// One synchronous Euler-Maruyama step: every density estimate is taken from
/// the pre-step configuration, then all particles move.
pub fn em_step(
    state: &SwarmState,
    spec: &PotentialSpec,
    l: &Landscape,
    kernel: &Kernel,
    beta: f64,
    dt: f64,
    options: &StepOptions,
) -> Result<(SwarmState, StepStats)> {
    check_torus(state, l, kernel)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    if !(options.noise_factor >= 0.0) {
        return Err(Error::invalid("noise_factor", "must be nonnegative"));
    }
    let dim = state.dim;
    let boltzmann = matches!(spec, PotentialSpec::Boltzmann);
    let densities = if boltzmann || options.noise_factor == 0.0 {
        vec![1.0; state.n()]
    } else {
        kde_many(state, kernel, &state.positions)
    };
    let results: Vec<(Vec<f64>, bool, bool)> = (0..state.n())
        .into_par_iter()
        .map(|i| {
            let x = state.particle(i);
            let mut grad = vec![0.0; dim];
            l.grad(x, &mut grad);
            let floored = densities[i] < FLOOR_EPS;
            let (alpha, capped) = if boltzmann {
                (1.0, false)
            } else {
                let a = spec.alpha_unchecked(densities[i].max(FLOOR_EPS));
                if a > options.alpha_cap {
                    (options.alpha_cap, true)
                } else {
                    (a, false)
                }
            };
            let sigma = (options.noise_factor * alpha * dt).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(mix(&[state.seed, state.step, i as u64]));
            let next: Vec<f64> = x
                .iter()
                .zip(&grad)
                .map(|(&xi, &gi)| {
                    let xi_noise: f64 = StandardNormal.sample(&mut rng);
                    let noise = if sigma > 0.0 { sigma * xi_noise } else { 0.0 };
                    wrap(xi - beta * gi * dt + noise, 1.0)
                })
                .collect();
            (next, capped, floored && !boltzmann)
        })
        .collect();
    let mut stats = StepStats::default();
    let mut positions = Vec::with_capacity(state.positions.len());
    for (p, capped, floored) in results {
        positions.extend(p);
        stats.alpha_cap_hits += capped as usize;
        stats.floor_hits += floored as usize;
    }
    if positions.iter().any(|p| !p.is_finite()) {
        return Err(Error::NumericalAbort {
            t: state.t + dt,
            reason: "non-finite particle position".to_string(),
        });
    }
    let step = state.step + 1;
    if let GrowthPolicy::Duplicate {
        interval,
        count,
        max_n,
    } = options.growth
    {
        if interval > 0 && step % interval == 0 {
            let n = positions.len() / dim;
            let room = max_n.saturating_sub(n).min(count);
            let mut rng = ChaCha8Rng::seed_from_u64(mix(&[state.seed, step, u64::MAX - 1]));
            let pick = Uniform::new(0, n).expect("n >= 2");
            for _ in 0..room {
                let j = pick.sample(&mut rng);
                let copy: Vec<f64> = positions[j * dim..(j + 1) * dim].to_vec();
                positions.extend(copy);
            }
            stats.duplicated = room;
        }
    }
    Ok((
        SwarmState {
            positions,
            dim,
            t: state.t + dt,
            h: state.h,
            seed: state.seed,
            step,
        },
        stats,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BandwidthPolicy {
    Constant,
    /// `h_t = h0 (1 + t)^-q`.
    PowerDecay { h0: f64, q: f64 },
}

impl BandwidthPolicy {
    pub fn h_at(&self, h_now: f64, t: f64) -> f64 {
        match *self {
            BandwidthPolicy::Constant => h_now,
            BandwidthPolicy::PowerDecay { h0, q } => h0 * (1.0 + t).powf(-q),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub step: StepOptions,
    pub bandwidth: BandwidthPolicy,
    /// Record a summary every `record_every` steps (and at the end).
    pub record_every: u64,
    /// Radius around the global argmin that counts as the target basin.
    pub r_basin: f64,
    /// Grid used for the KDE-vs-stationary distance in `d = 1`; `None` skips it.
    pub mu_grid_n: Option<usize>,
    /// Steps after which all particle positions are kept.
    pub dump_steps: Vec<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            step: StepOptions::default(),
            bandwidth: BandwidthPolicy::Constant,
            record_every: 100,
            r_basin: 0.25,
            mu_grid_n: Some(1024),
            dump_steps: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SwarmSummary {
    pub t: f64,
    pub beta: f64,
    pub h: f64,
    pub n: usize,
    pub mean_u: f64,
    pub basin_fraction: f64,
    pub kde_l1_to_mu: Option<f64>,
    /// Cumulative count of capped `alpha` evaluations.
    pub alpha_cap_hits: usize,
}

#[derive(Clone, Debug)]
pub struct SwarmRun {
    pub summaries: Vec<SwarmSummary>,
    pub final_state: SwarmState,
    pub dumps: Vec<(f64, Vec<f64>)>,
}

/// Fraction of particles within `radius` of the global argmin.
pub fn basin_fraction(state: &SwarmState, l: &Landscape, radius: f64) -> f64 {
    let target = l.argmin();
    let hits = (0..state.n())
        .filter(|&i| {
            let d2: f64 = state
                .particle(i)
                .iter()
                .zip(target)
                .map(|(&a, &b)| torus_delta(a, b, 1.0).powi(2))
                .sum();
            d2.sqrt() < radius
        })
        .count();
    hits as f64 / state.n() as f64
}

/// `int |rho_{N,h} - rho|` with `rho` given at the nodes of `grid` (`d = 1`).
pub fn kde_l1(state: &SwarmState, kernel: &Kernel, grid: CircleGrid, rho: &[f64]) -> f64 {
    let kde = kde_many(state, kernel, &grid.points());
    let diff: Vec<f64> = kde.iter().zip(rho).map(|(a, b)| (a - b).abs()).collect();
    mean(&diff)
}

fn summarize(
    state: &SwarmState,
    spec: &PotentialSpec,
    l: &Landscape,
    kernel: &Kernel,
    beta: f64,
    options: &RunOptions,
    cap_hits: usize,
) -> Result<SwarmSummary> {
    let us: Vec<f64> = (0..state.n()).map(|i| l.u(state.particle(i))).collect();
    let kde_l1_to_mu = match options.mu_grid_n {
        Some(n) if state.dim == 1 => {
            let mu = solve_stationary(spec, l, beta, n, 1e-14)?;
            Some(kde_l1(state, kernel, mu.grid(), mu.values()))
        }
        _ => None,
    };
    Ok(SwarmSummary {
        t: state.t,
        beta,
        h: state.h,
        n: state.n(),
        mean_u: mean(&us),
        basin_fraction: basin_fraction(state, l, options.r_basin),
        kde_l1_to_mu,
        alpha_cap_hits: cap_hits,
    })
}

/// Runs `ceil((t_end - t) / dt)` steps with `beta = schedule.beta_at(t)` at the start of each step.
pub fn run_swarm(
    init: &SwarmState,
    spec: &PotentialSpec,
    l: &Landscape,
    kernel: &Kernel,
    schedule: &Schedule,
    t_end: f64,
    dt: f64,
    options: &RunOptions,
) -> Result<SwarmRun> {
    check_torus(init, l, kernel)?;
    if !(t_end > init.t) {
        return Err(Error::invalid("t_end", "must exceed the start time"));
    }
    if options.record_every == 0 {
        return Err(Error::invalid("record_every", "must be positive"));
    }
    let steps = ((t_end - init.t) / dt - 1e-9).ceil() as u64;
    let mut state = init.clone();
    let mut cap_hits = 0;
    let mut summaries = vec![summarize(
        &state,
        spec,
        l,
        kernel,
        schedule.beta_at(state.t),
        options,
        0,
    )?];
    let mut dumps = Vec::new();
    for k in 1..=steps {
        let h = options.bandwidth.h_at(state.h, state.t);
        state.set_h(h)?;
        let (next, stats) = em_step(&state, spec, l, kernel, schedule.beta_at(state.t), dt, &options.step)?;
        cap_hits += stats.alpha_cap_hits;
        state = next;
        // Recompute the clock so that long runs do not accumulate rounding.
        state.t = init.t + k as f64 * dt;
        if options.dump_steps.contains(&k) {
            dumps.push((state.t, state.positions.clone()));
        }
        if k % options.record_every == 0 || k == steps {
            summaries.push(summarize(
                &state,
                spec,
                l,
                kernel,
                schedule.beta_at(state.t),
                options,
                cap_hits,
            )?);
        }
    }
    Ok(SwarmRun {
        summaries,
        final_state: state,
        dumps,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    fn land(name: &str, dim: usize) -> Landscape {
        Landscape::builtin(name, &BTreeMap::new(), dim, 1.0).unwrap()
    }

    #[test]
    fn kernel_has_unit_mass_and_compact_support() {
        let k = Kernel::bump(1).unwrap();
        // Trapezoid rule is spectrally accurate for this C-infinity bump.
        let n = 20_000;
        let step = 0.5 / n as f64;
        let total: f64 = (0..=n).map(|i| k.value(&[-0.25 + i as f64 * step])).sum::<f64>() * step;
        assert!((total - 1.0).abs() < 1e-10, "{total}");
        assert_eq!(k.value(&[0.25]), 0.0);
        assert_eq!(k.value(&[-0.3]), 0.0);
        let k2 = Kernel::bump(2).unwrap();
        assert!((k2.value(&[0.1, -0.05]) - k.value(&[0.1]) * k.value(&[-0.05])).abs() < 1e-15);
    }

    #[test]
    fn single_atom() {
        let k = Kernel::bump(1).unwrap();
        let s = SwarmState::new(vec![0.3, 0.9], 1, 0.1, 0).unwrap();
        let at = kde_at(&s, &k, &[0.3]);
        assert!((at - k.value(&[0.0]) / 0.1 / 2.0).abs() < 1e-14);
        assert_eq!(kde_at(&s, &k, &[0.6]), 0.0);
        // wraps across 0
        let w = SwarmState::new(vec![0.995, 0.5], 1, 0.1, 0).unwrap();
        assert!(kde_at(&w, &k, &[0.005]) > 0.0);
    }

    #[test]
    fn kde_integrates_to_one_and_is_translation_invariant() {
        let k = Kernel::bump(1).unwrap();
        let s = SwarmState::uniform(50, 1, 0.05, 9).unwrap();
        let grid = CircleGrid::new(8192, 1.0).unwrap();
        let vals = kde_many(&s, &k, &grid.points());
        assert!((mean(&vals) - 1.0).abs() < 1e-10);
        let shift = 0.3712;
        let moved: Vec<f64> = s.positions().iter().map(|p| p + shift).collect();
        let t = SwarmState::new(moved, 1, 0.05, 9).unwrap();
        for x in [0.01, 0.4, 0.77] {
            assert!((kde_at(&s, &k, &[x]) - kde_at(&t, &k, &[x + shift])).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_list_matches_direct_sum() {
        for dim in [1usize, 2] {
            let k = Kernel::bump(dim).unwrap();
            let s = SwarmState::uniform(3000, dim, 0.08, 4).unwrap();
            let q = SwarmState::uniform(200, dim, 0.08, 5).unwrap();
            let fast = kde_many(&s, &k, q.positions());
            for (i, f) in fast.iter().enumerate() {
                let direct = kde_at(&s, &k, q.particle(i));
                assert!((f - direct).abs() <= 1e-12 * direct.max(1.0), "{dim}: {f} vs {direct}");
            }
        }
    }

    #[test]
    fn uniform_sample_kde_is_flat() {
        let k = Kernel::bump(1).unwrap();
        let s = SwarmState::uniform(100_000, 1, 0.05, 21).unwrap();
        let grid = CircleGrid::new(1000, 1.0).unwrap();
        let sup = kde_many(&s, &k, &grid.points())
            .iter()
            .map(|v| (v - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(sup < 0.1, "{sup}");
    }

    #[test]
    fn drift_only_step() {
        let l = land("two_well", 1);
        let k = Kernel::bump(1).unwrap();
        let s = SwarmState::uniform(20, 1, 0.1, 1).unwrap();
        let opts = StepOptions {
            noise_factor: 0.0,
            ..Default::default()
        };
        let (next, _) = em_step(&s, &PotentialSpec::glued(0.25).unwrap(), &l, &k, 3.0, 1e-4, &opts).unwrap();
        for i in 0..20 {
            let x = s.particle(i)[0];
            assert_eq!(next.particle(i)[0], wrap(x - 3.0 * l.du1(x) * 1e-4, 1.0));
        }
    }

    #[test]
    fn brownian_increments_have_variance_dt() {
        let l = land("constant", 1);
        let k = Kernel::bump(1).unwrap();
        let opts = StepOptions {
            noise_factor: 1.0,
            ..Default::default()
        };
        let dt = 1e-4;
        let mut s = SwarmState::uniform(2000, 1, 0.1, 3).unwrap();
        let mut incs = Vec::new();
        for _ in 0..20 {
            let (next, _) = em_step(&s, &PotentialSpec::boltzmann(), &l, &k, 1.0, dt, &opts).unwrap();
            incs.extend(
                s.positions()
                    .iter()
                    .zip(next.positions())
                    .map(|(&a, &b)| torus_delta(b, a, 1.0)),
            );
            s = next;
        }
        let n = incs.len() as f64;
        let var = incs.iter().map(|d| d * d).sum::<f64>() / n;
        // Var of the sample second moment is 2 dt^2 / n.
        let band = 3.0 * (2.0f64).sqrt() * dt / n.sqrt();
        assert!((var - dt).abs() < band, "{var} vs {dt} +- {band}");
    }

    #[test]
    fn deterministic_and_order_independent() {
        let l = land("two_well", 1);
        let k = Kernel::bump(1).unwrap();
        let spec = PotentialSpec::glued(0.25).unwrap();
        let sched = Schedule::constant(2.0).unwrap();
        let init = SwarmState::uniform(600, 1, 0.05, 77).unwrap();
        let opts = RunOptions {
            record_every: 10,
            mu_grid_n: Some(256),
            ..Default::default()
        };
        let a = run_swarm(&init, &spec, &l, &k, &sched, 0.02, 1e-3, &opts).unwrap();
        let b = run_swarm(&init, &spec, &l, &k, &sched, 0.02, 1e-3, &opts).unwrap();
        assert_eq!(a.final_state, b.final_state);
        assert_eq!(a.summaries, b.summaries);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| run_swarm(&init, &spec, &l, &k, &sched, 0.02, 1e-3, &opts).unwrap());
        assert_eq!(a.final_state, c.final_state);
        let other = SwarmState::uniform(600, 1, 0.05, 78).unwrap();
        let d = run_swarm(&other, &spec, &l, &k, &sched, 0.02, 1e-3, &opts).unwrap();
        assert_ne!(a.final_state.positions(), d.final_state.positions());
    }

    #[test]
    fn alpha_cap_hits_are_counted() {
        let l = land("constant", 1);
        let k = Kernel::bump(1).unwrap();
        let s = SwarmState::new(vec![0.1, 0.6], 1, 0.05, 0).unwrap();
        // Each lone atom sees K(0) / (N h) ~ 33, where alpha ~ 16.6.
        let opts = StepOptions {
            alpha_cap: 100.0,
            ..Default::default()
        };
        let (_, stats) = em_step(&s, &PotentialSpec::glued(0.25).unwrap(), &l, &k, 1.0, 1e-4, &opts).unwrap();
        assert_eq!(stats.alpha_cap_hits, 0);
        let tiny = StepOptions {
            alpha_cap: 10.0,
            ..Default::default()
        };
        let (_, stats) = em_step(&s, &PotentialSpec::glued(0.25).unwrap(), &l, &k, 1.0, 1e-4, &tiny).unwrap();
        assert_eq!(stats.alpha_cap_hits, 2);
    }

    #[test]
    fn duplication_grows_the_swarm() {
        let l = land("constant", 1);
        let k = Kernel::bump(1).unwrap();
        let s = SwarmState::uniform(10, 1, 0.1, 0).unwrap();
        let opts = StepOptions {
            growth: GrowthPolicy::Duplicate {
                interval: 1,
                count: 4,
                max_n: 16,
            },
            ..Default::default()
        };
        let spec = PotentialSpec::glued(0.25).unwrap();
        let (s1, st1) = em_step(&s, &spec, &l, &k, 1.0, 1e-4, &opts).unwrap();
        let (s2, st2) = em_step(&s1, &spec, &l, &k, 1.0, 1e-4, &opts).unwrap();
        assert_eq!((st1.duplicated, st2.duplicated), (4, 2));
        assert_eq!((s1.n(), s2.n()), (14, 16));
    }

    #[test]
    fn constant_landscape_keeps_mean_u_and_spreads() {
        let l = Landscape::builtin(
            "constant",
            &[("u0".to_string(), 2.0)].into_iter().collect(),
            1,
            1.0,
        )
        .unwrap();
        let k = Kernel::bump(1).unwrap();
        let spec = PotentialSpec::glued(0.25).unwrap();
        let clumped: Vec<f64> = (0..400).map(|i| 0.45 + 0.1 * i as f64 / 400.0).collect();
        let init = SwarmState::new(clumped, 1, 0.05, 5).unwrap();
        let opts = RunOptions {
            record_every: 100,
            mu_grid_n: Some(512),
            ..Default::default()
        };
        let run = run_swarm(&init, &spec, &l, &k, &Schedule::constant(1.0).unwrap(), 0.5, 1e-3, &opts).unwrap();
        assert!(run.summaries.iter().all(|s| s.mean_u == 2.0));
        let l1: Vec<f64> = run.summaries.iter().map(|s| s.kde_l1_to_mu.unwrap()).collect();
        assert!(l1.last().unwrap() < &(0.3 * l1[0]), "{l1:?}");
    }

    #[test]
    fn rejects_bad_setup() {
        assert!(SwarmState::uniform(1, 1, 0.1, 0).is_err());
        assert!(SwarmState::uniform(10, 1, 0.6, 0).is_err());
        let s = SwarmState::uniform(10, 1, 0.1, 0).unwrap();
        let k = Kernel::bump(1).unwrap();
        let wide = Landscape::builtin("single_cos", &BTreeMap::new(), 1, 2.0).unwrap();
        let spec = PotentialSpec::glued(0.25).unwrap();
        assert!(em_step(&s, &spec, &wide, &k, 1.0, 1e-3, &StepOptions::default()).is_err());
        assert!(em_step(&s, &spec, &land("single_cos", 2), &k, 1.0, 1e-3, &StepOptions::default()).is_err());
    }
}
