//! Inverse-temperature schedules `beta(t)` and their convergence conditions.
//!
//! A schedule drives the flow to the minimizers of `U` when
//! `beta'(t) / c(beta(t)) -> 0` and `int_1^inf c(beta(t)) dt = inf`, where
//! `c(beta)` is the constant of the functional inequality. Both limits are
//! probed numerically by [`validate_schedule`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potentials::{pow, GluedPower};
use crate::quadrature::integrate;
use crate::stationary::wedge_bounds;

/// Clamping time below which power schedules are frozen.
pub const DEFAULT_T0: f64 = 1.0;

/// Default exponent `0.9 / (1 + gamma)`, inside the admissible interval `(0, 1/(1+gamma))`.
pub fn default_exponent(gamma: f64) -> f64 {
    0.9 / (1.0 + gamma)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant { beta: f64 },
    /// `beta(t) = k max(t, t0)^exponent`.
    Power { k: f64, exponent: f64, t0: f64 },
}

impl Schedule {
    pub fn constant(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid("beta", format!("must be positive, got {beta}")));
        }
        Ok(Schedule::Constant { beta })
    }

    pub fn power(k: f64, exponent: f64, t0: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::invalid("schedule.k", format!("must be positive, got {k}")));
        }
        if !(exponent > 0.0 && exponent.is_finite()) {
            return Err(Error::invalid(
                "schedule.alpha",
                format!("must be positive, got {exponent}"),
            ));
        }
        if !(t0 > 0.0 && t0.is_finite()) {
            return Err(Error::invalid("schedule.t0", format!("must be positive, got {t0}")));
        }
        Ok(Schedule::Power { k, exponent, t0 })
    }

    /// `beta(t) = k t^(1/gamma)`.
    pub fn inverse_gamma(k: f64, gamma: f64, t0: f64) -> Result<Self> {
        Self::power(k, 1.0 / gamma, t0)
    }

    pub fn beta_at(&self, t: f64) -> f64 {
        match *self {
            Schedule::Constant { beta } => beta,
            Schedule::Power { k, exponent, t0 } => k * pow(t.max(t0), exponent),
        }
    }

    pub fn beta_dot_at(&self, t: f64) -> f64 {
        match *self {
            Schedule::Constant { .. } => 0.0,
            Schedule::Power { k, exponent, t0 } => {
                if t < t0 {
                    0.0
                } else {
                    k * exponent * pow(t, exponent - 1.0)
                }
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Schedule::Constant { .. })
    }
}

/// The inequality constant as a function of `beta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum COfBeta {
    /// `c(beta) = kappa beta^(-gamma)`.
    Power { kappa: f64, gamma: f64 },
    /// The explicit chain `C1 -> C2 -> c` with `mu_min` replaced by its a-priori
    /// lower bound at the current `beta`.
    Explicit {
        glued: GluedPower,
        osc: f64,
        perimeter: f64,
    },
}

impl COfBeta {
    pub fn eval(&self, beta: f64) -> f64 {
        match *self {
            COfBeta::Power { kappa, gamma } => kappa * pow(beta, -gamma),
            COfBeta::Explicit {
                glued,
                osc,
                perimeter,
            } => {
                let (mu_min, _) = wedge_bounds(&glued, beta, osc);
                glued
                    .constants(mu_min.min(1.0))
                    .map(|k| k.c_of_beta(perimeter))
                    .unwrap_or(0.0)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    /// Both conditions hold trivially, but the flow only reaches `mu_beta`.
    PassNoCooling,
    Fail,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScheduleReport {
    /// Geometric sample times in `[1, horizon]`.
    pub times: Vec<f64>,
    /// `beta'(t) / c(beta(t))` at `times`.
    pub ratios: Vec<f64>,
    /// Doubling times `T` in `[1, horizon]`.
    pub doubling_times: Vec<f64>,
    /// `int_1^T c(beta(t)) dt` at `doubling_times`.
    pub partial_integrals: Vec<f64>,
    /// Log-log slope of the ratio over the last decade of `times`.
    pub ratio_tail_slope: f64,
    /// Log-log slope of `I(2T) - I(T)` over the last decade.
    pub increment_tail_slope: f64,
    pub condition_ratio: bool,
    pub condition_integral: bool,
    pub verdict: Verdict,
    pub note: Option<String>,
}

/// Slope tolerance used to decide that increments do not decay.
pub const INCREMENT_SLOPE_TOL: f64 = 0.02;

fn tail_slope(xs: &[f64], ys: &[f64], window: f64) -> f64 {
    let last = xs.len() - 1;
    let first = xs
        .iter()
        .position(|&x| x >= xs[last] / window)
        .unwrap_or(0)
        .min(last.saturating_sub(1));
    let pts: Vec<(f64, f64)> = (first..=last)
        .filter(|&i| ys[i] > 0.0)
        .map(|i| (xs[i].ln(), ys[i].ln()))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Samples both schedule conditions on `[1, horizon]`.
///
/// The ratio condition passes when the ratio is identically zero or its tail
/// slope is negative and the tail is nonincreasing. The integral condition
/// passes when the doubling increments `I(2T) - I(T)` do not decay (tail slope
/// above `-INCREMENT_SLOPE_TOL`).
pub fn validate_schedule(s: &Schedule, c: &COfBeta, horizon: f64) -> Result<ScheduleReport> {
    if !(horizon >= 16.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon", "must be finite and at least 16"));
    }
    let decades = horizon.log10();
    let per_decade = 8;
    let count = (decades * per_decade as f64).ceil() as usize;
    let times: Vec<f64> = (0..=count)
        .map(|j| (10f64.powf(decades * j as f64 / count as f64)).min(horizon))
        .collect();
    let ratios: Vec<f64> = times
        .iter()
        .map(|&t| s.beta_dot_at(t) / c.eval(s.beta_at(t)))
        .collect();

    let mut doubling_times = vec![1.0];
    let mut partial_integrals = vec![0.0];
    let mut increments = Vec::new();
    let mut total = 0.0;
    let mut t = 1.0;
    while 2.0 * t <= horizon {
        let inc = integrate(|u| c.eval(s.beta_at(u)), t, 2.0 * t, 1e-10 * t * c.eval(s.beta_at(t)))?
            .value;
        total += inc;
        increments.push(inc);
        t *= 2.0;
        doubling_times.push(t);
        partial_integrals.push(total);
    }

    let ratio_tail_slope = tail_slope(&times, &ratios, 10.0);
    let inc_times = &doubling_times[1..];
    let increment_tail_slope = tail_slope(inc_times, &increments, 10.0);

    let tail_start = times.iter().position(|&t| t >= horizon / 10.0).unwrap_or(0);
    let all_zero = ratios.iter().all(|&r| r == 0.0);
    let tail_nonincreasing = ratios[tail_start..]
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    let condition_ratio = all_zero || (ratio_tail_slope < 0.0 && tail_nonincreasing);
    let condition_integral = increment_tail_slope > -INCREMENT_SLOPE_TOL;
    let (verdict, note) = match (condition_ratio && condition_integral, s.is_constant()) {
        (true, true) => (
            Verdict::PassNoCooling,
            Some("no cooling: converges only to mu_beta, not to min U".to_string()),
        ),
        (true, false) => (Verdict::Pass, None),
        (false, _) => (Verdict::Fail, None),
    };
    Ok(ScheduleReport {
        times,
        ratios,
        doubling_times,
        partial_integrals,
        ratio_tail_slope,
        increment_tail_slope,
        condition_ratio,
        condition_integral,
        verdict,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GAMMA: f64 = 10.5;

    fn c_power() -> COfBeta {
        COfBeta::Power {
            kappa: 1.0,
            gamma: GAMMA,
        }
    }

    #[test]
    fn power_value() {
        let s = Schedule::inverse_gamma(1.0, GAMMA, 1.0).unwrap();
        let b = s.beta_at(1024.0);
        assert!((b - 1.935_063_6).abs() < 1e-7, "{b}");
        assert!((b.ln() - 1024f64.ln() / GAMMA).abs() < 1e-14);
        assert_eq!(s.beta_at(0.0), 1.0);
        assert_eq!(s.beta_dot_at(0.5), 0.0);
    }

    #[test]
    fn constant_schedule() {
        let s = Schedule::constant(7.0).unwrap();
        for t in [0.0, 1.0, 1e6] {
            assert_eq!(s.beta_at(t), 7.0);
            assert_eq!(s.beta_dot_at(t), 0.0);
        }
        let r = validate_schedule(&s, &c_power(), 1e6).unwrap();
        assert_eq!(r.verdict, Verdict::PassNoCooling);
        assert!(r.note.is_some());
    }

    #[test]
    fn derivative_matches_differences() {
        let s = Schedule::power(2.0, 0.3, 1.0).unwrap();
        for t in [1.5, 10.0, 1e3] {
            let h = 1e-4 * t;
            let fd = (s.beta_at(t + h) - s.beta_at(t - h)) / (2.0 * h);
            assert!((fd - s.beta_dot_at(t)).abs() < 1e-8 * s.beta_dot_at(t).max(1.0));
        }
    }

    #[test]
    fn admissible_exponent_passes() {
        // alpha = 1/gamma' with gamma' > gamma + 1
        let s = Schedule::power(1.0, 1.0 / (GAMMA + 1.5), 1.0).unwrap();
        let r = validate_schedule(&s, &c_power(), 1e9).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        // analytic ratio exponent alpha (1 + gamma) - 1
        let expected = (1.0 + GAMMA) / (GAMMA + 1.5) - 1.0;
        assert!((r.ratio_tail_slope - expected).abs() < 1e-6);
        let d = validate_schedule(
            &Schedule::power(1.0, default_exponent(GAMMA), 1.0).unwrap(),
            &c_power(),
            1e9,
        )
        .unwrap();
        assert_eq!(d.verdict, Verdict::Pass);
    }

    #[test]
    fn too_fast_schedule_fails() {
        let s = Schedule::power(1.0, 2.0 / (1.0 + GAMMA), 1.0).unwrap();
        let r = validate_schedule(&s, &c_power(), 1e9).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(!r.condition_ratio);
        assert!((r.ratio_tail_slope - 1.0).abs() < 1e-6);
    }

    #[test]
    fn inverse_gamma_schedule_violates_ratio_condition() {
        // r(t) is proportional to t^(1/gamma): the integral diverges but the ratio grows.
        let s = Schedule::inverse_gamma(1.0, GAMMA, 1.0).unwrap();
        let r = validate_schedule(&s, &c_power(), 1e9).unwrap();
        assert!(r.condition_integral);
        assert!(!r.condition_ratio);
        assert!((r.ratio_tail_slope - 1.0 / GAMMA).abs() < 1e-6);
        // c(beta(t)) = 1/t here, so I(T) = ln T exactly.
        for (&t, &i) in r.doubling_times.iter().zip(&r.partial_integrals) {
            assert!((i - t.ln()).abs() < 1e-8 * t.ln().max(1.0));
        }
    }

    #[test]
    fn partial_integrals_match_closed_form() {
        let a = default_exponent(GAMMA);
        let s = Schedule::power(0.5, a, 1.0).unwrap();
        let r = validate_schedule(&s, &c_power(), 1e6).unwrap();
        // int_1^T 0.5^-gamma t^(-a gamma) dt
        let p = 1.0 - a * GAMMA;
        for (&t, &i) in r.doubling_times.iter().zip(&r.partial_integrals) {
            let exact = 0.5f64.powf(-GAMMA) * (t.powf(p) - 1.0) / p;
            assert!((i - exact).abs() < 1e-8 * exact.max(1.0), "{t}: {i} vs {exact}");
        }
        assert!(r.increment_tail_slope > 0.0);
    }

    #[test]
    fn explicit_chain_follows_power_law() {
        let glued = GluedPower::new(0.25).unwrap();
        let c = COfBeta::Explicit {
            glued,
            osc: 2.0,
            perimeter: 1.0,
        };
        let ratio = c.eval(1e4) / c.eval(1e3);
        let slope = ratio.log10();
        assert!((slope + GAMMA).abs() < 0.1 * GAMMA, "{slope}");
        let s = Schedule::power(1.0, default_exponent(GAMMA), 1.0).unwrap();
        let r = validate_schedule(&s, &c, 1e9).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Schedule::power(0.0, 0.1, 1.0).is_err());
        assert!(Schedule::power(1.0, -0.1, 1.0).is_err());
        assert!(Schedule::power(1.0, 0.1, 0.0).is_err());
        assert!(Schedule::constant(f64::NAN).is_err());
        let s = Schedule::constant(1.0).unwrap();
        assert!(validate_schedule(&s, &c_power(), 2.0).is_err());
    }
}
