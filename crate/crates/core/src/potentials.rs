//! Convex potentials `phi` and the scalar functions derived from them.
//!
//! The main object is the glued potential
//!
//! ```text
//! phi_{m,2}(r) = (r^m - 1 - m (r - 1)) / (m (m - 1))   for 0 <= r <= 1
//!              = (r - 1)^2 / 2                          for r > 1
//! ```
//!
//! with `0 < m < 1/2`. It is C^2 on `(0, inf)`, convex, and `phi'` is concave
//! with `phi'(0+) = -inf`, so `phi'` maps `(0, inf)` onto the whole real line
//! and its inverse `psi` is defined everywhere.
//!
//! The Boltzmann entropy `phi_1(r) = r ln r - (r - 1)` is available as a
//! reference mode only; it turns the swarm into classical Langevin dynamics
//! (`alpha == 1`). The circle functional-inequality machinery
//! ([`GluedPower::theta`], [`GluedPower::constants`], `Omega`, `omega`) exists
//! for the glued potential alone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

/// `x^e` for `x >= 0`, evaluated as `exp(e ln x)`.
///
/// Every fractional power in the crate goes through here so results do not
/// depend on which call site computed them.
#[inline]
pub fn pow(x: f64, e: f64) -> f64 {
    if x == 0.0 {
        return if e > 0.0 {
            0.0
        } else if e == 0.0 {
            1.0
        } else {
            f64::INFINITY
        };
    }
    (e * x.ln()).exp()
}

/// Parameters of `phi_{m,2}` with the exponents that recur in the estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GluedPower {
    m: f64,
    /// `(1 - 2m) / (2 (1 - m))`, the large-argument exponent of `Omega`.
    eta: f64,
    /// `3 (2 - m) / (1 - 2m)`, the decay exponent of `c(beta)`.
    gamma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    GluedPower(GluedPower),
    Boltzmann,
}

impl GluedPower {
    pub fn new(m: f64) -> Result<Self> {
        if !(m > 0.0 && m < 0.5) {
            return Err(Error::invalid("m", format!("must lie in (0, 1/2), got {m}")));
        }
        Ok(Self {
            m,
            eta: (1.0 - 2.0 * m) / (2.0 * (1.0 - m)),
            gamma: 3.0 * (2.0 - m) / (1.0 - 2.0 * m),
        })
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Antiderivative of `sqrt(psi)` vanishing at 0, in closed form on both branches.
    fn sqrt_psi_primitive(&self, u: f64) -> f64 {
        let m = self.m;
        if u <= 0.0 {
            // d/du (1 + (m-1)u)^eta / ((m-1) eta) = (1 + (m-1)u)^(1/(2(m-1)))
            (pow(1.0 + (m - 1.0) * u, self.eta) - 1.0) / ((m - 1.0) * self.eta)
        } else {
            2.0 / 3.0 * (pow(1.0 + u, 1.5) - 1.0)
        }
    }

    /// `theta(r) = int_0^r sqrt(psi(s + phi'(mu_min))) ds`.
    pub fn theta(&self, r: f64, mu_min: f64) -> Result<f64> {
        if !(mu_min > 0.0) {
            return Err(Error::Domain {
                function: "theta",
                value: mu_min,
            });
        }
        let shift = self.phi_prime(mu_min);
        Ok(self.sqrt_psi_primitive(r + shift) - self.sqrt_psi_primitive(shift))
    }

    /// `theta` by adaptive quadrature (absolute tolerance 1e-10), with the
    /// kink of `psi` at `s = -phi'(mu_min)` placed on a panel boundary.
    pub fn theta_quadrature(&self, r: f64, mu_min: f64) -> Result<f64> {
        if !(mu_min > 0.0) {
            return Err(Error::Domain {
                function: "theta",
                value: mu_min,
            });
        }
        let shift = self.phi_prime(mu_min);
        let kink = -shift;
        let (lo, hi) = if r < 0.0 { (r, 0.0) } else { (0.0, r) };
        let breaks: Vec<f64> = if lo < kink && kink < hi {
            vec![0.0, kink, r]
        } else {
            vec![0.0, r]
        };
        let q = quadrature::integrate_with_breaks(
            |s| self.psi(s + shift).sqrt(),
            &breaks,
            1e-10,
        )?;
        Ok(q.value)
    }

    pub fn phi(&self, r: f64) -> f64 {
        let m = self.m;
        if r <= 1.0 {
            (pow(r, m) - 1.0 - m * (r - 1.0)) / (m * (m - 1.0))
        } else {
            0.5 * (r - 1.0) * (r - 1.0)
        }
    }

    pub fn phi_prime(&self, r: f64) -> f64 {
        let m = self.m;
        if r <= 1.0 {
            (pow(r, m - 1.0) - 1.0) / (m - 1.0)
        } else {
            r - 1.0
        }
    }

    pub fn phi_second(&self, r: f64) -> f64 {
        if r <= 1.0 {
            pow(r, self.m - 2.0)
        } else {
            1.0
        }
    }

    pub fn psi(&self, tau: f64) -> f64 {
        let m = self.m;
        if tau <= 0.0 {
            pow(1.0 + (m - 1.0) * tau, 1.0 / (m - 1.0))
        } else {
            1.0 + tau
        }
    }

    pub fn psi_prime(&self, tau: f64) -> f64 {
        let m = self.m;
        if tau < 0.0 {
            pow(1.0 + (m - 1.0) * tau, (2.0 - m) / (m - 1.0))
        } else {
            1.0
        }
    }

    /// `P(r) = int_0^r s phi''(s) ds`, so that `alpha(r) = P(r) / r`.
    pub fn pressure(&self, r: f64) -> f64 {
        let m = self.m;
        if r <= 1.0 {
            pow(r, m) / m
        } else {
            1.0 / m + 0.5 * (r * r - 1.0)
        }
    }

    /// The inequality constants at a given minimum of the stationary density.
    pub fn constants(&self, mu_min: f64) -> Result<InequalityConstants> {
        if !(mu_min > 0.0 && mu_min <= 1.0) {
            return Err(Error::invalid(
                "mu_min",
                format!("must lie in (0, 1], got {mu_min}"),
            ));
        }
        let m = self.m;
        let dphi = self.phi_prime(mu_min);
        let c0 = 1.0 - (1.0 - m) * dphi;
        let power_term = pow(
            1.0 + (1.0 - m) * (1.0 - dphi),
            (2.0 - m) / (2.0 * (1.0 - m)),
        );
        let c1 = 1.5 * power_term.max(self.phi_second(mu_min).sqrt());
        let c2 = pow(c1, 2.0 / self.eta);
        Ok(InequalityConstants {
            mu_min,
            c0,
            c1,
            c2,
            c_factor: pow(c2, -1.5),
        })
    }

    /// `Omega(r) = r^(3/2)` on `[0, 1)`, `r^eta` on `[1, inf)`.
    pub fn omega_big(&self, r: f64) -> f64 {
        let r = r.max(0.0);
        if r < 1.0 {
            pow(r, 1.5)
        } else {
            pow(r, self.eta)
        }
    }

    /// `omega(r) = (8/5) r^(5/8)` on `[0, 1)`,
    /// `4(1-m)/(3-2m) r^((3-2m)/(4(1-m)))` on `[1, inf)`.
    pub fn omega_small(&self, r: f64) -> f64 {
        let m = self.m;
        let r = r.max(0.0);
        if r < 1.0 {
            1.6 * pow(r, 0.625)
        } else {
            4.0 * (1.0 - m) / (3.0 - 2.0 * m) * pow(r, (3.0 - 2.0 * m) / (4.0 * (1.0 - m)))
        }
    }
}

/// Constants of the circle functional inequality at a fixed `mu_min`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InequalityConstants {
    pub mu_min: f64,
    /// `1 - (1 - m) phi'(mu_min)`
    pub c0: f64,
    /// Inverse of the lower-bound constant of `theta`; always `> 1`.
    pub c1: f64,
    /// `c1^(2/eta)`
    pub c2: f64,
    /// `c2^(-3/2)`
    pub c_factor: f64,
}

impl InequalityConstants {
    /// `c(beta) = (2 / L) c2^(-3/2)` for a circle of perimeter `L`.
    pub fn c_of_beta(&self, perimeter: f64) -> f64 {
        2.0 / perimeter * self.c_factor
    }

    /// The raw constant of the `theta` lower bound before it is folded into `c1`:
    /// `(2/3) min((c0 + 1 - m)^-(3/2 - eta), sqrt(psi'(phi'(mu_min))))`.
    pub fn theta_lower_factor(&self, glued: &GluedPower) -> f64 {
        let m = glued.m();
        let a = pow(self.c0 + 1.0 - m, -(1.5 - glued.eta()));
        let b = glued.psi_prime(glued.phi_prime(self.mu_min)).sqrt();
        2.0 / 3.0 * a.min(b)
    }
}

impl PotentialSpec {
    pub fn glued(m: f64) -> Result<Self> {
        GluedPower::new(m).map(PotentialSpec::GluedPower)
    }

    pub fn boltzmann() -> Self {
        PotentialSpec::Boltzmann
    }

    pub fn glued_params(&self) -> Result<&GluedPower> {
        match self {
            PotentialSpec::GluedPower(g) => Ok(g),
            PotentialSpec::Boltzmann => Err(Error::Unsupported("functional-inequality machinery")),
        }
    }

    pub fn m(&self) -> Option<f64> {
        match self {
            PotentialSpec::GluedPower(g) => Some(g.m),
            PotentialSpec::Boltzmann => None,
        }
    }

    pub fn phi(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(Error::Domain {
                function: "phi",
                value: r,
            });
        }
        Ok(self.phi_unchecked(r))
    }

    pub fn phi_prime(&self, r: f64) -> Result<f64> {
        check_positive("phi'", r)?;
        Ok(self.phi_prime_unchecked(r))
    }

    pub fn phi_second(&self, r: f64) -> Result<f64> {
        check_positive("phi''", r)?;
        Ok(self.phi_second_unchecked(r))
    }

    pub fn alpha(&self, r: f64) -> Result<f64> {
        check_positive("alpha", r)?;
        Ok(self.alpha_unchecked(r))
    }

    #[inline]
    pub fn phi_unchecked(&self, r: f64) -> f64 {
        match self {
            PotentialSpec::GluedPower(g) => g.phi(r),
            PotentialSpec::Boltzmann => {
                if r == 0.0 {
                    1.0
                } else {
                    r * r.ln() - (r - 1.0)
                }
            }
        }
    }

    #[inline]
    pub fn phi_prime_unchecked(&self, r: f64) -> f64 {
        match self {
            PotentialSpec::GluedPower(g) => g.phi_prime(r),
            PotentialSpec::Boltzmann => r.ln(),
        }
    }

    #[inline]
    pub fn phi_second_unchecked(&self, r: f64) -> f64 {
        match self {
            PotentialSpec::GluedPower(g) => g.phi_second(r),
            PotentialSpec::Boltzmann => 1.0 / r,
        }
    }

    /// Inverse of `phi'`, defined on the whole real line.
    #[inline]
    pub fn psi(&self, tau: f64) -> f64 {
        match self {
            PotentialSpec::GluedPower(g) => g.psi(tau),
            PotentialSpec::Boltzmann => tau.exp(),
        }
    }

    #[inline]
    pub fn psi_prime(&self, tau: f64) -> f64 {
        match self {
            PotentialSpec::GluedPower(g) => g.psi_prime(tau),
            PotentialSpec::Boltzmann => tau.exp(),
        }
    }

    /// `r alpha(r) = int_0^r s phi''(s) ds`; the nonlinear diffusion is `Laplacian(P(rho))`.
    #[inline]
    pub fn pressure(&self, r: f64) -> f64 {
        match self {
            PotentialSpec::GluedPower(g) => g.pressure(r),
            PotentialSpec::Boltzmann => r,
        }
    }

    /// Diffusion coefficient of the particle generator, `alpha(r) = P(r) / r`.
    #[inline]
    pub fn alpha_unchecked(&self, r: f64) -> f64 {
        match self {
            PotentialSpec::GluedPower(g) => {
                if r <= 1.0 {
                    pow(r, g.m - 1.0) / g.m
                } else {
                    g.pressure(r) / r
                }
            }
            PotentialSpec::Boltzmann => 1.0,
        }
    }

    /// `alpha` from its defining integral `(1/r) int_0^r s phi''(s) ds`.
    pub fn alpha_quadrature(&self, r: f64) -> Result<f64> {
        check_positive("alpha", r)?;
        let breaks: Vec<f64> = if r > 1.0 { vec![0.0, 1.0, r] } else { vec![0.0, r] };
        let q = quadrature::integrate_with_breaks(
            |s| s * self.phi_second_unchecked(s),
            &breaks,
            1e-12 * r.max(1.0),
        )?;
        Ok(q.value / r)
    }
}

fn check_positive(function: &'static str, r: f64) -> Result<()> {
    if r > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain { function, value: r })
    }
}
