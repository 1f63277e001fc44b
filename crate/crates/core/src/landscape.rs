//! Periodic objectives `U >= 0` on flat tori, with analytic gradients.
//!
//! Every builtin is given in closed form so the grid solvers and the
//! mesh-free particle simulator sample exactly the same function. On
//! `d > 1` axes the well-type landscapes are separable sums of their 1-D
//! profile.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of lattice points used to cache `osc(U)`.
pub const OSC_GRID_POINTS: usize = 1 << 16;

/// Reduces `x` into `[0, period)`.
#[inline]
pub fn wrap(x: f64, period: f64) -> f64 {
    let r = x.rem_euclid(period);
    if r >= period {
        0.0
    } else {
        r
    }
}

/// Minimal signed representative of `a - b` on a circle of the given period.
#[inline]
pub fn torus_delta(a: f64, b: f64, period: f64) -> f64 {
    let d = a - b;
    d - period * (d / period).round()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TorusPoint {
    coords: Vec<f64>,
}

impl TorusPoint {
    pub fn new(coords: &[f64], period: f64) -> Self {
        Self {
            coords: coords.iter().map(|&c| wrap(c, period)).collect(),
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Euclidean length of the minimal displacement to `other`.
    pub fn distance(&self, other: &TorusPoint, period: f64) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(&a, &b)| torus_delta(a, b, period).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// The builtin landscape families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum LandscapeKind {
    /// `U = u0`.
    Constant { u0: f64 },
    /// `U = a (1 - cos(2 pi x / L))` per axis.
    SingleCos { a: f64 },
    /// `U = a (1 - cos(2 pi x / L)) + b (1 - cos(4 pi x / L))` per axis.
    /// Global minimum 0 at `x = 0`, local minimum `2a` at `x = L/2` (needs `b > a/4`).
    TwoWell { a: f64, b: f64 },
    /// Narrow global well at 0, a wide deceptive well at `L/2` and a
    /// medium well near `0.78 L`, built from von Mises bumps.
    ThreeWellAsym { scale: f64 },
    /// Seeded trigonometric polynomial of total order `order`, shifted to be `>= 0`.
    RandomTrig { seed: u64, order: u32 },
}

impl LandscapeKind {
    pub fn name(&self) -> &'static str {
        match self {
            LandscapeKind::Constant { .. } => "constant",
            LandscapeKind::SingleCos { .. } => "single_cos",
            LandscapeKind::TwoWell { .. } => "two_well",
            LandscapeKind::ThreeWellAsym { .. } => "three_well_asym",
            LandscapeKind::RandomTrig { .. } => "random_trig",
        }
    }
}

// (depth, concentration, center as a fraction of the period)
const THREE_WELLS: [(f64, f64, f64); 3] = [(1.6, 60.0, 0.0), (1.2, 2.0, 0.5), (0.9, 20.0, 0.78)];

#[derive(Clone, Debug, PartialEq, Serialize)]
struct TrigTerm {
    wave: Vec<i32>,
    amplitude: f64,
    phase: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Landscape {
    kind: LandscapeKind,
    dim: usize,
    period: f64,
    /// Added to the raw profile (per axis for separable kinds) so that `min U = 0`.
    offset: f64,
    terms: Vec<TrigTerm>,
    argmin: Vec<f64>,
    osc: f64,
}

impl Landscape {
    /// Builds a landscape from a name and named numeric parameters, rejecting unknown parameters.
    pub fn builtin(
        name: &str,
        params: &BTreeMap<String, f64>,
        dim: usize,
        period: f64,
    ) -> Result<Self> {
        let allowed: &[&str] = match name {
            "constant" => &["u0"],
            "single_cos" => &["a"],
            "two_well" => &["a", "b"],
            "three_well_asym" => &["scale"],
            "random_trig" => &["seed", "order"],
            other => return Err(Error::UnknownLandscape(other.to_string())),
        };
        if let Some(bad) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::invalid(
                "landscape",
                format!("unknown parameter `{bad}` for `{name}`"),
            ));
        }
        let get = |k: &str, default: f64| params.get(k).copied().unwrap_or(default);
        let kind = match name {
            "constant" => LandscapeKind::Constant { u0: get("u0", 0.0) },
            "single_cos" => LandscapeKind::SingleCos { a: get("a", 1.0) },
            "two_well" => LandscapeKind::TwoWell {
                a: get("a", 1.0),
                b: get("b", 0.55),
            },
            "three_well_asym" => LandscapeKind::ThreeWellAsym {
                scale: get("scale", 1.0),
            },
            _ => {
                let seed = get("seed", 0.0);
                let order = get("order", 3.0);
                if seed < 0.0 || seed.fract() != 0.0 || order < 1.0 || order.fract() != 0.0 {
                    return Err(Error::invalid(
                        "landscape",
                        "random_trig needs integer seed >= 0 and order >= 1",
                    ));
                }
                LandscapeKind::RandomTrig {
                    seed: seed as u64,
                    order: order as u32,
                }
            }
        };
        Self::new(kind, dim, period)
    }

    pub fn new(kind: LandscapeKind, dim: usize, period: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be positive"));
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::invalid("period", format!("must be positive, got {period}")));
        }
        match kind {
            LandscapeKind::Constant { u0 } if !(u0 >= 0.0 && u0.is_finite()) => {
                return Err(Error::invalid("u0", "must be finite and >= 0"));
            }
            LandscapeKind::SingleCos { a } if !(a > 0.0) => {
                return Err(Error::invalid("a", "must be positive"));
            }
            LandscapeKind::TwoWell { a, b } if !(a > 0.0 && b > 0.25 * a) => {
                return Err(Error::invalid("two_well", "need a > 0 and b > a/4 for a second well"));
            }
            LandscapeKind::ThreeWellAsym { scale } if !(scale > 0.0) => {
                return Err(Error::invalid("scale", "must be positive"));
            }
            _ => {}
        }
        let terms = match &kind {
            LandscapeKind::RandomTrig { seed, order } => random_terms(*seed, *order, dim),
            _ => Vec::new(),
        };
        let mut land = Self {
            kind,
            dim,
            period,
            offset: 0.0,
            terms,
            argmin: vec![0.0; dim],
            osc: 0.0,
        };
        land.locate_minimum();
        let per_axis = lattice_side(OSC_GRID_POINTS, dim);
        land.osc = land.oscillation(per_axis);
        Ok(land)
    }

    pub fn kind(&self) -> &LandscapeKind {
        &self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// `osc(U)` over the default dense lattice (a lower bound of the true oscillation).
    pub fn osc(&self) -> f64 {
        self.osc
    }

    /// Location of the global minimum.
    pub fn argmin(&self) -> &[f64] {
        &self.argmin
    }

    /// `min U`; zero for every builtin except `constant`.
    pub fn min_value(&self) -> f64 {
        self.u(&self.argmin)
    }

    fn omega(&self) -> f64 {
        TAU / self.period
    }

    /// Raw 1-D profile and its derivative for the separable kinds.
    #[inline]
    fn profile(&self, x: f64) -> (f64, f64) {
        let k = self.omega();
        let w = k * x;
        match self.kind {
            LandscapeKind::SingleCos { a } => (a * (1.0 - w.cos()), a * k * w.sin()),
            LandscapeKind::TwoWell { a, b } => (
                a * (1.0 - w.cos()) + b * (1.0 - (2.0 * w).cos()),
                k * (a * w.sin() + 2.0 * b * (2.0 * w).sin()),
            ),
            LandscapeKind::ThreeWellAsym { scale } => {
                let mut u = self.offset;
                let mut du = 0.0;
                for (depth, conc, center) in THREE_WELLS {
                    let phase = w - TAU * center;
                    let bump = depth * (conc * (phase.cos() - 1.0)).exp();
                    u -= bump;
                    du += bump * conc * phase.sin();
                }
                (scale * u, scale * k * du)
            }
            _ => unreachable!("profile only exists for separable kinds"),
        }
    }

    /// `U(x)` for a point with `dim` coordinates.
    pub fn u(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        match &self.kind {
            LandscapeKind::Constant { u0 } => *u0,
            LandscapeKind::RandomTrig { .. } => {
                let k = self.omega();
                let v = self.offset
                    + self
                        .terms
                        .iter()
                        .map(|t| t.amplitude * (k * dot(&t.wave, x) + t.phase).cos())
                        .sum::<f64>();
                v.max(0.0)
            }
            LandscapeKind::ThreeWellAsym { .. } => {
                x.iter().map(|&xi| self.profile(xi).0.max(0.0)).sum()
            }
            _ => x.iter().map(|&xi| self.profile(xi).0).sum(),
        }
    }

    /// Writes `grad U(x)` into `out`.
    pub fn grad(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        match &self.kind {
            LandscapeKind::Constant { .. } => out.iter_mut().for_each(|g| *g = 0.0),
            LandscapeKind::RandomTrig { .. } => {
                let k = self.omega();
                out.iter_mut().for_each(|g| *g = 0.0);
                for t in &self.terms {
                    let s = -t.amplitude * k * (k * dot(&t.wave, x) + t.phase).sin();
                    for (g, &wi) in out.iter_mut().zip(&t.wave) {
                        *g += s * wi as f64;
                    }
                }
            }
            _ => {
                for (g, &xi) in out.iter_mut().zip(x) {
                    *g = self.profile(xi).1;
                }
            }
        }
    }

    /// `U` on a circle (`dim == 1`).
    #[inline]
    pub fn u1(&self, x: f64) -> f64 {
        self.u(std::slice::from_ref(&x))
    }

    /// `U'` on a circle (`dim == 1`).
    #[inline]
    pub fn du1(&self, x: f64) -> f64 {
        let mut g = [0.0];
        self.grad(std::slice::from_ref(&x), &mut g);
        g[0]
    }

    /// `max U - min U` over the uniform `grid_n^dim` lattice of nodes `i L / grid_n`.
    pub fn oscillation(&self, grid_n: usize) -> f64 {
        let grid_n = grid_n.max(2);
        let h = self.period / grid_n as f64;
        let total = grid_n.pow(self.dim as u32);
        let mut point = vec![0.0; self.dim];
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for flat in 0..total {
            let mut rest = flat;
            for c in point.iter_mut() {
                *c = (rest % grid_n) as f64 * h;
                rest /= grid_n;
            }
            let v = self.u(&point);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        hi - lo
    }

    /// Values of `U` at the nodes of a circle grid.
    pub fn sample_circle(&self, n: usize) -> Vec<f64> {
        let h = self.period / n as f64;
        (0..n).map(|i| self.u1(i as f64 * h)).collect()
    }

    fn locate_minimum(&mut self) {
        match self.kind {
            LandscapeKind::Constant { .. }
            | LandscapeKind::SingleCos { .. }
            | LandscapeKind::TwoWell { .. } => {
                self.offset = 0.0;
                self.argmin = vec![0.0; self.dim];
            }
            LandscapeKind::ThreeWellAsym { scale } => {
                // Minimize the raw (unscaled, unshifted) profile on one axis.
                self.offset = 0.0;
                let raw = |x: f64| self.profile(x).0 / scale;
                let (x_min, v_min) = minimize_1d(raw, self.period);
                self.offset = -v_min;
                self.argmin = vec![x_min; self.dim];
            }
            LandscapeKind::RandomTrig { .. } => {
                self.offset = 0.0;
                let (x_min, v_min) = self.minimize_trig();
                self.offset = -v_min;
                self.argmin = x_min;
            }
        }
    }

    fn raw_trig(&self, x: &[f64]) -> f64 {
        let k = self.omega();
        self.offset
            + self
                .terms
                .iter()
                .map(|t| t.amplitude * (k * dot(&t.wave, x) + t.phase).cos())
                .sum::<f64>()
    }

    fn minimize_trig(&self) -> (Vec<f64>, f64) {
        if self.dim == 1 {
            let (x, v) = minimize_1d(|x| self.raw_trig(&[x]), self.period);
            return (vec![x], v);
        }
        let side = lattice_side(OSC_GRID_POINTS, self.dim);
        let h = self.period / side as f64;
        let mut best = (vec![0.0; self.dim], f64::INFINITY);
        let mut point = vec![0.0; self.dim];
        for flat in 0..side.pow(self.dim as u32) {
            let mut rest = flat;
            for c in point.iter_mut() {
                *c = (rest % side) as f64 * h;
                rest /= side;
            }
            let v = self.raw_trig(&point);
            if v < best.1 {
                best = (point.clone(), v);
            }
        }
        // Polish with coordinate-wise golden sections around the best node.
        let (mut x, mut v) = best;
        for _ in 0..20 {
            for axis in 0..self.dim {
                let center = x[axis];
                let mut probe = x.clone();
                let (t, val) = golden(
                    |s| {
                        probe[axis] = s;
                        self.raw_trig(&probe)
                    },
                    center - h,
                    center + h,
                );
                if val < v {
                    x[axis] = wrap(t, self.period);
                    v = val;
                }
            }
        }
        (x, v)
    }
}

fn dot(wave: &[i32], x: &[f64]) -> f64 {
    wave.iter().zip(x).map(|(&w, &xi)| w as f64 * xi).sum()
}

fn lattice_side(points: usize, dim: usize) -> usize {
    ((points as f64).powf(1.0 / dim as f64).floor() as usize).max(2)
}

fn random_terms(seed: u64, order: u32, dim: usize) -> Vec<TrigTerm> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = order as i32;
    let side = (2 * order + 1) as usize;
    let mut terms = Vec::new();
    for flat in 0..side.pow(dim as u32) {
        let mut rest = flat;
        let wave: Vec<i32> = (0..dim)
            .map(|_| {
                let w = (rest % side) as i32 - order;
                rest /= side;
                w
            })
            .collect();
        // One representative per +/- pair, nonzero, within total order.
        let first_nonzero = wave.iter().find(|&&w| w != 0);
        let l1: i32 = wave.iter().map(|w| w.abs()).sum();
        if first_nonzero.is_none_or(|&w| w < 0) || l1 > order {
            continue;
        }
        let amplitude = rng.random_range(-1.0..1.0) / l1 as f64;
        let phase = rng.random_range(0.0..TAU);
        terms.push(TrigTerm {
            wave,
            amplitude,
            phase,
        });
    }
    terms
}

fn golden(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-15 * (1.0 + a.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Grid scan of a periodic function followed by golden-section polishing.
fn minimize_1d(f: impl Fn(f64) -> f64, period: f64) -> (f64, f64) {
    let n = OSC_GRID_POINTS;
    let h = period / n as f64;
    let (i_best, _) = (0..n)
        .map(|i| (i, f(i as f64 * h)))
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    let center = i_best as f64 * h;
    let (x, v) = golden(&f, center - h, center + h);
    (wrap(x, period), v)
}
