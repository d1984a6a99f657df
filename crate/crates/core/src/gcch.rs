//! Generalized CCH distribution and the edge-weight posterior built on it.
//!
//! The density on `x ∈ (u, u + v^{-1/α}]` is
//!
//! ```text
//! α (x-u)^{αp-1} (1 - v t)^{q-1} (θ + (1-θ) v t)^{-r} e^{-s t} / (B(p,q) H(p,q,r,s,v,θ)),   t = (x-u)^α
//! ```
//!
//! i.e. the law of `u + T^{1/α}` for `T ~ CCH(p, q, r, s, v, θ)`.

use statrs::function::beta::ln_beta;
use thiserror::Error;

use crate::quadrature::{integrate_with_breaks, QuadratureError, QuadratureOptions};
use crate::special::{ln_h_normalizer, SeriesControl, SpecialFunctionError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GcchError {
    #[error("invalid GCCH parameters: {0}")]
    InvalidParams(String),
    #[error("x = {x} outside the support [{lo}, {hi}]")]
    OutsideSupport { x: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Special(#[from] SpecialFunctionError),
    #[error("quadrature failed: {0}")]
    Quadrature(#[from] QuadratureError),
    #[error("edge kernel has no region of positive density")]
    NoPositiveRegion,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcchParams {
    pub alpha: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub s: f64,
    pub v: f64,
    pub theta: f64,
    pub u: f64,
}

impl GcchParams {
    pub fn validate(&self) -> Result<(), GcchError> {
        let all = [
            self.alpha, self.p, self.q, self.r, self.s, self.v, self.theta, self.u,
        ];
        if !all.iter().all(|x| x.is_finite()) {
            return Err(GcchError::InvalidParams(format!("non-finite field in {self:?}")));
        }
        if !(self.p > 0.0 && self.q > 0.0 && self.v > 0.0 && self.alpha > 0.0) {
            return Err(GcchError::InvalidParams(format!(
                "need p, q, v, alpha > 0 (got p={}, q={}, v={}, alpha={})",
                self.p, self.q, self.v, self.alpha
            )));
        }
        Ok(())
    }

    /// Length of the support, `v^{-1/α}`.
    pub fn support_width(&self) -> f64 {
        self.v.powf(-1.0 / self.alpha)
    }

    /// The edge posterior as a GCCH law: α=2, p=1/2, q=K/2+1, r=0, s=λ/2,
    /// v=1/(-z), θ=0. Requires `z < 0`.
    pub fn edge(u: f64, z: f64, lambda: f64, k: usize) -> Self {
        Self {
            alpha: 2.0,
            p: 0.5,
            q: k as f64 / 2.0 + 1.0,
            r: 0.0,
            s: lambda / 2.0,
            v: 1.0 / (-z),
            theta: 0.0,
            u,
        }
    }

    /// Unnormalized log density in the shifted coordinate `y = x - u > 0`,
    /// without the constant `ln α`.
    fn ln_kernel(&self, y: f64) -> f64 {
        // 1 - v t = 1 - (y / width)^α, accurate up to the right endpoint.
        let gap = -(self.alpha * (y / self.support_width()).ln()).exp_m1();
        self.ln_kernel_with_gap(y, gap)
    }

    /// As `ln_kernel`, with `gap = 1 - v (y-u)^α` supplied by the caller.
    fn ln_kernel_with_gap(&self, y: f64, gap: f64) -> f64 {
        let t = y.powf(self.alpha);
        let vt = self.v * t;
        let mut out = (self.alpha * self.p - 1.0) * y.ln();
        if self.q != 1.0 {
            out += (self.q - 1.0) * gap.max(0.0).ln();
        }
        if self.r != 0.0 {
            out -= self.r * (self.theta + (1.0 - self.theta) * vt).ln();
        }
        out - self.s * t
    }
}

/// A GCCH law with its normalizing constant `ln B(p,q) + ln H(...)` precomputed.
#[derive(Debug, Clone, Copy)]
pub struct GcchDensity {
    params: GcchParams,
    ln_norm: f64,
}

impl GcchDensity {
    pub fn new(params: GcchParams, ctrl: &SeriesControl) -> Result<Self, GcchError> {
        params.validate()?;
        let ln_h = ln_h_normalizer(
            params.p,
            params.q,
            params.r,
            params.s,
            params.v,
            params.theta,
            ctrl,
        )?;
        Ok(Self {
            params,
            ln_norm: ln_beta(params.p, params.q) + ln_h,
        })
    }

    pub fn params(&self) -> &GcchParams {
        &self.params
    }

    pub fn ln_pdf(&self, x: f64) -> Result<f64, GcchError> {
        let p = &self.params;
        let hi = p.u + p.support_width();
        if !(x >= p.u && x <= hi) {
            return Err(GcchError::OutsideSupport { x, lo: p.u, hi });
        }
        let y = x - p.u;
        if y == 0.0 {
            let power = p.alpha * p.p - 1.0;
            return Ok(if power > 0.0 {
                f64::NEG_INFINITY
            } else if power < 0.0 {
                f64::INFINITY
            } else {
                p.alpha.ln() - self.ln_norm
            });
        }
        Ok(p.alpha.ln() + p.ln_kernel(y) - self.ln_norm)
    }
}

/// Log density of the GCCH law at `x`.
pub fn gcch_log_pdf(x: f64, params: &GcchParams, ctrl: &SeriesControl) -> Result<f64, GcchError> {
    GcchDensity::new(*params, ctrl)?.ln_pdf(x)
}

/// Mean `u + B(p+1/α, q) H(p+1/α, ...) / (B(p, q) H(p, ...))`.
pub fn gcch_mean(params: &GcchParams, ctrl: &SeriesControl) -> Result<f64, GcchError> {
    params.validate()?;
    let GcchParams {
        alpha,
        p,
        q,
        r,
        s,
        v,
        theta,
        u,
    } = *params;
    let shifted = p + 1.0 / alpha;
    let ln_ratio = ln_beta(shifted, q) - ln_beta(p, q)
        + ln_h_normalizer(shifted, q, r, s, v, theta, ctrl)?
        - ln_h_normalizer(p, q, r, s, v, theta, ctrl)?;
    Ok(u + ln_ratio.exp())
}

/// Breakpoints on `[a, b]`: a uniform grid plus geometric clusters at both ends,
/// so endpoint singularities and narrow boundary peaks are seen by the first pass.
fn cluster_breaks(a: f64, b: f64) -> Vec<f64> {
    let width = b - a;
    let mut pts: Vec<f64> = (0..=16).map(|i| a + width * f64::from(i) / 16.0).collect();
    // Stop clustering where nodes would start rounding onto the endpoint.
    let floor_a = 1e3 * f64::EPSILON * a.abs();
    let floor_b = 1e3 * f64::EPSILON * b.abs();
    for k in 5..48 {
        let h = width * 0.5f64.powi(k);
        if h > floor_a {
            pts.push(a + h);
        }
        if h > floor_b {
            pts.push(b - h);
        }
    }
    pts.retain(|x| *x >= a && *x <= b);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

fn oracle_options(scale: f64) -> QuadratureOptions {
    QuadratureOptions {
        abs_tol: 1e-13 * scale,
        rel_tol: 1e-12,
        max_intervals: 20_000,
    }
}

/// `∫ y^j exp(ln_k(y) - shift) dy` for j = 0, 1 over the given breaks.
fn moment_pair<F: Fn(f64) -> f64>(
    ln_k: F,
    breaks: &[f64],
    shift: f64,
) -> Result<(f64, f64), QuadratureError> {
    let (a, b) = (breaks[0], breaks[breaks.len() - 1]);
    let scale = (b - a).abs().max(a.abs().max(b.abs()) * 1e-16);
    let dens = |y: f64| {
        let l = ln_k(y);
        if l == f64::NEG_INFINITY {
            0.0
        } else {
            (l - shift).exp()
        }
    };
    let mass = integrate_with_breaks(&dens, breaks, &oracle_options(scale))?;
    let first = integrate_with_breaks(|y| y * dens(y), breaks, &oracle_options(scale * scale))?;
    Ok((mass.value, first.value))
}

fn grid_max<F: Fn(f64) -> f64>(ln_k: &F, breaks: &[f64]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for pair in breaks.windows(2) {
        for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let l = ln_k(pair[0] + frac * (pair[1] - pair[0]));
            if l.is_finite() && l > best {
                best = l;
            }
        }
    }
    if best.is_finite() {
        best
    } else {
        0.0
    }
}

/// Mean by direct quadrature of the unnormalized density over the support.
///
/// Each half of the support is mapped through `y = m τ^k` (left) or
/// `width - y = m τ^k` (right) with `k` large enough that the endpoint power
/// laws become bounded in `τ`.
pub fn gcch_mean_quadrature(params: &GcchParams) -> Result<f64, GcchError> {
    params.validate()?;
    let width = params.support_width();
    let half = 0.5 * width;
    let k_left = (1.0 / (params.alpha * params.p)).max(1.0);
    let k_right = (1.0 / params.q).max(1.0);
    let jac = |k: f64, tau: f64| (half * k).ln() + (k - 1.0) * tau.ln();

    // (y, ln of density times Jacobian) at τ ∈ (0, 1].
    let left = |tau: f64| {
        let y = half * tau.powf(k_left);
        let l = if y > 0.0 {
            params.ln_kernel(y) + jac(k_left, tau)
        } else {
            f64::NEG_INFINITY
        };
        (y, l)
    };
    let right = |tau: f64| {
        let rest = tau.powf(k_right);
        let y = width - half * rest;
        // 1 - (y / width)^α with y / width = 1 - rest / 2.
        let gap = -(params.alpha * (-0.5 * rest).ln_1p()).exp_m1();
        let l = if rest > 0.0 && y > 0.0 {
            params.ln_kernel_with_gap(y, gap) + jac(k_right, tau)
        } else {
            f64::NEG_INFINITY
        };
        (y, l)
    };

    let breaks = cluster_breaks(0.0, 1.0);
    let shift = grid_max(&|t| left(t).1, &breaks).max(grid_max(&|t| right(t).1, &breaks));
    let opts = oracle_options(1.0);
    let mut mass = 0.0;
    let mut first = 0.0;
    for side in [&left as &dyn Fn(f64) -> (f64, f64), &right] {
        let dens = |t: f64| {
            let (_, l) = side(t);
            if l == f64::NEG_INFINITY {
                0.0
            } else {
                (l - shift).exp()
            }
        };
        mass += integrate_with_breaks(&dens, &breaks, &opts)?.value;
        first += integrate_with_breaks(|t| side(t).0 * dens(t), &breaks, &oracle_options(width))?.value;
    }
    if !(mass > 0.0) {
        return Err(GcchError::NoPositiveRegion);
    }
    Ok(params.u + first / mass)
}

/// Which branch of the edge posterior taxonomy a kernel falls into.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgePosteriorCase {
    /// `c ≠ 0, z ≠ 0`.
    FullGcch { u: f64, z: f64 },
    /// `c ≠ 0, z = 0` (with `u`) or `c = 0, d ≠ 0` (without).
    ThreeParamGamma { u: Option<f64> },
    /// `c = d = 0, g ≠ 0`.
    Exponential,
    /// `c = d = g = 0`.
    DegenerateZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanRoute {
    ClosedForm,
    Quadrature,
    Limit,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeMean {
    pub mean: f64,
    pub case: EdgePosteriorCase,
    pub route: MeanRoute,
}

/// Unnormalized edge-weight log posterior
/// `(K/2) ln(c w² - d w + g) - (λ/2) (w - center)²`.
///
/// `c w² - d w + g` is the determinant as a function of `w = -ℓ`. With
/// `center = u = d/(2c)` this is the substituted kernel with a closed-form mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeKernel {
    pub c: f64,
    pub d: f64,
    pub g: f64,
    pub lambda: f64,
    pub k: usize,
    pub center: f64,
}

const CLASSIFY_REL: f64 = 1e-12;

impl EdgeKernel {
    /// Kernel with the Gaussian centered at `u = d/(2c)` (or at 0 when `c = 0`).
    pub fn substituted(c: f64, d: f64, g: f64, lambda: f64, k: usize) -> Self {
        let mut kernel = Self {
            c,
            d,
            g,
            lambda,
            k,
            center: 0.0,
        };
        if let EdgePosteriorCase::FullGcch { u, .. }
        | EdgePosteriorCase::ThreeParamGamma { u: Some(u) } = kernel.classify()
        {
            kernel.center = u;
        }
        kernel
    }

    fn scale(&self) -> f64 {
        self.c.abs().max(self.d.abs()).max(self.g.abs())
    }

    pub fn classify(&self) -> EdgePosteriorCase {
        let scale = self.scale();
        if scale == 0.0 {
            return EdgePosteriorCase::DegenerateZero;
        }
        let zero = |x: f64| x.abs() <= CLASSIFY_REL * scale;
        if !zero(self.c) {
            let u = self.d / (2.0 * self.c);
            let ratio = self.g / self.c;
            let z = ratio - u * u;
            if z.abs() <= CLASSIFY_REL * ratio.abs().max(u * u) {
                EdgePosteriorCase::ThreeParamGamma { u: Some(u) }
            } else {
                EdgePosteriorCase::FullGcch { u, z }
            }
        } else if !zero(self.d) {
            EdgePosteriorCase::ThreeParamGamma { u: None }
        } else {
            EdgePosteriorCase::Exponential
        }
    }

    fn bracket(&self, w: f64) -> f64 {
        (self.c * w - self.d) * w + self.g
    }

    fn is_centered_at(&self, u: f64) -> bool {
        (self.center - u).abs() <= CLASSIFY_REL * u.abs().max(1.0)
    }

    /// Posterior mean of `w`, closed form where available.
    pub fn mean(&self, ctrl: &SeriesControl) -> Result<EdgeMean, GcchError> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(GcchError::InvalidParams(format!(
                "edge kernel needs lambda > 0 (got {})",
                self.lambda
            )));
        }
        let case = self.classify();
        let done = |mean, route| Ok(EdgeMean { mean, case, route });
        match case {
            EdgePosteriorCase::DegenerateZero => done(0.0, MeanRoute::Exact),
            EdgePosteriorCase::Exponential => {
                if self.g > 0.0 {
                    done(self.center, MeanRoute::Exact)
                } else {
                    Err(GcchError::NoPositiveRegion)
                }
            }
            EdgePosteriorCase::ThreeParamGamma { u: Some(u) } if self.c < 0.0 => {
                // Positive region shrinks to the single point w = u.
                if self.is_centered_at(u) {
                    done(u, MeanRoute::Limit)
                } else {
                    Err(GcchError::NoPositiveRegion)
                }
            }
            EdgePosteriorCase::FullGcch { u, z } if self.c < 0.0 && z < 0.0 && self.is_centered_at(u) => {
                let params = GcchParams::edge(u, z, self.lambda, self.k);
                match gcch_mean(&params, ctrl) {
                    Ok(m) if m.is_finite() => done(m, MeanRoute::ClosedForm),
                    _ => done(self.mean_quadrature()?, MeanRoute::Quadrature),
                }
            }
            _ => done(self.mean_quadrature()?, MeanRoute::Quadrature),
        }
    }

    /// Integration window: one-sided from `u` when `c ≠ 0`, two-sided around
    /// the center otherwise, clipped to where the bracket is positive.
    fn windows(&self) -> Vec<(f64, f64)> {
        let k = self.k as f64;
        let sd = 1.0 / self.lambda.sqrt();
        let spread = ((k + 1.0 + 12.0 * (2.0 * k + 2.0).sqrt() + 60.0) / self.lambda).sqrt() + 10.0 * sd;
        let scale = self.scale();
        let (lo, hi) = if self.c.abs() > CLASSIFY_REL * scale {
            let u = self.d / (2.0 * self.c);
            (u, u + (self.center - u).abs() + spread)
        } else {
            (self.center - spread, self.center + spread)
        };

        // Roots of the bracket split [lo, hi] into sign-constant pieces.
        let mut cuts = vec![lo, hi];
        if self.c.abs() > CLASSIFY_REL * scale {
            let disc = self.d * self.d - 4.0 * self.c * self.g;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                // Stable pair of roots of c w² - d w + g.
                let qd = 0.5 * (self.d + self.d.signum() * sq);
                let mut roots = Vec::new();
                if qd != 0.0 {
                    roots.push(qd / self.c);
                    roots.push(self.g / qd);
                } else {
                    roots.push(0.0);
                }
                cuts.extend(roots.into_iter().filter(|r| *r > lo && *r < hi));
            }
        } else if self.d.abs() > CLASSIFY_REL * scale {
            let root = self.g / self.d;
            if root > lo && root < hi {
                cuts.push(root);
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        cuts.windows(2)
            .filter(|p| p[1] > p[0] && self.bracket(0.5 * (p[0] + p[1])) > 0.0)
            .map(|p| (p[0], p[1]))
            .collect()
    }

    /// `ln` kernel at `w = origin + y`, up to a constant. The Gaussian is
    /// expanded about `origin` so a far-away center does not cancel digits.
    fn ln_kernel_from(&self, origin: f64, y: f64) -> f64 {
        let b = self.bracket(origin + y);
        if !(b > 0.0) {
            return f64::NEG_INFINITY;
        }
        let offset = self.center - origin;
        0.5 * self.k as f64 * b.ln() - self.lambda * y * (0.5 * y - offset)
    }

    /// Mean by 1-D quadrature of the unnormalized kernel.
    pub fn mean_quadrature(&self) -> Result<f64, GcchError> {
        let pieces = self.windows();
        if pieces.is_empty() {
            return Err(GcchError::NoPositiveRegion);
        }
        let origin = pieces[0].0;
        let all_breaks: Vec<Vec<f64>> = pieces
            .iter()
            .map(|&(a, b)| cluster_breaks(a - origin, b - origin))
            .collect();
        let ln_k = |y: f64| self.ln_kernel_from(origin, y);
        let shift = all_breaks
            .iter()
            .map(|b| grid_max(&ln_k, b))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut mass = 0.0;
        let mut first = 0.0;
        for breaks in &all_breaks {
            let (m, f) = moment_pair(ln_k, breaks, shift)?;
            mass += m;
            first += f;
        }
        if !(mass > 0.0) {
            return Err(GcchError::NoPositiveRegion);
        }
        Ok(origin + first / mass)
    }
}

/// Posterior mean of an edge weight from the substituted kernel.
pub fn edge_posterior_mean(
    c: f64,
    d: f64,
    g: f64,
    lambda: f64,
    k: usize,
    ctrl: &SeriesControl,
) -> Result<EdgeMean, GcchError> {
    EdgeKernel::substituted(c, d, g, lambda, k).mean(ctrl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate, QuadratureOptions};
    use proptest::prelude::*;

    fn ctrl() -> SeriesControl {
        SeriesControl::default()
    }

    const VB_TUPLE: GcchParams = GcchParams {
        alpha: 2.0,
        p: 0.5,
        q: 11.0,
        r: 0.0,
        s: 0.005,
        v: 1.25,
        theta: 0.0,
        u: 0.1,
    };

    fn uniform() -> GcchParams {
        GcchParams {
            alpha: 1.0,
            p: 1.0,
            q: 1.0,
            r: 0.0,
            s: 0.0,
            v: 1.0,
            theta: 1.0,
            u: 0.0,
        }
    }

    #[test]
    fn left_endpoint_vanishes() {
        let params = GcchParams { p: 1.5, ..VB_TUPLE };
        assert_eq!(gcch_log_pdf(params.u, &params, &ctrl()).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn outside_support_is_an_error() {
        let hi = VB_TUPLE.u + VB_TUPLE.support_width();
        for x in [VB_TUPLE.u - 1e-9, hi + 1e-9] {
            assert!(matches!(
                gcch_log_pdf(x, &VB_TUPLE, &ctrl()),
                Err(GcchError::OutsideSupport { .. })
            ));
        }
    }

    #[test]
    fn alpha_one_is_cch() {
        let params = GcchParams {
            alpha: 1.0,
            p: 2.5,
            q: 1.7,
            r: 1.2,
            s: 0.8,
            v: 1.5,
            theta: 0.4,
            u: 0.0,
        };
        let x: f64 = 0.3;
        let ln_h = ln_h_normalizer(2.5, 1.7, 1.2, 0.8, 1.5, 0.4, &ctrl()).unwrap();
        let cch = 1.5 * x.ln() + 0.7 * (1.0 - 1.5 * x).ln() - 1.2 * (0.4 + 0.6 * 1.5 * x).ln() - 0.8 * x
            - ln_beta(2.5, 1.7)
            - ln_h;
        let got = gcch_log_pdf(x, &params, &ctrl()).unwrap();
        assert!((got - cch).abs() < 1e-13, "{got} vs {cch}");
    }

    #[test]
    fn vb_tuple_is_normalized() {
        let dens = GcchDensity::new(VB_TUPLE, &ctrl()).unwrap();
        let hi = VB_TUPLE.u + VB_TUPLE.support_width();
        let opts = QuadratureOptions {
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            max_intervals: 5000,
        };
        let mass = integrate(|x| dens.ln_pdf(x).unwrap().exp(), VB_TUPLE.u, hi, &opts)
            .unwrap()
            .value;
        assert!((mass - 1.0).abs() < 1e-8, "{mass}");
    }

    #[test]
    fn uniform_and_beta_means() {
        assert!((gcch_mean(&uniform(), &ctrl()).unwrap() - 0.5).abs() < 1e-14);
        assert!((gcch_mean_quadrature(&uniform()).unwrap() - 0.5).abs() < 1e-9);
        let beta22 = GcchParams {
            p: 2.0,
            q: 2.0,
            ..uniform()
        };
        assert!((gcch_mean_quadrature(&beta22).unwrap() - 0.5).abs() < 1e-9);
        assert!((gcch_mean(&beta22, &ctrl()).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn vb_tuple_mean_matches_quadrature() {
        let closed = gcch_mean(&VB_TUPLE, &ctrl()).unwrap();
        let quad = gcch_mean_quadrature(&VB_TUPLE).unwrap();
        assert!(((closed - quad) / quad).abs() < 1e-8, "{closed} vs {quad}");
        let offset = closed - VB_TUPLE.u;
        assert!(offset > 0.0 && offset <= VB_TUPLE.support_width());
    }

    #[test]
    fn literal_alternatives_disagree_with_quadrature() {
        // p/(p+q) prefactor with H(p + 1/α), and with H(1.5): both off by far more than 1e-5.
        let p = VB_TUPLE;
        let quad = gcch_mean_quadrature(&p).unwrap() - p.u;
        let ln_h0 = ln_h_normalizer(p.p, p.q, p.r, p.s, p.v, p.theta, &ctrl()).unwrap();
        for numerator_p in [p.p + 1.0 / p.alpha, 1.5] {
            let ln_h1 = ln_h_normalizer(numerator_p, p.q, p.r, p.s, p.v, p.theta, &ctrl()).unwrap();
            let literal = p.p / (p.p + p.q) * (ln_h1 - ln_h0).exp();
            assert!(((literal - quad) / quad).abs() > 0.1, "{literal} vs {quad}");
        }
    }

    #[test]
    fn edge_all_zero_is_exactly_zero() {
        let m = edge_posterior_mean(0.0, 0.0, 0.0, 3.0, 4, &ctrl()).unwrap();
        assert_eq!(m.mean, 0.0);
        assert_eq!(m.case, EdgePosteriorCase::DegenerateZero);
    }

    #[test]
    fn edge_example_against_riemann_sum() {
        // c=1, d=0, g=-1: u = 0, z = -1; q(w) ∝ (w²-1) e^{-2w²} on the one-sided
        // positive region w > 1.
        let m = edge_posterior_mean(1.0, 0.0, -1.0, 4.0, 2, &ctrl()).unwrap();
        assert_eq!(m.route, MeanRoute::Quadrature);
        let n = 2_000_000;
        let (lo, hi) = (1.0, 8.0);
        let h = (hi - lo) / n as f64;
        let (mut mass, mut first) = (0.0, 0.0);
        for i in 0..n {
            let w = lo + (i as f64 + 0.5) * h;
            let k = (w * w - 1.0) * (-2.0 * w * w).exp();
            mass += k;
            first += w * k;
        }
        let oracle = first / mass;
        assert!((m.mean - oracle).abs() < 1e-8, "{} vs {oracle}", m.mean);
    }

    #[test]
    fn closed_form_matches_quadrature_on_grid() {
        let mut rng_state = 0x2545_f491_4f6c_dd1du64;
        let mut next = || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..10 {
            let c = -(0.1 + 3.0 * next());
            let u = -2.0 + 4.0 * next();
            let z = -(0.01 + 2.0 * next());
            let d = 2.0 * c * u;
            let g = c * (z + u * u);
            let lambda = 0.05 + 20.0 * next();
            let k = 1 + (next() * 40.0) as usize;
            let kernel = EdgeKernel::substituted(c, d, g, lambda, k);
            let closed = kernel.mean(&ctrl()).unwrap();
            assert_eq!(closed.route, MeanRoute::ClosedForm);
            let quad = kernel.mean_quadrature().unwrap();
            assert!(
                ((closed.mean - quad) / quad).abs() < 1e-5,
                "c={c} u={u} z={z} λ={lambda} K={k}: {} vs {quad}",
                closed.mean
            );
        }
    }

    #[test]
    fn continuity_as_z_vanishes() {
        for c in [-1.5, 0.8] {
            let u = 0.4;
            let limit = EdgeKernel::substituted(c, 2.0 * c * u, c * u * u, 2.0, 6).mean(&ctrl()).unwrap();
            assert!(matches!(limit.case, EdgePosteriorCase::ThreeParamGamma { u: Some(_) }));
            let mut last_gap = f64::INFINITY;
            for k in 2..9 {
                let z = -(10f64.powi(-k));
                let m = EdgeKernel::substituted(c, 2.0 * c * u, c * (z + u * u), 2.0, 6)
                    .mean(&ctrl())
                    .unwrap();
                let gap = (m.mean - limit.mean).abs();
                assert!(gap <= last_gap + 1e-12, "c={c} z={z}: gap {gap}");
                last_gap = gap;
            }
            assert!(last_gap < 1e-3, "c={c}: {last_gap}");
        }
    }

    #[test]
    fn no_positive_region_is_reported() {
        // c < 0 and z > 0: the determinant is negative for every w.
        let err = edge_posterior_mean(-1.0, 0.0, -1.0, 1.0, 3, &ctrl()).unwrap_err();
        assert_eq!(err, GcchError::NoPositiveRegion);
    }

    #[test]
    fn exponential_case_returns_center() {
        let kernel = EdgeKernel {
            c: 0.0,
            d: 0.0,
            g: 2.0,
            lambda: 1.0,
            k: 3,
            center: 0.7,
        };
        let m = kernel.mean(&ctrl()).unwrap();
        assert_eq!(m.case, EdgePosteriorCase::Exponential);
        assert_eq!(m.mean, 0.7);
    }

    #[test]
    fn linear_bracket_uses_two_sided_quadrature() {
        // c = 0, d = -1, g = 0: bracket w is positive for w > 0.
        let m = EdgeKernel {
            c: 0.0,
            d: -1.0,
            g: 0.0,
            lambda: 1.0,
            k: 2,
            center: 0.0,
        }
        .mean(&ctrl())
        .unwrap();
        // w e^{-w²/2} on w > 0 has mean sqrt(π/2).
        let expected = (std::f64::consts::PI / 2.0).sqrt();
        assert!((m.mean - expected).abs() < 1e-9, "{}", m.mean);
    }

    #[test]
    fn far_gaussian_center_keeps_quadrature_accurate() {
        // Window ~0.013 wide, center ~4e4 away: the Gaussian acts as exp(λ·center·w).
        let kernel = EdgeKernel {
            c: -5467.477200178023,
            d: 1.354391121350659,
            g: 1.0037969594181582,
            lambda: 0.01,
            k: 100,
            center: 40852.01537144068,
        };
        let m = kernel.mean_quadrature().unwrap();

        // Composite Simpson from u to the upper root, tilt written out.
        let disc = (kernel.d * kernel.d - 4.0 * kernel.c * kernel.g).sqrt();
        let (lo, hi) = (kernel.d / (2.0 * kernel.c), (kernel.d - disc) / (2.0 * kernel.c));
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        let f = |w: f64| {
            let b = (kernel.c * w - kernel.d) * w + kernel.g;
            if b <= 0.0 {
                return 0.0;
            }
            (50.0 * b.ln() + kernel.lambda * kernel.center * w - 0.005 * w * w).exp()
        };
        let (mut mass, mut first) = (0.0, 0.0);
        for i in 0..=n {
            let w = lo + h * i as f64;
            let c = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            mass += c * f(w);
            first += c * w * f(w);
        }
        let expected = first / mass;
        assert!((m - expected).abs() < 1e-9 * (hi - lo), "{m} vs {expected}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn mean_lies_in_support(
            alpha in 0.5f64..3.0,
            p in 0.3f64..4.0,
            q in 0.5f64..12.0,
            s in 0.0f64..5.0,
            v in 0.2f64..4.0,
            u in -2.0f64..2.0,
        ) {
            let params = GcchParams { alpha, p, q, r: 0.0, s, v, theta: 0.0, u };
            let m = gcch_mean(&params, &ctrl()).unwrap();
            prop_assert!(m > u && m <= u + params.support_width());
            let quad = gcch_mean_quadrature(&params).unwrap();
            prop_assert!(((m - quad) / (quad - u)).abs() < 1e-5, "{} vs {}", m, quad);
        }
    }
}
