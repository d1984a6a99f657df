//! Pochhammer symbols, the Humbert confluent series Φ1 and the CCH normalizer H.
//!
//! All series are accumulated as a scaled sum with an explicit log scale and
//! sign, so `q = K/2 + 1` style parameters and large `s / v` do not overflow.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecialFunctionError {
    #[error("series did not converge within {terms} terms per axis")]
    NonConvergent { terms: usize },
    #[error("domain error: {0}")]
    Domain(String),
}

/// Truncation control for the hypergeometric series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesControl {
    pub abs_tol: f64,
    pub max_terms_per_axis: usize,
}

impl SeriesControl {
    pub fn new(abs_tol: f64, max_terms_per_axis: usize) -> Result<Self, SpecialFunctionError> {
        if !(abs_tol > 0.0) || max_terms_per_axis == 0 {
            return Err(SpecialFunctionError::Domain(format!(
                "series control needs abs_tol > 0 and max_terms_per_axis >= 1 (got {abs_tol}, {max_terms_per_axis})"
            )));
        }
        Ok(Self {
            abs_tol,
            max_terms_per_axis,
        })
    }
}

impl Default for SeriesControl {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            max_terms_per_axis: 10_000,
        }
    }
}

/// A real number stored as `sign * exp(ln_abs)`; `sign` is -1, 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedLog {
    pub ln_abs: f64,
    pub sign: f64,
}

impl SignedLog {
    pub const ZERO: SignedLog = SignedLog {
        ln_abs: f64::NEG_INFINITY,
        sign: 0.0,
    };
    pub const ONE: SignedLog = SignedLog {
        ln_abs: 0.0,
        sign: 1.0,
    };

    pub fn from_value(x: f64) -> Self {
        if x == 0.0 {
            Self::ZERO
        } else {
            Self {
                ln_abs: x.abs().ln(),
                sign: x.signum(),
            }
        }
    }

    pub fn value(self) -> f64 {
        if self.sign == 0.0 {
            0.0
        } else {
            self.sign * self.ln_abs.exp()
        }
    }

    pub fn mul(self, other: SignedLog) -> SignedLog {
        if self.sign == 0.0 || other.sign == 0.0 {
            Self::ZERO
        } else {
            SignedLog {
                ln_abs: self.ln_abs + other.ln_abs,
                sign: self.sign * other.sign,
            }
        }
    }
}

/// Compensated running sum `(sum + carry) * exp(ln_scale)` of scaled terms.
#[derive(Debug, Clone, Copy)]
struct ScaledSum {
    sum: f64,
    carry: f64,
    ln_scale: f64,
}

impl ScaledSum {
    fn new() -> Self {
        Self {
            sum: 0.0,
            carry: 0.0,
            ln_scale: 0.0,
        }
    }

    /// Adds `mantissa * exp(ln_scale)`.
    fn add(&mut self, mantissa: f64, ln_scale: f64) {
        if mantissa == 0.0 {
            return;
        }
        if ln_scale > self.ln_scale {
            let shrink = (self.ln_scale - ln_scale).exp();
            self.sum *= shrink;
            self.carry *= shrink;
            self.ln_scale = ln_scale;
        }
        let t = if ln_scale == self.ln_scale {
            mantissa
        } else {
            mantissa * (ln_scale - self.ln_scale).exp()
        };
        let next = self.sum + t;
        if self.sum.abs() >= t.abs() {
            self.carry += (self.sum - next) + t;
        } else {
            self.carry += (t - next) + self.sum;
        }
        self.sum = next;
    }

    fn ln_magnitude(&self) -> f64 {
        let total = self.sum + self.carry;
        if total == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.ln_scale + total.abs().ln()
        }
    }

    fn result(&self) -> SignedLog {
        let total = self.sum + self.carry;
        if total == 0.0 {
            SignedLog::ZERO
        } else {
            SignedLog {
                ln_abs: self.ln_magnitude(),
                sign: total.signum(),
            }
        }
    }

    /// ln of the stopping threshold `max(tol, eps * |sum|)`.
    fn ln_threshold(&self, tol: f64) -> f64 {
        tol.ln().max(f64::EPSILON.ln() + self.ln_magnitude())
    }
}

const RESCALE_ABOVE: f64 = 1e100;

/// A term driven by a multiplicative recurrence, kept in linear space with a
/// shared exponent so rounding does not compound through `ln`/`exp` round trips.
#[derive(Debug, Clone, Copy)]
struct RecurrentTerm {
    linear: f64,
    ln_scale: f64,
}

impl RecurrentTerm {
    fn one() -> Self {
        Self {
            linear: 1.0,
            ln_scale: 0.0,
        }
    }

    fn scale_by(&mut self, ratio: f64) {
        self.linear *= ratio;
        if self.linear.abs() > RESCALE_ABOVE {
            self.linear /= RESCALE_ABOVE;
            self.ln_scale += RESCALE_ABOVE.ln();
        } else if self.linear != 0.0 && self.linear.abs() < 1.0 / RESCALE_ABOVE {
            self.linear *= RESCALE_ABOVE;
            self.ln_scale -= RESCALE_ABOVE.ln();
        }
    }

    fn to_signed_log(self) -> SignedLog {
        if self.linear == 0.0 {
            SignedLog::ZERO
        } else {
            SignedLog {
                ln_abs: self.ln_scale + self.linear.abs().ln(),
                sign: self.linear.signum(),
            }
        }
    }
}

/// Partial sum whose terms share one exponent, with Neumaier compensation.
#[derive(Debug, Clone, Copy)]
struct LinearSum {
    term: RecurrentTerm,
    sum: f64,
    carry: f64,
}

impl LinearSum {
    fn starting_at_one() -> Self {
        Self {
            term: RecurrentTerm::one(),
            sum: 1.0,
            carry: 0.0,
        }
    }

    /// Only rescales upward: the sum starts at 1, so terms small enough to
    /// underflow no longer contribute.
    fn push_ratio(&mut self, ratio: f64) {
        self.term.linear *= ratio;
        if self.term.linear.abs() > RESCALE_ABOVE || self.sum.abs() > RESCALE_ABOVE {
            self.term.linear /= RESCALE_ABOVE;
            self.sum /= RESCALE_ABOVE;
            self.carry /= RESCALE_ABOVE;
            self.term.ln_scale += RESCALE_ABOVE.ln();
        }
        let t = self.term.linear;
        let next = self.sum + t;
        if self.sum.abs() >= t.abs() {
            self.carry += (self.sum - next) + t;
        } else {
            self.carry += (t - next) + self.sum;
        }
        self.sum = next;
    }

    fn total(&self) -> f64 {
        self.sum + self.carry
    }

    /// Term and geometric tail both below `tol`, or below one ulp of the sum.
    fn converged(&self, ratio: f64, tol: f64) -> bool {
        let unit = (-self.term.ln_scale).exp();
        let bound = (tol * unit).max(f64::EPSILON * self.total().abs());
        let t = self.term.linear.abs();
        t <= bound && t * ratio / (1.0 - ratio) <= bound
    }

    fn result(&self) -> SignedLog {
        let total = self.total();
        if total == 0.0 {
            SignedLog::ZERO
        } else {
            SignedLog {
                ln_abs: self.term.ln_scale + total.abs().ln(),
                sign: total.signum(),
            }
        }
    }
}

/// `ln|(a)_k|` with sign, as a running sum of `ln|a + i|`.
pub fn ln_pochhammer(a: f64, k: u32) -> SignedLog {
    let mut acc = SignedLog::ONE;
    for i in 0..k {
        let factor = a + f64::from(i);
        if factor == 0.0 {
            return SignedLog::ZERO;
        }
        acc.ln_abs += factor.abs().ln();
        acc.sign *= factor.signum();
    }
    acc
}

/// Rising factorial `(a)_k = a (a+1) ... (a+k-1)`, `(a)_0 = 1`.
///
/// Saturates to `±inf` when the magnitude leaves the `f64` range.
pub fn pochhammer(a: f64, k: u32) -> f64 {
    let mut prod = 1.0_f64;
    for i in 0..k {
        prod *= a + f64::from(i);
        if !prod.is_finite() || prod.abs() > 1e300 {
            return ln_pochhammer(a, k).value();
        }
    }
    prod
}

fn is_nonpositive_integer(x: f64) -> bool {
    x <= 0.0 && x.fract() == 0.0
}

/// `Σ_m (a)_m / ((c)_m m!) x^m` as a scaled partial sum.
fn confluent_series(
    a: f64,
    c: f64,
    x: f64,
    ctrl: &SeriesControl,
) -> Result<LinearSum, SpecialFunctionError> {
    let mut acc = LinearSum::starting_at_one();
    if x == 0.0 {
        return Ok(acc);
    }
    // Past this index the term ratio is monotonically decreasing in m.
    let m_min = (2.0 * (a.abs() + c.abs())).ceil() as usize + 2;
    for m in 0..ctrl.max_terms_per_axis {
        let mf = m as f64;
        let num = (a + mf) * x;
        if num == 0.0 {
            return Ok(acc);
        }
        let ratio = num / ((c + mf) * (mf + 1.0));
        acc.push_ratio(ratio);
        let r = ratio.abs();
        if m + 1 >= m_min && r < 1.0 && acc.converged(r, ctrl.abs_tol) {
            return Ok(acc);
        }
    }
    Err(SpecialFunctionError::NonConvergent {
        terms: ctrl.max_terms_per_axis,
    })
}

/// Signed-log evaluation of Φ1(α, β, γ, x, y).
pub fn ln_phi1(
    alpha: f64,
    beta: f64,
    gamma: f64,
    x: f64,
    y: f64,
    ctrl: &SeriesControl,
) -> Result<SignedLog, SpecialFunctionError> {
    if ![alpha, beta, gamma, x, y].iter().all(|v| v.is_finite()) {
        return Err(SpecialFunctionError::Domain("non-finite argument to phi1".into()));
    }
    if is_nonpositive_integer(gamma) {
        return Err(SpecialFunctionError::Domain(format!(
            "phi1 undefined for gamma = {gamma}"
        )));
    }
    // β = 0 kills every n > 0 term exactly, whatever y is.
    if beta == 0.0 || y == 0.0 {
        return confluent_series(alpha, gamma, x, ctrl).map(|s| s.result());
    }
    if y.abs() >= 1.0 {
        return Err(SpecialFunctionError::Domain(format!(
            "phi1 double series needs |y| < 1 when beta != 0 (y = {y})"
        )));
    }

    let mut sum = ScaledSum::new();
    let mut coef = RecurrentTerm::one();
    let mut previous: Option<f64> = None;
    let n_min = (2.0 * (alpha.abs() + beta.abs() + gamma.abs())).ceil() as usize + 2;
    for n in 0..ctrl.max_terms_per_axis {
        let nf = n as f64;
        let inner = confluent_series(alpha + nf, gamma + nf, x, ctrl)?;
        let term_scale = coef.ln_scale + inner.term.ln_scale;
        sum.add(coef.linear * inner.total(), term_scale);
        let term = RecurrentTerm {
            linear: coef.linear * inner.total(),
            ln_scale: term_scale,
        }
        .to_signed_log();

        let num = (alpha + nf) * (beta + nf) * y;
        let den = (gamma + nf) * (nf + 1.0);
        if num == 0.0 {
            return Ok(sum.result());
        }
        let coef_ratio = num / den;
        coef.scale_by(coef_ratio);

        if term.sign != 0.0 {
            if let Some(prev) = previous {
                let observed = (term.ln_abs - prev).exp();
                // Term ratios approach |y| from either side; take the worst.
                let r = observed.max(coef_ratio.abs()).max(y.abs());
                if n >= n_min && r < 1.0 {
                    let bound = sum.ln_threshold(ctrl.abs_tol);
                    let tail = term.ln_abs + (r / (1.0 - r)).ln();
                    if term.ln_abs <= bound && tail <= bound {
                        return Ok(sum.result());
                    }
                }
            }
            previous = Some(term.ln_abs);
        }
    }
    Err(SpecialFunctionError::NonConvergent {
        terms: ctrl.max_terms_per_axis,
    })
}

/// Φ1(α, β, γ, x, y) = Σ_m Σ_n (α)_{m+n} (β)_n / ((γ)_{m+n} m! n!) x^m y^n.
pub fn phi1(
    alpha: f64,
    beta: f64,
    gamma: f64,
    x: f64,
    y: f64,
    ctrl: &SeriesControl,
) -> Result<f64, SpecialFunctionError> {
    ln_phi1(alpha, beta, gamma, x, y, ctrl).map(SignedLog::value)
}

/// `ln H(p, q, r, s, v, θ)`; errors unless H is strictly positive.
pub fn ln_h_normalizer(
    p: f64,
    q: f64,
    r: f64,
    s: f64,
    v: f64,
    theta: f64,
    ctrl: &SeriesControl,
) -> Result<f64, SpecialFunctionError> {
    if !(v > 0.0) {
        return Err(SpecialFunctionError::Domain(format!("H needs v > 0 (v = {v})")));
    }
    let series = ln_phi1(q, r, p + q, s / v, 1.0 - theta, ctrl)?;
    if series.sign <= 0.0 {
        return Err(SpecialFunctionError::Domain(
            "Phi1 factor of H is not positive".into(),
        ));
    }
    Ok(-p * v.ln() - s / v + series.ln_abs)
}

/// H(p, q, r, s, v, θ) = v^{-p} exp(-s/v) Φ1(q, r, p+q, s/v, 1-θ).
pub fn h_normalizer(
    p: f64,
    q: f64,
    r: f64,
    s: f64,
    v: f64,
    theta: f64,
    ctrl: &SeriesControl,
) -> Result<f64, SpecialFunctionError> {
    ln_h_normalizer(p, q, r, s, v, theta, ctrl).map(f64::exp)
}
