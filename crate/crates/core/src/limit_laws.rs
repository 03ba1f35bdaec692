//! Brownian limit laws for the rescaled exit time and running maximum.
//!
//! The common building block is
//!
//! ```text
//! H(y) = P(sup_{0≤s≤1} |W_s| < 1/√y)
//!      = 4/π Σ_{n≥0} (-1)^n/(2n+1) · exp(-π²(2n+1)² y / 8)        (theta form)
//!      = 1 - 2 Σ_{j≥0} (-1)^j erfc((2j+1)/√(2y))                    (reflection form)
//! ```
//!
//! The theta form converges in a handful of terms for large `y`, the
//! reflection form for small `y`; [`h`] dispatches at
//! [`SeriesConfig::crossover_y`].
//!
//! For Brownian motion with covariance `I/N` each coordinate is a standard
//! Brownian motion run at speed `1/N`, so the exit time from the unit cube
//! and the maximum modulus on `[0, 1]` satisfy
//!
//! ```text
//! P(T̂_N ≥ t) = H(t/N)^N,        P(M̂_N < x) = H(1/(N x²))^N.
//! ```

use crate::error::{Error, Result};
use crate::quadrature::{geometric_breakpoints, integrate_breakpoints, Integral, QuadratureConfig};
use crate::scalar::Real;
use crate::special::{alternating_sum, alternating_terms_for};

/// Truncation controls for the series representations of `H`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesConfig<T> {
    /// Summation stops once the next term is below this magnitude.
    pub abs_tol: T,
    pub max_terms: usize,
    /// Below this argument the reflection form is used, at or above it the
    /// theta form.
    pub crossover_y: T,
}

impl<T: Real> Default for SeriesConfig<T> {
    fn default() -> Self {
        Self {
            abs_tol: T::lit(1e-14),
            max_terms: 10_000,
            crossover_y: T::lit(0.5),
        }
    }
}

impl<T: Real> SeriesConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > T::zero() && self.abs_tol < T::one()) {
            return Err(Error::InvalidArgument("abs_tol must lie in (0, 1)".into()));
        }
        if !(self.crossover_y > T::zero()) {
            return Err(Error::InvalidArgument("crossover_y must be positive".into()));
        }
        if self.max_terms == 0 {
            return Err(Error::InvalidArgument("max_terms must be positive".into()));
        }
        Ok(())
    }
}

fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

fn check_positive<T: Real>(x: T, domain: &'static str) -> Result<()> {
    if x > T::zero() {
        Ok(())
    } else {
        Err(Error::Domain {
            value: to_f64(x),
            domain,
        })
    }
}

fn clamp_unit<T: Real>(x: T) -> T {
    x.max(T::zero()).min(T::one())
}

/// `H(y)` by the theta series, summed until the next term drops below
/// `abs_tol` (the alternating-series bound then limits the error).
pub fn h_theta<T: Real>(y: T, cfg: &SeriesConfig<T>) -> Result<T> {
    check_positive(y, "y > 0")?;
    let rate = T::PI() * T::PI() / T::lit(8.0) * y;
    let scale = T::lit(4.0) / T::PI();
    let term = |n: usize| {
        let odd = T::from_count(2 * n + 1);
        scale * (-rate * odd * odd).exp() / odd
    };
    let mut sum = T::zero();
    for n in 0..cfg.max_terms {
        sum = if n % 2 == 0 { sum + term(n) } else { sum - term(n) };
        if term(n + 1) < cfg.abs_tol {
            return Ok(clamp_unit(sum));
        }
    }
    Err(Error::SeriesNonConvergence {
        series: "theta series for H",
        terms: cfg.max_terms,
        last_term: to_f64(term(cfg.max_terms)),
    })
}

/// `1 - H(y)` by the reflection series, accurate in relative terms for
/// small `y` where `H` is close to one.
///
/// With `x = 1/√y` the Gaussian integral over `[-x, x]` of the image sum
/// evaluates to `Σ_k (-1)^k [Φ((2k+1)x) - Φ((2k-1)x)]`; pairing `±k` gives
/// `1 - 4 Σ_{j≥0} (-1)^j Φ̄((2j+1)x)`.
pub fn h_reflection_complement<T: Real>(y: T, cfg: &SeriesConfig<T>) -> T {
    if !(y > T::zero()) {
        return T::zero();
    }
    let scaled = (y * T::lit(2.0)).sqrt().recip();
    let mut sum = T::zero();
    for j in 0..cfg.max_terms {
        let term = (T::from_count(2 * j + 1) * scaled).erfc();
        if j % 2 == 0 {
            sum = sum + term;
        } else {
            sum = sum - term;
        }
        if term < cfg.abs_tol {
            break;
        }
    }
    clamp_unit(sum * T::lit(2.0))
}

/// `H(y)` by the reflection form.
pub fn h_reflection<T: Real>(y: T, cfg: &SeriesConfig<T>) -> T {
    clamp_unit(T::one() - h_reflection_complement(y, cfg))
}

/// `H(y)`, using whichever representation converges quickly at `y`.
///
/// `H(0) = 1` and `H(∞) = 0`. A theta branch that fails to converge (only
/// possible with a tiny `crossover_y`) falls back to the reflection form.
pub fn h<T: Real>(y: T, cfg: &SeriesConfig<T>) -> T {
    if !(y > T::zero()) {
        return T::one();
    }
    if y < cfg.crossover_y {
        h_reflection(y, cfg)
    } else {
        h_theta(y, cfg).unwrap_or_else(|_| h_reflection(y, cfg))
    }
}

/// `1 - H(y)` without cancellation for small `y`.
pub fn h_complement<T: Real>(y: T, cfg: &SeriesConfig<T>) -> T {
    if !(y > T::zero()) {
        return T::zero();
    }
    if y < cfg.crossover_y {
        h_reflection_complement(y, cfg)
    } else {
        T::one() - h(y, cfg)
    }
}

/// Result of the truncated Kmet–Petkovšek sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KpSum<T> {
    pub value: T,
    /// Contribution of the outermost shell (terms whose largest index is
    /// `trunc - 1`).
    pub last_shell: T,
    /// Set when `|last_shell| > 1e-6`: the truncation is too small.
    pub truncation_flag: bool,
    pub interpretation: &'static str,
}

/// How the ambiguous denominator of the N-fold sum is read.
pub const KP_INTERPRETATION: &str = "indices k_1..k_{N-1}; denominator cosh((pi/2)*sqrt(sum_j (2k_j+1)^2))";

/// Limit of `E T̃_{N,r} / r²` as the `(N-1)`-fold Kmet–Petkovšek series
///
/// ```text
/// N (1 - 2^{2N+1}/π^{N+1} Σ_k (-1)^{Σk} Π_j 1/(2k_j+1) · Σ_j 1/(2k_j+1)² / cosh(π/2 √Σ_j (2k_j+1)²))
/// ```
///
/// with each index running over `0..trunc`.
pub fn kp_expected_limit<T: Real>(dim: u32, trunc: usize) -> Result<KpSum<T>> {
    if dim < 2 {
        return Err(Error::InvalidArgument("the Kmet-Petkovsek sum needs N >= 2".into()));
    }
    if trunc == 0 {
        return Err(Error::InvalidArgument("truncation must be positive".into()));
    }
    let free = (dim - 1) as usize;
    let half_pi = T::FRAC_PI_2();
    let mut idx = vec![0usize; free];
    let mut total = T::zero();
    let mut last_shell = T::zero();
    loop {
        let mut prod = T::one();
        let mut inv_sq = T::zero();
        let mut sq = T::zero();
        let mut parity = 0usize;
        for &k in &idx {
            let odd = T::from_count(2 * k + 1);
            prod = prod / odd;
            inv_sq = inv_sq + (odd * odd).recip();
            sq = sq + odd * odd;
            parity += k;
        }
        // cosh overflows to +inf for far shells, making the term exactly 0.
        let mut term = prod * inv_sq / (half_pi * sq.sqrt()).cosh();
        if parity % 2 == 1 {
            term = -term;
        }
        total = total + term;
        if idx.iter().any(|&k| k + 1 == trunc) {
            last_shell = last_shell + term;
        }

        let mut pos = 0;
        loop {
            if pos == free {
                let n = T::from_u32(dim).unwrap();
                let prefactor = T::lit(2.0).powi(2 * dim as i32 + 1) / T::PI().powi(dim as i32 + 1);
                let last = n * prefactor * last_shell;
                return Ok(KpSum {
                    value: n * (T::one() - prefactor * total),
                    last_shell: last,
                    truncation_flag: last.abs() > T::lit(1e-6),
                    interpretation: KP_INTERPRETATION,
                });
            }
            idx[pos] += 1;
            if idx[pos] < trunc {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// `E T^p` for the exit time of standard Brownian motion from `[-1, 1]`:
/// `p! (π/2) (8/π²)^{p+1} Σ_k (-1)^k (2k+1)^{-(2p+1)}`.
pub fn exit_moment_1d_closed<T: Real>(p: u32, cfg: &SeriesConfig<T>) -> Result<T> {
    if p == 0 {
        return Err(Error::InvalidArgument("moment order must be positive".into()));
    }
    let terms = alternating_terms_for(to_f64(cfg.abs_tol) * 1e-2);
    if terms > cfg.max_terms {
        return Err(Error::SeriesNonConvergence {
            series: "closed moment series",
            terms: cfg.max_terms,
            last_term: f64::NAN,
        });
    }
    let exponent = 2 * p as i32 + 1;
    let beta = alternating_sum(terms, |k| T::from_count(2 * k + 1).powi(-exponent));
    let mut factorial = T::one();
    for i in 2..=p {
        factorial = factorial * T::from_u32(i).unwrap();
    }
    let ratio = T::lit(8.0) / (T::PI() * T::PI());
    Ok(factorial * T::FRAC_PI_2() * ratio.powi(p as i32 + 1) * beta)
}

/// `E e^{-θT} = sech √(2θ)` for the Brownian exit time from `[-1, 1]`.
pub fn laplace_exit<T: Real>(theta: T) -> T {
    (theta * T::lit(2.0)).sqrt().cosh().recip()
}

/// `E e^{-θS} = exp(-√(2θ))` for the first passage to level 1.
pub fn laplace_passage<T: Real>(theta: T) -> T {
    (-(theta * T::lit(2.0)).sqrt()).exp()
}

/// Partial-fraction expansion of `sech √(2θ)`:
/// `(π/2) Σ_n (-1)^n (2n+1) / (θ + π²(2n+1)²/8)`, summed with the CVZ
/// accelerator since the plain partial sums only converge like `1/n`.
pub fn sech_series_theta<T: Real>(theta: T, cfg: &SeriesConfig<T>) -> Result<T> {
    check_positive(theta, "theta > 0")?;
    let terms = alternating_terms_for(to_f64(cfg.abs_tol) * 1e-2);
    if terms > cfg.max_terms {
        return Err(Error::SeriesNonConvergence {
            series: "partial-fraction series for sech",
            terms: cfg.max_terms,
            last_term: f64::NAN,
        });
    }
    let c = T::PI() * T::PI() / T::lit(8.0);
    let s = alternating_sum(terms, |n| {
        let odd = T::from_count(2 * n + 1);
        odd / (theta + c * odd * odd)
    });
    Ok(T::FRAC_PI_2() * s)
}

/// Plain partial sum of the partial-fraction series with `terms` terms,
/// accumulated in consecutive pairs.
pub fn sech_series_theta_partial<T: Real>(theta: T, terms: usize) -> T {
    let c = T::PI() * T::PI() / T::lit(8.0);
    let a = |n: usize| {
        let odd = T::from_count(2 * n + 1);
        odd / (theta + c * odd * odd)
    };
    let mut s = T::zero();
    let mut n = 0;
    while n + 1 < terms {
        s = s + (a(n) - a(n + 1));
        n += 2;
    }
    if n < terms {
        s = s + a(n);
    }
    T::FRAC_PI_2() * s
}

/// Geometric expansion `2 Σ_k (-1)^k e^{-(2k+1)√(2θ)}` of `sech √(2θ)`.
pub fn sech_series_geometric<T: Real>(theta: T, cfg: &SeriesConfig<T>) -> Result<T> {
    check_positive(theta, "theta > 0")?;
    let root = (theta * T::lit(2.0)).sqrt();
    let mut s = T::zero();
    for k in 0..cfg.max_terms {
        let term = (-T::from_count(2 * k + 1) * root).exp();
        s = if k % 2 == 0 { s + term } else { s - term };
        let next = (-T::from_count(2 * k + 3) * root).exp();
        if next < cfg.abs_tol {
            return Ok(s * T::lit(2.0));
        }
    }
    Err(Error::SeriesNonConvergence {
        series: "geometric series for sech",
        terms: cfg.max_terms,
        last_term: to_f64((-T::from_count(2 * cfg.max_terms + 1) * root).exp()),
    })
}

/// First `terms` terms of [`sech_series_geometric`].
pub fn sech_series_geometric_partial<T: Real>(theta: T, terms: usize) -> T {
    let root = (theta * T::lit(2.0)).sqrt();
    let s = (0..terms).fold(T::zero(), |s, k| {
        let term = (-T::from_count(2 * k + 1) * root).exp();
        if k % 2 == 0 {
            s + term
        } else {
            s - term
        }
    });
    s * T::lit(2.0)
}

/// `λ(z) = (1 - √(1-z²))/z`, evaluated as `z / (1 + √(1-z²))`.
pub fn lambda<T: Real>(z: T) -> Result<T> {
    if !(z > T::zero() && z < T::one()) {
        return Err(Error::Domain {
            value: to_f64(z),
            domain: "0 < z < 1",
        });
    }
    Ok(z / (T::one() + (T::one() - z * z).sqrt()))
}

/// `E z^{τ_b} = 2 / (λ^b + λ^{-b})` for the simple walk leaving `(-b, b)`.
pub fn gen_fn_tau<T: Real>(z: T, b: u32) -> Result<T> {
    if b == 0 {
        return Err(Error::InvalidArgument("level b must be at least 1".into()));
    }
    let lb = lambda(z)?.powi(b as i32);
    Ok(T::lit(2.0) * lb / (T::one() + lb * lb))
}

/// `E z^{σ_b} = λ^b` for the one-sided passage to level `b`.
pub fn gen_fn_sigma<T: Real>(z: T, b: u32) -> Result<T> {
    if b == 0 {
        return Err(Error::InvalidArgument("level b must be at least 1".into()));
    }
    Ok(lambda(z)?.powi(b as i32))
}

/// Density of the Brownian first-passage time to level 1, the positive
/// stable law of index 1/2.
pub fn passage_density<T: Real>(t: T) -> T {
    if !(t > T::zero()) {
        return T::zero();
    }
    let two_pi = T::PI() * T::lit(2.0);
    (two_pi * t * t * t).sqrt().recip() * (-(t * T::lit(2.0)).recip()).exp()
}

/// Evaluator for the distributions and moments that need both series and
/// quadrature settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitLaws<T> {
    pub series: SeriesConfig<T>,
    pub quad: QuadratureConfig<T>,
}

impl<T: Real> Default for LimitLaws<T> {
    fn default() -> Self {
        Self {
            series: SeriesConfig::default(),
            quad: QuadratureConfig::default(),
        }
    }
}

impl<T: Real> LimitLaws<T> {
    pub fn new(series: SeriesConfig<T>, quad: QuadratureConfig<T>) -> Result<Self> {
        series.validate()?;
        quad.validate()?;
        Ok(Self { series, quad })
    }

    pub fn h(&self, y: T) -> T {
        h(y, &self.series)
    }

    /// `P(T̂_N ≥ t) = H(t/N)^N`.
    pub fn exit_survival(&self, dim: u32, t: T) -> T {
        let n = T::from_u32(dim).unwrap();
        self.h(t / n).powi(dim as i32)
    }

    /// `F_N(t) = P(T̂_N < t) = 1 - H(t/N)^N`.
    pub fn exit_cdf(&self, dim: u32, t: T) -> T {
        clamp_unit(T::one() - self.exit_survival(dim, t))
    }

    /// `G_N(x) = P(M̂_N < x) = H(1/(N x²))^N`.
    pub fn max_cdf(&self, dim: u32, x: T) -> T {
        if !(x > T::zero()) {
            return T::zero();
        }
        let n = T::from_u32(dim).unwrap();
        self.h((n * x * x).recip()).powi(dim as i32)
    }

    /// `1 - G_N(x)`, accurate in the Gaussian upper tail.
    pub fn max_cdf_complement(&self, dim: u32, x: T) -> T {
        if !(x > T::zero()) {
            return T::one();
        }
        let n = T::from_u32(dim).unwrap();
        let c = h_complement((n * x * x).recip(), &self.series);
        if c >= T::one() {
            return T::one();
        }
        -(n * (-c).ln_1p()).exp_m1()
    }

    /// Law of the maximum modulus of 1-D Brownian motion on `[0, t]`:
    /// `Γ_t(x) = H(t/x²)`.
    pub fn max_cdf_horizon(&self, x: T, t: T) -> T {
        if !(x > T::zero()) {
            return T::zero();
        }
        self.h(t / (x * x))
    }

    /// `Φ(t) = 1 - H(t)`, the one-dimensional exit-time law.
    pub fn erdos_kac_cdf(&self, t: T) -> T {
        self.exit_cdf(1, t)
    }

    /// `Γ(x) = H(1/x²)`, the law of `sup_{[0,1]} |W|`.
    pub fn max_modulus_cdf(&self, x: T) -> T {
        self.max_cdf(1, x)
    }

    /// `P(T̂_N^p ≥ t) = 1 - F_N(t^{1/p})`.
    pub fn exit_power_tail(&self, dim: u32, p: u32, t: T) -> T {
        if !(t > T::zero()) {
            return T::one();
        }
        let root = t.powf(T::from_u32(p).unwrap().recip());
        T::one() - self.exit_cdf(dim, root)
    }

    /// `E T̂_N^p = p ∫₀^∞ t^{p-1} H(t/N)^N dt`.
    pub fn exit_moment_limit(&self, dim: u32, p: u32) -> Result<T> {
        Ok(self.exit_moment_integral(dim, p)?.value)
    }

    /// [`Self::exit_moment_limit`] with its error estimate, which includes the
    /// analytic bound on the discarded tail.
    pub fn exit_moment_integral(&self, dim: u32, p: u32) -> Result<Integral<T>> {
        check_order(dim, p)?;
        let pf = T::from_u32(p).unwrap();
        let n = T::from_u32(dim).unwrap();
        // H(y) ≤ (4/π) e^{-π² y/8}, so H(t/N)^N ≤ (4/π)^N e^{-π² t/8}.
        let rate = T::PI() * T::PI() / T::lit(8.0);
        let constant = pf * (T::lit(4.0) / T::PI()).powi(dim as i32);
        let (upper, tail) = exponential_cutoff(constant, pf - T::one(), rate, self.quad.tail_cutoff_tol);
        let mut f = |t: T| pf * t.powi(p as i32 - 1) * self.h(t / n).powi(dim as i32);
        let mut out = integrate_breakpoints(&mut f, &geometric_breakpoints(T::lit(0.25), upper), &self.quad)?;
        out.error_estimate = out.error_estimate + tail;
        Ok(out)
    }

    /// Second route to `E T̂_N^p`: `∫₀^∞ P(T̂_N^p ≥ s) ds` evaluated directly on
    /// the tail of `T̂_N^p`.
    pub fn exit_moment_via_power_tail(&self, dim: u32, p: u32) -> Result<T> {
        check_order(dim, p)?;
        let pf = T::from_u32(p).unwrap();
        let rate = T::PI() * T::PI() / T::lit(8.0);
        let constant = pf * (T::lit(4.0) / T::PI()).powi(dim as i32);
        // The substitution s = t^p maps the cutoff of the first route onto this one.
        let (upper, _) = exponential_cutoff(constant, pf - T::one(), rate, self.quad.tail_cutoff_tol);
        let mut f = |s: T| self.exit_power_tail(dim, p, s);
        let pts = geometric_breakpoints(T::lit(0.25), upper.powi(p as i32));
        Ok(integrate_breakpoints(&mut f, &pts, &self.quad)?.value)
    }

    /// `E M̂_N^p = p ∫₀^∞ x^{p-1} (1 - G_N(x)) dx`.
    pub fn max_moment_limit(&self, dim: u32, p: u32) -> Result<T> {
        Ok(self.max_moment_integral(dim, p)?.value)
    }

    pub fn max_moment_integral(&self, dim: u32, p: u32) -> Result<Integral<T>> {
        check_order(dim, p)?;
        let pf = T::from_u32(p).unwrap();
        let n = T::from_u32(dim).unwrap();
        // 1 - G_N(x) ≤ N (1 - H(1/(N x²))) ≤ 4N Φ̄(x√N) ≤ 2N e^{-N x²/2}.
        let tol = self.quad.tail_cutoff_tol;
        let two = T::lit(2.0);
        let tail_at = |x: T| {
            let slope = n * x - (pf - T::one()) / x;
            if slope <= T::zero() {
                return T::infinity();
            }
            two * n * pf * x.powi(p as i32 - 1) * (-n * x * x / two).exp() / slope
        };
        let mut upper = T::one();
        while tail_at(upper) > tol {
            upper = upper * T::lit(1.25);
        }
        let tail = tail_at(upper);
        let mut f = |x: T| pf * x.powi(p as i32 - 1) * self.max_cdf_complement(dim, x);
        let mut out = integrate_breakpoints(&mut f, &geometric_breakpoints(T::lit(0.125), upper), &self.quad)?;
        out.error_estimate = out.error_estimate + tail;
        Ok(out)
    }

    /// `E[g(S)]` for the first-passage time `S` with density [`passage_density`].
    ///
    /// Substituting `t = 1/v²` turns `f_S(t) dt` into the half-normal weight
    /// `2 φ(v) dv`, which removes both the essential singularity at 0 and the
    /// `t^{-3/2}` tail.
    pub fn passage_expectation(&self, mut g: impl FnMut(T) -> T) -> Result<T> {
        let two = T::lit(2.0);
        // ∫_V^∞ 2φ(v) dv = 2Φ̄(V) ≤ e^{-V²/2} for bounded g.
        let mut upper = T::one();
        while (-upper * upper / two).exp() > self.quad.tail_cutoff_tol {
            upper = upper + T::one();
        }
        let mut f = |v: T| {
            if v <= T::zero() {
                return T::zero();
            }
            two * crate::special::normal_pdf(v) * g((v * v).recip())
        };
        let pts = geometric_breakpoints(T::lit(0.25), upper);
        Ok(integrate_breakpoints(&mut f, &pts, &self.quad)?.value)
    }
}

fn check_order(dim: u32, p: u32) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    if p == 0 {
        return Err(Error::InvalidArgument("moment order must be positive".into()));
    }
    Ok(())
}

/// Smallest doubling point `T` with `∫_T^∞ c t^k e^{-a t} dt` below `tol`,
/// using `∫_T^∞ t^k e^{-at} ≤ T^k e^{-aT} / (a - k/T)` for `aT > k`.
fn exponential_cutoff<T: Real>(c: T, k: T, a: T, tol: T) -> (T, T) {
    let bound = |t: T| {
        let slope = a - k / t;
        if slope <= T::zero() {
            T::infinity()
        } else {
            c * t.powf(k) * (-a * t).exp() / slope
        }
    };
    let mut upper = T::one();
    while bound(upper) > tol {
        upper = upper * T::lit(1.25);
    }
    (upper, bound(upper))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values from a 40-digit evaluation of both series.
    const H_GOLDEN: [(f64, f64); 5] = [
        (0.04, 0.999_998_853_393_712_5),
        (0.1, 0.996_869_195_483_994_9),
        (0.5, 0.685_445_766_890_352),
        (1.0, 0.370_777_429_799_523_9),
        (10.0, 5.584_916_780_500_388e-6),
    ];

    fn laws() -> LimitLaws<f64> {
        LimitLaws::default()
    }

    #[test]
    fn h_matches_golden_values() {
        let cfg = SeriesConfig::default();
        for (y, want) in H_GOLDEN {
            let got = h(y, &cfg);
            assert!((got - want).abs() < 2e-14, "H({y}) = {got}, want {want}");
        }
    }

    #[test]
    fn h_theta_single_term_regime() {
        let cfg = SeriesConfig::default();
        let y = 10.0;
        let one_term = 4.0 / std::f64::consts::PI * (-std::f64::consts::PI.powi(2) * y / 8.0).exp();
        let got = h_theta(y, &cfg).unwrap();
        assert!(((got - one_term) / one_term).abs() < 1e-12);
        assert_eq!(h_theta(1e6, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn h_reflection_near_zero() {
        let cfg = SeriesConfig::default();
        assert_eq!(h_reflection(1e-6, &cfg), 1.0);
        // x = 5: 1 - 4Φ̄(5) + 4Φ̄(15) - ..., the k=0 term 2Φ(5)-1 = 1 - 2Φ̄(5)
        let got = h_reflection(0.04, &cfg);
        let phibar5: f64 = crate::special::normal_sf(5.0);
        assert!((got - (1.0 - 4.0 * phibar5)).abs() < 1e-16);
        assert!((1.0 - got) > 2.0 * phibar5);
    }

    #[test]
    fn h_theta_rejects_nonpositive_and_reports_non_convergence() {
        let cfg = SeriesConfig::default();
        assert!(matches!(h_theta(0.0, &cfg), Err(Error::Domain { .. })));
        let tight = SeriesConfig { max_terms: 3, ..cfg };
        assert!(matches!(h_theta(1e-4, &tight), Err(Error::SeriesNonConvergence { .. })));
    }

    #[test]
    fn dispatch_is_continuous_at_crossover() {
        let cfg = SeriesConfig::<f64>::default();
        let c = cfg.crossover_y;
        for y in [c - 1e-9, c, c + 1e-9] {
            let theta = h_theta(y, &cfg).unwrap();
            let refl = h_reflection(y, &cfg);
            assert!((theta - refl).abs() < 1e-10);
        }
        assert_eq!(h(c, &cfg), h_theta(c, &cfg).unwrap());
        assert_eq!(h(c - 1e-9, &cfg), h_reflection(c - 1e-9, &cfg));
        assert_eq!(h(10.0, &cfg), h_theta(10.0, &cfg).unwrap());
        assert_eq!(h(0.01, &cfg), h_reflection(0.01, &cfg));
    }

    #[test]
    fn cdf_limits() {
        let l = laws();
        for dim in 1..=5 {
            assert!(l.exit_cdf(dim, 1e-6) < 1e-12);
            assert!(l.exit_cdf(dim, 1e3) > 1.0 - 1e-12);
            assert!(l.max_cdf(dim, 1e-3) < 1e-12);
            assert!(l.max_cdf(dim, 50.0) > 1.0 - 1e-12);
        }
    }

    #[test]
    fn one_dimensional_specializations() {
        let l = laws();
        for i in 1..40 {
            let t = i as f64 * 0.1;
            assert_eq!(l.erdos_kac_cdf(t), 1.0 - l.h(t));
            assert_eq!(l.max_modulus_cdf(t), l.h(1.0 / (t * t)));
        }
    }

    #[test]
    fn horizon_law_scaling() {
        let l = laws();
        assert!((l.max_cdf_horizon(2.0, 4.0) - l.h(1.0)).abs() < 1e-15);
        for &x in &[0.3, 0.8, 1.5, 2.7] {
            assert_eq!(l.max_cdf_horizon(x, 1.0), l.max_modulus_cdf(x));
            for &t in &[0.25f64, 2.0, 9.0] {
                let scaled = l.max_modulus_cdf(x / t.sqrt());
                assert!((l.max_cdf_horizon(x, t) - scaled).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn closed_moment_series() {
        let cfg = SeriesConfig::<f64>::default();
        // 1, 5/3, 61/15, 277/21 (Euler numbers over odd double factorials)
        let want: [f64; 4] = [1.0, 5.0 / 3.0, 61.0 / 15.0, 277.0 / 21.0];
        for (p, w) in (1..=4).zip(want) {
            let got = exit_moment_1d_closed(p, &cfg).unwrap();
            assert!((got - w).abs() < 1e-12 * w, "p={p}: {got} vs {w}");
        }
        assert!(exit_moment_1d_closed::<f64>(0, &cfg).is_err());
    }

    #[test]
    fn moment_limits_match_reference() {
        let l = laws();
        // 40-digit quadrature of H(t/N)^N
        let exit = [
            (2, 1.178_741_652_504_221),
            (3, 1.349_107_915_906_448_7),
            (4, 1.512_709_540_076_635_7),
        ];
        for (dim, want) in exit {
            let got = l.exit_moment_limit(dim, 1).unwrap();
            assert!((got - want).abs() < 1e-9, "N={dim}: {got}");
        }
        let max = [
            (1, 1, 1.253_314_137_315_500_3),
            (1, 2, 1.831_931_188_354_438),
            (1, 3, 3.092_428_681_399_143_5),
            (2, 1, 1.083_025_042_371_306_4),
            (3, 2, 1.046_297_367_850_387_3),
        ];
        for (dim, p, want) in max {
            let got = l.max_moment_limit(dim, p).unwrap();
            assert!((got - want).abs() < 1e-9, "N={dim} p={p}: {got}");
        }
    }

    #[test]
    fn kp_flags_small_truncation() {
        let crude = kp_expected_limit::<f64>(2, 1).unwrap();
        assert!(crude.truncation_flag);
        let fine = kp_expected_limit::<f64>(2, 50).unwrap();
        assert!(!fine.truncation_flag);
        assert!(kp_expected_limit::<f64>(1, 10).is_err());
        assert!(kp_expected_limit::<f64>(2, 0).is_err());
    }

    #[test]
    fn kp_matches_quadrature() {
        let l = laws();
        let q2 = l.exit_moment_limit(2, 1).unwrap();
        let kp2 = kp_expected_limit::<f64>(2, 200).unwrap();
        assert!((kp2.value - q2).abs() < 1e-4);
        let q3 = l.exit_moment_limit(3, 1).unwrap();
        let kp3 = kp_expected_limit::<f64>(3, 60).unwrap();
        assert!((kp3.value - q3).abs() < 1e-3, "{} vs {}", kp3.value, q3);
    }

    #[test]
    fn laplace_transforms() {
        assert!((laplace_exit(0.5f64) - 0.648_054_273_663_885_4).abs() < 1e-15);
        assert!((laplace_exit(1e-300f64) - 1.0).abs() < 1e-15);
        assert!((laplace_passage(2.0) - (-2.0f64).exp()).abs() < 1e-16);
        assert!((laplace_passage(1e-300f64) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sech_series() {
        let cfg = SeriesConfig::<f64>::default();
        for &theta in &[0.1f64, 1.0, 10.0] {
            let exact = laplace_exit(theta);
            let pf = sech_series_theta(theta, &cfg).unwrap();
            assert!((pf - exact).abs() < 1e-8, "theta={theta}: {pf} vs {exact}");
            let geo = sech_series_geometric(theta, &cfg).unwrap();
            assert!((geo - exact).abs() < 10.0 * cfg.abs_tol);
        }
        let exact = laplace_exit(1.0f64);
        assert!((sech_series_theta_partial(1.0, 10_000) - exact).abs() < 1e-4);
        // Truncating the geometric series after k terms errs by at most the
        // next term, 2 e^{-(2k+1)√2}.
        for k in 1..6 {
            let err = (sech_series_geometric_partial(1.0, k) - exact).abs();
            let bound = 2.0 * (-((2 * k + 1) as f64) * 2f64.sqrt()).exp();
            assert!(err <= bound, "k={k}: {err} > {bound}");
        }
        assert!((sech_series_geometric_partial(1.0, 4) - exact).abs() < 1e-5);
    }

    #[test]
    fn lambda_and_generating_functions() {
        assert!((lambda(0.6f64).unwrap() - 1.0 / 3.0).abs() < 1e-16);
        assert!((lambda(1.0f64 - 1e-12).unwrap() - 1.0).abs() < 1e-5);
        assert!(lambda(0.0).is_err() && lambda(1.0).is_err() && lambda(-0.5).is_err());
        assert!((gen_fn_sigma(0.6f64, 1).unwrap() - 1.0 / 3.0).abs() < 1e-16);
        assert!((gen_fn_tau(1.0f64 - 1e-12, 3).unwrap() - 1.0).abs() < 1e-4);
        assert!(gen_fn_tau(0.5, 0).is_err());
    }

    #[test]
    fn passage_density_shape() {
        assert_eq!(passage_density(0.0), 0.0);
        assert!(passage_density(1e-3) < 1e-200);
        // d/dt log f = -3/(2t) + 1/(2t²) vanishes at t = 1/3
        let mode: f64 = 1.0 / 3.0;
        let h = 1e-6;
        let slope = (passage_density(mode + h).ln() - passage_density(mode - h).ln()) / (2.0 * h);
        assert!(slope.abs() < 1e-6);
        assert!(passage_density(mode) > passage_density(0.3));
        assert!(passage_density(mode) > passage_density(0.36));
    }

    #[test]
    fn f32_instantiation_tracks_f64() {
        let cfg32 = SeriesConfig::<f32> {
            abs_tol: 1e-7,
            ..Default::default()
        };
        let cfg64 = SeriesConfig::<f64>::default();
        for &y in &[0.05f32, 0.3, 0.5, 1.0, 3.0] {
            let a = h(y, &cfg32) as f64;
            let b = h(y as f64, &cfg64);
            assert!((a - b).abs() < 1e-6, "y={y}: {a} vs {b}");
        }
        let laws32 = LimitLaws::<f32> {
            series: cfg32,
            quad: QuadratureConfig {
                rel_tol: 1e-5,
                tail_cutoff_tol: 1e-7,
                ..Default::default()
            },
        };
        assert!((laws32.exit_moment_limit(1, 1).unwrap() - 1.0).abs() < 1e-4);
    }
}
