//! Fixed-order Gauss–Legendre panels with dyadic adaptive splitting.
//!
//! The integrands in this crate are smooth on `[0, ∞)` and decay at least
//! exponentially, so the semi-infinite integrals are cut at a point chosen
//! from an analytic envelope by the caller and the finite piece is handled
//! here.

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig<T> {
    /// Target relative accuracy of the finite-range integral.
    pub rel_tol: T,
    /// Gauss–Legendre nodes per panel.
    pub panel_order: usize,
    /// The semi-infinite range is truncated where the analytic tail bound
    /// falls below this value.
    pub tail_cutoff_tol: T,
    /// Maximum number of dyadic refinements of any initial panel.
    pub max_depth: usize,
}

impl<T: Real> Default for QuadratureConfig<T> {
    fn default() -> Self {
        Self {
            rel_tol: T::lit(1e-9),
            panel_order: 32,
            tail_cutoff_tol: T::lit(1e-16),
            max_depth: 40,
        }
    }
}

impl<T: Real> QuadratureConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > T::zero()) {
            return Err(Error::InvalidArgument("rel_tol must be positive".into()));
        }
        if !(self.tail_cutoff_tol > T::zero()) {
            return Err(Error::InvalidArgument("tail_cutoff_tol must be positive".into()));
        }
        if self.panel_order < 2 {
            return Err(Error::InvalidArgument("panel_order must be at least 2".into()));
        }
        Ok(())
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre<T> {
    nodes: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> GaussLegendre<T> {
    /// Computes an `n`-point rule by Newton iteration on `P_n`, in `f64`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0f64; n];
        let mut weights = vec![0.0f64; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            // Tricomi's initial guess for the i-th largest root.
            let theta = std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5);
            let mut x = theta.cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = x;
            nodes[n - 1 - i] = -x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self {
            nodes: nodes.into_iter().map(T::lit).collect(),
            weights: weights.into_iter().map(T::lit).collect(),
        }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Applies the rule on `[a, b]`.
    pub fn integrate(&self, a: T, b: T, f: &mut impl FnMut(T) -> T) -> T {
        let half = (b - a) * T::lit(0.5);
        let mid = (a + b) * T::lit(0.5);
        let mut acc = T::zero();
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc = acc + w * f(mid + half * x);
        }
        acc * half
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p, d)
}

/// Value of an integral together with the accumulated panel-error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral<T> {
    pub value: T,
    pub error_estimate: T,
    pub panels: usize,
}

/// Adaptive integration of `f` over `[a, b]`, starting from `initial_panels`
/// equal panels.
pub fn integrate_adaptive<T: Real>(
    f: &mut impl FnMut(T) -> T,
    a: T,
    b: T,
    initial_panels: usize,
    cfg: &QuadratureConfig<T>,
) -> Result<Integral<T>> {
    let panels = initial_panels.max(1);
    let width = (b - a) / T::from_count(panels);
    let mut points: Vec<T> = (0..panels).map(|i| a + width * T::from_count(i)).collect();
    points.push(b);
    integrate_breakpoints(f, &points, cfg)
}

/// Adaptive integration over consecutive panels `[p_i, p_{i+1}]`; the
/// breakpoints must be increasing.
pub fn integrate_breakpoints<T: Real>(
    f: &mut impl FnMut(T) -> T,
    points: &[T],
    cfg: &QuadratureConfig<T>,
) -> Result<Integral<T>> {
    cfg.validate()?;
    if points.len() < 2 || points.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(
            "quadrature breakpoints must be strictly increasing".into(),
        ));
    }
    let rule = GaussLegendre::new(cfg.panel_order);

    let mut coarse = Vec::with_capacity(points.len() - 1);
    let mut scale = T::zero();
    for w in points.windows(2) {
        let v = rule.integrate(w[0], w[1], f);
        scale = scale + v.abs();
        coarse.push((w[0], w[1], v));
    }
    // An identically vanishing integrand still needs a finite tolerance.
    let abs_tol = (cfg.rel_tol * scale).max(T::min_positive_value());
    let panels = T::from_count(coarse.len());

    let mut out = Integral {
        value: T::zero(),
        error_estimate: T::zero(),
        panels: 0,
    };
    for (lo, hi, v) in coarse {
        refine(&rule, f, lo, hi, v, abs_tol / panels, 0, cfg.max_depth, &mut out)?;
    }
    Ok(out)
}

/// Breakpoints `0, h, 2h, 4h, …` doubling up to (and including) `upper`.
pub fn geometric_breakpoints<T: Real>(first: T, upper: T) -> Vec<T> {
    let mut pts = vec![T::zero()];
    let mut x = first;
    while x < upper {
        pts.push(x);
        x = x + x;
    }
    pts.push(upper);
    pts
}

#[allow(clippy::too_many_arguments)]
fn refine<T: Real>(
    rule: &GaussLegendre<T>,
    f: &mut impl FnMut(T) -> T,
    a: T,
    b: T,
    whole: T,
    tol: T,
    depth: usize,
    max_depth: usize,
    out: &mut Integral<T>,
) -> Result<()> {
    let mid = (a + b) * T::lit(0.5);
    let left = rule.integrate(a, mid, f);
    let right = rule.integrate(mid, b, f);
    let diff = (left + right - whole).abs();
    if diff <= tol {
        out.value = out.value + left + right;
        out.error_estimate = out.error_estimate + diff;
        out.panels += 2;
        return Ok(());
    }
    if depth >= max_depth {
        return Err(Error::QuadratureDepth {
            a: a.to_f64().unwrap_or(f64::NAN),
            b: b.to_f64().unwrap_or(f64::NAN),
            depth: max_depth,
        });
    }
    let half = tol * T::lit(0.5);
    refine(rule, f, a, mid, left, half, depth + 1, max_depth, out)?;
    refine(rule, f, mid, b, right, half, depth + 1, max_depth, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_is_exact_for_polynomials() {
        let rule = GaussLegendre::<f64>::new(8);
        // degree 15 is the highest integrated exactly by 8 nodes
        let got = rule.integrate(0.0, 2.0, &mut |x: f64| x.powi(15));
        let want = 2f64.powi(16) / 16.0;
        assert!((got - want).abs() / want < 1e-14);
        let wsum: f64 = rule.weights.iter().sum();
        assert!((wsum - 2.0).abs() < 1e-14);
    }

    #[test]
    fn order_32_nodes_are_roots() {
        let rule = GaussLegendre::<f64>::new(32);
        for &x in &rule.nodes {
            let (p, _) = legendre_with_derivative(32, x);
            assert!(p.abs() < 1e-13);
        }
    }

    #[test]
    fn adaptive_handles_sharp_peak() {
        let cfg = QuadratureConfig::<f64>::default();
        let mut f = |x: f64| 1.0 / (1e-4 + (x - 0.3) * (x - 0.3));
        let got = integrate_adaptive(&mut f, 0.0, 1.0, 1, &cfg).unwrap();
        let want = 100.0 * ((0.7f64 / 0.01).atan() + (0.3f64 / 0.01).atan());
        assert!((got.value - want).abs() / want < 1e-9, "{} vs {}", got.value, want);
    }

    #[test]
    fn depth_cap_is_reported() {
        let cfg = QuadratureConfig::<f64> {
            max_depth: 2,
            panel_order: 4,
            ..Default::default()
        };
        let mut f = |x: f64| (x - 0.3).abs().sqrt();
        assert!(matches!(
            integrate_adaptive(&mut f, 0.0, 1.0, 1, &cfg),
            Err(Error::QuadratureDepth { .. })
        ));
    }

    #[test]
    fn f32_instantiation() {
        let cfg = QuadratureConfig::<f32> {
            rel_tol: 1e-5,
            ..Default::default()
        };
        let got = integrate_adaptive(&mut |x: f32| (-x).exp(), 0.0, 10.0, 4, &cfg).unwrap();
        assert!((got.value - (1.0 - (-10f32).exp())).abs() < 1e-5);
    }
}
