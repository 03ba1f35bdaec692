//! Exact finite-`(N, r)` answers from the absorbing chain on the cube
//! `B_r = [-r, r]^N`.
//!
//! States are the `(2r+1)^N` lattice points of the cube, stored in
//! row-major order with coordinate 0 fastest. The sub-stochastic interior
//! operator `Q` (the walk killed on leaving `B_r`) is applied matrix-free as
//! a `2N`-point stencil.

use crate::error::{Error, Result};
use crate::lattice_walk::KahanSum;

/// Largest state space the oracle will allocate.
pub const MAX_STATES: u128 = 10_000_000;

/// The chain killed outside `B_r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AbsorbingChainSpec {
    pub dim: usize,
    pub radius: u64,
}

impl AbsorbingChainSpec {
    pub fn new(dim: usize, radius: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        let spec = Self { dim, radius };
        let states = spec.state_count();
        if states > MAX_STATES {
            return Err(Error::SizeGuard {
                states,
                limit: MAX_STATES,
            });
        }
        Ok(spec)
    }

    /// `(2r+1)^N`, saturating.
    pub fn state_count(&self) -> u128 {
        let side = 2 * self.radius as u128 + 1;
        let mut n: u128 = 1;
        for _ in 0..self.dim {
            n = n.saturating_mul(side);
        }
        n
    }

    pub fn side(&self) -> usize {
        2 * self.radius as usize + 1
    }

    pub fn len(&self) -> usize {
        self.state_count() as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat index of a lattice point inside the cube.
    pub fn index_of(&self, point: &[i64]) -> Option<usize> {
        if point.len() != self.dim {
            return None;
        }
        let r = self.radius as i64;
        let side = self.side();
        let mut idx = 0usize;
        for &z in point.iter().rev() {
            if z.abs() > r {
                return None;
            }
            idx = idx * side + (z + r) as usize;
        }
        Some(idx)
    }

    pub fn point_of(&self, mut idx: usize) -> Vec<i64> {
        let side = self.side();
        let r = self.radius as i64;
        (0..self.dim)
            .map(|_| {
                let c = (idx % side) as i64 - r;
                idx /= side;
                c
            })
            .collect()
    }

    pub fn origin(&self) -> usize {
        self.index_of(&vec![0; self.dim]).expect("origin is inside the cube")
    }

    /// `out = Q x` where `Q` moves to each in-cube neighbor with probability
    /// `1/(2N)`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let side = self.side();
        let len = self.len();
        out.fill(0.0);
        let mut inner = 1usize;
        for _ in 0..self.dim {
            let block = inner * side;
            for base in (0..len).step_by(block) {
                for c in 0..side {
                    let at = base + c * inner;
                    if c > 0 {
                        let (dst, src) = (at, at - inner);
                        for k in 0..inner {
                            out[dst + k] += x[src + k];
                        }
                    }
                    if c + 1 < side {
                        let (dst, src) = (at, at + inner);
                        for k in 0..inner {
                            out[dst + k] += x[src + k];
                        }
                    }
                }
            }
            inner = block;
        }
        let w = 1.0 / (2 * self.dim) as f64;
        for v in out.iter_mut() {
            *v *= w;
        }
    }

    /// `1 - (I - Q) h`, evaluated in double-double so that the result is
    /// accurate even when `h` is large and the residual is near the rounding
    /// level of `h`.
    fn accurate_residual(&self, h: &[f64], out: &mut [f64]) {
        let side = self.side();
        let len = self.len();
        let mut hi = vec![0.0f64; len];
        let mut lo = vec![0.0f64; len];
        let mut inner = 1usize;
        for _ in 0..self.dim {
            let block = inner * side;
            for base in (0..len).step_by(block) {
                for c in 0..side {
                    let at = base + c * inner;
                    for k in 0..inner {
                        let i = at + k;
                        if c > 0 {
                            let (s, e) = two_sum(hi[i], h[i - inner]);
                            hi[i] = s;
                            lo[i] += e;
                        }
                        if c + 1 < side {
                            let (s, e) = two_sum(hi[i], h[i + inner]);
                            hi[i] = s;
                            lo[i] += e;
                        }
                    }
                }
            }
            inner = block;
        }
        let w = 1.0 / (2 * self.dim) as f64;
        for i in 0..len {
            // (hi + lo) * w in double-double
            let p = hi[i] * w;
            let pe = hi[i].mul_add(w, -p) + lo[i] * w;
            // 1 - h + p + pe
            let (s, e) = two_sum(1.0, -h[i]);
            let (s, e2) = two_sum(s, p);
            out[i] = s + (e + e2 + pe);
        }
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solution of `(I - Q) h = 1`: `h(z)` is the expected exit time from `z`.
#[derive(Debug, Clone)]
pub struct ExitSolution {
    pub spec: AbsorbingChainSpec,
    pub values: Vec<f64>,
    /// Max-norm residual, computed in extended precision.
    pub residual: f64,
    pub iterations: usize,
}

impl ExitSolution {
    pub fn at(&self, point: &[i64]) -> Option<f64> {
        self.spec.index_of(point).map(|i| self.values[i])
    }

    pub fn at_origin(&self) -> f64 {
        self.values[self.spec.origin()]
    }
}

/// Residual target for the linear solve; relaxed to a few ulps of `max h`
/// where `1e-12` is below the resolution of the solution itself.
fn residual_target(h_max: f64) -> f64 {
    1e-12f64.max(8.0 * f64::EPSILON * h_max)
}

/// Conjugate gradients on the SPD operator `I - Q`; returns iterations used.
fn conjugate_gradient(spec: &AbsorbingChainSpec, b: &[f64], x: &mut [f64], rel_tol: f64, max_iter: usize) -> usize {
    let len = b.len();
    let mut aq = vec![0.0; len];
    let apply_a = |v: &[f64], out: &mut [f64], scratch: &mut Vec<f64>| {
        spec.apply(v, scratch);
        for i in 0..len {
            out[i] = v[i] - scratch[i];
        }
    };
    let mut scratch = vec![0.0; len];
    apply_a(x, &mut aq, &mut scratch);
    let mut r: Vec<f64> = b.iter().zip(&aq).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for it in 0..max_iter {
        if rr.sqrt() <= rel_tol * b_norm {
            return it;
        }
        apply_a(&p, &mut aq, &mut scratch);
        let pap: f64 = p.iter().zip(&aq).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return it;
        }
        let alpha = rr / pap;
        for i in 0..len {
            x[i] += alpha * p[i];
            r[i] -= alpha * aq[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        for i in 0..len {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    max_iter
}

/// Solves `(I - Q) h = 1` on the whole cube.
///
/// Conjugate gradients give a first solution; iterative refinement with a
/// double-double residual then drives the max-norm residual below `1e-12`
/// (or a few ulps of `max h` for very large cubes).
pub fn solve_expected_exit(dim: usize, radius: u64) -> Result<ExitSolution> {
    let spec = AbsorbingChainSpec::new(dim, radius)?;
    let len = spec.len();
    let ones = vec![1.0; len];
    let mut h = vec![0.0; len];
    let max_iter = 20 * len + 1000;
    let mut iterations = conjugate_gradient(&spec, &ones, &mut h, 1e-14, max_iter);
    let mut res = vec![0.0; len];
    let mut delta = vec![0.0; len];
    let mut residual = f64::INFINITY;
    for _ in 0..20 {
        spec.accurate_residual(&h, &mut res);
        residual = max_abs(&res);
        if residual < residual_target(max_abs(&h)) {
            return Ok(ExitSolution {
                spec,
                values: h,
                residual,
                iterations,
            });
        }
        delta.fill(0.0);
        iterations += conjugate_gradient(&spec, &res, &mut delta, 1e-12, max_iter);
        for (x, d) in h.iter_mut().zip(&delta) {
            *x += d;
        }
    }
    Err(Error::SolverNonConvergence { residual, iterations })
}

/// `E T̃_{N,r}` from the origin.
pub fn expected_exit_exact(dim: usize, radius: u64) -> Result<f64> {
    Ok(solve_expected_exit(dim, radius)?.at_origin())
}

/// `probs[t] = P(T̃_r > t)` for `t = 0..=truncated_at`, with a bound on the
/// mass beyond the table.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalTable {
    pub probs: Vec<f64>,
    pub truncated_at: usize,
    /// Upper bound on `Σ_{t > truncated_at} probs[t]`.
    pub tail_bound: f64,
    /// Two-step contraction estimate `ρ̂` used for the tail.
    pub ratio: f64,
}

impl SurvivalTable {
    /// `P(T̃ > t)`; beyond the table the geometric majorant is returned.
    pub fn survival(&self, t: usize) -> f64 {
        if t <= self.truncated_at {
            self.probs[t]
        } else {
            let last = self.probs[self.truncated_at];
            last * self.ratio.powi(((t - self.truncated_at) / 2) as i32)
        }
    }

    /// Point masses `P(T̃ = t) = probs[t-1] - probs[t]`, index 0 unused.
    pub fn masses(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        out.extend(self.probs.windows(2).map(|w| (w[0] - w[1]).max(0.0)));
        out
    }

    /// Majorant of `Σ_{t > T*} w(t) P(T̃ > t)` for a nonnegative weight, using
    /// `P(T̃ > T* + k) ≤ probs[T*] ρ̂^{⌊k/2⌋}`.
    pub fn weighted_tail_bound(&self, mut weight: impl FnMut(usize) -> f64) -> f64 {
        let last = self.probs[self.truncated_at];
        if last == 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        let mut k = 1usize;
        loop {
            let term = weight(self.truncated_at + k) * last * self.ratio.powi((k / 2) as i32);
            acc += term;
            if (term < 1e-18 * acc && k > 8) || term == 0.0 || k > 50_000_000 {
                return acc;
            }
            k += 1;
        }
    }
}

/// Guard against runaway iteration when `tol` is unreachably small.
const SURVIVAL_MAX_STEPS: usize = 50_000_000;

/// Iterates `v ← Q v` from the origin until `P(T̃ > t) < tol`.
pub fn exit_survival(dim: usize, radius: u64, tol: f64) -> Result<SurvivalTable> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidArgument("survival tolerance must lie in (0, 1)".into()));
    }
    let spec = AbsorbingChainSpec::new(dim, radius)?;
    let len = spec.len();
    let mut v = vec![0.0; len];
    v[spec.origin()] = 1.0;
    let mut next = vec![0.0; len];
    let mut probs = vec![1.0];
    loop {
        let t = probs.len();
        spec.apply(&v, &mut next);
        std::mem::swap(&mut v, &mut next);
        let mut mass = KahanSum::default();
        for &x in &v {
            mass.add(x);
        }
        let prev = *probs.last().expect("non-empty");
        probs.push(mass.value().min(prev));
        let p = probs[t];
        if p == 0.0 {
            return Ok(SurvivalTable {
                probs,
                truncated_at: t,
                tail_bound: 0.0,
                ratio: 0.0,
            });
        }
        if p < tol && t >= 4 {
            // Largest recent two-step ratio; parity effects cancel over pairs.
            let ratio = (t - 3..=t).map(|s| probs[s] / probs[s - 2]).fold(0.0f64, f64::max);
            if ratio >= 1.0 {
                return Err(Error::SurvivalStall { ratio, step: t });
            }
            let tail_bound = p * (1.0 + ratio) / (1.0 - ratio);
            return Ok(SurvivalTable {
                probs,
                truncated_at: t,
                tail_bound,
                ratio,
            });
        }
        if t >= SURVIVAL_MAX_STEPS {
            return Err(Error::SurvivalStall {
                ratio: p / probs[t - 2],
                step: t,
            });
        }
    }
}

/// `P(T̃_r > t)` for `t = 0..=horizon` (no truncation).
pub fn survival_to_horizon(dim: usize, radius: u64, horizon: usize) -> Result<Vec<f64>> {
    let spec = AbsorbingChainSpec::new(dim, radius)?;
    let len = spec.len();
    let mut v = vec![0.0; len];
    v[spec.origin()] = 1.0;
    let mut next = vec![0.0; len];
    let mut probs = Vec::with_capacity(horizon + 1);
    probs.push(1.0);
    for _ in 0..horizon {
        spec.apply(&v, &mut next);
        std::mem::swap(&mut v, &mut next);
        let mut mass = KahanSum::default();
        for &x in &v {
            mass.add(x);
        }
        let prev = *probs.last().expect("non-empty");
        probs.push(mass.value().min(prev));
    }
    Ok(probs)
}

/// A value together with a certified bound on its truncation error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certified {
    pub value: f64,
    pub error_bound: f64,
}

/// `E T̃_{N,r}^p = Σ_{t≥0} ((t+1)^p - t^p) P(T̃ > t)`.
pub fn exit_moment_exact(dim: usize, radius: u64, p: u32, tol: f64) -> Result<Certified> {
    if p == 0 {
        return Err(Error::InvalidArgument("moment order must be positive".into()));
    }
    let table = exit_survival(dim, radius, tol)?;
    Ok(moment_from_table(&table, p))
}

/// Moment `p` of the exit time described by `table`.
pub fn moment_from_table(table: &SurvivalTable, p: u32) -> Certified {
    let weight = |t: usize| {
        let t = t as f64;
        (t + 1.0).powi(p as i32) - t.powi(p as i32)
    };
    let mut acc = KahanSum::default();
    for (t, &s) in table.probs.iter().enumerate() {
        acc.add(weight(t) * s);
    }
    Certified {
        value: acc.value(),
        error_bound: table.weighted_tail_bound(weight),
    }
}

/// `P(M̃_{N,t} ≤ m) = P(T̃_m > t)`.
pub fn max_cdf_exact(dim: usize, horizon: u64, m: u64) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if m >= horizon {
        return Ok(1.0);
    }
    Ok(*survival_to_horizon(dim, m, horizon as usize)?
        .last()
        .expect("non-empty"))
}

/// `P(M̃_{N,t} ≤ m)` for `m = 0..=t`.
pub fn max_cdf_table(dim: usize, horizon: u64) -> Result<Vec<f64>> {
    (0..=horizon).map(|m| max_cdf_exact(dim, horizon, m)).collect()
}

/// `P(M̃_t > m) ≤ 4N exp(-(m+1)²/(2t))`: each coordinate is a symmetric walk
/// with increments in `{-1, 0, 1}`, so Lévy's inequality and Hoeffding's
/// bound apply to it.
fn max_tail_majorant(dim: usize, horizon: u64, m: u64) -> f64 {
    let a = (m + 1) as f64;
    (4.0 * dim as f64 * (-a * a / (2.0 * horizon as f64)).exp()).min(1.0)
}

/// Largest radius whose survival table is needed for an exact max moment.
pub fn max_moment_radius_cutoff(dim: usize, horizon: u64, p: u32) -> u64 {
    let mut m = 0u64;
    while m + 1 < horizon {
        let w = ((m + 2) as f64).powi(p as i32);
        if w * max_tail_majorant(dim, horizon, m + 1) * (horizon as f64) < 1e-15 {
            break;
        }
        m += 1;
    }
    m
}

/// Number of stencil updates [`max_moment_exact`] performs.
pub fn max_moment_work(dim: usize, horizon: u64, p: u32) -> u128 {
    let cutoff = max_moment_radius_cutoff(dim, horizon, p);
    (0..=cutoff)
        .map(|m| {
            let spec = AbsorbingChainSpec { dim, radius: m };
            spec.state_count().saturating_mul(horizon as u128)
        })
        .fold(0u128, |a, b| a.saturating_add(b))
}

/// `E M̃_{N,t}^p = Σ_{m≥0} ((m+1)^p - m^p) P(M̃_t > m)`, truncated where the
/// Hoeffding majorant makes the remaining terms negligible.
pub fn max_moment_exact(dim: usize, horizon: u64, p: u32) -> Result<Certified> {
    if p == 0 {
        return Err(Error::InvalidArgument("moment order must be positive".into()));
    }
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let weight = |m: u64| ((m + 1) as f64).powi(p as i32) - (m as f64).powi(p as i32);
    let cutoff = max_moment_radius_cutoff(dim, horizon, p);
    let mut acc = KahanSum::default();
    for m in 0..=cutoff {
        let below = max_cdf_exact(dim, horizon, m)?;
        acc.add(weight(m) * (1.0 - below));
    }
    let error_bound: f64 = (cutoff + 1..horizon)
        .map(|m| weight(m) * max_tail_majorant(dim, horizon, m))
        .sum();
    Ok(Certified {
        value: acc.value(),
        error_bound,
    })
}

/// Distribution of `τ_b = inf{t : |S_t| ≥ b}` for the one-dimensional walk.
#[derive(Debug, Clone, PartialEq)]
pub struct PassageDistribution {
    /// `probs[t] = P(τ_b = t)`; `probs[0] = 0`.
    pub probs: Vec<f64>,
    /// `P(τ_b > probs.len() - 1)`.
    pub tail: f64,
}

impl PassageDistribution {
    /// `Σ_t P(τ_b = t) z^t` over the table.
    pub fn generating_function(&self, z: f64) -> f64 {
        let mut acc = KahanSum::default();
        let mut zt = 1.0;
        for &q in &self.probs {
            acc.add(q * zt);
            zt *= z;
        }
        acc.value()
    }
}

/// `P(τ_b = t)`: leaving `(-b, b)` means exiting the cube of radius `b-1`.
pub fn tau_distribution_1d(b: u64, tol: f64) -> Result<PassageDistribution> {
    if b == 0 {
        return Err(Error::InvalidArgument("level b must be at least 1".into()));
    }
    let table = exit_survival(1, b - 1, tol)?;
    Ok(PassageDistribution {
        probs: table.masses(),
        tail: table.probs[table.truncated_at],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_round_trips() {
        let spec = AbsorbingChainSpec::new(3, 2).unwrap();
        assert_eq!(spec.len(), 125);
        for i in 0..spec.len() {
            assert_eq!(spec.index_of(&spec.point_of(i)), Some(i));
        }
        assert_eq!(spec.point_of(spec.origin()), vec![0, 0, 0]);
        assert_eq!(spec.index_of(&[3, 0, 0]), None);
    }

    #[test]
    fn stencil_row_sums() {
        // Q·1 is 1 in the interior and loses 1/(2N) per boundary face.
        let spec = AbsorbingChainSpec::new(2, 2).unwrap();
        let ones = vec![1.0; spec.len()];
        let mut out = vec![0.0; spec.len()];
        spec.apply(&ones, &mut out);
        for (i, v) in out.iter().enumerate() {
            let faces = spec.point_of(i).iter().filter(|z| z.abs() == 2).count();
            assert!((v - (1.0 - faces as f64 / 4.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn size_guard() {
        assert!(matches!(AbsorbingChainSpec::new(3, 200), Err(Error::SizeGuard { .. })));
        assert!(matches!(expected_exit_exact(8, 10), Err(Error::SizeGuard { .. })));
    }

    #[test]
    fn unit_radius_one_dim() {
        assert!((expected_exit_exact(1, 1).unwrap() - 4.0).abs() < 1e-12);
        let table = exit_survival(1, 1, 1e-14).unwrap();
        assert_eq!(table.probs[0], 1.0);
        assert_eq!(table.probs[1], 1.0);
        assert_eq!(table.probs[2], 0.5);
    }

    #[test]
    fn exit_parity_in_one_dimension() {
        // r = 1: exits only at even times; r = 2: only at odd times.
        let t1 = exit_survival(1, 1, 1e-12).unwrap();
        for k in 0..t1.truncated_at / 2 {
            assert_eq!(t1.probs[2 * k], t1.probs[2 * k + 1]);
        }
        let t2 = exit_survival(1, 2, 1e-12).unwrap();
        for k in 0..(t2.truncated_at - 1) / 2 {
            assert_eq!(t2.probs[2 * k + 1], t2.probs[2 * k + 2]);
        }
    }

    #[test]
    fn survival_is_monotone() {
        for (dim, r) in [(1, 5), (2, 3), (3, 2)] {
            let t = exit_survival(dim, r, 1e-12).unwrap();
            assert!(t.probs.windows(2).all(|w| w[1] <= w[0]));
            assert!(t.probs.iter().all(|&p| (0.0..=1.0).contains(&p)));
            assert!(t.tail_bound >= 0.0);
        }
    }

    #[test]
    fn survival_validates_tolerance() {
        assert!(exit_survival(1, 1, 0.0).is_err());
        assert!(exit_survival(1, 1, 1.5).is_err());
    }

    #[test]
    fn max_cdf_small_cases() {
        assert_eq!(max_cdf_exact(2, 5, 5).unwrap(), 1.0);
        assert_eq!(max_cdf_exact(2, 5, 9).unwrap(), 1.0);
        assert!((max_cdf_exact(1, 2, 1).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(max_cdf_exact(3, 4, 0).unwrap(), 0.0);
    }

    #[test]
    fn tau_small_levels() {
        let d1 = tau_distribution_1d(1, 1e-14).unwrap();
        assert_eq!(d1.probs[1], 1.0);
        let d2 = tau_distribution_1d(2, 1e-14).unwrap();
        assert!((d2.probs[2] - 0.5).abs() < 1e-15);
        assert!((d2.probs[4] - 0.25).abs() < 1e-15);
        assert!((d2.probs[6] - 0.125).abs() < 1e-15);
        assert!(d2.probs.iter().step_by(2).skip(1).count() > 0);
        assert!(d2.probs.iter().skip(1).step_by(2).all(|&q| q == 0.0));
    }

    #[test]
    fn max_moment_exact_small_horizon() {
        // t = 1: M̃_1 = 1 surely.
        let m = max_moment_exact(3, 1, 2).unwrap();
        assert!((m.value - 1.0).abs() < 1e-15);
        // t = 2, N = 1: M̃ ∈ {1, 2} with equal probability, E M̃² = 2.5.
        let m = max_moment_exact(1, 2, 2).unwrap();
        assert!((m.value - 2.5).abs() < 1e-15);
    }
}
