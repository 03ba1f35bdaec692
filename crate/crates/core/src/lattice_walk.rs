//! Simulation of the simple random walk on `Z^N`.
//!
//! Every move is one uniform draw from the `2N` outcomes `±e_i`; outcome `2i`
//! is `+e_i` and `2i + 1` is `-e_i`. When `2N` is a power of two the draws are
//! peeled off 64-bit words a few bits at a time, otherwise they come from an
//! unbiased bounded sampler.
//!
//! # Reproducibility
//!
//! Batches are cut into fixed blocks of [`BatchConfig::block_size`] samples.
//! Block `k` of a run with seed `s` draws from [`stream_rng`]`(s, k)`: a
//! ChaCha8 generator keyed by `seed_from_u64(s)` with stream id `k`. Blocks
//! are summed in index order, so a [`MomentEstimate`] depends only on
//! `(seed, n_samples, block_size)` and not on the number of worker threads.

use rand::distr::{Distribution, Uniform};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Hard cap on the length of a single path.
pub const DEFAULT_STEP_CAP: u64 = 1_000_000_000;

/// Position of the walk and the number of steps taken.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WalkState {
    pub position: Vec<i64>,
    pub time: u64,
}

impl WalkState {
    pub fn origin(dim: usize) -> Self {
        Self {
            position: vec![0; dim],
            time: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.position.len()
    }

    /// `max_i |z_i|`.
    pub fn linf_norm(&self) -> u64 {
        self.position.iter().map(|z| z.unsigned_abs()).max().unwrap_or(0)
    }

    pub fn l1_norm(&self) -> u64 {
        self.position.iter().map(|z| z.unsigned_abs()).sum()
    }

    /// Applies outcome `outcome ∈ [0, 2N)` in place.
    pub fn advance(&mut self, outcome: usize) {
        let mv = Move::from_index(outcome);
        self.position[mv.coord] += mv.delta();
        self.time += 1;
    }

    /// The state after outcome `outcome`.
    pub fn step(&self, outcome: usize) -> Self {
        let mut next = self.clone();
        next.advance(outcome);
        next
    }
}

/// A single lattice move `±e_coord`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Move {
    pub coord: usize,
    pub positive: bool,
}

impl Move {
    pub fn from_index(outcome: usize) -> Self {
        Self {
            coord: outcome >> 1,
            positive: outcome & 1 == 0,
        }
    }

    pub fn index(self) -> usize {
        2 * self.coord + usize::from(!self.positive)
    }

    pub fn delta(self) -> i64 {
        if self.positive {
            1
        } else {
            -1
        }
    }
}

/// Uniform draws from `[0, outcomes)`.
#[derive(Debug, Clone)]
pub struct IndexSource {
    outcomes: usize,
    bits: u32,
    mask: u64,
    buffer: u64,
    available: u32,
    bounded: Option<Uniform<usize>>,
}

impl IndexSource {
    pub fn new(outcomes: usize) -> Self {
        assert!(outcomes >= 1, "need at least one outcome");
        if outcomes.is_power_of_two() {
            let bits = outcomes.trailing_zeros();
            Self {
                outcomes,
                bits,
                mask: (1u64 << bits).wrapping_sub(1),
                buffer: 0,
                available: 0,
                bounded: None,
            }
        } else {
            Self {
                outcomes,
                bits: 0,
                mask: 0,
                buffer: 0,
                available: 0,
                bounded: Some(Uniform::new(0, outcomes).expect("non-empty range")),
            }
        }
    }

    pub fn outcomes(&self) -> usize {
        self.outcomes
    }

    #[inline]
    pub fn next<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> usize {
        if let Some(u) = &self.bounded {
            return u.sample(rng);
        }
        if self.bits == 0 {
            return 0;
        }
        if self.available < self.bits {
            self.buffer = rng.next_u64();
            self.available = 64;
        }
        let out = (self.buffer & self.mask) as usize;
        self.buffer >>= self.bits;
        self.available -= self.bits;
        out
    }
}

/// Generator for stream `stream` of a run seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-byte summary of eight ±1 steps (bit `i` set means step `i` is `-1`):
/// net displacement and the extreme partial sums over steps `1..=8`.
#[derive(Clone, Copy)]
struct ByteSteps {
    net: i64,
    high: i64,
    low: i64,
}

const BYTE_STEPS: [ByteSteps; 256] = {
    let mut table = [ByteSteps {
        net: 0,
        high: 0,
        low: 0,
    }; 256];
    let mut b = 0;
    while b < 256 {
        let mut z = 0i64;
        let mut high = i64::MIN;
        let mut low = i64::MAX;
        let mut i = 0;
        while i < 8 {
            z += if (b >> i) & 1 == 0 { 1 } else { -1 };
            if z > high {
                high = z;
            }
            if z < low {
                low = z;
            }
            i += 1;
        }
        table[b] = ByteSteps { net: z, high, low };
        b += 1;
    }
    table
};

/// One-dimensional exit time, eight steps per table lookup.
fn exit_time_1d<R: RngCore + ?Sized>(radius: u64, rng: &mut R, step_cap: u64) -> Result<u64> {
    let r = radius as i64;
    let mut z = 0i64;
    let mut t = 0u64;
    loop {
        let mut word = rng.next_u64();
        for _ in 0..8 {
            let byte = (word & 0xff) as usize;
            let s = BYTE_STEPS[byte];
            if z + s.high > r || z + s.low < -r {
                for i in 0..8 {
                    z += if (byte >> i) & 1 == 0 { 1 } else { -1 };
                    t += 1;
                    if z.abs() > r {
                        return if t <= step_cap {
                            Ok(t)
                        } else {
                            Err(Error::BudgetExceeded { cap: step_cap })
                        };
                    }
                }
                unreachable!("byte summary promised an exit");
            }
            z += s.net;
            t += 8;
            if t >= step_cap {
                return Err(Error::BudgetExceeded { cap: step_cap });
            }
            word >>= 8;
        }
    }
}

/// One-dimensional running maximum of `|Z_s|` over `s ≤ horizon`.
fn running_max_1d<R: RngCore + ?Sized>(horizon: u64, rng: &mut R) -> u64 {
    let mut z = 0i64;
    let mut best = 0i64;
    let mut remaining = horizon;
    while remaining >= 64 {
        let mut word = rng.next_u64();
        for _ in 0..8 {
            let s = BYTE_STEPS[(word & 0xff) as usize];
            best = best.max(z + s.high).max(-(z + s.low));
            z += s.net;
            word >>= 8;
        }
        remaining -= 64;
    }
    if remaining > 0 {
        let word = rng.next_u64();
        for i in 0..remaining {
            z += if (word >> i) & 1 == 0 { 1 } else { -1 };
            best = best.max(z.abs());
        }
    }
    best as u64
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    Ok(())
}

/// First time the walk started at the origin leaves the cube `[-r, r]^N`.
pub fn sample_exit_time<R: RngCore + ?Sized>(dim: usize, radius: u64, rng: &mut R, step_cap: u64) -> Result<u64> {
    check_dim(dim)?;
    if radius == 0 {
        return Err(Error::InvalidArgument("radius must be at least 1".into()));
    }
    if dim == 1 {
        return exit_time_1d(radius, rng, step_cap);
    }
    let mut src = IndexSource::new(2 * dim);
    let mut pos = vec![0i64; dim];
    for t in 1..=step_cap {
        let mv = Move::from_index(src.next(rng));
        let z = &mut pos[mv.coord];
        *z += mv.delta();
        if z.unsigned_abs() > radius {
            return Ok(t);
        }
    }
    Err(Error::BudgetExceeded { cap: step_cap })
}

/// `max_{1≤s≤t} |Z_s|_∞`.
pub fn sample_running_max<R: RngCore + ?Sized>(dim: usize, horizon: u64, rng: &mut R) -> Result<u64> {
    check_dim(dim)?;
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if dim == 1 {
        return Ok(running_max_1d(horizon, rng));
    }
    let mut src = IndexSource::new(2 * dim);
    // Only the coordinate that just moved can raise the norm past the
    // running maximum.
    let mut best = 0u64;
    let mut pos = vec![0i64; dim];
    for _ in 0..horizon {
        let mv = Move::from_index(src.next(rng));
        let z = &mut pos[mv.coord];
        *z += mv.delta();
        best = best.max(z.unsigned_abs());
    }
    Ok(best)
}

/// One draw of the coordinate coupling: an `N`-dimensional walk assembled
/// from `N` independent one-dimensional walks and a uniform coordinate
/// selector, with the per-coordinate quantities measured on the same paths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoupledSample {
    /// Exit time `T̃_r` of the assembled walk from `[-r, r]^N`.
    pub exit_time: u64,
    /// `τ_{n,r}`: exit time of the n-th one-dimensional walk from `[-r, r]`.
    pub coord_exit_times: Vec<u64>,
    /// `M̃_t` of the assembled walk.
    pub running_max: u64,
    /// `m_{n,t}`: running maximum of `|Z_n|` over its own first `t` steps.
    pub coord_running_maxima: Vec<u64>,
}

impl CoupledSample {
    /// `T̃_r ≤ Σ τ_{n,r} - (N-1)`.
    pub fn exit_bound_holds(&self) -> bool {
        let n = self.coord_exit_times.len() as u64;
        let total: u64 = self.coord_exit_times.iter().sum();
        self.exit_time + (n - 1) <= total
    }

    /// `M̃_t ≤ max_n m_{n,t}`.
    pub fn max_bound_holds(&self) -> bool {
        self.running_max <= self.coord_running_maxima.iter().copied().max().unwrap_or(0)
    }

    /// `M̃_t ≤ Σ_n m_{n,t}`.
    pub fn max_sum_bound_holds(&self) -> bool {
        self.running_max <= self.coord_running_maxima.iter().sum()
    }
}

/// Samples the coupled realization `Z_t = (Z_{1,K_{1,t}}, …, Z_{N,K_{N,t}})`.
///
/// Each one-dimensional walk is generated first, long enough to cover both
/// its own exit and the horizon (`max(τ_{n,r}, t)` steps); then the selector
/// sequence `d_s` drives the assembled walk until it has both left the cube
/// and reached time `t`. Since `K_{n,s} ≤ s` and no coordinate walk is read
/// past its own exit before the assembled walk exits, the stored prefixes
/// always suffice.
pub fn sample_coupled<R: RngCore + ?Sized>(
    dim: usize,
    radius: u64,
    horizon: u64,
    rng: &mut R,
    step_cap: u64,
) -> Result<CoupledSample> {
    check_dim(dim)?;
    if radius == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("radius and horizon must be at least 1".into()));
    }
    let mut sign = IndexSource::new(2);
    let mut paths: Vec<Vec<i64>> = Vec::with_capacity(dim);
    let mut coord_exit_times = Vec::with_capacity(dim);
    let mut coord_running_maxima = Vec::with_capacity(dim);
    for _ in 0..dim {
        // path[k] = Z_{n,k}
        let mut path = vec![0i64];
        let mut z = 0i64;
        let mut exit = None;
        let mut best = 0u64;
        let mut k = 0u64;
        while exit.is_none() || k < horizon {
            if k == step_cap {
                return Err(Error::BudgetExceeded { cap: step_cap });
            }
            k += 1;
            z += if sign.next(rng) == 0 { 1 } else { -1 };
            path.push(z);
            if k <= horizon {
                best = best.max(z.unsigned_abs());
            }
            if exit.is_none() && z.unsigned_abs() > radius {
                exit = Some(k);
            }
        }
        coord_exit_times.push(exit.expect("loop ends after the exit"));
        coord_running_maxima.push(best);
        paths.push(path);
    }

    let mut selector = IndexSource::new(dim);
    let mut clocks = vec![0usize; dim];
    let mut exit_time = None;
    let mut running_max = 0u64;
    let mut s = 0u64;
    while exit_time.is_none() || s < horizon {
        if s == step_cap {
            return Err(Error::BudgetExceeded { cap: step_cap });
        }
        s += 1;
        let d = selector.next(rng);
        clocks[d] += 1;
        let z = paths[d][clocks[d]].unsigned_abs();
        if s <= horizon {
            running_max = running_max.max(z);
        }
        if exit_time.is_none() && z > radius {
            exit_time = Some(s);
        }
    }

    Ok(CoupledSample {
        exit_time: exit_time.expect("loop ends after the exit"),
        coord_exit_times,
        running_max,
        coord_running_maxima,
    })
}

/// Which pre-limit quantity a batch estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MomentKind {
    /// `E T̃_{N,r}^p / r^{2p}`; the parameter is the radius.
    Exit,
    /// `E M̃_{N,t}^p / t^{p/2}`; the parameter is the horizon.
    Max,
}

impl MomentKind {
    pub fn name(self) -> &'static str {
        match self {
            MomentKind::Exit => "exit",
            MomentKind::Max => "max",
        }
    }
}

impl std::str::FromStr for MomentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exit" | "exit_moment" => Ok(MomentKind::Exit),
            "max" | "max_moment" => Ok(MomentKind::Max),
            other => Err(Error::InvalidArgument(format!("unknown moment kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchConfig {
    pub step_cap: u64,
    /// Samples per RNG stream; part of the reproducibility key.
    pub block_size: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            step_cap: DEFAULT_STEP_CAP,
            block_size: 4096,
        }
    }
}

/// Monte Carlo estimate of a scaled moment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: u64,
    pub p: u32,
    /// `r^{2p}` or `t^{p/2}`.
    pub scale: f64,
    pub seed: u64,
}

/// Kahan–Babuška compensated sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Draws `n` raw samples (exit times or running maxima) with the block stream
/// layout described in the module docs.
pub fn sample_batch(
    kind: MomentKind,
    dim: usize,
    param: u64,
    n: usize,
    seed: u64,
    cfg: &BatchConfig,
) -> Result<Vec<u64>> {
    check_dim(dim)?;
    if cfg.block_size == 0 {
        return Err(Error::InvalidArgument("block_size must be positive".into()));
    }
    let blocks = n.div_ceil(cfg.block_size);
    let per_block: Vec<Result<Vec<u64>>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let len = cfg.block_size.min(n - b * cfg.block_size);
            let mut rng = stream_rng(seed, b as u64);
            (0..len)
                .map(|_| draw(kind, dim, param, &mut rng, cfg.step_cap))
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    for block in per_block {
        out.extend(block?);
    }
    Ok(out)
}

#[inline]
fn draw<R: Rng + ?Sized>(kind: MomentKind, dim: usize, param: u64, rng: &mut R, step_cap: u64) -> Result<u64> {
    match kind {
        MomentKind::Exit => sample_exit_time(dim, param, rng, step_cap),
        MomentKind::Max => sample_running_max(dim, param, rng),
    }
}

/// Estimates `E X^p / scale` from `n_samples` independent draws.
pub fn batch_estimate(
    kind: MomentKind,
    dim: usize,
    param: u64,
    p: u32,
    n_samples: u64,
    seed: u64,
    cfg: &BatchConfig,
) -> Result<MomentEstimate> {
    check_dim(dim)?;
    if p == 0 {
        return Err(Error::InvalidArgument("moment order must be positive".into()));
    }
    if n_samples < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    if param == 0 {
        return Err(Error::InvalidArgument("radius/horizon must be at least 1".into()));
    }
    if cfg.block_size == 0 {
        return Err(Error::InvalidArgument("block_size must be positive".into()));
    }
    // X^p / scale is computed as (X / norm)^p.
    let norm = match kind {
        MomentKind::Exit => (param as f64) * (param as f64),
        MomentKind::Max => (param as f64).sqrt(),
    };
    let scale = norm.powi(p as i32);
    let n = n_samples as usize;
    let blocks = n.div_ceil(cfg.block_size);
    let partial: Vec<Result<(KahanSum, KahanSum)>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let len = cfg.block_size.min(n - b * cfg.block_size);
            let mut rng = stream_rng(seed, b as u64);
            let mut s1 = KahanSum::default();
            let mut s2 = KahanSum::default();
            for _ in 0..len {
                let x = (draw(kind, dim, param, &mut rng, cfg.step_cap)? as f64 / norm).powi(p as i32);
                s1.add(x);
                s2.add(x * x);
            }
            Ok((s1, s2))
        })
        .collect();

    let mut s1 = KahanSum::default();
    let mut s2 = KahanSum::default();
    for block in partial {
        let (a, b) = block?;
        s1.add(a.value());
        s2.add(b.value());
    }
    let nf = n as f64;
    let mean = s1.value() / nf;
    let var = ((s2.value() - nf * mean * mean) / (nf - 1.0)).max(0.0);
    Ok(MomentEstimate {
        mean,
        std_error: (var / nf).sqrt(),
        n_samples,
        p,
        scale,
        seed,
    })
}
