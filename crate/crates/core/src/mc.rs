//! Monte-Carlo samplers and estimators.
//!
//! Every path owns an RNG stream keyed by (master seed, label, path index), and
//! reductions run in path order, so estimates are bit-identical for any number of
//! worker threads.

use crate::error::{config, resource, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp1, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use statrs::function::gamma::gamma;
use std::f64::consts::PI;

/// Independent stream for one path.
pub fn stream(master: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(master ^ splitmix(h)));
    rng.set_stream(index);
    rng
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed, path count and worker budget for a batch of paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct McConfig {
    pub seed: u64,
    pub paths: usize,
    pub jobs: usize,
}

impl McConfig {
    pub fn new(seed: u64, paths: usize) -> Self {
        McConfig {
            seed,
            paths,
            jobs: 1,
        }
    }

    pub fn with_jobs(self, jobs: usize) -> Self {
        McConfig { jobs, ..self }
    }

    /// f(index, rng) for every path, results in index order.
    pub fn map<T: Send>(
        &self,
        label: &str,
        f: impl Fn(usize, &mut ChaCha8Rng) -> T + Sync + Send,
    ) -> Vec<T> {
        let run = || {
            (0..self.paths)
                .into_par_iter()
                .map(|i| {
                    let mut rng = stream(self.seed, label, i as u64);
                    f(i, &mut rng)
                })
                .collect()
        };
        if self.jobs <= 1 {
            return (0..self.paths)
                .map(|i| {
                    let mut rng = stream(self.seed, label, i as u64);
                    f(i, &mut rng)
                })
                .collect();
        }
        match rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
        {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        }
    }
}

/// Pairwise summation; its result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MCEstimate {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation over √count.
    pub stderr: f64,
}

impl MCEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return MCEstimate {
                count: 0,
                mean: f64::NAN,
                stderr: f64::NAN,
            };
        }
        let mean = pairwise_sum(xs) / n as f64;
        if n < 2 {
            return MCEstimate {
                count: n,
                mean,
                stderr: f64::NAN,
            };
        }
        let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = pairwise_sum(&sq) / (n - 1) as f64;
        MCEstimate {
            count: n,
            mean,
            stderr: (var / n as f64).sqrt(),
        }
    }

    /// Estimate of a fixed linear combination a·self + b·other of independent estimates.
    pub fn combine(&self, a: f64, other: &MCEstimate, b: f64) -> MCEstimate {
        MCEstimate {
            count: self.count.min(other.count),
            mean: a * self.mean + b * other.mean,
            stderr: ((a * self.stderr).powi(2) + (b * other.stderr).powi(2)).sqrt(),
        }
    }
}

pub fn stats(samples: &[f64]) -> Result<MCEstimate> {
    if samples.len() < 2 {
        return config("at least two samples are needed");
    }
    Ok(MCEstimate::from_samples(samples))
}

/// Two-sample Kolmogorov-Smirnov distance sup_x |F_a(x) − F_b(x)|.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Kolmogorov-Smirnov distance of a sample from a continuous CDF.
pub fn ks_against(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Default cap on lattice steps per path.
pub const LATTICE_STEP_BUDGET: u64 = 1 << 32;

/// Byte-wise lookup: displacement and maximum prefix sum over 8 steps,
/// bit i set meaning step i goes up.
struct ByteTable {
    disp: [i8; 256],
    max: [i8; 256],
}

static TABLE: std::sync::OnceLock<ByteTable> = std::sync::OnceLock::new();

fn table() -> &'static ByteTable {
    TABLE.get_or_init(|| {
        let mut t = ByteTable {
            disp: [0; 256],
            max: [0; 256],
        };
        for b in 0..256usize {
            let (mut s, mut m) = (0i8, 0i8);
            for i in 0..8 {
                s += if b >> i & 1 == 1 { 1 } else { -1 };
                m = m.max(s);
            }
            t.disp[b] = s;
            t.max[b] = m;
        }
        t
    })
}

/// Simple random walk advanced step by step with running lattice statistics.
#[derive(Clone, Debug)]
pub struct LatticeWalker {
    n: u64,
    k: u64,
    s: i64,
    max: i64,
    zeros: u64,
    last_zero: u64,
}

/// Brownian functionals read off a scaled walk at time k/n.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticePath {
    pub n: u64,
    pub t: f64,
    /// S_{nt}/√n.
    pub x: f64,
    /// #{0 ≤ k < nt : S_k = 0}/√n.
    pub local_time: f64,
    /// (last k ≤ nt with S_k = 0)/n.
    pub last_zero: f64,
    /// max_{k ≤ nt} S_k/√n.
    pub max: f64,
    pub zero_visits: u64,
}

impl LatticeWalker {
    pub fn new(n: u64) -> Self {
        LatticeWalker {
            n,
            k: 0,
            s: 0,
            max: 0,
            zeros: 0,
            last_zero: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.k
    }

    #[inline]
    fn single(&mut self, up: bool) {
        if self.s == 0 {
            self.zeros += 1;
            self.last_zero = self.k;
        }
        self.s += if up { 1 } else { -1 };
        self.k += 1;
        self.max = self.max.max(self.s);
    }

    /// Takes m more steps.
    pub fn advance<R: Rng + ?Sized>(&mut self, m: u64, rng: &mut R) {
        let t = table();
        let mut left = m;
        while left >= 64 {
            let mut bits: u64 = rng.random();
            for _ in 0..8 {
                let b = (bits & 0xff) as usize;
                bits >>= 8;
                if self.s.abs() >= 8 {
                    self.max = self.max.max(self.s + t.max[b] as i64);
                    self.s += t.disp[b] as i64;
                    self.k += 8;
                } else {
                    for i in 0..8 {
                        self.single(b >> i & 1 == 1);
                    }
                }
            }
            left -= 64;
        }
        if left > 0 {
            let bits: u64 = rng.random();
            for i in 0..left {
                self.single(bits >> i & 1 == 1);
            }
        }
    }

    pub fn snapshot(&self) -> LatticePath {
        let rn = (self.n as f64).sqrt();
        let g = if self.s == 0 { self.k } else { self.last_zero };
        LatticePath {
            n: self.n,
            t: self.k as f64 / self.n as f64,
            x: self.s as f64 / rn,
            local_time: self.zeros as f64 / rn,
            last_zero: g as f64 / self.n as f64,
            max: self.max as f64 / rn,
            zero_visits: self.zeros,
        }
    }
}

fn lattice_steps(n: u64, t: f64) -> Result<u64> {
    if n == 0 || !(t >= 0.0) {
        return config(format!("lattice needs n > 0 and t ≥ 0 (got n={n}, t={t})"));
    }
    let m = (n as f64 * t).round();
    if m > LATTICE_STEP_BUDGET as f64 {
        return resource("lattice steps per path", LATTICE_STEP_BUDGET as usize);
    }
    Ok(m as u64)
}

/// Donsker-scaled simple random walk on [0, t] with n steps per unit time.
pub fn sample_lattice_bm<R: Rng + ?Sized>(n: u64, t: f64, rng: &mut R) -> Result<LatticePath> {
    let m = lattice_steps(n, t)?;
    let mut w = LatticeWalker::new(n);
    w.advance(m, rng);
    Ok(w.snapshot())
}

/// One walk observed at each of the increasing times `ts`.
pub fn sample_lattice_snapshots<R: Rng + ?Sized>(
    n: u64,
    ts: &[f64],
    rng: &mut R,
) -> Result<Vec<LatticePath>> {
    let mut w = LatticeWalker::new(n);
    let mut out = Vec::with_capacity(ts.len());
    for &t in ts {
        let m = lattice_steps(n, t)?;
        if m < w.steps() {
            return config("snapshot times must increase");
        }
        w.advance(m - w.steps(), rng);
        out.push(w.snapshot());
    }
    Ok(out)
}

/// Squared Bessel process of dimension d = 2(1−α) from 0, sampled exactly at the
/// grid times.
#[derive(Clone, Debug)]
pub struct BesselPath {
    pub alpha: f64,
    pub times: Vec<f64>,
    /// R_{t_i}.
    pub values: Vec<f64>,
}

impl BesselPath {
    pub fn dimension(&self) -> f64 {
        2.0 * (1.0 - self.alpha)
    }

    /// Index of the last grid time ≤ t.
    fn until(&self, t: f64) -> usize {
        self.times
            .partition_point(|s| *s <= t + 1e-12)
            .saturating_sub(1)
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.values[self.until(t)]
    }

    /// Trapezoid time measure of {s ≤ t : R_s ≤ ε} on the grid.
    pub fn occupation(&self, eps: f64, t: f64) -> f64 {
        let last = self.until(t);
        let ind = |i: usize| if self.values[i] <= eps { 1.0 } else { 0.0 };
        (0..last)
            .map(|i| 0.5 * (self.times[i + 1] - self.times[i]) * (ind(i) + ind(i + 1)))
            .sum()
    }
}

/// I_α(z)/I_{−α}(z): the probability that a Bessel(−α) bridge over a step with
/// r·y/h = z avoids 0.
fn bessel_i_ratio(alpha: f64, z: f64) -> f64 {
    if z > 30.0 {
        return 1.0;
    }
    let half = 0.5 * z;
    let series = |nu: f64| {
        let (mut term, mut sum) = (half.powf(nu) / gamma(nu + 1.0), 0.0);
        for k in 0..200 {
            sum += term;
            let kf = k as f64;
            term *= half * half / ((kf + 1.0) * (kf + nu + 1.0));
            if term < 1e-17 * sum {
                break;
            }
        }
        sum
    };
    (series(alpha) / series(-alpha)).min(1.0)
}

/// Exact joint sampler of (R_t, L_t) for the Bessel process of index −α
/// (dimension 2 − 2α) from 0, with L normalised by E[L_t] = (2t)^α/Γ(1−α).
///
/// From 0 over a span m: the last zero is m·Beta(α, 1−α); given it, the local
/// time is g^α X/κ with X the S^{−α}-size-biased law of a positive α-stable S;
/// the endpoint is a meander value, √(2(m−g)·Exp(1)). From r > 0 the hitting time
/// of 0 is r²/(2·Gamma(α)); if it exceeds the step, the endpoint comes from the
/// reflected transition thinned by the bridge's avoidance probability.
#[derive(Clone, Debug)]
pub struct BesselLocalSampler {
    alpha: f64,
    kappa: f64,
    a0: f64,
    arcsine: Beta<f64>,
    size_biased: Gamma<f64>,
    hitting: Gamma<f64>,
}

impl BesselLocalSampler {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return config(format!("α = {alpha} is not in (0,1)"));
        }
        Ok(BesselLocalSampler {
            alpha,
            kappa: gamma(1.0 - alpha) / (2f64.powf(alpha) * gamma(1.0 + alpha)),
            a0: alpha.powf(alpha / (1.0 - alpha)) * (1.0 - alpha),
            arcsine: Beta::new(alpha, 1.0 - alpha).expect("valid"),
            size_biased: Gamma::new(2.0 - alpha, 1.0).expect("valid"),
            hitting: Gamma::new(alpha, 1.0).expect("valid"),
        })
    }

    /// Kanter's function; increasing on (0, π) from a0.
    fn kanter(&self, u: f64) -> f64 {
        let a = self.alpha;
        ((a * u).sin() / u.sin()).powf(1.0 / (1.0 - a)) * ((1.0 - a) * u).sin() / (a * u).sin()
    }

    fn run_from_zero<R: Rng + ?Sized>(&self, m: f64, rng: &mut R) -> (f64, f64) {
        let a = self.alpha;
        let g = m * self.arcsine.sample(rng);
        let u = loop {
            let u = PI * rng.random::<f64>();
            if u > 0.0 && rng.random::<f64>() < (self.kanter(u) / self.a0).powf(a - 1.0) {
                break u;
            }
        };
        let x = (self.size_biased.sample(rng) / self.kanter(u)).powf(1.0 - a);
        let l = g.powf(a) * x / self.kappa;
        let e: f64 = rng.sample(Exp1);
        ((2.0 * (m - g) * e).sqrt(), l)
    }

    /// One step of length h from R = r: the new value and the local time gained.
    pub fn step<R: Rng + ?Sized>(&self, r: f64, h: f64, rng: &mut R) -> (f64, f64) {
        if r > 0.0 {
            let t0 = r * r / (2.0 * self.hitting.sample(rng));
            if t0 < h {
                return self.run_from_zero(h - t0, rng);
            }
            loop {
                let y = besq_step(r * r, h, 1.0 - self.alpha, rng).sqrt();
                if rng.random::<f64>() < bessel_i_ratio(self.alpha, r * y / h) {
                    return (y, 0.0);
                }
            }
        }
        self.run_from_zero(h, rng)
    }

    /// (R_t, L_t) at increasing times, starting from 0 at time 0.
    pub fn sample<R: Rng + ?Sized>(&self, times: &[f64], rng: &mut R) -> Result<Vec<(f64, f64)>> {
        if times.first().is_some_and(|t| *t < 0.0) || times.windows(2).any(|w| w[1] <= w[0]) {
            return config("sample times must be nonnegative and increasing");
        }
        let (mut now, mut r, mut l) = (0.0, 0.0, 0.0);
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            if t > now {
                let (nr, dl) = self.step(r, t - now, rng);
                r = nr;
                l += dl;
                now = t;
            }
            out.push((r, l));
        }
        Ok(out)
    }
}

/// One exact BESQ transition from v over a time step dt.
pub fn besq_step<R: Rng + ?Sized>(v: f64, dt: f64, half_dim: f64, rng: &mut R) -> f64 {
    let lambda = v / (2.0 * dt);
    let p = if lambda > 0.0 {
        Poisson::new(lambda).map(|d| d.sample(rng)).unwrap_or(0.0)
    } else {
        0.0
    };
    let shape = half_dim + p;
    Gamma::new(shape, 2.0 * dt)
        .expect("positive shape")
        .sample(rng)
}

pub fn sample_besq<R: Rng + ?Sized>(alpha: f64, grid: &[f64], rng: &mut R) -> Result<BesselPath> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return config(format!("α = {alpha} is not in (0,1)"));
    }
    if grid.first() != Some(&0.0) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return config("the time grid must start at 0 and increase");
    }
    let half_dim = 1.0 - alpha;
    let mut values = Vec::with_capacity(grid.len());
    let mut v = 0.0;
    values.push(0.0);
    for w in grid.windows(2) {
        v = besq_step(v, w[1] - w[0], half_dim, rng);
        values.push(v.sqrt());
    }
    Ok(BesselPath {
        alpha,
        times: grid.to_vec(),
        values,
    })
}

/// Grid that is quadratic on [0, t_q] with `nq` intervals and uniform with spacing
/// `dt` up to `t_max`.
pub fn bessel_grid(t_q: f64, nq: usize, dt: f64, t_max: f64) -> Vec<f64> {
    let mut g: Vec<f64> = (0..=nq)
        .map(|i| t_q * (i as f64 / nq as f64).powi(2))
        .collect();
    let mut k = 1;
    loop {
        let t = t_q + k as f64 * dt;
        if t > t_max + 1e-9 {
            break;
        }
        g.push(t);
        k += 1;
    }
    g
}

/// Local time at 0 from the ε-occupation formula, Richardson-extrapolated over
/// ε and ε/2 against the leading ε^{2α} bias.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BesselLocalTime {
    pub coarse: f64,
    pub fine: f64,
    pub extrapolated: f64,
    /// No occupation near 0 at either ε although time has passed.
    pub degraded: bool,
}

pub fn occupation_local_time(path: &BesselPath, eps: f64, t: f64) -> f64 {
    let a = path.alpha;
    a * (2.0 - 2.0 * a) * eps.powf(2.0 * a - 2.0) * path.occupation(eps, t)
}

pub fn bessel_local_time(path: &BesselPath, eps: f64, t: f64) -> BesselLocalTime {
    let coarse = occupation_local_time(path, eps, t);
    let fine = occupation_local_time(path, eps / 2.0, t);
    let w = 2f64.powf(2.0 * path.alpha);
    BesselLocalTime {
        coarse,
        fine,
        extrapolated: (w * fine - coarse) / (w - 1.0),
        degraded: t > 0.0
            && coarse == 0.0
            && fine == 0.0
            && path.occupation(f64::INFINITY, t) == 0.0,
    }
}

/// Winding accumulated in units of 2^{-50} radians so that it is exactly additive.
const WIND_SCALE: f64 = (1u64 << 50) as f64;

/// Planar Brownian path on a uniform grid with its continuous winding around 0.
#[derive(Clone, Debug)]
pub struct PlanarPath {
    pub dt: f64,
    pub points: Vec<(f64, f64)>,
    winding: i128,
}

impl PlanarPath {
    /// Accumulates the winding of `points`; fails if an increment reaches `guard`.
    pub fn from_points(dt: f64, points: Vec<(f64, f64)>, guard: f64) -> Result<Self> {
        let mut w: i128 = 0;
        for p in points.windows(2) {
            let d = angle_increment(p[0], p[1]);
            if d.abs() >= guard {
                return Err(Error::Numerical(format!(
                    "winding increment {d:.3} reaches the guard {guard:.3}; refine the grid"
                )));
            }
            w += (d * WIND_SCALE).round() as i128;
        }
        Ok(PlanarPath {
            dt,
            points,
            winding: w,
        })
    }

    pub fn winding(&self) -> f64 {
        self.winding as f64 / WIND_SCALE
    }

    pub fn last(&self) -> (f64, f64) {
        *self.points.last().expect("nonempty path")
    }

    /// The same points traversed backwards.
    pub fn reversed(&self) -> PlanarPath {
        let points: Vec<_> = self.points.iter().rev().copied().collect();
        let mut w: i128 = 0;
        for p in points.windows(2) {
            w += (angle_increment(p[0], p[1]) * WIND_SCALE).round() as i128;
        }
        PlanarPath {
            dt: self.dt,
            points,
            winding: w,
        }
    }
}

/// Principal-branch angle from a to b, antisymmetric in (a, b).
fn angle_increment(a: (f64, f64), b: (f64, f64)) -> f64 {
    let cross = a.0 * b.1 - a.1 * b.0;
    let dot = a.0 * b.0 + a.1 * b.1;
    if cross == 0.0 && dot >= 0.0 {
        return 0.0;
    }
    cross.atan2(dot)
}

/// Default winding guard: principal increments never reach π, so the guard sits lower.
pub const WINDING_GUARD: f64 = std::f64::consts::FRAC_PI_2;

/// n Gaussian steps over [0, t] from `start`.
pub fn sample_planar_bm<R: Rng + ?Sized>(
    n: usize,
    t: f64,
    start: (f64, f64),
    rng: &mut R,
    guard: f64,
) -> Result<PlanarPath> {
    if n == 0 || !(t > 0.0) {
        return config("planar path needs n > 0 and t > 0");
    }
    let dt = t / n as f64;
    let pts = gaussian_points(n, dt, start, rng);
    PlanarPath::from_points(dt, pts, guard)
}

/// Like [`sample_planar_bm`], but every step that trips the guard is refined by
/// Brownian-bridge midpoints, recursively, up to `max_depth` halvings. The grid
/// becomes nonuniform; `dt` records the coarse step.
pub fn sample_planar_bm_refined<R: Rng + ?Sized>(
    n: usize,
    t: f64,
    start: (f64, f64),
    rng: &mut R,
    guard: f64,
    max_depth: u32,
) -> Result<PlanarPath> {
    if n == 0 || !(t > 0.0) {
        return config("planar path needs n > 0 and t > 0");
    }
    let dt = t / n as f64;
    let coarse = gaussian_points(n, dt, start, rng);
    let mut pts = Vec::with_capacity(coarse.len());
    pts.push(coarse[0]);
    for w in coarse.windows(2) {
        refine_segment(w[0], w[1], dt, guard, rng, max_depth, &mut pts)?;
    }
    PlanarPath::from_points(dt, pts, guard)
}

/// Appends the points after `a` up to and including `b`.
fn refine_segment<R: Rng + ?Sized>(
    a: (f64, f64),
    b: (f64, f64),
    dt: f64,
    guard: f64,
    rng: &mut R,
    depth: u32,
    out: &mut Vec<(f64, f64)>,
) -> Result<()> {
    let d = angle_increment(a, b);
    if d.abs() < guard {
        out.push(b);
        return Ok(());
    }
    if depth == 0 {
        return Err(Error::Numerical(format!(
            "winding increment {d:.3} still reaches the guard after refinement"
        )));
    }
    let sd = (dt / 4.0).sqrt();
    let m = (
        0.5 * (a.0 + b.0) + sd * rng.sample::<f64, _>(StandardNormal),
        0.5 * (a.1 + b.1) + sd * rng.sample::<f64, _>(StandardNormal),
    );
    refine_segment(a, m, dt / 2.0, guard, rng, depth - 1, out)?;
    refine_segment(m, b, dt / 2.0, guard, rng, depth - 1, out)
}

fn gaussian_points<R: Rng + ?Sized>(
    n: usize,
    dt: f64,
    start: (f64, f64),
    rng: &mut R,
) -> Vec<(f64, f64)> {
    let sd = dt.sqrt();
    let mut pts = Vec::with_capacity(n + 1);
    let mut p = start;
    pts.push(p);
    for _ in 0..n {
        let dx: f64 = rng.sample(StandardNormal);
        let dy: f64 = rng.sample(StandardNormal);
        p = (p.0 + sd * dx, p.1 + sd * dy);
        pts.push(p);
    }
    pts
}

/// Exact value of a planar Brownian motion from 0 at time t.
pub fn sample_planar_point<R: Rng + ?Sized>(t: f64, rng: &mut R) -> (f64, f64) {
    let s = t.sqrt();
    (
        s * rng.sample::<f64, _>(StandardNormal),
        s * rng.sample::<f64, _>(StandardNormal),
    )
}

/// Bessel(3) driver ρ from 0 on a uniform h-grid with its clock t(h) = ∫_0^h e^{2ρ}.
///
/// R_t = exp(ρ_{H_t}) with H the inverse of the clock is the transient planar
/// radius started on the unit circle.
#[derive(Clone, Debug)]
pub struct RLogPath {
    pub dh: f64,
    pub rho: Vec<f64>,
    /// log t(h_i), kept in log form because the clock grows like e^{2ρ}.
    pub log_clock: Vec<f64>,
}

impl RLogPath {
    /// H_t, by linear interpolation of the clock between grid points.
    pub fn inverse_clock(&self, log_t: f64) -> Result<f64> {
        let i = self.log_clock.partition_point(|c| *c < log_t);
        if i >= self.log_clock.len() {
            return resource("h-grid points before the requested clock", self.rho.len());
        }
        if i == 0 {
            return Ok(0.0);
        }
        let (c0, c1) = (self.log_clock[i - 1].exp(), self.log_clock[i].exp());
        let frac = ((log_t.exp() - c0) / (c1 - c0)).clamp(0.0, 1.0);
        Ok(self.dh * ((i - 1) as f64 + frac))
    }

    /// R_t = e^{ρ_{H_t}}, interpolating ρ linearly.
    pub fn radius(&self, log_t: f64) -> Result<f64> {
        let h = self.inverse_clock(log_t)?;
        let x = h / self.dh;
        let i = (x.floor() as usize).min(self.rho.len() - 1);
        let j = (i + 1).min(self.rho.len() - 1);
        let f = x - i as f64;
        Ok(((1.0 - f) * self.rho[i] + f * self.rho[j]).exp())
    }

    /// First grid h with ρ ≥ level.
    pub fn hitting(&self, level: f64) -> Option<f64> {
        self.rho
            .iter()
            .position(|r| *r >= level)
            .map(|i| i as f64 * self.dh)
    }
}

/// Simulates the driver until its clock passes e^{log_t_max}; at most `budget` steps.
pub fn sample_r_log<R: Rng + ?Sized>(
    dh: f64,
    log_t_max: f64,
    rng: &mut R,
    budget: usize,
) -> Result<RLogPath> {
    if !(dh > 0.0) {
        return config("h-grid spacing must be positive");
    }
    let sd = dh.sqrt();
    let mut v = [0.0f64; 3];
    let mut rho = vec![0.0];
    let mut log_clock = vec![f64::NEG_INFINITY];
    let mut prev = 1.0f64;
    while *log_clock.last().unwrap() < log_t_max {
        if rho.len() > budget {
            return resource("h-grid steps for the log-Bessel clock", budget);
        }
        for c in &mut v {
            *c += sd * rng.sample::<f64, _>(StandardNormal);
        }
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let e = (2.0 * r).exp();
        let c = log_clock.last().unwrap().exp() + 0.5 * dh * (prev + e);
        prev = e;
        rho.push(r);
        log_clock.push(c.ln());
    }
    Ok(RLogPath { dh, rho, log_clock })
}

/// P(T ≤ u) for T the first hitting time of 1 by a Bessel(3) process from 0:
/// 1 − 2 Σ_{k≥1} (−1)^{k+1} e^{−k²π²u/2}.
pub fn bes3_hitting_cdf(u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    if u < 0.25 {
        return small_u_cdf(u);
    }
    let mut s = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        let term = (-kf * kf * PI * PI * u / 2.0).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    1.0 - 2.0 * s
}

/// Poisson-summation dual of the series above, fast for small u:
/// 2√(2/(πu)) Σ_{j≥0} e^{−(2j+1)²/(2u)}.
fn small_u_cdf(u: f64) -> f64 {
    let mut s = 0.0;
    for j in 0..50 {
        let m = (2 * j + 1) as f64;
        let term = (-m * m / (2.0 * u)).exp();
        s += term;
        if term < 1e-18 * s.max(1e-300) {
            break;
        }
    }
    2.0 * (2.0 / (PI * u)).sqrt() * s
}

/// Inverse-CDF sample of T₁^{(3)}.
pub fn sample_bes3_hitting<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let p: f64 = rng.random();
    let (mut lo, mut hi) = (0.0, 1.0);
    while bes3_hitting_cdf(hi) < p {
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if bes3_hitting_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sqrt_2_pi() -> f64 {
        (2.0 / PI).sqrt()
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: u64 = stream(7, "x", 0).random();
        let b: u64 = stream(7, "x", 0).random();
        let c: u64 = stream(7, "x", 1).random();
        let d: u64 = stream(7, "y", 0).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn map_independent_of_jobs() {
        let f = |_: usize, r: &mut ChaCha8Rng| r.random::<f64>();
        let one = McConfig::new(3, 500).map("j", f);
        let four = McConfig::new(3, 500).with_jobs(4).map("j", f);
        assert_eq!(one, four);
    }

    #[test]
    fn stats_examples() {
        let e = stats(&[2.0; 10]).unwrap();
        assert_eq!((e.mean, e.stderr), (2.0, 0.0));
        assert!(stats(&[1.0]).is_err());
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(ks_distance(&x, &x), 0.0);
        assert_eq!(ks_distance(&[0.0, 1.0], &[2.0, 3.0]), 1.0);
    }

    #[test]
    fn ks_shifted_normals() {
        let cfg = McConfig::new(11, 10_000);
        let a = cfg.map("a", |_, r| r.sample::<f64, _>(StandardNormal));
        let b = cfg.map("b", |_, r| 1.0 + r.sample::<f64, _>(StandardNormal));
        let d = ks_distance(&a, &b);
        assert!((d - 0.3829).abs() < 0.03, "{d}");
    }

    #[test]
    fn walker_fast_path_matches_stepwise() {
        for seed in 0..20 {
            let mut w = LatticeWalker::new(1);
            let mut r1 = stream(seed, "w", 0);
            w.advance(64 * 50 + 13, &mut r1);
            let mut r2 = stream(seed, "w", 0);
            let mut v = LatticeWalker::new(1);
            for _ in 0..50 {
                let bits: u64 = r2.random();
                for i in 0..64 {
                    v.single(bits >> i & 1 == 1);
                }
            }
            let bits: u64 = r2.random();
            for i in 0..13 {
                v.single(bits >> i & 1 == 1);
            }
            assert_eq!(w.snapshot(), v.snapshot());
        }
    }

    #[test]
    fn lattice_zero_horizon() {
        let p = sample_lattice_bm(100, 0.0, &mut stream(1, "z", 0)).unwrap();
        assert_eq!(
            (p.x, p.local_time, p.last_zero, p.max),
            (0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn lattice_tanaka_is_exact_in_expectation() {
        // E|S_m| = E[#{k < m : S_k = 0}] for simple random walk.
        let cfg = McConfig::new(5, 20_000);
        let v = cfg.map("t", |_, r| {
            let p = sample_lattice_bm(400, 1.0, r).unwrap();
            p.x.abs() - p.local_time
        });
        let e = MCEstimate::from_samples(&v);
        assert!(e.mean.abs() < 3.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn lattice_moments() {
        let cfg = McConfig::new(9, 20_000);
        let v = cfg.map("m", |_, r| sample_lattice_bm(1000, 1.0, r).unwrap());
        let x = MCEstimate::from_samples(&v.iter().map(|p| p.x.abs()).collect::<Vec<_>>());
        let s = MCEstimate::from_samples(&v.iter().map(|p| p.max).collect::<Vec<_>>());
        assert!(
            (x.mean - sqrt_2_pi()).abs() < 3.0 * x.stderr + 0.003,
            "{x:?}"
        );
        assert!(
            (s.mean - sqrt_2_pi()).abs() < 3.0 * s.stderr + 0.03,
            "{s:?}"
        );
        for u in [0.1, 0.25, 0.5, 0.75, 0.9] {
            let f = v.iter().filter(|p| p.last_zero <= u).count() as f64 / v.len() as f64;
            let exact = 2.0 / PI * u.sqrt().asin();
            assert!((f - exact).abs() < 0.015, "u={u}: {f} vs {exact}");
        }
    }

    #[test]
    fn bridge_avoidance_at_half_is_tanh() {
        for z in [0.01, 0.3, 1.0, 4.0, 12.0] {
            assert!((bessel_i_ratio(0.5, z) - z.tanh()).abs() < 1e-12, "z={z}");
        }
        assert_eq!(bessel_i_ratio(0.3, 40.0), 1.0);
    }

    #[test]
    fn exact_local_time_sampler_moments() {
        for alpha in [0.25, 0.5, 0.75] {
            let s = BesselLocalSampler::new(alpha).unwrap();
            let rows = McConfig::new(11, 40_000)
                .map("lt", |_, rng| s.sample(&[0.3, 1.0], rng).unwrap()[1]);
            let l = MCEstimate::from_samples(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
            let r2 = MCEstimate::from_samples(&rows.iter().map(|r| r.0 * r.0).collect::<Vec<_>>());
            let target = 2f64.powf(alpha) / gamma(1.0 - alpha);
            assert!(
                (l.mean - target).abs() < 4.0 * l.stderr,
                "α={alpha}: {l:?} vs {target}"
            );
            assert!(
                (r2.mean - 2.0 * (1.0 - alpha)).abs() < 4.0 * r2.stderr,
                "α={alpha}: {r2:?}"
            );
        }
        assert!(BesselLocalSampler::new(1.0).is_err());
    }

    #[test]
    fn besq_marginal_is_gamma() {
        use statrs::distribution::{ContinuousCDF, Gamma as G};
        for alpha in [0.25, 0.5, 0.75] {
            let cfg = McConfig::new(2, 20_000);
            let v = cfg.map("b", |_, r| {
                let p = sample_besq(alpha, &[0.0, 0.3, 1.0], r).unwrap();
                p.values[2].powi(2)
            });
            let g = G::new(1.0 - alpha, 0.5).unwrap();
            let d = ks_against(&v, |x| g.cdf(x));
            assert!(d < 0.015, "α={alpha}: {d}");
        }
        let p = sample_besq(0.5, &[0.0], &mut stream(0, "b", 0)).unwrap();
        assert_eq!(p.values, vec![0.0]);
    }

    #[test]
    fn winding_reversal_is_exact() {
        for i in 0..20 {
            let p = sample_planar_bm(500, 1.0, (1.0, 0.0), &mut stream(4, "w", i), PI).unwrap();
            assert_eq!(p.reversed().winding(), -p.winding());
        }
    }

    #[test]
    fn refinement_rescues_guarded_paths() {
        let mut refined = 0;
        for i in 0..200 {
            let p = sample_planar_bm_refined(
                200,
                1.0,
                (1.0, 0.0),
                &mut stream(6, "r", i),
                WINDING_GUARD,
                40,
            )
            .unwrap();
            refined += usize::from(p.points.len() > 201);
            assert_eq!(p.reversed().winding(), -p.winding());
        }
        assert!(refined > 0);
    }

    #[test]
    fn winding_guard_triggers() {
        let pts = vec![(1.0, 0.0), (-1.0, 0.01)];
        assert!(PlanarPath::from_points(1.0, pts, WINDING_GUARD).is_err());
    }

    #[test]
    fn bes3_hitting_law() {
        // Series in both regimes agree where they overlap, and E[T] = 1/3.
        for u in [0.1, 0.2, 0.25, 0.3] {
            let mut s = 0.0;
            for k in 1..200 {
                let kf = k as f64;
                let t = (-kf * kf * PI * PI * u / 2.0).exp();
                s += if k % 2 == 1 { t } else { -t };
            }
            assert!((small_u_cdf(u) - (1.0 - 2.0 * s)).abs() < 1e-9, "u={u}");
        }
        let cfg = McConfig::new(8, 20_000);
        let v = cfg.map("t", |_, r| sample_bes3_hitting(r));
        let e = MCEstimate::from_samples(&v);
        assert!((e.mean - 1.0 / 3.0).abs() < 3.0 * e.stderr, "{e:?}");
        // Discrete monitoring hits late; shift the level by the usual 0.5826·√dh.
        let dh = 1e-4;
        let hits = McConfig::new(8, 4000).map("h", |_, r| {
            let p = sample_r_log(dh, 2.0, r, 1 << 24).unwrap();
            p.hitting(1.0 - 0.5826 * dh.sqrt()).unwrap_or(f64::INFINITY)
        });
        let d = ks_against(&hits, bes3_hitting_cdf);
        assert!(d < 0.035, "{d}");
    }

    #[test]
    fn r_log_radius_exceeds_one_and_clock_monotone() {
        let p = sample_r_log(0.01, 8.0, &mut stream(1, "r", 0), 1 << 22).unwrap();
        assert!(p.log_clock.windows(2).all(|w| w[1] > w[0]));
        let mut prev = 0.0;
        for lt in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let h = p.inverse_clock(lt).unwrap();
            assert!(h >= prev);
            prev = h;
            assert!(p.radius(lt).unwrap() > 1.0);
        }
        assert!(p.inverse_clock(100.0).is_err());
    }
}
