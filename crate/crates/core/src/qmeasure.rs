//! The σ-finite measures Q_x of a recurrent chain with harmonic function φ.
//!
//! With c = E_{x_0}[φ(X_1)] and ψ_r = (r/(1−r))·c + φ, the process
//! ψ_r(X_n) r^{L_{n−1}^{x_0}} is a P_x-martingale; it defines finite measures μ_x^{(r)}
//! and Q_x = r^{−L_∞^{x_0}}·μ_x^{(r)}, which does not depend on r. Integrals of
//! tail factors are evaluated through the local-time law of L_∞^{y_0} under Q_x:
//! an atom φ^{[y_0]}(x) at 0 and a flat plateau K(y_0) on every k ≥ 1.

use crate::chain::{
    for_each_path, propagate, step, AugmentedDistribution, Catalog, MarkovKernel, PathRecord, State,
};
use crate::error::{config, resource, Error, Result};
use crate::exact::{pow2, qpow, to_f64, Exact, Q};
use crate::harmonic::{n_of, node_of, phi_closed, z2_of, z_of, HarmonicFn, Variant};
use crate::mc::{stream, MCEstimate};
use crate::oracle::{LEAF_BUDGET, SUPPORT_BUDGET};
use nalgebra::{DMatrix, DVector};
use num_traits::{One, Signed, Zero};
use rand::Rng;
use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

/// r/(1−r).
pub fn rho(r: &Q) -> Q {
    r / (Q::one() - r)
}

/// φ together with a parameter r ∈ (0,1) and the cached constant c.
#[derive(Clone, Debug)]
pub struct PenalisedWeight {
    phi: HarmonicFn,
    r: Q,
    c: Exact,
}

impl PenalisedWeight {
    pub fn new(phi: HarmonicFn, r: Q) -> Result<Self> {
        if r <= Q::zero() || r >= Q::one() {
            return config(format!("r = {r} is not in (0,1)"));
        }
        let c = phi.one_step_mean(&phi.x0());
        if c.signum() != Ordering::Greater {
            return config("E_{x0}[φ(X_1)] must be positive");
        }
        Ok(PenalisedWeight { phi, r, c })
    }

    /// Catalog chain with its default φ.
    pub fn catalog(kernel: Catalog, r: Q) -> Result<Self> {
        Self::new(phi_closed(kernel, Variant::default_for(kernel))?, r)
    }

    pub fn with_r(&self, r: Q) -> Result<Self> {
        Self::new(self.phi.clone(), r)
    }

    pub fn phi(&self) -> &HarmonicFn {
        &self.phi
    }

    pub fn r(&self) -> &Q {
        &self.r
    }

    pub fn c(&self) -> &Exact {
        &self.c
    }

    pub fn x0(&self) -> State {
        self.phi.x0()
    }

    pub fn kernel(&self) -> &Arc<dyn MarkovKernel> {
        self.phi.kernel()
    }

    pub fn psi_r(&self, x: &State) -> Exact {
        self.psi_at(&self.r, x)
    }

    /// ψ_s for any s ∈ [0,1).
    pub fn psi_at(&self, s: &Q, x: &State) -> Exact {
        self.c.scale(&rho(s)) + self.phi.eval(x)
    }
}

pub fn psi_r(weight: &PenalisedWeight, x: &State) -> Exact {
    weight.psi_r(x)
}

/// A bounded functional F_n of the first n steps, evaluated on path records
/// that track x_0 (index 0) and then `extra` sites.
#[derive(Clone)]
pub struct QFunctional {
    pub n: usize,
    pub extra: Vec<State>,
    f: Arc<dyn Fn(&PathRecord) -> Q + Send + Sync>,
}

impl QFunctional {
    pub fn new(n: usize, f: impl Fn(&PathRecord) -> Q + Send + Sync + 'static) -> Self {
        QFunctional {
            n,
            extra: Vec::new(),
            f: Arc::new(f),
        }
    }

    pub fn one() -> Self {
        Self::new(0, |_| Q::one())
    }

    /// Indicator that the first `prefix.len() − 1` steps follow `prefix`.
    pub fn prefix_indicator(prefix: Vec<State>) -> Self {
        let n = prefix.len().saturating_sub(1);
        Self::new(n, move |p| {
            if p.states()[..prefix.len()] == prefix[..] {
                Q::one()
            } else {
                Q::zero()
            }
        })
    }

    pub fn eval(&self, p: &PathRecord) -> Q {
        (self.f)(p)
    }
}

/// Mass F(path)·P(path) pushed onto (X_n, L_{n−1}^{x_0}), then propagated to N.
fn terminal_distribution(
    weight: &PenalisedWeight,
    x: &State,
    f: &QFunctional,
    horizon: usize,
) -> Result<AugmentedDistribution<Q>> {
    if horizon < f.n {
        return config(format!(
            "horizon {horizon} is shorter than the functional's {}",
            f.n
        ));
    }
    let kernel = weight.kernel();
    let x0 = weight.x0();
    let mut tracked = vec![x0];
    tracked.extend(f.extra.iter().copied());
    let mut d = AugmentedDistribution::<Q>::empty();
    for_each_path(
        kernel.as_ref(),
        *x,
        f.n,
        &tracked,
        LEAF_BUDGET,
        |path, p| {
            let v = f.eval(path);
            if !v.is_zero() {
                d.add(path.last(), vec![path.local_time_before(0)], v * p);
            }
        },
    )?;
    propagate(kernel.as_ref(), &d, horizon - f.n, &[x0], SUPPORT_BUDGET)
}

/// μ_x^{(r)}[F_n s^{L_{N−1}^{x_0}}] = E_x[F_n (rs)^{L_{N−1}^{x_0}} ψ_r(X_N)], exactly.
///
/// For F ≡ 1 and s = 1 this is the total mass ψ_r(x) at every N. As N grows it
/// approximates μ_x^{(r)}[F_n s^{L_∞^{x_0}}].
pub fn mu_expectation(
    weight: &PenalisedWeight,
    x: &State,
    f: &QFunctional,
    s: &Q,
    horizon: usize,
) -> Result<Exact> {
    let d = terminal_distribution(weight, x, f, horizon)?;
    let rs = weight.r() * s;
    let mut acc = Exact::zero();
    for (z, c, w) in d.iter() {
        acc += &weight.psi_r(z).scale(&(w * qpow(&rs, c[0])));
    }
    Ok(acc)
}

/// Q_x[F_n s^{L_∞^{x_0}}] by the r-pipeline: the finite-horizon term
/// E_x[F_n s^{L_{N−1}} ψ_r(X_N)] plus the closed-form tail c(ρ_s − ρ_r)·E_x[F_n s^{L_{N−1}}],
/// which accounts for ψ_s − ψ_r being the constant c(ρ_s − ρ_r).
pub fn q_expectation(
    weight: &PenalisedWeight,
    x: &State,
    f: &QFunctional,
    s: &Q,
    horizon: usize,
) -> Result<QPipeline> {
    if s.is_negative() || *s >= Q::one() {
        return config("tail parameter s must lie in [0,1)");
    }
    let d = terminal_distribution(weight, x, f, horizon)?;
    let mut finite = Exact::zero();
    let mut plain = Q::zero();
    for (z, c, w) in d.iter() {
        let ws = w * qpow(s, c[0]);
        finite += &weight.psi_r(z).scale(&ws);
        plain += ws;
    }
    let tail = weight.c().scale(&((rho(s) - rho(weight.r())) * plain));
    Ok(QPipeline {
        value: &finite + &tail,
        finite,
        tail,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct QPipeline {
    pub value: Exact,
    /// The μ-approximant part.
    pub finite: Exact,
    /// The closed-form correction; it vanishes as N → ∞.
    pub tail: Exact,
}

/// A summable nonnegative h : N → R_+ with a closed-form tail.
#[derive(Clone, Debug, PartialEq)]
pub enum TailFn {
    /// h(k) = ratio^k.
    Geometric { ratio: Q },
    /// h(k) = values[k], zero beyond.
    FiniteSupport(Vec<Q>),
}

impl TailFn {
    pub fn validate(&self) -> Result<()> {
        match self {
            TailFn::Geometric { ratio } if ratio.is_negative() || *ratio >= Q::one() => {
                config(format!("h(k) = ({ratio})^k is not summable"))
            }
            TailFn::FiniteSupport(v) if v.iter().any(|x| x.is_negative()) => {
                config("h must be nonnegative")
            }
            _ => Ok(()),
        }
    }

    pub fn h(&self, k: u32) -> Q {
        match self {
            TailFn::Geometric { ratio } => qpow(ratio, k),
            TailFn::FiniteSupport(v) => v.get(k as usize).cloned().unwrap_or_else(Q::zero),
        }
    }

    /// Σ_{k ≥ from} h(k).
    pub fn tail_sum(&self, from: u32) -> Q {
        match self {
            TailFn::Geometric { ratio } => qpow(ratio, from) / (Q::one() - ratio),
            TailFn::FiniteSupport(v) => v.iter().skip(from as usize).fold(Q::zero(), |a, x| a + x),
        }
    }
}

/// φ^{[y_0]}(y) = Q_y[L_∞^{y_0} = 0] in closed form for the catalog functions.
///
/// The returned function vanishes at y_0, is harmonic off y_0 and stays within a
/// bounded distance of φ. Pairs without a closed form are rejected; for them use
/// [`phi_restricted_bounds`].
pub fn phi_restricted(weight: &PenalisedWeight, y0: &State) -> Result<HarmonicFn> {
    let phi = weight.phi();
    let kernel = phi.kernel().clone();
    if *y0 == phi.x0() {
        return Ok(phi.clone());
    }
    let Some((cat, variant)) = phi.tag() else {
        return config("no closed form for φ^[y0]; use phi_restricted_bounds");
    };
    let y0c = *y0;
    let f = match (cat, variant) {
        (Catalog::SrwZ, Variant::Abs) => {
            let a = z_of(y0);
            HarmonicFn::new(kernel, y0c, format!("|x-{a}|"), move |s| {
                Exact::from((z_of(s) - a).abs())
            })
        }
        (Catalog::SrwZ, Variant::Plus) => {
            let a = z_of(y0);
            HarmonicFn::new(kernel, y0c, format!("(x-{a})+"), move |s| {
                Exact::from((z_of(s) - a).max(0))
            })
        }
        (Catalog::SrwZ, Variant::Minus) => {
            let a = z_of(y0);
            HarmonicFn::new(kernel, y0c, format!("(x-{a})-"), move |s| {
                Exact::from((a - z_of(s)).max(0))
            })
        }
        (Catalog::BangBang, Variant::Pow2) => {
            let a = n_of(y0) as u32;
            HarmonicFn::new(kernel, y0c, format!("(2^x-2^{a})+"), move |s| {
                let x = n_of(s) as u32;
                if x >= a {
                    Exact::from(pow2(x) - pow2(a))
                } else {
                    Exact::zero()
                }
            })
        }
        (Catalog::BinaryTree, Variant::TreeDepth) => {
            // j + g(m): m the meet depth with y_0, j the remaining depth of x, and
            // g(m) = Σ_{i=m+1}^{d} (2^i − 1) with d = depth(y_0).
            let target = node_of(y0);
            let d = target.depth();
            HarmonicFn::new(kernel, y0c, format!("depth[{y0}]"), move |s| {
                let x = node_of(s);
                let m = x.meet_depth(&target);
                let j = (x.depth() - m) as i64;
                let g = (m + 1..=d).fold(Q::zero(), |acc, i| acc + pow2(i as u32) - Q::one());
                Exact::from(g + Q::from_integer(j.into()))
            })
        }
        (Catalog::SrwZ2, Variant::Potential) => {
            let (a, b) = z2_of(y0);
            let base = phi.clone();
            HarmonicFn::new(kernel, y0c, format!("a(x-{y0})"), move |s| {
                let (x, y) = z2_of(s);
                base.eval(&State::Z2(x - a, y - b))
            })
        }
        (c, v) => {
            return config(format!(
                "no closed form for φ^[y0] with {v:?} on {}",
                c.id()
            ))
        }
    };
    Ok(f)
}

/// (φ^{[y_0]}(x), K(y_0)): the atom Q_x[L_∞^{y_0} = 0] and the common value of
/// Q_x[L_∞^{y_0} = k] for every k ≥ 1, K(y_0) = E_{y_0}[φ^{[y_0]}(X_1)].
pub fn q_local_time_law(weight: &PenalisedWeight, x: &State, y0: &State) -> Result<(Exact, Exact)> {
    let f = phi_restricted(weight, y0)?;
    Ok((f.eval(x), f.one_step_mean(y0)))
}

/// M_n = φ^{[a]}(X_n) h(L_{n−1}^a) + K(a) Σ_{k ≥ L_{n−1}^a + 1} h(k), the
/// martingale whose terminal value is h(L_∞^a) under Q.
pub fn martingale_m(
    weight: &PenalisedWeight,
    a: &State,
    h: &TailFn,
    x_n: &State,
    local_before: u32,
) -> Result<Exact> {
    h.validate()?;
    let (atom, plateau) = q_local_time_law(weight, x_n, a)?;
    Ok(atom.scale(&h.h(local_before)) + plateau.scale(&h.tail_sum(local_before + 1)))
}

/// E_x[F_n M_n(h)] = Q_x[F_n h(L_∞^a)].
pub fn q_integral(
    weight: &PenalisedWeight,
    x: &State,
    f: &QFunctional,
    a: &State,
    h: &TailFn,
) -> Result<Exact> {
    h.validate()?;
    let fa = phi_restricted(weight, a)?;
    let plateau = fa.one_step_mean(a);
    let kernel = weight.kernel();
    let mut acc = Exact::zero();
    for_each_path(kernel.as_ref(), *x, f.n, &[*a], LEAF_BUDGET, |path, p| {
        let v = f.eval(path);
        if v.is_zero() {
            return;
        }
        let l = path.local_time_before(0);
        let m = fa.eval(&path.last()).scale(&h.h(l)) + plateau.scale(&h.tail_sum(l + 1));
        acc += &m.scale(&(v * p));
    })?;
    Ok(acc)
}

/// Certified bracket for φ^{[y_0]}(y) from
/// φ^{[y_0]}(y) = c(1 − p_{y,y_0})/(1 − q_{y_0}) + φ(y) − φ(y_0), where
/// p_{y,y_0} = P_y[τ^{y_0} < τ^{x_0}] and q_{y_0} = P_{x_0}[τ^{y_0} > τ_2^{x_0}].
///
/// The hitting probabilities are solved on a breadth-first window; exits from the
/// window are scored once as failures and once as successes, which brackets the
/// truth. A bracket wider than `tol` is a resource error.
pub fn phi_restricted_bounds(
    weight: &PenalisedWeight,
    y0: &State,
    y: &State,
    window: usize,
    tol: f64,
) -> Result<(f64, f64)> {
    let x0 = weight.x0();
    let phi = weight.phi();
    if *y0 == x0 {
        let v = phi.eval_f64(y);
        return Ok((v, v));
    }
    let kernel = weight.kernel();
    let g = LocalGraph::ball(kernel.as_ref(), &[x0, *y0, *y], window);
    let c = weight.c().to_f64();
    let shift = phi.eval_f64(y) - phi.eval_f64(y0);
    let mut vals = [0.0; 2];
    for (slot, exit) in [(0, 1.0), (1, 0.0)] {
        let h = g.hitting_probability(y0, &x0, exit)?;
        let p_y = h[g.index(y).expect("y is in the window")];
        let mut qv = 0.0;
        for (z, p) in &g.rows[g.index(&x0).expect("x0 in window")] {
            qv += p * match z {
                Some(i) => 1.0 - h[*i],
                None => 1.0 - exit,
            };
        }
        if qv >= 1.0 {
            return Err(Error::Numerical(
                "q_{y0} = 1: y0 unreachable from x0".into(),
            ));
        }
        vals[slot] = c * (1.0 - p_y) / (1.0 - qv) + shift;
    }
    let (lo, hi) = (vals[0].min(vals[1]), vals[0].max(vals[1]));
    if hi - lo > tol {
        return resource(
            format!(
                "window too small to certify φ^[y0] (bracket width {:.3e})",
                hi - lo
            ),
            window,
        );
    }
    Ok((lo, hi))
}

/// Dense indexing of a finite neighbourhood, with out-of-window neighbours kept
/// as `None` so callers choose their boundary treatment.
pub struct LocalGraph {
    pub states: Vec<State>,
    index: HashMap<State, usize>,
    pub rows: Vec<Vec<(Option<usize>, f64)>>,
    /// Graph distance from the seed set.
    pub dist: Vec<usize>,
}

impl LocalGraph {
    /// The first `size` states in breadth-first order from the seeds.
    pub fn ball<K: MarkovKernel + ?Sized>(kernel: &K, seeds: &[State], size: usize) -> Self {
        let mut states: Vec<State> = Vec::new();
        let mut dist = Vec::new();
        let mut index = HashMap::new();
        let mut frontier = std::collections::VecDeque::new();
        for s in seeds {
            if !index.contains_key(s) {
                index.insert(*s, states.len());
                states.push(*s);
                dist.push(0);
                frontier.push_back(*s);
            }
        }
        while let Some(s) = frontier.pop_front() {
            let ds = dist[index[&s]];
            for (z, _) in kernel.neighbors(&s) {
                if states.len() >= size {
                    break;
                }
                if let std::collections::hash_map::Entry::Vacant(e) = index.entry(z) {
                    e.insert(states.len());
                    states.push(z);
                    dist.push(ds + 1);
                    frontier.push_back(z);
                }
            }
            if states.len() >= size {
                break;
            }
        }
        let rows = states
            .iter()
            .map(|s| {
                kernel
                    .neighbors_f64(s)
                    .into_iter()
                    .map(|(z, p)| (index.get(&z).copied(), p))
                    .collect()
            })
            .collect();
        LocalGraph {
            states,
            index,
            rows,
            dist,
        }
    }

    pub fn index(&self, s: &State) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// P_z[hit `target` before `avoid`] for every z in the window, with exits
    /// scored as `exit`.
    fn hitting_probability(&self, target: &State, avoid: &State, exit: f64) -> Result<Vec<f64>> {
        let n = self.len();
        let ti = self.index(target).expect("target in window");
        let ai = self.index(avoid).expect("avoided state in window");
        let mut m = DMatrix::<f64>::zeros(n, n);
        let mut b = DVector::<f64>::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
            if i == ti {
                b[i] = 1.0;
                continue;
            }
            if i == ai {
                continue;
            }
            for (z, p) in &self.rows[i] {
                match z {
                    Some(j) => m[(i, *j)] -= p,
                    None => b[i] += p * exit,
                }
            }
        }
        m.lu()
            .solve(&b)
            .map(|v| v.iter().copied().collect())
            .ok_or_else(|| Error::Numerical("singular hitting-probability system".into()))
    }
}

/// A killing function q with {q < 1} finite; q = 1 everywhere else.
#[derive(Clone, Debug, PartialEq)]
pub struct KillingFn {
    sites: BTreeMap<State, Q>,
}

impl KillingFn {
    pub fn new(sites: impl IntoIterator<Item = (State, Q)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (s, v) in sites {
            if v.is_negative() || v > Q::one() {
                return config(format!("q({s}) = {v} is outside [0,1]"));
            }
            if v < Q::one() {
                map.insert(s, v);
            }
        }
        Ok(KillingFn { sites: map })
    }

    pub fn q(&self, s: &State) -> Q {
        self.sites.get(s).cloned().unwrap_or_else(Q::one)
    }

    pub fn sites(&self) -> impl Iterator<Item = (&State, &Q)> {
        self.sites.iter()
    }

    pub fn is_trivial(&self) -> bool {
        self.sites.is_empty()
    }
}

/// Options for [`psi_q_solve`].
#[derive(Clone, Debug)]
pub struct PsiQOptions {
    /// Radius of the reported table around {q < 1} ∪ {x_0}.
    pub radius: usize,
    /// Largest horizon N of the iterative scheme.
    pub horizon: usize,
    /// Maximum allowed disagreement between the two routes.
    pub tolerance: f64,
    /// Largest window either route may allocate.
    pub state_budget: usize,
}

impl Default for PsiQOptions {
    fn default() -> Self {
        PsiQOptions {
            radius: 8,
            horizon: 1 << 12,
            tolerance: 1e-8,
            state_budget: 200_000,
        }
    }
}

/// ψ_q on a window by two independent routes.
#[derive(Clone, Debug)]
pub struct PsiQ {
    pub states: Vec<State>,
    /// Windowed linear solve with harmonic-extension boundary.
    pub linear: Vec<f64>,
    /// Iterates χ_q^{r,N} with the self-consistent r.
    pub iterative: Vec<f64>,
    /// Change of the extrapolated iterative value between horizons N/2 and N.
    pub iterative_drift: Vec<f64>,
    /// max |ψ_q(x) − q(x) E_x[ψ_q(X_1)]| of the linear solution on the window interior.
    pub residual: f64,
    pub max_disagreement: f64,
}

impl PsiQ {
    pub fn value(&self, s: &State) -> Option<f64> {
        self.states
            .iter()
            .position(|z| z == s)
            .map(|i| self.linear[i])
    }
}

/// Solves ψ_q(x) = q(x) E_x[ψ_q(X_1)] with ψ_q ≃ φ, i.e. ψ_q(y) = Q_y[Π_k q(X_k)].
///
/// Route 1 iterates χ_q^{r,k}(y) = E_y[ψ_r(X_k) Π_{m<k} q(X_m)] backwards on a ball.
/// Since χ is affine in ρ = r/(1−r), the ρ making χ stationary between horizons
/// N/2 and N is found in closed form; it is exact whenever {q < 1} ⊂ {x_0}.
/// Route 2 solves the equation on a window, continuing ψ_q beyond the boundary as
/// ψ_q(b) + φ(z) − φ(b), which is exact for chains on Z and N.
/// The routes must agree to `tolerance` or the call fails.
pub fn psi_q_solve(
    weight: &PenalisedWeight,
    killing: &KillingFn,
    opts: &PsiQOptions,
) -> Result<PsiQ> {
    if killing.is_trivial() {
        return config("q ≡ 1 has infinite Q-mass; {q < 1} must be nonempty");
    }
    let kernel = weight.kernel();
    let phi = weight.phi();
    let x0 = weight.x0();
    let mut seeds = vec![x0];
    seeds.extend(killing.sites().map(|(s, _)| *s));

    // Report window: radius `opts.radius` around the seeds.
    let report = LocalGraph::ball_radius(kernel.as_ref(), &seeds, opts.radius, opts.state_budget)?;
    let states: Vec<State> = report.states.clone();

    // Route 2: linear solve on a margin-2 extension of the report window.
    let lin_graph =
        LocalGraph::ball_radius(kernel.as_ref(), &seeds, opts.radius + 2, opts.state_budget)?;
    let n = lin_graph.len();
    let phi_w: Vec<f64> = lin_graph.states.iter().map(|s| phi.eval_f64(s)).collect();
    let qv: Vec<f64> = lin_graph
        .states
        .iter()
        .map(|s| to_f64(&killing.q(s)))
        .collect();
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for i in 0..n {
        m[(i, i)] += 1.0;
        let nb = kernel.neighbors_f64(&lin_graph.states[i]);
        for (z, p) in nb {
            match lin_graph.index(&z) {
                Some(j) => m[(i, j)] -= qv[i] * p,
                None => {
                    m[(i, i)] -= qv[i] * p;
                    b[i] += qv[i] * p * (phi.eval_f64(&z) - phi_w[i]);
                }
            }
        }
    }
    let sol = m
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical("singular ψ_q system".into()))?;
    let linear: Vec<f64> = states
        .iter()
        .map(|s| sol[lin_graph.index(s).expect("report ⊂ solve window")])
        .collect();
    let mut residual = 0.0f64;
    for (i, s) in states.iter().enumerate() {
        let mut mean = 0.0;
        for (z, p) in kernel.neighbors_f64(s) {
            let v = match lin_graph.index(&z) {
                Some(j) => sol[j],
                None => sol[lin_graph.index(s).unwrap()] + phi.eval_f64(&z) - phi.eval_f64(s),
            };
            mean += p * v;
        }
        residual = residual.max((linear[i] - to_f64(&killing.q(s)) * mean).abs());
    }

    // Route 1: backward iterates of A (from φ) and B (from 1) on a ball large
    // enough that the report window is unaffected by its edge. A is carried as
    // D = A − φ, which stays bounded, using Pφ = φ + c·1{x_0}.
    let horizon = opts.horizon.max(32) / 32 * 32;
    let big = LocalGraph::ball_radius(
        kernel.as_ref(),
        &seeds,
        opts.radius + horizon,
        opts.state_budget,
    )?;
    let qb: Vec<f64> = big.states.iter().map(|s| to_f64(&killing.q(s))).collect();
    let c = weight.c().to_f64();
    let source: Vec<f64> = big
        .states
        .iter()
        .zip(&qb)
        .map(|(s, q)| {
            let at_x0 = if *s == x0 { c } else { 0.0 };
            q * at_x0 - (1.0 - q) * phi.eval_f64(s)
        })
        .collect();
    let mut d = vec![0.0; big.len()];
    let mut bb = vec![1.0; big.len()];
    let mut snapshots = Vec::new();
    for k in 1..=horizon {
        let (mut d2, mut b2) = (vec![0.0; big.len()], vec![0.0; big.len()]);
        for i in 0..big.len() {
            let (mut sd, mut sb) = (0.0, 0.0);
            for (z, p) in &big.rows[i] {
                if let Some(j) = z {
                    sd += p * d[*j];
                    sb += p * bb[*j];
                }
            }
            d2[i] = qb[i] * sd + source[i];
            b2[i] = qb[i] * sb;
        }
        d = d2;
        bb = b2;
        if horizon.is_multiple_of(k) && horizon / k <= 16 && (horizon / k).is_power_of_two() {
            snapshots.push((d.clone(), bb.clone()));
        }
    }
    // With ρ chosen to make levels N/2 and N agree, the remaining error expands
    // in N^{-3/2}, N^{-5/2}, ...; two Richardson steps remove the leading terms.
    let stationary = |lo: &(Vec<f64>, Vec<f64>), hi: &(Vec<f64>, Vec<f64>), i: usize| {
        let db = lo.1[i] - hi.1[i];
        let r = if db.abs() < 1e-300 {
            rho_f64(weight.r())
        } else {
            (hi.0[i] - lo.0[i]) / (c * db)
        };
        hi.0[i] + r * c * hi.1[i]
    };
    let richardson = |e: &[f64], p: f64| -> Vec<f64> {
        let w = 2f64.powf(p);
        e.windows(2)
            .map(|v| (w * v[1] - v[0]) / (w - 1.0))
            .collect()
    };
    let mut iterative = Vec::with_capacity(states.len());
    let mut drift = Vec::with_capacity(states.len());
    for s in &states {
        let i = big.index(s).expect("report ⊂ iteration ball");
        let e: Vec<f64> = (0..4)
            .map(|l| stationary(&snapshots[l], &snapshots[l + 1], i))
            .collect();
        let e = richardson(&richardson(&e, 1.5), 2.5);
        iterative.push(phi.eval_f64(s) + e[1]);
        drift.push((e[1] - e[0]).abs());
    }
    let max_disagreement = linear
        .iter()
        .zip(&iterative)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    if max_disagreement > opts.tolerance {
        return Err(Error::Numerical(format!(
            "ψ_q routes disagree by {max_disagreement:.3e} (tolerance {:.1e})",
            opts.tolerance
        )));
    }
    Ok(PsiQ {
        states,
        linear,
        iterative,
        iterative_drift: drift,
        residual,
        max_disagreement,
    })
}

fn rho_f64(r: &Q) -> f64 {
    to_f64(&rho(r))
}

impl LocalGraph {
    /// All states within graph distance `radius` of the seeds.
    pub fn ball_radius<K: MarkovKernel + ?Sized>(
        kernel: &K,
        seeds: &[State],
        radius: usize,
        budget: usize,
    ) -> Result<Self> {
        let mut g = Self::ball(kernel, seeds, budget + 1);
        if g.len() > budget
            && g.dist.iter().any(|d| *d <= radius)
            && g.dist.last().is_some_and(|d| *d <= radius)
        {
            return resource("window states", budget);
        }
        let keep: Vec<usize> = (0..g.len()).filter(|&i| g.dist[i] <= radius).collect();
        if keep.len() == g.len() {
            return Ok(g);
        }
        let states: Vec<State> = keep.iter().map(|&i| g.states[i]).collect();
        let index: HashMap<State, usize> =
            states.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let rows = keep
            .iter()
            .map(|&i| {
                kernel
                    .neighbors_f64(&g.states[i])
                    .into_iter()
                    .map(|(z, p)| (index.get(&z).copied(), p))
                    .collect()
            })
            .collect();
        g.dist = keep.iter().map(|&i| g.dist[i]).collect();
        g.states = states;
        g.index = index;
        g.rows = rows;
        Ok(g)
    }
}

/// Doob transform of the base chain by φ^{[y_0]}: it never visits y_0.
///
/// From y_0 itself the row is the normalised first step of the Q̃_{y_0} excursion,
/// p(y_0, z) φ^{[y_0]}(z) / K(y_0).
#[derive(Clone, Debug)]
pub struct TransientKernel {
    base: Arc<dyn MarkovKernel>,
    y0: State,
    phi_y0: HarmonicFn,
    plateau: Exact,
}

impl TransientKernel {
    pub fn new(weight: &PenalisedWeight, y0: &State) -> Result<Self> {
        let phi_y0 = phi_restricted(weight, y0)?;
        let plateau = phi_y0.one_step_mean(y0);
        Ok(TransientKernel {
            base: weight.kernel().clone(),
            y0: *y0,
            phi_y0,
            plateau,
        })
    }

    pub fn y0(&self) -> State {
        self.y0
    }

    pub fn phi(&self) -> &HarmonicFn {
        &self.phi_y0
    }

    pub fn plateau(&self) -> &Exact {
        &self.plateau
    }

    fn denominator(&self, x: &State) -> Exact {
        if *x == self.y0 {
            self.plateau.clone()
        } else {
            self.phi_y0.eval(x)
        }
    }

    /// Exact row p̄(x, ·) when every entry is rational; None off the support or
    /// when the ratios involve π.
    pub fn transitions_exact(&self, x: &State) -> Option<Vec<(State, Q)>> {
        let den = self.denominator(x).as_rational()?.clone();
        if den.is_zero() {
            return None;
        }
        self.base
            .neighbors(x)
            .into_iter()
            .map(|(z, p)| Some((z, p * self.phi_y0.eval(&z).as_rational()? / &den)))
            .collect()
    }

    pub fn transitions(&self, x: &State) -> Vec<(State, f64)> {
        let den = self.denominator(x).to_f64();
        self.base
            .neighbors_f64(x)
            .into_iter()
            .map(|(z, p)| (z, p * self.phi_y0.eval_f64(&z) / den))
            .collect()
    }

    pub fn step<R: Rng + ?Sized>(&self, x: &State, rng: &mut R) -> State {
        let row = self.transitions(x);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = None;
        for (z, p) in &row {
            if *p > 0.0 {
                acc += p;
                last = Some(*z);
                if u < acc {
                    return *z;
                }
            }
        }
        last.expect("transient row has positive mass")
    }
}

/// A path from the decomposition of Q_y on {L_∞^{y_0} = k}, normalised to a
/// probability, with the mass of that event kept separately.
#[derive(Clone, Debug)]
pub struct Decomposed {
    pub path: PathRecord,
    pub mass: Exact,
    /// τ_k^{(y_0)}; None for k = 0.
    pub tau_k: Option<usize>,
}

/// Samples Q_y( · | L_∞^{y_0} = k): the base chain up to τ_k^{(y_0)}, then the
/// transient h-walk. For k = 0 the h-walk starts at y. The returned path covers
/// at least `horizon` steps; the base stage may use at most `budget` steps.
pub fn sample_decomposed<R: Rng + ?Sized>(
    weight: &PenalisedWeight,
    y: &State,
    y0: &State,
    k: u32,
    horizon: usize,
    rng: &mut R,
    budget: usize,
) -> Result<Decomposed> {
    let tk = TransientKernel::new(weight, y0)?;
    decomposed_run(weight, &tk, y, k, horizon, rng, budget, false)
        .map(|d| d.expect("untruncated run"))
}

/// Shared sampler. With `truncate`, a base stage that has not reached τ_k by
/// `horizon` returns Ok(None) instead of consuming the budget.
#[allow(clippy::too_many_arguments)]
fn decomposed_run<R: Rng + ?Sized>(
    weight: &PenalisedWeight,
    tk: &TransientKernel,
    y: &State,
    k: u32,
    horizon: usize,
    rng: &mut R,
    budget: usize,
    truncate: bool,
) -> Result<Option<Decomposed>> {
    let kernel = weight.kernel();
    let y0 = tk.y0();
    let mut path = PathRecord::new(*y, &[y0]);
    let mass;
    let mut tau = None;
    if k == 0 {
        let atom = tk.phi().eval(y);
        if atom.signum() != Ordering::Greater {
            return config("k = 0 needs φ^[y0](y) > 0; the conditioned measure has zero mass");
        }
        mass = atom;
    } else {
        while path.local_time(0, path.steps() as isize) < k {
            if truncate && path.steps() >= horizon {
                return Ok(None);
            }
            if path.steps() >= budget {
                return resource(format!("steps before τ_{k} of {y0}"), budget);
            }
            let next = step(kernel.as_ref(), &path.last(), rng);
            path.push(next);
        }
        tau = Some(path.steps());
        mass = tk.plateau().clone();
    }
    let target = horizon.max(path.steps() + 1);
    while path.steps() < target {
        let next = tk.step(&path.last(), rng);
        path.push(next);
    }
    Ok(Some(Decomposed {
        path,
        mass,
        tau_k: tau,
    }))
}

/// Both sides of Q_y[F_n 1{g_{y_0} < n}] = E_y[F_n φ^{[y_0]}(X_n)]: the left by
/// decomposition sampling stratified over k = L_∞^{y_0} ∈ {0..n}, the right exactly.
pub fn last_visit_check(
    weight: &PenalisedWeight,
    y: &State,
    y0: &State,
    f: &QFunctional,
    paths_per_stratum: usize,
    seed: u64,
) -> Result<(MCEstimate, Exact)> {
    let n = f.n;
    let tk = TransientKernel::new(weight, y0)?;
    let kernel = weight.kernel();
    let mut exact = Exact::zero();
    for_each_path(kernel.as_ref(), *y, n, &[], LEAF_BUDGET, |path, p| {
        let v = f.eval(path);
        if !v.is_zero() {
            exact += &tk.phi().eval(&path.last()).scale(&(v * p));
        }
    })?;
    let mut mean = 0.0;
    let mut var = 0.0;
    for k in 0..=n as u32 {
        if k == 0 && tk.phi().eval(y).signum() != Ordering::Greater {
            continue;
        }
        let label = format!("last-visit/{k}");
        let mut vals = Vec::with_capacity(paths_per_stratum);
        let mut mass = 0.0;
        for i in 0..paths_per_stratum {
            let mut rng = stream(seed, &label, i as u64);
            let v = match decomposed_run(weight, &tk, y, k, n, &mut rng, n, true)? {
                Some(d) => {
                    mass = d.mass.to_f64();
                    let prefix = truncate_path(&d.path, n);
                    let in_time = d.tau_k.is_none_or(|t| t < n);
                    if in_time {
                        to_f64(&f.eval(&prefix))
                    } else {
                        0.0
                    }
                }
                None => 0.0,
            };
            vals.push(v);
        }
        if mass == 0.0 {
            mass = if k == 0 {
                tk.phi().eval_f64(y)
            } else {
                tk.plateau().to_f64()
            };
        }
        let est = MCEstimate::from_samples(&vals);
        mean += mass * est.mean;
        var += (mass * est.stderr).powi(2);
    }
    let est = MCEstimate {
        count: paths_per_stratum * (n + 1),
        mean,
        stderr: var.sqrt(),
    };
    Ok((est, exact))
}

fn truncate_path(p: &PathRecord, n: usize) -> PathRecord {
    let mut out = PathRecord::new(p.state(0), &[]);
    for k in 1..=n.min(p.steps()) {
        out.push(p.state(k));
    }
    out
}
