//! Nonnegative functions vanishing at a reference point x_0 and harmonic
//! elsewhere: closed forms, the Green-difference series, residual checks and the
//! asymptotic equivalence ≃.
//!
//! The Green route: if Σ_k [P_{x_0}(X_k = x_0) − P_x(X_k = x_0)] converges, its
//! value is such a function. The tail-of-hitting-time route to existence is not
//! implemented numerically; the series covers the catalog.

use crate::chain::{Catalog, MarkovKernel, Node, State};
use crate::error::{config, Error, Result};
use crate::exact::{pow2, q, qi, Exact, Q};
use num_traits::{One, Zero};
use std::fmt;
use std::sync::{Arc, Mutex};

type Evaluator = Arc<dyn Fn(&State) -> Exact + Send + Sync>;

/// φ with φ(x_0) = 0 and E_x[φ(X_1)] = φ(x) for x ≠ x_0.
#[derive(Clone)]
pub struct HarmonicFn {
    kernel: Arc<dyn MarkovKernel>,
    x0: State,
    eval: Evaluator,
    name: String,
    tag: Option<(Catalog, Variant)>,
}

impl fmt::Debug for HarmonicFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HarmonicFn")
            .field("kernel", &self.kernel.name())
            .field("x0", &self.x0)
            .field("name", &self.name)
            .finish()
    }
}

impl HarmonicFn {
    /// Wraps an arbitrary evaluator. Nothing is checked; see [`check_harmonic`].
    pub fn new(
        kernel: Arc<dyn MarkovKernel>,
        x0: State,
        name: impl Into<String>,
        eval: impl Fn(&State) -> Exact + Send + Sync + 'static,
    ) -> Self {
        HarmonicFn {
            kernel,
            x0,
            eval: Arc::new(eval),
            name: name.into(),
            tag: None,
        }
    }

    /// The catalog closed form this function came from, if any.
    pub fn tag(&self) -> Option<&(Catalog, Variant)> {
        self.tag.as_ref()
    }

    pub fn eval(&self, s: &State) -> Exact {
        (self.eval)(s)
    }

    pub fn eval_f64(&self, s: &State) -> f64 {
        self.eval(s).to_f64()
    }

    pub fn x0(&self) -> State {
        self.x0
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kernel(&self) -> &Arc<dyn MarkovKernel> {
        &self.kernel
    }

    /// E_s[φ(X_1)], exact.
    pub fn one_step_mean(&self, s: &State) -> Exact {
        let mut acc = Exact::zero();
        for (z, p) in self.kernel.neighbors(s) {
            acc += &self.eval(&z).scale(&p);
        }
        acc
    }
}

/// The closed-form functions of the catalog.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Variant {
    /// |x| on Z.
    Abs,
    /// x_+ on Z.
    Plus,
    /// x_- on Z.
    Minus,
    /// 2^x − 1 for the bang-bang walk.
    Pow2,
    /// Distance to the root of the tree.
    TreeDepth,
    /// 2^p − 1 with p the length of agreement with the sequence a, given as a
    /// finite prefix extended by zeros.
    TreeBranch(Vec<u8>),
    /// Potential kernel of the planar walk.
    Potential,
}

impl Variant {
    pub fn default_for(kernel: Catalog) -> Variant {
        match kernel {
            Catalog::SrwZ => Variant::Abs,
            Catalog::BangBang => Variant::Pow2,
            Catalog::BinaryTree => Variant::TreeBranch(Vec::new()),
            Catalog::SrwZ2 => Variant::Potential,
        }
    }
}

/// Closed-form φ for a (kernel, variant) pair, reference point the kernel origin.
pub fn phi_closed(kernel: Catalog, variant: Variant) -> Result<HarmonicFn> {
    let k: Arc<dyn MarkovKernel> = Arc::new(kernel);
    let x0 = kernel.origin();
    let f = match (kernel, &variant) {
        (Catalog::SrwZ, Variant::Abs) => {
            HarmonicFn::new(k, x0, "|x|", |s| Exact::from(z_of(s).abs()))
        }
        (Catalog::SrwZ, Variant::Plus) => {
            HarmonicFn::new(k, x0, "x+", |s| Exact::from(z_of(s).max(0)))
        }
        (Catalog::SrwZ, Variant::Minus) => {
            HarmonicFn::new(k, x0, "x-", |s| Exact::from((-z_of(s)).max(0)))
        }
        (Catalog::BangBang, Variant::Pow2) => HarmonicFn::new(k, x0, "2^x-1", |s| {
            Exact::from(pow2(n_of(s) as u32) - Q::one())
        }),
        (Catalog::BinaryTree, Variant::TreeDepth) => {
            HarmonicFn::new(k, x0, "depth", |s| Exact::from(node_of(s).depth() as i64))
        }
        (Catalog::BinaryTree, Variant::TreeBranch(a)) => {
            if a.iter().any(|b| *b > 1) {
                return config("tree sequence must be 0/1");
            }
            let a = a.clone();
            let name = format!("branch{a:?}");
            HarmonicFn::new(k, x0, name, move |s| {
                let n = node_of(s);
                let p = (0..n.depth())
                    .find(|&i| n.letter(i) != a.get(i).copied().unwrap_or(0))
                    .unwrap_or(n.depth());
                Exact::from(pow2(p as u32) - Q::one())
            })
        }
        (Catalog::SrwZ2, Variant::Potential) => {
            let table = Arc::new(PotentialKernel::default());
            HarmonicFn::new(k, x0, "a(x)", move |s| {
                let (x, y) = z2_of(s);
                table.value(x, y)
            })
        }
        (kc, v) => return config(format!("no closed form for {v:?} on {}", kc.id())),
    };
    Ok(HarmonicFn {
        tag: Some((kernel, variant)),
        ..f
    })
}

pub(crate) fn z_of(s: &State) -> i64 {
    match s {
        State::Z(x) => *x,
        other => panic!("expected a Z state, got {other}"),
    }
}

pub(crate) fn n_of(s: &State) -> u64 {
    match s {
        State::N(x) => *x,
        other => panic!("expected an N state, got {other}"),
    }
}

pub(crate) fn node_of(s: &State) -> Node {
    match s {
        State::Tree(n) => *n,
        other => panic!("expected a tree node, got {other}"),
    }
}

pub(crate) fn z2_of(s: &State) -> (i64, i64) {
    match s {
        State::Z2(x, y) => (*x, *y),
        other => panic!("expected a Z² state, got {other}"),
    }
}

/// Potential kernel a of the planar walk, exact in Q ⊕ Q/π.
///
/// Seeds: a(0,0) = 0, a(1,0) = 1, a(n,n) = (4/π) Σ_{j≤n} 1/(2j−1). Column x+1 of the
/// wedge 0 ≤ y ≤ x+1 follows from harmonicity at (x, y) and the lattice
/// symmetries; a(n+1,n) = 2a(n,n) − a(n,n−1) comes from harmonicity on the diagonal.
#[derive(Default)]
pub struct PotentialKernel {
    // cols[x][y] = a(x, y) for 0 ≤ y ≤ x.
    cols: Mutex<Vec<Vec<Exact>>>,
}

impl PotentialKernel {
    pub fn value(&self, x: i64, y: i64) -> Exact {
        let (mut u, mut v) = (x.unsigned_abs() as usize, y.unsigned_abs() as usize);
        if v > u {
            std::mem::swap(&mut u, &mut v);
        }
        let mut cols = self.cols.lock().expect("potential table poisoned");
        while cols.len() <= u {
            let next = Self::next_column(&cols);
            cols.push(next);
        }
        cols[u][v].clone()
    }

    fn diag(n: usize) -> Exact {
        let s = (1..=n as i64).fold(Q::zero(), |acc, j| acc + q(1, 2 * j - 1));
        Exact::new(Q::zero(), s * qi(4))
    }

    fn next_column(cols: &[Vec<Exact>]) -> Vec<Exact> {
        let x = cols.len();
        match x {
            0 => return vec![Exact::zero()],
            1 => return vec![Exact::one(), Self::diag(1)],
            _ => {}
        }
        let at = |u: usize, v: i64| -> Exact {
            let v = v.unsigned_abs() as usize;
            let (u, v) = if v > u { (v, u) } else { (u, v) };
            cols[u][v].clone()
        };
        let xm = x - 1;
        let mut col = vec![Exact::zero(); x + 1];
        col[x] = Self::diag(x);
        col[xm] = &at(xm, xm as i64).scale(&qi(2)) - &at(xm, xm as i64 - 1);
        #[allow(clippy::needless_range_loop)]
        for y in 0..xm {
            let yi = y as i64;
            col[y] = at(xm, yi).scale(&qi(4)) - at(xm - 1, yi) - at(xm, yi + 1) - at(xm, yi - 1);
        }
        col
    }
}

/// E_x[fn(X_1)] − fn(x) for every x ≠ x_0 in the window.
pub fn check_harmonic<K: MarkovKernel + ?Sized>(
    kernel: &K,
    f: &HarmonicFn,
    window: &[State],
) -> Vec<(State, Exact)> {
    window
        .iter()
        .filter(|s| **s != f.x0())
        .map(|s| {
            let mut mean = Exact::zero();
            for (z, p) in kernel.neighbors(s) {
                mean += &f.eval(&z).scale(&p);
            }
            (*s, mean - f.eval(s))
        })
        .collect()
}

/// Partial sums of the Green-difference series and their dyadic behaviour.
#[derive(Clone, Debug, PartialEq)]
pub struct GreenSeries {
    pub n: usize,
    /// S_N.
    pub sum: f64,
    /// Parity averages A_M = (S_M + S_{M−1})/2 at M = N/2 and N/4.
    pub sum_half: f64,
    pub sum_quarter: f64,
    /// (A_N − A_{N/2}) / (A_{N/2} − A_{N/4}): the per-doubling contraction.
    pub doubling_ratio: f64,
    /// Square of the above: how much the error shrinks when N → 4N.
    pub quadrupling_ratio: f64,
    /// A_N plus the geometric continuation of the last difference.
    pub extrapolated: f64,
}

pub const SERIES_SUPPORT_BUDGET: usize = 2_000_000;

/// S_N = Σ_{k=0}^{N} [P_{x_0}(X_k = x_0) − P_x(X_k = x_0)], with N ≥ 4.
///
/// Point probabilities come from the kernel's closed form when it has one and
/// otherwise from float propagation, which fails with a resource error rather
/// than truncate the support.
pub fn phi_green_series<K: MarkovKernel + ?Sized>(
    kernel: &K,
    x0: &State,
    x: &State,
    n: usize,
) -> Result<GreenSeries> {
    if n < 4 {
        return config("series horizon must be at least 4");
    }
    let p0 = point_probs(kernel, x0, x0, n)?;
    let px = point_probs(kernel, x, x0, n)?;
    let mut partial = Vec::with_capacity(n + 1);
    let (mut s, mut comp) = (0.0f64, 0.0f64);
    for k in 0..=n {
        // Neumaier summation.
        let term = p0[k] - px[k];
        let t = s + term;
        if s.abs() >= term.abs() {
            comp += (s - t) + term;
        } else {
            comp += (term - t) + s;
        }
        s = t;
        partial.push(s + comp);
    }
    // Period-2 chains make S_N oscillate with parity (for srw_z, x = 1 it is
    // exactly 1 at every even N); rates are read off the parity averages.
    let avg = |m: usize| 0.5 * (partial[m] + partial[m - 1]);
    let (sq, sh, sn) = (avg(n / 4), avg(n / 2), avg(n));
    let (da, db) = (sh - sq, sn - sh);
    let ratio = if da != 0.0 { db / da } else { 0.0 };
    let extrapolated = if ratio > 0.0 && ratio < 1.0 {
        sn + db * ratio / (1.0 - ratio)
    } else {
        sn
    };
    Ok(GreenSeries {
        n,
        sum: partial[n],
        sum_half: sh,
        sum_quarter: sq,
        doubling_ratio: ratio,
        quadrupling_ratio: ratio * ratio,
        extrapolated,
    })
}

fn point_probs<K: MarkovKernel + ?Sized>(
    kernel: &K,
    from: &State,
    to: &State,
    n: usize,
) -> Result<Vec<f64>> {
    if let Some(p) = kernel.point_probabilities(from, to, n) {
        return Ok(p);
    }
    use crate::chain::{propagate, AugmentedDistribution};
    let mut d = AugmentedDistribution::<f64>::delta(*from, 0);
    let mut out = Vec::with_capacity(n + 1);
    for k in 0..=n {
        out.push(d.marginal().get(to).copied().unwrap_or(0.0));
        if k < n {
            d = propagate(kernel, &d, 1, &[], SERIES_SUPPORT_BUDGET)?;
        }
    }
    Ok(out)
}

/// Outcome of the ≃ falsifier on a finite window.
#[derive(Clone, Debug, PartialEq)]
pub struct Equivalence {
    /// max |f1/f2 − 1| over the test set.
    pub worst: f64,
    /// The same value exactly, when both functions are rational on the test set.
    pub worst_exact: Option<Q>,
    pub at: State,
    pub tested: usize,
}

/// Worst relative deviation of f1 from f2 on {x in window : f1 + f2 ≥ A}.
///
/// A falsifier: ≃ quantifies over the whole space, so a window can refute it
/// but never prove it. A decreasing sequence of `worst` as A grows is the
/// practical certificate.
pub fn equivalent(
    f1: &HarmonicFn,
    f2: &HarmonicFn,
    threshold: f64,
    window: &[State],
) -> Result<Equivalence> {
    let mut best: Option<Equivalence> = None;
    let mut tested = 0;
    let mut all_rational = true;
    for s in window {
        let (a, b) = (f1.eval(s), f2.eval(s));
        if (&a + &b).to_f64() < threshold {
            continue;
        }
        tested += 1;
        let (dev, exact) = match (a.as_rational(), b.as_rational()) {
            (Some(ra), Some(rb)) if !rb.is_zero() => {
                let e = num_traits::Signed::abs(&(ra / rb - Q::one()));
                (crate::exact::to_f64(&e), Some(e))
            }
            _ => {
                all_rational = false;
                let bf = b.to_f64();
                let d = if bf == 0.0 {
                    f64::INFINITY
                } else {
                    (a.to_f64() / bf - 1.0).abs()
                };
                (d, None)
            }
        };
        if best.as_ref().is_none_or(|e| dev > e.worst) {
            best = Some(Equivalence {
                worst: dev,
                worst_exact: exact,
                at: *s,
                tested: 0,
            });
        }
    }
    let mut e = best.ok_or_else(|| {
        Error::Config(format!("no state with f1 + f2 ≥ {threshold} in the window"))
    })?;
    e.tested = tested;
    if !all_rational {
        e.worst_exact = None;
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{bfs_ball, Catalog};

    fn zwin(a: i64, b: i64) -> Vec<State> {
        (a..=b).map(State::Z).collect()
    }

    #[test]
    fn closed_form_values() {
        let f = phi_closed(Catalog::SrwZ, Variant::Abs).unwrap();
        assert_eq!(f.eval(&State::Z(3)), Exact::from(3));
        assert_eq!(f.eval(&State::Z(-2)), Exact::from(2));
        assert_eq!(f.eval(&State::Z(0)), Exact::zero());
        let b = phi_closed(Catalog::BangBang, Variant::Pow2).unwrap();
        assert_eq!(b.eval(&State::N(1)), Exact::from(1));
        assert_eq!(b.eval(&State::N(3)), Exact::from(7));
        let t = phi_closed(Catalog::BinaryTree, Variant::TreeBranch(vec![])).unwrap();
        let node = |l: &[u8]| State::Tree(Node::from_letters(l));
        assert_eq!(t.eval(&node(&[0, 0])), Exact::from(3));
        assert_eq!(t.eval(&node(&[1])), Exact::zero());
        assert_eq!(t.eval(&node(&[0, 1])), Exact::from(1));
        assert_eq!(t.eval(&node(&[0, 0, 0])), Exact::from(7));
        assert!(phi_closed(Catalog::SrwZ, Variant::Pow2).is_err());
    }

    #[test]
    fn potential_kernel_seeds() {
        let p = PotentialKernel::default();
        assert_eq!(p.value(1, 0), Exact::one());
        assert_eq!(p.value(0, -1), Exact::one());
        assert_eq!(p.value(2, 0), Exact::new(qi(4), qi(-8)));
        assert_eq!(p.value(1, 1), Exact::new(Q::zero(), qi(4)));
        // Classical decimal values of the planar potential kernel.
        assert_eq!(p.value(2, 1), Exact::new(qi(-1), qi(8)));
        assert_eq!(p.value(-3, 0), Exact::new(qi(17), qi(-48)));
        assert_eq!(p.value(2, 2), Exact::new(Q::zero(), q(16, 3)));
    }

    #[test]
    fn residuals() {
        let f = phi_closed(Catalog::SrwZ, Variant::Abs).unwrap();
        assert!(check_harmonic(&Catalog::SrwZ, &f, &zwin(-50, 50))
            .iter()
            .all(|(_, r)| r.is_zero()));
        let b = phi_closed(Catalog::BangBang, Variant::Pow2).unwrap();
        let w: Vec<State> = (1..=40).map(State::N).collect();
        assert!(check_harmonic(&Catalog::BangBang, &b, &w)
            .iter()
            .all(|(_, r)| r.is_zero()));
        let sq = HarmonicFn::new(Arc::new(Catalog::SrwZ), State::Z(0), "x^2", |s| {
            let x = z_of(s);
            Exact::from(x * x)
        });
        for (_, r) in check_harmonic(&Catalog::SrwZ, &sq, &zwin(1, 5)) {
            assert_eq!(r, Exact::one());
        }
    }

    #[test]
    fn planar_and_tree_residuals() {
        let a = phi_closed(Catalog::SrwZ2, Variant::Potential).unwrap();
        let w = bfs_ball(&Catalog::SrwZ2, &State::Z2(0, 0), 120);
        assert!(check_harmonic(&Catalog::SrwZ2, &a, &w)
            .iter()
            .all(|(_, r)| r.is_zero()));
        for v in [Variant::TreeDepth, Variant::TreeBranch(vec![1, 0, 1])] {
            let t = phi_closed(Catalog::BinaryTree, v).unwrap();
            let w = Catalog::BinaryTree.window(200);
            assert!(check_harmonic(&Catalog::BinaryTree, &t, &w)
                .iter()
                .all(|(_, r)| r.is_zero()));
        }
    }

    #[test]
    fn equivalence_examples() {
        let f = phi_closed(Catalog::SrwZ, Variant::Abs).unwrap();
        let g = HarmonicFn::new(Arc::new(Catalog::SrwZ), State::Z(5), "|x-5|", |s| {
            Exact::from((z_of(s) - 5).abs())
        });
        let w = zwin(-10_000, 10_000);
        let e = equivalent(&f, &g, 100.0, &w).unwrap();
        assert_eq!(e.worst_exact, Some(q(5, 48)));
        assert_eq!(e.at, State::Z(53));
        assert_eq!(equivalent(&f, &f, 100.0, &w).unwrap().worst, 0.0);
        let h = HarmonicFn::new(Arc::new(Catalog::SrwZ), State::Z(0), "2|x|", |s| {
            Exact::from(2 * z_of(s).abs())
        });
        assert_eq!(equivalent(&h, &f, 10.0, &w).unwrap().worst, 1.0);
        assert!(equivalent(&f, &f, 1e9, &w).is_err());
    }

    #[test]
    fn green_series_trivial_and_small() {
        let s = phi_green_series(&Catalog::SrwZ, &State::Z(0), &State::Z(0), 64).unwrap();
        assert_eq!(s.sum, 0.0);
        let s = phi_green_series(&Catalog::SrwZ, &State::Z(0), &State::Z(2), 4096).unwrap();
        assert!((s.sum - 2.0).abs() < 0.1);
        // Propagation fallback on the tree. The depth is a reflected walk, and
        // P(S_2m = 0) = P(S_2m-1 = -1) makes even partial sums telescope to 1.
        let t = Catalog::BinaryTree;
        let s =
            phi_green_series(&t, &t.origin(), &State::Tree(Node::from_letters(&[0])), 16).unwrap();
        assert!((s.sum - 1.0).abs() < 1e-12, "{s:?}");
    }
}
