//! Brute-force ground truth: exact expectations of path functionals by leaf
//! enumeration or by augmented propagation, and a dyadic limit probe.
//!
//! The two backends are deliberately redundant so that each validates the other.
//! All arithmetic here is exact rational.

use crate::chain::{
    for_each_path, propagate, AugmentedDistribution, MarkovKernel, PathRecord, State,
};
use crate::error::{config, Result};
use crate::exact::{to_f64, Q};
use num_traits::{One, Signed, Zero};

/// A functional of the first n steps.
pub enum Functional<'a> {
    /// Any function of the recorded path.
    Path(&'a dyn Fn(&PathRecord) -> Q),
    /// A function of (X_n, L_{n-1} at the tracked sites); both backends accept it.
    Terminal(&'a dyn Fn(&State, &[u32]) -> Q),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    Enumerate,
    Propagate,
}

/// Default budgets: 2^23 leaves, 10^6 augmented states.
pub const LEAF_BUDGET: usize = 1 << 23;
pub const SUPPORT_BUDGET: usize = 1_000_000;

/// E_x[functional] over n steps, exactly.
pub fn exact_expectation<K: MarkovKernel + ?Sized>(
    kernel: &K,
    x: State,
    n: usize,
    tracked: &[State],
    functional: &Functional<'_>,
    backend: Backend,
) -> Result<Q> {
    match (backend, functional) {
        (Backend::Enumerate, f) => {
            let mut acc = Q::zero();
            for_each_path(kernel, x, n, tracked, LEAF_BUDGET, |path, p| {
                let v = match f {
                    Functional::Path(g) => g(path),
                    Functional::Terminal(g) => {
                        let c: Vec<u32> = (0..tracked.len())
                            .map(|j| path.local_time_before(j))
                            .collect();
                        g(&path.last(), &c)
                    }
                };
                if !v.is_zero() {
                    acc += v * p;
                }
            })?;
            Ok(acc)
        }
        (Backend::Propagate, Functional::Terminal(g)) => {
            let d0 = AugmentedDistribution::<Q>::delta(x, tracked.len());
            let d = propagate(kernel, &d0, n, tracked, SUPPORT_BUDGET)?;
            Ok(d.expect(|s, c| g(s, c)))
        }
        (Backend::Propagate, Functional::Path(_)) => {
            config("path functionals need the enumeration backend")
        }
    }
}

/// Convergence verdict of a dyadic triple.
#[derive(Clone, Debug, PartialEq)]
pub enum Rate {
    /// The three values coincide.
    Converged,
    /// Successive differences shrink by this factor.
    Ratio(Q),
    /// Differences change sign, vanish then reappear, or grow.
    Flagged(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    /// Exact extrapolation under the geometric model.
    pub limit: Option<Q>,
    /// Float value of the extrapolation under the model that produced it.
    pub limit_f64: Option<f64>,
    pub rate: Rate,
}

/// Extrapolates (v_N, v_2N, v_4N) assuming the differences shrink geometrically
/// (Aitken). Power tails such as N^{-1/2} need [`limit_probe_power`].
///
/// Only a divergence detector: it is never used as ground truth.
pub fn limit_probe(v: [&Q; 3]) -> Probe {
    let d1 = v[1] - v[0];
    let d2 = v[2] - v[1];
    if d1.is_zero() && d2.is_zero() {
        return Probe {
            limit: Some(v[2].clone()),
            limit_f64: Some(to_f64(v[2])),
            rate: Rate::Converged,
        };
    }
    if d1.is_zero() || d2.is_zero() || d1.signum() != d2.signum() {
        return Probe {
            limit: None,
            limit_f64: None,
            rate: Rate::Flagged("non-monotone triple".into()),
        };
    }
    let ratio = &d2 / &d1;
    if ratio >= Q::one() {
        return Probe {
            limit: None,
            limit_f64: None,
            rate: Rate::Flagged("differences do not shrink".into()),
        };
    }
    let limit = v[2] + &d2 * &ratio / (Q::one() - &ratio);
    Probe {
        limit_f64: Some(to_f64(&limit)),
        limit: Some(limit),
        rate: Rate::Ratio(ratio),
    }
}

/// Power-tail variant: fits v = L + a·N^{-p} + b·N^{-p-1} through the values at
/// N, 2N, 4N and returns L. Monotonicity is screened as in [`limit_probe`].
pub fn limit_probe_power(v: [&Q; 3], n: u64, p: f64) -> Probe {
    let screen = limit_probe(v);
    if matches!(screen.rate, Rate::Flagged(_) | Rate::Converged) {
        return screen;
    }
    let vf: Vec<f64> = v.iter().map(|x| to_f64(x)).collect();
    let rows: Vec<[f64; 3]> = (0..3)
        .map(|i| {
            let m = (n << i) as f64;
            [1.0, m.powf(-p), m.powf(-p - 1.0)]
        })
        .collect();
    let det = |c: [[f64; 3]; 3]| {
        c[0][0] * (c[1][1] * c[2][2] - c[1][2] * c[2][1])
            - c[0][1] * (c[1][0] * c[2][2] - c[1][2] * c[2][0])
            + c[0][2] * (c[1][0] * c[2][1] - c[1][1] * c[2][0])
    };
    let a = [rows[0], rows[1], rows[2]];
    let mut b = a;
    for i in 0..3 {
        b[i][0] = vf[i];
    }
    Probe {
        limit_f64: Some(det(b) / det(a)),
        ..screen
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::Catalog;
    use crate::exact::{q, qi};

    fn abs_z(s: &State) -> Q {
        match s {
            State::Z(x) => qi(x.abs()),
            _ => unreachable!(),
        }
    }

    #[test]
    fn enumeration_examples() {
        let f = |p: &PathRecord| abs_z(&p.last());
        let v = exact_expectation(
            &Catalog::SrwZ,
            State::Z(0),
            2,
            &[],
            &Functional::Path(&f),
            Backend::Enumerate,
        )
        .unwrap();
        assert_eq!(v, qi(1));

        let g = |s: &State, _: &[u32]| if *s == State::N(2) { qi(1) } else { qi(0) };
        for b in [Backend::Enumerate, Backend::Propagate] {
            let v = exact_expectation(
                &Catalog::BangBang,
                State::N(0),
                2,
                &[],
                &Functional::Terminal(&g),
                b,
            )
            .unwrap();
            assert_eq!(v, q(1, 3));
        }
    }

    #[test]
    fn optional_stopping_at_absorbing_barrier() {
        // X_N 1{τ_1^{(0)} > N} from 3: no visit to 0 among X_0..X_N.
        let f = |s: &State, c: &[u32]| match s {
            State::Z(x) if c[0] == 0 && *x != 0 => qi(*x),
            _ => qi(0),
        };
        for n in 1..=14 {
            let a = exact_expectation(
                &Catalog::SrwZ,
                State::Z(3),
                n,
                &[State::Z(0)],
                &Functional::Terminal(&f),
                Backend::Propagate,
            )
            .unwrap();
            assert_eq!(a, qi(3), "N={n}");
        }
    }

    #[test]
    fn unit_functional_has_unit_mass() {
        let one = |_: &State, _: &[u32]| Q::one();
        for k in Catalog::all() {
            for b in [Backend::Enumerate, Backend::Propagate] {
                let v = exact_expectation(
                    &k,
                    k.origin(),
                    5,
                    &[k.origin()],
                    &Functional::Terminal(&one),
                    b,
                )
                .unwrap();
                assert_eq!(v, Q::one());
            }
        }
    }

    #[test]
    fn probe_examples() {
        let p = limit_probe([&q(7, 2), &q(13, 4), &q(25, 8)]);
        assert_eq!(p.limit, Some(qi(3)));
        assert_eq!(p.rate, Rate::Ratio(q(1, 2)));
        let p = limit_probe([&qi(3), &qi(3), &qi(3)]);
        assert_eq!(p.limit, Some(qi(3)));
        assert_eq!(p.rate, Rate::Converged);
        let p = limit_probe([&qi(3), &qi(4), &qi(2)]);
        assert!(p.limit.is_none());
        assert!(matches!(p.rate, Rate::Flagged(_)));
    }

    #[test]
    fn probe_never_hit_mass() {
        // E_3[1{τ_0 > N} ψ_{1/2}(X_N)] = 3 + P_3(τ_0 > N) → 3.
        let f = |s: &State, c: &[u32]| match s {
            State::Z(x) if c[0] == 0 && *x != 0 => qi(1 + x.abs()),
            _ => qi(0),
        };
        let vals: Vec<Q> = [8, 16, 32]
            .iter()
            .map(|&n| {
                exact_expectation(
                    &Catalog::SrwZ,
                    State::Z(3),
                    n,
                    &[State::Z(0)],
                    &Functional::Terminal(&f),
                    Backend::Propagate,
                )
                .unwrap()
            })
            .collect();
        let p = limit_probe_power([&vals[0], &vals[1], &vals[2]], 8, 0.5);
        assert!(matches!(p.rate, Rate::Ratio(_)));
        let lim = p.limit_f64.unwrap();
        assert!((lim - 3.0).abs() < 0.02, "{lim}");
    }
}
