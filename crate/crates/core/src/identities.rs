//! Named verification suites.
//!
//! Each suite returns [`CheckResult`]s pairing a left-hand side (exact value or
//! Monte-Carlo estimate) with a right-hand side (closed form, oracle or
//! quadrature). Checks whose truth is analytic are marked as controls, so that a
//! broken estimator is told apart from a failing identity.

use crate::chain::{bfs_ball, Catalog, MarkovKernel, Node, State};
use crate::error::{Error, Result};
use crate::exact::{q, qi, qpow, to_f64, Exact, Q};
use crate::harmonic::{check_harmonic, phi_closed, phi_green_series, HarmonicFn, Variant};
use crate::mc::{
    bes3_hitting_cdf, bessel_grid, bessel_local_time, ks_against, ks_distance, sample_bes3_hitting,
    sample_besq, sample_lattice_bm, sample_lattice_snapshots, sample_planar_bm_refined,
    sample_planar_point, sample_r_log, BesselLocalSampler, LatticePath, MCEstimate, McConfig,
    WINDING_GUARD,
};
use crate::oracle::{exact_expectation, Backend, Functional};
use crate::qmeasure::{
    last_visit_check, martingale_m, phi_restricted, phi_restricted_bounds, psi_q_solve,
    q_expectation, q_integral, q_local_time_law, rho, sample_decomposed, KillingFn,
    PenalisedWeight, PsiQOptions, QFunctional, TailFn, TransientKernel,
};
use crate::quadrature::{integrate, integrate_2d, REL_TOL};
use num_traits::{One, Zero};
use statrs::function::{erf::erf, gamma::gamma};
use std::f64::consts::PI;

/// How a check decides pass or fail.
#[derive(Clone, Debug, PartialEq)]
pub enum Policy {
    /// Equality in exact arithmetic.
    Exact,
    /// |lhs − rhs| ≤ tol.
    Absolute(f64),
    /// |lhs − rhs| ≤ tol·|rhs|.
    Relative(f64),
    /// |lhs − rhs| ≤ max(k·stderr, rel·|rhs|, abs).
    Sigma { k: f64, rel: f64, abs: f64 },
    /// lhs ≤ rhs.
    AtMost,
    /// lhs < rhs.
    Below,
}

impl Policy {
    pub fn describe(&self) -> String {
        match self {
            Policy::Exact => "exact".into(),
            Policy::Absolute(t) => format!("abs {t:e}"),
            Policy::Relative(t) => format!("rel {t:e}"),
            Policy::Sigma { k, rel, abs } => {
                let mut parts = vec![format!("{k}*stderr")];
                if *rel > 0.0 {
                    parts.push(format!("{}%*|rhs|", rel * 100.0));
                }
                if *abs > 0.0 {
                    parts.push(format!("{abs:e}"));
                }
                if parts.len() == 1 {
                    parts.pop().unwrap()
                } else {
                    format!("max({})", parts.join(", "))
                }
            }
            Policy::AtMost => "lhs <= rhs".into(),
            Policy::Below => "lhs < rhs".into(),
        }
    }

    fn judge(&self, lhs: f64, se: Option<f64>, rhs: f64) -> bool {
        let d = (lhs - rhs).abs();
        match self {
            Policy::Exact => lhs == rhs,
            Policy::Absolute(t) => d <= *t,
            Policy::Relative(t) => d <= t * rhs.abs(),
            Policy::Sigma { k, rel, abs } => {
                d <= (k * se.unwrap_or(0.0)).max(rel * rhs.abs()).max(*abs)
            }
            Policy::AtMost => lhs <= rhs,
            Policy::Below => lhs < rhs,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub suite: String,
    pub name: String,
    /// The identity being checked, stated briefly.
    pub anchor: String,
    pub lhs: f64,
    pub lhs_stderr: Option<f64>,
    pub rhs: f64,
    pub policy: Policy,
    pub pass: bool,
    /// Excluded from the verdict unless strict.
    pub qualitative: bool,
    /// Analytic truth; a failure points at the estimator, not the identity.
    pub control: bool,
}

/// Overall verdict: every check passes, qualitative ones only when `strict`.
pub fn verdict(checks: &[CheckResult], strict: bool) -> bool {
    checks.iter().all(|c| c.pass || (c.qualitative && !strict))
}

/// Parameters shared by the suites.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteConfig {
    pub seed: u64,
    pub paths: usize,
    pub lattice_n: u64,
    /// Horizon for the single-horizon suites; each suite has its own default.
    pub t: Option<f64>,
    pub alphas: Vec<f64>,
    pub jobs: usize,
    /// Multiple of the standard error allowed in Monte-Carlo checks.
    pub sigmas: f64,
    /// Replaces the relative floor of Monte-Carlo checks.
    pub rel: Option<f64>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 0,
            paths: 100_000,
            lattice_n: 10_000,
            t: None,
            alphas: vec![0.25, 0.5, 0.75],
            jobs: 1,
            sigmas: 3.0,
            rel: None,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.paths < 2 {
            return bad("paths must be at least 2");
        }
        if self.lattice_n == 0 {
            return bad("lattice n must be positive");
        }
        if let Some(t) = self.t {
            if !(t > 0.0 && t.is_finite()) {
                return bad("t must be positive");
            }
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return bad("every α must lie in (0,1)");
        }
        if self.jobs == 0 {
            return bad("jobs must be positive");
        }
        if !(self.sigmas > 0.0) || self.rel.is_some_and(|r| !(r >= 0.0)) {
            return bad("tolerances must be positive");
        }
        Ok(())
    }

    fn mc(&self, paths: usize) -> McConfig {
        McConfig::new(self.seed, paths).with_jobs(self.jobs)
    }
}

pub struct SuiteInfo {
    pub id: &'static str,
    pub description: &'static str,
    pub anchor: &'static str,
    pub qualitative: bool,
}

pub const SUITES: &[SuiteInfo] = &[
    SuiteInfo {
        id: "ch4-exact",
        description: "harmonicity, psi_r martingale, local-time laws, r-independence, oracle mass, M-martingale (exact)",
        anchor: "Q_x = r^{-L} mu_x^(r); Q_x[L^y0 = k] = phi^[y0](x) 1{k=0} + K(y0) 1{k>=1}",
        qualitative: false,
    },
    SuiteInfo {
        id: "ch4-series",
        description: "Green-difference series for phi on Z, Z^2 and the binary tree",
        anchor: "phi(x) = sum_k [P_x0(X_k = x0) - P_x(X_k = x0)]",
        qualitative: false,
    },
    SuiteInfo {
        id: "ch4-decomposition",
        description: "last-visit decomposition, transient h-walks and Feynman-Kac psi_q",
        anchor: "Q_y[F_n 1{g < n}] = E_y[F_n phi^[y0](X_n)]; psi_q = q P psi_q",
        qualitative: false,
    },
    SuiteInfo {
        id: "ch1-g",
        description: "last zero before t weighted by |X_t| against its density",
        anchor: "E[psi(g_t)|X_t|] = int_0^t psi(s) ds / sqrt(2 pi s)",
        qualitative: false,
    },
    SuiteInfo {
        id: "ch1-joint",
        description: "joint law of (L_t, g_t) weighted by |X_t| against double quadrature",
        anchor: "E[h(L_t, g_t)|X_t|] = int h(l,u) l exp(-l^2/2u) / sqrt(2 pi u^3)",
        qualitative: false,
    },
    SuiteInfo {
        id: "ch1-martingales",
        description: "constancy of (1+|X|/2)e^{-L/2}, h(L)|X|+int h and Azema-Yor across t",
        anchor: "E[M_t] = M_0 for the local-time and maximum martingales",
        qualitative: false,
    },
    SuiteInfo {
        id: "ch1-rate",
        description: "penalisation rate sqrt(pi t/2) E[exp(-lambda L_t/2)] -> 2/lambda",
        anchor: "sqrt(pi t/2) W[F_t] -> phi(0) = 2/lambda",
        qualitative: false,
    },
    SuiteInfo {
        id: "ch2-identity",
        description: "(1/pi) E[log+|X_t|] against the last-exit density of the unit circle",
        anchor: "(1/pi) E[log+|X_t|] = int_0^t exp(-1/2s) ds / (2 pi s)",
        qualitative: false,
    },
    SuiteInfo {
        id: "ch2-winding",
        description: "clock of the log-Bessel representation against the Bessel(3) hitting time",
        anchor: "4 H_t / (log t)^2 -> T_1 of Bessel(3)",
        qualitative: true,
    },
    SuiteInfo {
        id: "ch3-bessel",
        description: "Bessel(-alpha) moments, local-time calibration and exponential martingale",
        anchor: "E[R_t^{2a}] = E[L_t] = (2t)^a / Gamma(1-a)",
        qualitative: false,
    },
];

pub fn suite_info(id: &str) -> Option<&'static SuiteInfo> {
    SUITES.iter().find(|s| s.id == id)
}

/// Runs one suite; internal numerical failures become failing checks, while
/// configuration and resource errors abort.
pub fn run_suite(id: &str, cfg: &SuiteConfig) -> Result<Vec<CheckResult>> {
    cfg.validate()?;
    let info = suite_info(id).ok_or_else(|| Error::Config(format!("unknown suite '{id}'")))?;
    let mut s = Suite {
        id: info.id,
        cfg,
        qualitative: info.qualitative,
        out: Vec::new(),
    };
    match id {
        "ch4-exact" => ch4_exact(&mut s)?,
        "ch4-series" => ch4_series(&mut s)?,
        "ch4-decomposition" => ch4_decomposition(&mut s)?,
        "ch1-g" => ch1_g(&mut s)?,
        "ch1-joint" => ch1_joint(&mut s)?,
        "ch1-martingales" => ch1_martingales(&mut s)?,
        "ch1-rate" => ch1_rate(&mut s)?,
        "ch2-identity" => ch2_identity(&mut s)?,
        "ch2-winding" => ch2_winding(&mut s)?,
        "ch3-bessel" => ch3_bessel(&mut s)?,
        _ => unreachable!("suite table and dispatch agree"),
    }
    Ok(s.out)
}

struct Suite<'a> {
    id: &'static str,
    cfg: &'a SuiteConfig,
    qualitative: bool,
    out: Vec<CheckResult>,
}

impl Suite<'_> {
    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        name: impl Into<String>,
        anchor: &str,
        lhs: f64,
        se: Option<f64>,
        rhs: f64,
        policy: Policy,
        control: bool,
    ) {
        let pass = policy.judge(lhs, se, rhs);
        self.out.push(CheckResult {
            suite: self.id.into(),
            name: name.into(),
            anchor: anchor.into(),
            lhs,
            lhs_stderr: se,
            rhs,
            policy,
            pass,
            qualitative: self.qualitative,
            control,
        });
    }

    fn exact(
        &mut self,
        name: impl Into<String>,
        anchor: &str,
        lhs: &Exact,
        rhs: &Exact,
        control: bool,
    ) {
        let n = self.out.len();
        self.push(
            name,
            anchor,
            lhs.to_f64(),
            None,
            rhs.to_f64(),
            Policy::Exact,
            control,
        );
        self.out[n].pass = lhs == rhs;
    }

    /// All residuals vanish exactly; lhs reports the largest in absolute value.
    fn all_zero<'e>(
        &mut self,
        name: impl Into<String>,
        anchor: &str,
        residuals: impl IntoIterator<Item = &'e Exact>,
        control: bool,
    ) {
        let (mut worst, mut ok) = (0.0f64, true);
        for r in residuals {
            ok &= r.is_zero();
            worst = worst.max(r.to_f64().abs());
        }
        let n = self.out.len();
        self.push(name, anchor, worst, None, 0.0, Policy::Exact, control);
        self.out[n].pass = ok;
    }

    fn sigma(&self, rel: f64) -> Policy {
        Policy::Sigma {
            k: self.cfg.sigmas,
            rel: self.cfg.rel.unwrap_or(rel),
            abs: 0.0,
        }
    }

    fn mc(
        &mut self,
        name: impl Into<String>,
        anchor: &str,
        est: &MCEstimate,
        rhs: f64,
        rel: f64,
        control: bool,
    ) {
        let p = self.sigma(rel);
        self.push(name, anchor, est.mean, Some(est.stderr), rhs, p, control);
    }

    /// A check that could not be evaluated.
    fn failed(&mut self, name: impl Into<String>, anchor: &str, err: &Error) {
        let name = format!("{} [aborted: {err}]", name.into());
        self.push(name, anchor, f64::NAN, None, f64::NAN, Policy::Exact, false);
    }

    /// Quadrature that must meet the relative target and, when a closed form is
    /// known, agree with it; the agreement is recorded as a control.
    fn quadrature(
        &mut self,
        name: &str,
        anchor: &str,
        value: Result<f64>,
        closed: Option<f64>,
    ) -> Option<f64> {
        match value {
            Ok(v) => {
                if let Some(c) = closed {
                    self.push(
                        format!("control: quadrature vs closed form, {name}"),
                        anchor,
                        v,
                        None,
                        c,
                        Policy::Relative(REL_TOL),
                        true,
                    );
                }
                Some(v)
            }
            Err(Error::Numerical(m)) => {
                self.failed(name, anchor, &Error::Numerical(m));
                None
            }
            Err(e) => {
                self.failed(name, anchor, &e);
                None
            }
        }
    }
}

fn column(xs: &[f64]) -> MCEstimate {
    MCEstimate::from_samples(xs)
}

/// Estimate of E[a]/E[b] with a delta-method standard error.
fn ratio(a: &[f64], b: &[f64]) -> MCEstimate {
    let (ea, eb) = (column(a), column(b));
    let r = ea.mean / eb.mean;
    let resid: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - r * y).collect();
    let er = column(&resid);
    MCEstimate {
        count: ea.count,
        mean: r,
        stderr: er.stderr / eb.mean.abs(),
    }
}

fn srw_states(lo: i64, hi: i64) -> Vec<State> {
    (lo..=hi).map(State::Z).collect()
}

fn n_states(lo: u64, hi: u64) -> Vec<State> {
    (lo..=hi).map(State::N).collect()
}

// ---------------------------------------------------------------- chapter 4

fn ch4_exact(s: &mut Suite) -> Result<()> {
    const HARM: &str = "E_x[phi(X_1)] = phi(x) for x != x0";
    const MART: &str = "E[psi_r(X_{n+1}) r^{L_n} | F_n] = psi_r(X_n) r^{L_{n-1}}";
    const LAW: &str = "Q_x[L^y0 = 0] = phi^[y0](x), Q_x[L^y0 = k] = K(y0) for k >= 1";
    const RIND: &str = "Q_x[F_n s^L] is the same through every r in (0,1)";
    const ORACLE: &str = "E_3[1{tau_0 > N} psi_r(X_N)] = 3 + (r/(1-r)) P_3(tau_0 > N)";
    const MM: &str = "M_n = phi^[a](X_n) h(L_{n-1}) + K(a) sum_{k > L_{n-1}} h(k) is a martingale";

    let mut functions: Vec<(Catalog, HarmonicFn)> = Vec::new();
    for cat in Catalog::all() {
        functions.push((cat, phi_closed(cat, Variant::default_for(cat))?));
    }
    functions.push((
        Catalog::BinaryTree,
        phi_closed(Catalog::BinaryTree, Variant::TreeDepth)?,
    ));
    functions.push((Catalog::SrwZ, phi_closed(Catalog::SrwZ, Variant::Plus)?));
    for (cat, phi) in &functions {
        let window = bfs_ball(cat, &cat.origin(), 128);
        let res = check_harmonic(cat, phi, &window);
        let name = format!(
            "{} {}: harmonic residuals on {} states",
            cat.id(),
            phi.name(),
            res.len()
        );
        s.all_zero(name, HARM, res.iter().map(|(_, e)| e), false);

        let mut diffs = Vec::new();
        for r in [q(3, 10), q(1, 2), q(7, 10)] {
            let w = PenalisedWeight::new(phi.clone(), r.clone())?;
            for x in &window {
                for l in 0..2u32 {
                    let ln = l + u32::from(*x == w.x0());
                    let mut next = Exact::zero();
                    for (z, p) in cat.neighbors(x) {
                        next += &w.psi_r(&z).scale(&(p * qpow(&r, ln)));
                    }
                    diffs.push(next - w.psi_r(x).scale(&qpow(&r, l)));
                }
            }
        }
        let name = format!(
            "{} {}: psi_r one-step identity, r in {{3/10,1/2,7/10}}, both L parities",
            cat.id(),
            phi.name()
        );
        s.all_zero(name, MART, diffs.iter(), false);
    }

    let srw = PenalisedWeight::catalog(Catalog::SrwZ, q(1, 2))?;
    let bang = PenalisedWeight::catalog(Catalog::BangBang, q(1, 2))?;
    s.exact(
        "control: psi_1/2(0) on srw_z",
        MART,
        &srw.psi_r(&State::Z(0)),
        &Exact::from(1),
        true,
    );
    s.exact(
        "control: psi_1/2(3) on srw_z",
        MART,
        &srw.psi_r(&State::Z(3)),
        &Exact::from(4),
        true,
    );
    s.exact(
        "control: psi_1/2(0) on bang_bang",
        MART,
        &bang.psi_r(&State::N(0)),
        &Exact::from(1),
        true,
    );
    let mut masses = Vec::new();
    for n in 0..=12 {
        let v =
            crate::qmeasure::mu_expectation(&srw, &State::Z(0), &QFunctional::one(), &Q::one(), n)?;
        masses.push(v - Exact::from(1));
    }
    let bang3 = PenalisedWeight::catalog(Catalog::BangBang, q(1, 3))?;
    for n in 0..=10 {
        let v = crate::qmeasure::mu_expectation(
            &bang3,
            &State::N(0),
            &QFunctional::one(),
            &Q::one(),
            n,
        )?;
        masses.push(v - Exact::from(q(1, 2)));
    }
    s.all_zero(
        "control: total mass of mu^(r) equals psi_r at every horizon",
        MART,
        masses.iter(),
        true,
    );

    let (a, k) = q_local_time_law(&srw, &State::Z(3), &State::Z(0))?;
    s.exact("srw_z x=3 y0=0: atom at 0", LAW, &a, &Exact::from(3), false);
    s.exact("srw_z x=3 y0=0: plateau", LAW, &k, &Exact::from(1), false);
    let (a, k) = q_local_time_law(&bang, &State::N(3), &State::N(2))?;
    s.exact(
        "bang_bang x=3 a=2: atom at 0",
        LAW,
        &a,
        &Exact::from(4),
        false,
    );
    s.exact(
        "bang_bang x=3 a=2: plateau",
        LAW,
        &k,
        &Exact::from(q(4, 3)),
        false,
    );
    let (a, k) = q_local_time_law(&bang, &State::N(0), &State::N(0))?;
    s.exact(
        "bang_bang x=0 a=0: atom at 0",
        LAW,
        &a,
        &Exact::zero(),
        false,
    );
    s.exact(
        "bang_bang x=0 a=0: plateau",
        LAW,
        &k,
        &Exact::from(1),
        false,
    );

    for cat in [Catalog::SrwZ, Catalog::BangBang] {
        let lo = PenalisedWeight::catalog(cat, q(3, 10))?;
        let hi = PenalisedWeight::catalog(cat, q(7, 10))?;
        let mut worst = 0.0f64;
        let mut equal = true;
        let battery = prefix_battery(cat);
        for prefix in &battery {
            let x = prefix[0];
            let n = prefix.len() - 1;
            let f = QFunctional::prefix_indicator(prefix.clone());
            for sv in [q(1, 4), q(1, 2)] {
                let a = q_expectation(&lo, &x, &f, &sv, n + 8)?.value;
                let b = q_expectation(&hi, &x, &f, &sv, n + 8)?.value;
                worst = worst.max((&a - &b).to_f64().abs());
                equal &= a == b;
            }
        }
        let name = format!(
            "{}: r=3/10 vs r=7/10 over {} prefix functionals, s in {{1/4,1/2}}",
            cat.id(),
            battery.len()
        );
        s.push(name, RIND, worst, None, 0.0, Policy::Absolute(1e-10), false);
        if !equal {
            s.out.last_mut().unwrap().name.push_str(" (not bit-equal)");
        }
    }

    let r = q(1, 2);
    let psi = |st: &State| qi(1) + qi(crate::harmonic::z_of(st).abs());
    let mass = |st: &State, c: &[u32]| {
        if c[0] == 0 && *st != State::Z(0) {
            psi(st)
        } else {
            Q::zero()
        }
    };
    let never = |st: &State, c: &[u32]| {
        if c[0] == 0 && *st != State::Z(0) {
            Q::one()
        } else {
            Q::zero()
        }
    };
    let (mut gaps, mut backends) = (Vec::new(), Vec::new());
    let mut last = Q::zero();
    for n in 1..=20 {
        let tracked = [State::Z(0)];
        let m = exact_expectation(
            &Catalog::SrwZ,
            State::Z(3),
            n,
            &tracked,
            &Functional::Terminal(&mass),
            Backend::Propagate,
        )?;
        let pe = exact_expectation(
            &Catalog::SrwZ,
            State::Z(3),
            n,
            &tracked,
            &Functional::Terminal(&never),
            Backend::Enumerate,
        )?;
        let pp = exact_expectation(
            &Catalog::SrwZ,
            State::Z(3),
            n,
            &tracked,
            &Functional::Terminal(&never),
            Backend::Propagate,
        )?;
        gaps.push(Exact::from(&m - (qi(3) + rho(&r) * &pp)));
        backends.push(Exact::from(pe - &pp));
        last = m;
    }
    let worst = gaps.iter().map(|g| g.to_f64().abs()).fold(0.0, f64::max);
    s.push(
        format!(
            "srw_z x=3 r=1/2: mass identity at every N <= 20 (N=20 mass {:.9})",
            to_f64(&last)
        ),
        ORACLE,
        worst,
        None,
        0.0,
        Policy::Absolute(1e-12),
        false,
    );
    s.all_zero(
        "srw_z x=3: P_3(tau_0 > N) by enumeration = by propagation, N <= 20",
        ORACLE,
        backends.iter(),
        false,
    );

    for (cat, w, sites, window) in [
        (
            Catalog::SrwZ,
            &srw,
            vec![State::Z(0), State::Z(3)],
            srw_states(-50, 49),
        ),
        (
            Catalog::BangBang,
            &bang,
            vec![State::N(1), State::N(2)],
            n_states(0, 99),
        ),
    ] {
        for (label, h) in [
            ("2^-k", TailFn::Geometric { ratio: q(1, 2) }),
            ("3^-k", TailFn::Geometric { ratio: q(1, 3) }),
        ] {
            let mut diffs = Vec::new();
            for a in &sites {
                for x in &window {
                    for l in 0..3u32 {
                        let ln = l + u32::from(x == a);
                        let mut next = Exact::zero();
                        for (z, p) in cat.neighbors(x) {
                            next += &martingale_m(w, a, &h, &z, ln)?.scale(&p);
                        }
                        diffs.push(next - martingale_m(w, a, &h, x, l)?);
                    }
                }
            }
            let name = format!(
                "{} h(k)={label}: one-step identity of M on {} states",
                cat.id(),
                window.len()
            );
            s.all_zero(name, MM, diffs.iter(), false);
        }
    }
    let m = martingale_m(
        &srw,
        &State::Z(0),
        &TailFn::Geometric { ratio: q(1, 2) },
        &State::Z(2),
        1,
    )?;
    s.exact(
        "srw_z a=0 h=2^-k at X=2, L=1",
        MM,
        &m,
        &Exact::from(q(3, 2)),
        false,
    );
    let m = martingale_m(
        &bang,
        &State::N(1),
        &TailFn::Geometric { ratio: q(1, 3) },
        &State::N(0),
        0,
    )?;
    s.exact(
        "bang_bang a=1 h=3^-k at X=0, L=0",
        MM,
        &m,
        &Exact::from(q(1, 3)),
        false,
    );
    Ok(())
}

/// Twenty fixed prefixes with 1 to 6 steps from a few starting points.
fn prefix_battery(cat: Catalog) -> Vec<Vec<State>> {
    (0..20u64)
        .map(|i| {
            let start = match cat {
                Catalog::BangBang => State::N(i % 3),
                _ => State::Z((i % 4) as i64 - 1),
            };
            let mut bits = i.wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 17;
            let mut p = vec![start];
            for _ in 0..1 + i % 6 {
                let nb = cat.neighbors(p.last().unwrap());
                p.push(nb[(bits % nb.len() as u64) as usize].0);
                bits >>= 1;
            }
            p
        })
        .collect()
}

fn ch4_series(s: &mut Suite) -> Result<()> {
    const GREEN: &str = "phi(x) = sum_k [P_x0(X_k = x0) - P_x(X_k = x0)]";
    for x in 1..=3i64 {
        let g = phi_green_series(&Catalog::SrwZ, &State::Z(0), &State::Z(x), 100_000)?;
        s.push(
            format!("srw_z x={x}: S_N at N=1e5 vs |x|"),
            GREEN,
            g.sum,
            None,
            x as f64,
            Policy::Absolute(0.05),
            false,
        );
        s.push(
            format!("srw_z x={x}: error ratio per quadrupling of N"),
            GREEN,
            g.quadrupling_ratio,
            None,
            0.5,
            Policy::Absolute(0.25),
            false,
        );
    }
    let g = phi_green_series(
        &Catalog::SrwZ2,
        &State::Z2(0, 0),
        &State::Z2(1, 0),
        1_000_000,
    )?;
    s.push(
        "srw_z2 x=(1,0): S_N at N=1e6 vs dyadic extrapolation",
        GREEN,
        g.sum,
        None,
        g.extrapolated,
        Policy::Absolute(0.05),
        false,
    );
    s.push(
        "srw_z2 x=(1,0): extrapolated series vs a(1,0) = 1",
        GREEN,
        g.extrapolated,
        None,
        1.0,
        Policy::Absolute(0.05),
        false,
    );
    let root = Node::root();
    let g = phi_green_series(
        &Catalog::BinaryTree,
        &State::Tree(root),
        &State::Tree(root.child(0)),
        64,
    )?;
    let depth = phi_closed(Catalog::BinaryTree, Variant::TreeDepth)?;
    s.push(
        "control: binary_tree x=(0): even partial sum vs depth function",
        GREEN,
        g.sum,
        None,
        depth.eval_f64(&State::Tree(root.child(0))),
        Policy::Absolute(1e-12),
        true,
    );
    let g = phi_green_series(&Catalog::SrwZ, &State::Z(0), &State::Z(0), 16)?;
    s.push(
        "control: srw_z x=x0: series vanishes",
        GREEN,
        g.sum,
        None,
        0.0,
        Policy::Exact,
        true,
    );
    Ok(())
}

fn ch4_decomposition(s: &mut Suite) -> Result<()> {
    const LAST: &str = "Q_y[F_n 1{g_y0 < n}] = E_y[F_n phi^[y0](X_n)]";
    const HWALK: &str = "pbar(x,z) = p(x,z) phi^[y0](z) / phi^[y0](x)";
    const PSIQ: &str = "psi_q(x) = q(x) E_x[psi_q(X_1)], psi_q ~ phi";
    const RESTR: &str = "phi^[y0] = c(1-p)/(1-q) + phi - phi(y0)";
    let srw = PenalisedWeight::catalog(Catalog::SrwZ, q(1, 2))?;
    let bang = PenalisedWeight::catalog(Catalog::BangBang, q(1, 2))?;
    let per = (s.cfg.paths / 20).max(500);

    let f = QFunctional::new(6, |p| {
        if p.state(2) == State::Z(0) {
            Q::one()
        } else {
            Q::zero()
        }
    });
    let (est, exact) = last_visit_check(&srw, &State::Z(0), &State::Z(1), &f, per, s.cfg.seed)?;
    s.mc(
        "srw_z y=0 y0=1, F=1{X_2=0}, n=6",
        LAST,
        &est,
        exact.to_f64(),
        0.0,
        false,
    );
    let f = QFunctional::new(5, |p| {
        if p.state(1) == State::N(1) && p.state(3) == State::N(0) {
            Q::one()
        } else {
            Q::zero()
        }
    });
    let (est, exact) =
        last_visit_check(&bang, &State::N(0), &State::N(2), &f, per, s.cfg.seed ^ 1)?;
    s.mc(
        "bang_bang y=0 y0=2, F=1{X_1=1, X_3=0}, n=5",
        LAST,
        &est,
        exact.to_f64(),
        0.0,
        false,
    );

    let tk = TransientKernel::new(&srw, &State::Z(2))?;
    let mut into = Vec::new();
    let mut sums = Vec::new();
    for x in 3..=102 {
        let row = tk.transitions_exact(&State::Z(x)).expect("rational row");
        sums.push(Exact::from(
            row.iter().fold(Q::zero(), |a, (_, p)| a + p) - Q::one(),
        ));
        into.extend(
            row.iter()
                .filter(|(z, _)| *z == State::Z(2))
                .map(|(_, p)| Exact::from(p.clone())),
        );
    }
    s.all_zero(
        "srw_z a=2: h-walk rows sum to 1 on 100 states",
        HWALK,
        sums.iter(),
        false,
    );
    s.all_zero(
        "srw_z a=2: h-walk never steps to a",
        HWALK,
        into.iter(),
        false,
    );
    let p = tk.transitions_exact(&State::Z(3)).unwrap();
    s.exact(
        "srw_z a=2: pbar(a+1, a+2)",
        HWALK,
        &Exact::from(p[1].1.clone()),
        &Exact::from(1),
        false,
    );
    let tb = TransientKernel::new(&bang, &State::N(1))?;
    let p2 = tb.transitions_exact(&State::N(2)).unwrap();
    let p3 = tb.transitions_exact(&State::N(3)).unwrap();
    s.exact(
        "bang_bang a=1: pbar(a+1, a+2)",
        HWALK,
        &Exact::from(p2[1].1.clone()),
        &Exact::from(1),
        false,
    );
    s.exact(
        "bang_bang a=1: pbar(a+2, a+3)",
        HWALK,
        &Exact::from(p3[1].1.clone()),
        &Exact::from(q(7, 9)),
        false,
    );

    let mut revisits = 0usize;
    let walks = s.cfg.mc(200).map("ch4-decomposition/transience", |i, rng| {
        sample_decomposed(
            &srw,
            &State::Z(0),
            &State::Z(0),
            1 + (i % 3) as u32,
            50,
            rng,
            1 << 20,
        )
    });
    for w in walks {
        let d = w?;
        let t = d.tau_k.unwrap_or(0);
        revisits += d.path.states()[t + 1..]
            .iter()
            .filter(|z| **z == State::Z(0))
            .count();
    }
    s.push(
        "control: decomposed paths never revisit y0 after tau_k",
        HWALK,
        revisits as f64,
        None,
        0.0,
        Policy::Exact,
        true,
    );
    let rejected = sample_decomposed(
        &srw,
        &State::Z(0),
        &State::Z(0),
        0,
        5,
        &mut crate::mc::stream(0, "k0", 0),
        10,
    )
    .is_err();
    s.push(
        "control: k=0 from y=y0 is rejected",
        HWALK,
        f64::from(u8::from(rejected)),
        None,
        1.0,
        Policy::Exact,
        true,
    );

    let opts = PsiQOptions::default();
    let k = KillingFn::new([(State::Z(0), q(1, 2))])?;
    let sol = psi_q_solve(&srw, &k, &opts)?;
    s.push(
        "srw_z q(0)=1/2: psi_q(2)",
        PSIQ,
        sol.value(&State::Z(2)).unwrap(),
        None,
        3.0,
        Policy::Absolute(1e-8),
        false,
    );
    let k0 = KillingFn::new([(State::Z(0), Q::zero())])?;
    let sol0 = psi_q_solve(&srw, &k0, &opts)?;
    // Oracle side: E_3[1{tau_0 > N} psi_r(X_N)] = 3 + rho P_3(tau_0 > N) decreases to Q_3[never hit 0].
    let never = |st: &State, c: &[u32]| {
        if c[0] == 0 && *st != State::Z(0) {
            Q::one()
        } else {
            Q::zero()
        }
    };
    let p = exact_expectation(
        &Catalog::SrwZ,
        State::Z(3),
        60,
        &[State::Z(0)],
        &Functional::Terminal(&never),
        Backend::Propagate,
    )?;
    let oracle = 3.0 + to_f64(&p) * to_f64(&rho(srw.r()));
    s.push(
        "srw_z q(0)=0: psi_q(3) vs 3",
        PSIQ,
        sol0.value(&State::Z(3)).unwrap(),
        None,
        3.0,
        Policy::Absolute(1e-8),
        false,
    );
    s.push(
        "srw_z q(0)=0: oracle approximant at N=60 is above psi_q(3)",
        PSIQ,
        sol0.value(&State::Z(3)).unwrap(),
        None,
        oracle,
        Policy::AtMost,
        false,
    );
    for (w, label, sites) in [
        (
            &srw,
            "srw_z",
            vec![
                (State::Z(0), q(1, 2)),
                (State::Z(2), q(1, 3)),
                (State::Z(-1), q(3, 4)),
            ],
        ),
        (
            &bang,
            "bang_bang",
            vec![(State::N(0), q(1, 2)), (State::N(2), q(2, 3))],
        ),
    ] {
        let k = KillingFn::new(sites)?;
        match psi_q_solve(w, &k, &opts) {
            Ok(sol) => {
                s.push(
                    format!("{label} multi-site q: iterative vs linear route"),
                    PSIQ,
                    sol.max_disagreement,
                    None,
                    opts.tolerance,
                    Policy::AtMost,
                    false,
                );
                s.push(
                    format!("{label} multi-site q: equation residual"),
                    PSIQ,
                    sol.residual,
                    None,
                    1e-10,
                    Policy::AtMost,
                    false,
                );
            }
            Err(e @ Error::Numerical(_)) => s.failed(format!("{label} multi-site q"), PSIQ, &e),
            Err(e) => return Err(e),
        }
    }
    let empty = KillingFn::new([])?;
    let rejected = psi_q_solve(&srw, &empty, &opts).is_err();
    s.push(
        "control: q = 1 everywhere is rejected",
        PSIQ,
        f64::from(u8::from(rejected)),
        None,
        1.0,
        Policy::Exact,
        true,
    );

    for (w, label, y0, y) in [
        (&srw, "srw_z", State::Z(2), State::Z(-3)),
        (&srw, "srw_z", State::Z(2), State::Z(1)),
        (&bang, "bang_bang", State::N(3), State::N(5)),
        (&bang, "bang_bang", State::N(3), State::N(1)),
    ] {
        let closed = phi_restricted(w, &y0)?.eval_f64(&y);
        match phi_restricted_bounds(w, &y0, &y, 801, 0.05) {
            Ok((lo, hi)) => s.push(
                format!("{label} y0={y0} y={y}: closed form inside the certified bracket"),
                RESTR,
                closed,
                None,
                0.5 * (lo + hi),
                Policy::Absolute(0.5 * (hi - lo) + 1e-9),
                false,
            ),
            Err(e @ Error::Numerical(_)) => s.failed(format!("{label} y0={y0} y={y}"), RESTR, &e),
            Err(e) => return Err(e),
        }
    }

    for r in [q(1, 3), q(1, 2)] {
        let w = PenalisedWeight::catalog(Catalog::SrwZ, r.clone())?;
        let v = q_integral(
            &w,
            &State::Z(0),
            &QFunctional::one(),
            &State::Z(0),
            &TailFn::Geometric { ratio: r.clone() },
        )?;
        s.exact(
            format!("srw_z x=0: sum_k Q_0(L=k) r^k = psi_r(0), r={r}"),
            LAST,
            &v,
            &w.psi_r(&State::Z(0)),
            false,
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- chapter 1

fn lattice_paths(s: &Suite, label: &str, n: u64, ts: &[f64]) -> Result<Vec<Vec<LatticePath>>> {
    s.cfg
        .mc(s.cfg.paths)
        .map(label, |_, rng| sample_lattice_snapshots(n, ts, rng))
        .into_iter()
        .collect()
}

fn ch1_g(s: &mut Suite) -> Result<()> {
    const A: &str = "E[psi(g_t)|X_t|] = int_0^t psi(s) ds / sqrt(2 pi s)";
    let t = s.cfg.t.unwrap_or(1.0);
    let n = s.cfg.lattice_n;
    let zero = sample_lattice_bm(n, 0.0, &mut crate::mc::stream(s.cfg.seed, "ch1-g/zero", 0))?;
    let all_zero = [zero.x, zero.local_time, zero.last_zero, zero.max]
        .iter()
        .all(|v| *v == 0.0);
    s.push(
        "control: t=0 gives zero estimators",
        A,
        f64::from(u8::from(all_zero)),
        None,
        1.0,
        Policy::Exact,
        true,
    );

    let paths = lattice_paths(s, "ch1-g", n, &[t])?;
    let tanaka: Vec<f64> = paths
        .iter()
        .map(|p| p[0].x.abs() - p[0].local_time)
        .collect();
    s.mc(
        "control: lattice Tanaka E[|X_t| - L_t] = 0",
        A,
        &column(&tanaka),
        0.0,
        0.0,
        true,
    );

    type Psi = (&'static str, fn(f64) -> f64, fn(f64) -> f64);
    let cases: [Psi; 3] = [
        ("psi=1", |_| 1.0, |t| (2.0 * t / PI).sqrt()),
        (
            "psi(s)=s",
            |s| s,
            |t| (2.0 / 3.0) * t.powf(1.5) / (2.0 * PI).sqrt(),
        ),
        (
            "psi(s)=exp(-s)",
            |s| (-s).exp(),
            |t| erf(t.sqrt()) / 2f64.sqrt(),
        ),
    ];
    for (label, psi, closed) in cases {
        // s = w² removes the 1/√s singularity.
        let quad = integrate(
            |w| 2.0 * psi(w * w) / (2.0 * PI).sqrt(),
            0.0,
            t.sqrt(),
            REL_TOL,
        )
        .map(|q| q.value);
        let Some(rhs) = s.quadrature(label, A, quad, Some(closed(t))) else {
            continue;
        };
        let v: Vec<f64> = paths
            .iter()
            .map(|p| psi(p[0].last_zero) * p[0].x.abs())
            .collect();
        s.mc(format!("{label}, t={t}"), A, &column(&v), rhs, 0.02, false);
    }
    Ok(())
}

fn ch1_joint(s: &mut Suite) -> Result<()> {
    const A: &str =
        "E[h(L_t, g_t)|X_t|] = int_0^t int_0^inf h(l,u) l exp(-l^2/2u) / sqrt(2 pi u^3) dl du";
    let t = s.cfg.t.unwrap_or(1.0);
    let paths = lattice_paths(s, "ch1-joint", s.cfg.lattice_n, &[t])?;
    // u = w², l = w v: the density becomes 2 v exp(-v²/2)/√(2π) on w ∈ (0, √t).
    let joint = |h: &dyn Fn(f64, f64) -> f64| {
        integrate_2d(
            |w, v| 2.0 * h(w * v, w * w) * v * (-0.5 * v * v).exp() / (2.0 * PI).sqrt(),
            (0.0, t.sqrt()),
            |_| 0.0,
            |_| f64::INFINITY,
            REL_TOL,
        )
        .map(|q| q.value)
    };
    let one = joint(&|_, _| 1.0);
    if let Some(rhs) = s.quadrature("h=1", A, one, Some((2.0 * t / PI).sqrt())) {
        let v: Vec<f64> = paths.iter().map(|p| p[0].x.abs()).collect();
        s.mc(
            "control: h=1 reduces to E|X_t|",
            A,
            &column(&v),
            rhs,
            0.02,
            true,
        );
    }
    let beyond = paths.iter().filter(|p| p[0].last_zero > t).count();
    s.push(
        "control: h=1{u>t} vanishes",
        A,
        beyond as f64,
        None,
        0.0,
        Policy::Exact,
        true,
    );
    let e = joint(&|l, _| (-l).exp());
    if let Some(rhs) = s.quadrature("h=exp(-l)", A, e, None) {
        let v: Vec<f64> = paths
            .iter()
            .map(|p| (-p[0].local_time).exp() * p[0].x.abs())
            .collect();
        s.mc(
            format!("h(l,u)=exp(-l), t={t}"),
            A,
            &column(&v),
            rhs,
            0.03,
            false,
        );
    }
    Ok(())
}

fn ch1_martingales(s: &mut Suite) -> Result<()> {
    const A1: &str = "(1 + lambda|X_t|/2) exp(-lambda L_t/2) is a martingale";
    const A2: &str = "h(L_t)|X_t| + int_{L_t}^inf h is a martingale";
    const A3: &str = "psi(S_t)(S_t - X_t) + int_{S_t}^inf psi is a martingale";
    const A4: &str = "(2/lambda) exp(-lambda L_t/2) is a supermartingale";
    let lambda = 1.0;
    let ts = [0.25, 1.0, 4.0];
    let paths = lattice_paths(s, "ch1-martingales", s.cfg.lattice_n, &ts)?;
    let exact_sigma = Policy::Sigma {
        k: s.cfg.sigmas,
        rel: 0.0,
        abs: 0.0,
    };
    let mut prev: Option<(f64, MCEstimate)> = None;
    for (i, t) in ts.iter().enumerate() {
        let col = |f: &dyn Fn(&LatticePath) -> f64| {
            column(&paths.iter().map(|p| f(&p[i])).collect::<Vec<_>>())
        };
        let m1 = col(&|p| (1.0 + 0.5 * lambda * p.x.abs()) * (-0.5 * lambda * p.local_time).exp());
        let m2 = col(&|p| (-p.local_time).exp() * (p.x.abs() + 1.0));
        // ψ = 1{s < 1}: equal to 1{s ≤ 1} almost everywhere, and it makes the
        // lattice process an exact martingale.
        let m3 = col(&|p| {
            if p.max < 1.0 {
                p.max - p.x + 1.0 - p.max
            } else {
                0.0
            }
        });
        let d = col(&|p| 2.0 / lambda * (-0.5 * lambda * p.local_time).exp());
        s.push(
            format!("lambda=1, t={t}"),
            A1,
            m1.mean,
            Some(m1.stderr),
            1.0,
            exact_sigma.clone(),
            false,
        );
        s.push(
            format!("h(l)=exp(-l), t={t}"),
            A2,
            m2.mean,
            Some(m2.stderr),
            1.0,
            exact_sigma.clone(),
            false,
        );
        s.push(
            format!("psi(s)=1{{s<=1}}, t={t}"),
            A3,
            m3.mean,
            Some(m3.stderr),
            1.0,
            exact_sigma.clone(),
            false,
        );
        let (pt, pd) = prev.unwrap_or((
            0.0,
            MCEstimate {
                count: 0,
                mean: 2.0 / lambda,
                stderr: 0.0,
            },
        ));
        s.push(
            format!("E[Delta] at t={t} below t={pt}"),
            A4,
            d.mean,
            Some(d.stderr),
            pd.mean,
            Policy::Below,
            false,
        );
        prev = Some((*t, d));
    }
    let tanaka: Vec<f64> = paths
        .iter()
        .map(|p| p[1].x.abs() - p[1].local_time)
        .collect();
    s.mc(
        "control: lattice Tanaka E[|X_1| - L_1] = 0",
        A1,
        &column(&tanaka),
        0.0,
        0.0,
        true,
    );
    Ok(())
}

/// Lattice resolution of the rate suite; long horizons cannot afford the full n.
pub const RATE_LATTICE_N: u64 = 100;

fn ch1_rate(s: &mut Suite) -> Result<()> {
    const A: &str = "sqrt(pi t/2) E[exp(-lambda L_t/2)] -> 2/lambda";
    const R: &str = "E[G_s F_t]/E[F_t] -> E[G_s M_s]/M_0";
    let n = s.cfg.lattice_n.min(RATE_LATTICE_N);
    let ts = [1.0, 25.0, 100.0];
    let paths = lattice_paths(s, "ch1-rate", n, &ts)?;
    let tanaka: Vec<f64> = paths
        .iter()
        .map(|p| p[2].x.abs() - p[2].local_time)
        .collect();
    s.mc(
        "control: lattice Tanaka E[|X_100| - L_100] = 0",
        A,
        &column(&tanaka),
        0.0,
        0.0,
        true,
    );
    for lambda in [1.0, 2.0] {
        let limit = 2.0 / lambda;
        let mut errs = Vec::new();
        for (i, t) in ts.iter().enumerate().skip(1) {
            let v: Vec<f64> = paths
                .iter()
                .map(|p| (PI * t / 2.0).sqrt() * (-0.5 * lambda * p[i].local_time).exp())
                .collect();
            let e = column(&v);
            errs.push((e.mean - limit).abs());
            if *t == 100.0 {
                s.push(
                    format!("lambda={lambda}, t=100 (lattice n={n})"),
                    A,
                    e.mean,
                    Some(e.stderr),
                    limit,
                    Policy::Relative(0.10),
                    false,
                );
            } else {
                s.push(
                    format!("lambda={lambda}, t={t} (lattice n={n}, reported)"),
                    A,
                    e.mean,
                    Some(e.stderr),
                    limit,
                    Policy::Relative(1.0),
                    false,
                );
            }
        }
        s.push(
            format!("lambda={lambda}: |error| at t=100 below |error| at t=25"),
            A,
            errs[1],
            None,
            errs[0],
            Policy::Below,
            false,
        );
    }
    let lambda = 1.0;
    let num: Vec<f64> = paths
        .iter()
        .map(|p| {
            if p[0].x > 0.0 {
                (-0.5 * lambda * p[2].local_time).exp()
            } else {
                0.0
            }
        })
        .collect();
    let den: Vec<f64> = paths
        .iter()
        .map(|p| (-0.5 * lambda * p[2].local_time).exp())
        .collect();
    let lhs = ratio(&num, &den);
    let m: Vec<f64> = paths
        .iter()
        .map(|p| {
            if p[0].x > 0.0 {
                (1.0 + 0.5 * lambda * p[0].x.abs()) * (-0.5 * lambda * p[0].local_time).exp()
            } else {
                0.0
            }
        })
        .collect();
    let rhs = column(&m);
    let se = (lhs.stderr.powi(2) + rhs.stderr.powi(2)).sqrt();
    s.push(
        format!(
            "G_s=1{{X_1>0}}, t=100: ratio vs martingale side {:.4}",
            rhs.mean
        ),
        R,
        lhs.mean,
        Some(se),
        rhs.mean,
        Policy::Sigma {
            k: s.cfg.sigmas,
            rel: 0.0,
            abs: 0.0,
        },
        false,
    );
    Ok(())
}

// ---------------------------------------------------------------- chapter 2

/// E₁(x) by its power series, accurate for 0 < x ≤ 2.
fn exp_integral_e1(x: f64) -> f64 {
    const EULER: f64 = 0.577_215_664_901_532_9;
    let (mut term, mut sum) = (1.0, 0.0);
    for k in 1..200 {
        term *= -x / k as f64;
        let add = term / k as f64;
        sum += add;
        if add.abs() < 1e-18 {
            break;
        }
    }
    -EULER - x.ln() - sum
}

fn ch2_identity(s: &mut Suite) -> Result<()> {
    const A: &str = "(1/pi) E[log+|X_t|] = int_0^t exp(-1/2s) ds / (2 pi s)";
    let t = s.cfg.t.unwrap_or(1.0);
    let quad = integrate(
        |u| {
            if u > 0.0 {
                (-0.5 / u).exp() / (2.0 * PI * u)
            } else {
                0.0
            }
        },
        0.0,
        t,
        REL_TOL,
    )
    .map(|q| q.value);
    let closed = (t >= 0.25).then(|| exp_integral_e1(0.5 / t) / (2.0 * PI));
    let rhs = s.quadrature("last-exit density", A, quad, closed);
    let pts = s
        .cfg
        .mc(s.cfg.paths)
        .map("ch2-identity", |_, rng| sample_planar_point(t, rng));
    let sq: Vec<f64> = pts.iter().map(|p| p.0 * p.0 + p.1 * p.1).collect();
    let e = column(&sq);
    s.push(
        format!("control: E|X_t|^2 = 2t at t={t}"),
        A,
        e.mean,
        Some(e.stderr),
        2.0 * t,
        Policy::Sigma {
            k: s.cfg.sigmas,
            rel: 0.0,
            abs: 0.0,
        },
        true,
    );
    if let Some(rhs) = rhs {
        let v: Vec<f64> = sq.iter().map(|r2| 0.5 * r2.ln().max(0.0) / PI).collect();
        s.mc(format!("t={t}"), A, &column(&v), rhs, 0.02, false);
    }
    let small = 1e-3;
    let q0 = integrate(
        |u| {
            if u > 0.0 {
                (-0.5 / u).exp() / (2.0 * PI * u)
            } else {
                0.0
            }
        },
        0.0,
        small,
        REL_TOL,
    )?;
    let p0 = s
        .cfg
        .mc(s.cfg.paths.min(10_000))
        .map("ch2-identity/small", |_, rng| {
            sample_planar_point(small, rng)
        });
    let v: Vec<f64> = p0
        .iter()
        .map(|p| 0.5 * (p.0 * p.0 + p.1 * p.1).ln().max(0.0) / PI)
        .collect();
    s.push(
        "control: t -> 0 both sides vanish (t=1e-3)",
        A,
        column(&v).mean,
        None,
        q0.value,
        Policy::Absolute(1e-12),
        true,
    );
    Ok(())
}

/// Clock horizon of the winding suite, as log t.
pub const WINDING_LOG_T: f64 = 12.0;

fn ch2_winding(s: &mut Suite) -> Result<()> {
    const A: &str = "4 H_t / (log t)^2 -> T_1 of Bessel(3)";
    const W: &str = "theta_t of planar Brownian motion";
    let samples = s.cfg.paths.min(10_000);
    let dh = 0.01;
    let mc = s.cfg.mc(samples);
    let runs: Vec<Result<(f64, f64, bool)>> = mc.map("ch2-winding/clock", |_, rng| {
        let p = sample_r_log(dh, WINDING_LOG_T, rng, 1 << 24)?;
        let h12 = p.inverse_clock(WINDING_LOG_T)?;
        let h6 = p.inverse_clock(WINDING_LOG_T / 2.0)?;
        let mut ok = true;
        let mut prev = 0.0;
        for lt in [0.1, 1.0, 3.0, 6.0, 9.0, 12.0] {
            let h = p.inverse_clock(lt)?;
            ok &= h >= prev && p.radius(lt)? > 1.0;
            prev = h;
        }
        Ok((
            4.0 * h12 / (WINDING_LOG_T * WINDING_LOG_T),
            4.0 * h6 / (WINDING_LOG_T * WINDING_LOG_T / 4.0),
            ok,
        ))
    });
    let runs: Vec<(f64, f64, bool)> = runs.into_iter().collect::<Result<_>>()?;
    let bad = runs.iter().filter(|r| !r.2).count();
    s.push(
        "control: R_t > 1 and H_t nondecreasing on sampled clocks",
        A,
        bad as f64,
        None,
        0.0,
        Policy::Exact,
        true,
    );
    let t1 = mc.map("ch2-winding/t1", |_, rng| sample_bes3_hitting(rng));
    let c12: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let c6: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let k12 = ks_against(&c12, bes3_hitting_cdf);
    let k6 = ks_against(&c6, bes3_hitting_cdf);
    s.push(
        format!("KS(4H_t/(log t)^2, T_1 law) at log t = 12, {samples} samples"),
        A,
        k12,
        None,
        0.08,
        Policy::AtMost,
        false,
    );
    s.push(
        "KS at log t = 12 below KS at log t = 6",
        A,
        k12,
        None,
        k6,
        Policy::AtMost,
        false,
    );
    let k_exact = ks_against(&t1, bes3_hitting_cdf);
    s.push(
        "control: sampled T_1 against its CDF",
        A,
        k_exact,
        None,
        1.36 / (samples as f64).sqrt() * 1.5,
        Policy::AtMost,
        true,
    );
    let k_two = ks_distance(&c12, &t1);
    s.push(
        "two-sample KS against sampled T_1 at log t = 12 (reported)",
        A,
        k_two,
        None,
        1.0,
        Policy::AtMost,
        false,
    );

    let winds: Vec<Result<(f64, bool)>> =
        s.cfg
            .mc(samples.min(2000))
            .map("ch2-winding/theta", |_, rng| {
                let p = sample_planar_bm_refined(1000, 1.0, (1.0, 0.0), rng, WINDING_GUARD, 40)?;
                Ok((p.winding(), p.reversed().winding() == -p.winding()))
            });
    let winds: Vec<(f64, bool)> = winds.into_iter().collect::<Result<_>>()?;
    let theta: Vec<f64> = winds.iter().map(|w| w.0).collect();
    let e = column(&theta);
    s.push(
        "control: mean winding at t=1 from (1,0) is 0",
        W,
        e.mean,
        Some(e.stderr),
        0.0,
        Policy::Sigma {
            k: s.cfg.sigmas,
            rel: 0.0,
            abs: 0.0,
        },
        true,
    );
    let mism = winds.iter().filter(|w| !w.1).count();
    s.push(
        "control: reversing a path negates its winding exactly",
        W,
        mism as f64,
        None,
        0.0,
        Policy::Exact,
        true,
    );
    Ok(())
}

// ---------------------------------------------------------------- chapter 3

/// ε₀ of the occupation estimator, relative to √t.
pub const BESSEL_EPS: f64 = 0.1;

fn ch3_bessel(s: &mut Suite) -> Result<()> {
    const A1: &str = "E[R_t^{2a}] = int_0^t a 2^a s^{a-1} / Gamma(1-a) ds = (2t)^a / Gamma(1-a)";
    const A2: &str = "R_t^{2a} - L_t is a martingale; E[L_t] = (2t)^a / Gamma(1-a)";
    const A3: &str = "(1 + lambda R_t^{2a}/2) exp(-lambda L_t/2) is a martingale";
    let t = s.cfg.t.unwrap_or(1.0);
    let ts = [t / 2.0, t, 2.0 * t];
    let grid = bessel_grid(t / 2.0, 100, t / 100.0, 2.0 * t);
    let eps = BESSEL_EPS * t.sqrt();
    let lambda = 1.0;
    let exact_sigma = Policy::Sigma {
        k: s.cfg.sigmas,
        rel: 0.0,
        abs: 0.0,
    };
    for &alpha in &s.cfg.alphas.clone() {
        let label = format!("ch3-bessel/{alpha}");
        let exact = BesselLocalSampler::new(alpha)?;
        let rows: Vec<Result<Vec<f64>>> = s.cfg.mc(s.cfg.paths).map(&label, |_, rng| {
            let p = sample_besq(alpha, &grid, rng)?;
            let mut row = vec![p.value_at(t).powi(2), p.value_at(t).powf(2.0 * alpha)];
            let lt = bessel_local_time(&p, eps, t);
            row.push(lt.extrapolated);
            row.push(if lt.degraded { 1.0 } else { 0.0 });
            for (r, l) in exact.sample(&ts, rng)? {
                row.push((1.0 + 0.5 * lambda * r.powf(2.0 * alpha)) * (-0.5 * lambda * l).exp());
                row.push(r.powf(2.0 * alpha) - l);
                row.push(l);
            }
            Ok(row)
        });
        let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
        let col = |j: usize| column(&rows.iter().map(|r| r[j]).collect::<Vec<_>>());
        let d = 2.0 * (1.0 - alpha);
        let sq = col(0);
        s.push(
            format!("control: alpha={alpha}: E[R_t^2] = d t"),
            A1,
            sq.mean,
            Some(sq.stderr),
            d * t,
            exact_sigma.clone(),
            true,
        );
        let closed = (2.0 * t).powf(alpha) / gamma(1.0 - alpha);
        // u = w⁴ leaves 4α 2^α w^{4α−1}/Γ(1−α), bounded for α ≥ 1/4.
        let quad = integrate(
            |w| 4.0 * alpha * 2f64.powf(alpha) * w.powf(4.0 * alpha - 1.0) / gamma(1.0 - alpha),
            0.0,
            t.powf(0.25),
            REL_TOL,
        )
        .map(|q| q.value);
        let Some(rhs) = s.quadrature(&format!("alpha={alpha}"), A1, quad, Some(closed)) else {
            continue;
        };
        let m = col(1);
        s.push(
            format!("alpha={alpha}: E[R_t^{{2a}}], t={t}"),
            A1,
            m.mean,
            Some(m.stderr),
            rhs,
            exact_sigma.clone(),
            false,
        );
        let degraded = rows.iter().filter(|r| r[3] > 0.0).count();
        let tag = if degraded > 0 {
            format!(" [degraded on {degraded} paths]")
        } else {
            String::new()
        };
        let l = col(2);
        s.push(
            format!("alpha={alpha}: E[L_t] after eps-extrapolation{tag}"),
            A2,
            l.mean,
            Some(l.stderr),
            rhs,
            Policy::Relative(0.05),
            false,
        );
        let diff: Vec<f64> = rows.iter().map(|r| r[1] - r[2]).collect();
        let dm = column(&diff);
        s.push(
            format!("alpha={alpha}: E[R_t^{{2a}} - L_t] = 0{tag}"),
            A2,
            dm.mean,
            Some(dm.stderr),
            0.0,
            Policy::Sigma {
                k: s.cfg.sigmas,
                rel: 0.0,
                abs: 0.05 * rhs,
            },
            false,
        );
        let e = col(4 + 3 + 2);
        s.push(
            format!("control: alpha={alpha}: exact (R, L) sampler, E[L_t] = (2t)^a/Gamma(1-a)"),
            A2,
            e.mean,
            Some(e.stderr),
            closed,
            exact_sigma.clone(),
            true,
        );
        let e = col(4 + 6 + 1);
        s.push(
            format!(
                "alpha={alpha}: exact (R, L) sampler, E[R_t^{{2a}} - L_t] = 0, t={}",
                2.0 * t
            ),
            A2,
            e.mean,
            Some(e.stderr),
            0.0,
            exact_sigma.clone(),
            false,
        );
        for (j, u) in ts.iter().enumerate() {
            let e = col(4 + 3 * j);
            s.push(
                format!("alpha={alpha}: lambda=1, t={u} (exact (R, L) sampler)"),
                A3,
                e.mean,
                Some(e.stderr),
                1.0,
                exact_sigma.clone(),
                false,
            );
        }
    }
    let z = sample_besq(
        0.5,
        &[0.0],
        &mut crate::mc::stream(s.cfg.seed, "ch3-bessel/zero", 0),
    )?;
    s.push(
        "control: t=0 gives R=0",
        A1,
        z.values[0],
        None,
        0.0,
        Policy::Exact,
        true,
    );
    Ok(())
}
