//! Adaptive Gauss-Kronrod (7/15) quadrature on finite and half-infinite intervals.

use crate::error::{Error, Result};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Default relative error target.
pub const REL_TOL: f64 = 1e-8;
const MAX_INTERVALS: usize = 20_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    /// Estimated absolute error.
    pub error: f64,
    pub intervals: usize,
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, o: &Self) -> bool {
        self.error == o.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Piece {
    fn cmp(&self, o: &Self) -> Ordering {
        self.error.total_cmp(&o.error)
    }
}

/// ∫_a^b f with |error| ≤ max(rel·|value|, abs_floor). `b` may be +∞, handled by
/// x = a + u/(1−u).
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> Result<Quadrature> {
    integrate_with_floor(f, a, b, rel, 1e-15)
}

pub fn integrate_with_floor(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    rel: f64,
    abs_floor: f64,
) -> Result<Quadrature> {
    if a == b {
        return Ok(Quadrature {
            value: 0.0,
            error: 0.0,
            intervals: 0,
        });
    }
    if b.is_infinite() {
        let g = |u: f64| {
            let d = 1.0 - u;
            f(a + u / d) / (d * d)
        };
        return adapt(&g, 0.0, 1.0, rel, abs_floor);
    }
    adapt(&f, a, b, rel, abs_floor)
}

fn adapt(f: &impl Fn(f64) -> f64, a: f64, b: f64, rel: f64, abs_floor: f64) -> Result<Quadrature> {
    let mut heap = BinaryHeap::new();
    let (v, e) = gk15(f, a, b);
    let (mut total, mut err) = (v, e);
    heap.push(Piece {
        a,
        b,
        value: v,
        error: e,
    });
    while err > (rel * total.abs()).max(abs_floor) {
        if heap.len() >= MAX_INTERVALS {
            return Err(Error::Numerical(format!(
                "quadrature on [{a}, {b}] stalled at error {err:.3e} for value {total:.6e}"
            )));
        }
        let p = heap.pop().expect("nonempty");
        let m = 0.5 * (p.a + p.b);
        if m <= p.a || m >= p.b {
            return Err(Error::Numerical("quadrature interval underflow".into()));
        }
        let (v1, e1) = gk15(f, p.a, m);
        let (v2, e2) = gk15(f, m, p.b);
        total += v1 + v2 - p.value;
        err += e1 + e2 - p.error;
        if !total.is_finite() || !err.is_finite() {
            return Err(Error::Numerical(format!(
                "quadrature on [{a}, {b}] hit a non-finite value"
            )));
        }
        heap.push(Piece {
            a: p.a,
            b: m,
            value: v1,
            error: e1,
        });
        heap.push(Piece {
            a: m,
            b: p.b,
            value: v2,
            error: e2,
        });
    }
    // Re-sum to shed the drift of the running updates.
    let pieces = heap.into_vec();
    let value = pieces.iter().map(|p| p.value).sum();
    let error = pieces.iter().map(|p| p.error).sum();
    Ok(Quadrature {
        value,
        error,
        intervals: pieces.len(),
    })
}

/// ∫_{x0}^{x1} ∫_{y0(x)}^{y1(x)} f(x, y) dy dx, inner integrals to rel/10.
pub fn integrate_2d(
    f: impl Fn(f64, f64) -> f64,
    x: (f64, f64),
    y_lo: impl Fn(f64) -> f64,
    y_hi: impl Fn(f64) -> f64,
    rel: f64,
) -> Result<Quadrature> {
    let failure = std::cell::RefCell::new(None);
    let inner_err = std::cell::Cell::new(0.0f64);
    let outer = integrate(
        |xv| match integrate(|yv| f(xv, yv), y_lo(xv), y_hi(xv), rel / 10.0) {
            Ok(q) => {
                inner_err.set(inner_err.get().max(q.error));
                q.value
            }
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                0.0
            }
        },
        x.0,
        x.1,
        rel,
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let q = outer?;
    Ok(Quadrature {
        error: q.error + inner_err.get() * (x.1 - x.0).abs().min(1e6),
        ..q
    })
}
