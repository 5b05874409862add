//! Gauss–Legendre panels and adaptive Gauss–Kronrod integration.
//!
//! Every integrand in this crate is piecewise smooth with seams at known
//! locations (kernel edges, box walls, trajectory corners), so callers pass
//! those seams as breakpoints and each panel sees an analytic integrand.

use std::collections::BinaryHeap;
use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the `n`-point rule by Newton iteration on `P_n`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
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
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Quadrature points for a composite rule over `[a, b]`.
///
/// The interval is first cut at every breakpoint that falls strictly inside it,
/// then each piece is split into equal panels no wider than `max_panel`.
pub fn composite_points(
    rule: &GaussLegendre,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    max_panel: f64,
) -> Vec<(f64, f64)> {
    if !(b > a) {
        return Vec::new();
    }
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&c| c > a && c < b)
        .collect();
    cuts.push(a);
    cuts.push(b);
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap_or(Ordering::Equal));
    cuts.dedup();
    let mut out = Vec::new();
    for pair in cuts.windows(2) {
        let (l, r) = (pair[0], pair[1]);
        let pieces = ((r - l) / max_panel).ceil().max(1.0) as usize;
        let h = (r - l) / pieces as f64;
        for p in 0..pieces {
            let pl = l + p as f64 * h;
            let pr = if p + 1 == pieces { r } else { pl + h };
            out.extend(rule.mapped(pl, pr));
        }
    }
    out
}

// 15-point Kronrod extension of the 7-point Gauss rule (QUADPACK qk15).
// Tables are kept digit-for-digit as published.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// One G7/K15 evaluation: (Kronrod estimate, |Kronrod - Gauss|).
pub fn gauss_kronrod_15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    let fc = f(mid);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let s = f(mid - dx) + f(mid + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive G7/K15 integration of `f` over `[a, b]`, with the
/// interval pre-split at `breakpoints`. The panel with the largest error
/// estimate is bisected until the summed estimate drops below `abs_tol`.
pub fn integrate_adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    abs_tol: f64,
) -> Result<Estimate> {
    const MAX_PANELS: usize = 4000;
    if a == b {
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        });
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&c| c > lo && c < hi)
        .collect();
    cuts.push(lo);
    cuts.push(hi);
    cuts.sort_by(|x, y| x.total_cmp(y));
    cuts.dedup();

    let mut heap = BinaryHeap::new();
    let mut evaluations = 0;
    let mut total_err = 0.0;
    for pair in cuts.windows(2) {
        let (v, e) = gauss_kronrod_15(&mut f, pair[0], pair[1]);
        evaluations += 15;
        total_err += e;
        heap.push(Panel {
            a: pair[0],
            b: pair[1],
            value: v,
            error: e,
        });
    }

    while total_err > abs_tol {
        if heap.len() >= MAX_PANELS {
            return Err(Error::NumericFailure {
                context: "adaptive quadrature",
                achieved: total_err,
                tolerance: abs_tol,
            });
        }
        let worst = heap.pop().expect("heap holds at least one panel");
        let m = 0.5 * (worst.a + worst.b);
        if m <= worst.a || m >= worst.b {
            // Panel can no longer be bisected in floating point.
            return Err(Error::NumericFailure {
                context: "adaptive quadrature",
                achieved: total_err,
                tolerance: abs_tol,
            });
        }
        let (lv, le) = gauss_kronrod_15(&mut f, worst.a, m);
        let (rv, re) = gauss_kronrod_15(&mut f, m, worst.b);
        evaluations += 30;
        total_err += le + re - worst.error;
        heap.push(Panel {
            a: worst.a,
            b: m,
            value: lv,
            error: le,
        });
        heap.push(Panel {
            a: m,
            b: worst.b,
            value: rv,
            error: re,
        });
    }

    // Re-sum from scratch so the running updates leave no rounding residue.
    let value: f64 = heap.iter().map(|p| p.value).sum();
    let error: f64 = heap.iter().map(|p| p.error).sum();
    Ok(Estimate {
        value: sign * value,
        error,
        evaluations,
    })
}
