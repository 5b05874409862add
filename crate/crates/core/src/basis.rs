//! Matrix elements of the hard-wall sine basis against products of broadened
//! steps and deltas, and tensor-product quadrature grids over the box.

use nalgebra::{Complex, DMatrix};

use crate::model::{wall_mode, wall_mode_derivative, BoxDomain, Kernel, PhaseTerms};
use crate::quadrature::{composite_points, GaussLegendre};

/// A broadened step or delta centered on `edge`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Factor {
    Step(f64),
    Delta(f64),
}

/// The first `modes` wall eigenfunctions on `(0, len)`.
#[derive(Debug, Clone)]
pub struct WallBasis {
    len: f64,
    modes: usize,
    rule: GaussLegendre,
}

impl WallBasis {
    pub fn new(len: f64, modes: usize) -> Self {
        Self {
            len,
            modes,
            rule: GaussLegendre::new(16),
        }
    }

    pub fn len(&self) -> f64 {
        self.len
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// `M_mn = int phi_m(s) prod(factors)(s) phi_n(s) ds`, with `phi_n`
    /// replaced by its derivative when `derivative` is set.
    ///
    /// Panels are cut at every kernel edge and kept no wider than the
    /// kernel half-width, so each piece is smooth.
    pub fn weighted(&self, kernel: &Kernel, factors: &[Factor], derivative: bool) -> DMatrix<f64> {
        let m = self.modes;
        let mut out = DMatrix::zeros(m, m);
        let w = kernel.half_width();
        let (mut lo, mut hi) = (0.0f64, self.len);
        let mut cuts = Vec::with_capacity(2 * factors.len());
        for f in factors {
            match *f {
                Factor::Step(e) => {
                    lo = lo.max(e - w);
                    cuts.push(e + w);
                }
                Factor::Delta(e) => {
                    lo = lo.max(e - w);
                    hi = hi.min(e + w);
                    cuts.push(e);
                }
            }
        }
        if !(hi > lo) {
            return out;
        }
        let max_panel = w.min(self.len / (2.0 * m as f64).max(1.0));
        let points = composite_points(&self.rule, lo, hi, &cuts, max_panel);
        let mut left = vec![0.0; m];
        let mut right = vec![0.0; m];
        for (s, wq) in points {
            let weight: f64 = factors
                .iter()
                .map(|f| match *f {
                    Factor::Step(e) => kernel.step(s - e),
                    Factor::Delta(e) => kernel.delta(s - e),
                })
                .product();
            if weight == 0.0 {
                continue;
            }
            for k in 0..m {
                left[k] = wall_mode(k + 1, self.len, s);
                right[k] = if derivative {
                    wall_mode_derivative(k + 1, self.len, s)
                } else {
                    left[k]
                };
            }
            let scale = wq * weight;
            for j in 0..m {
                let r = scale * right[j];
                for i in 0..m {
                    out[(i, j)] += left[i] * r;
                }
            }
        }
        out
    }

    /// Mode values at `s`, `phi_1(s) .. phi_M(s)`.
    pub fn values(&self, s: f64) -> Vec<f64> {
        (1..=self.modes).map(|n| wall_mode(n, self.len, s)).collect()
    }
}

/// Tensor-product Gauss grid over the box, refined around the given edges.
#[derive(Debug, Clone)]
pub struct TensorGrid {
    pub x: Vec<(f64, f64)>,
    pub y: Vec<(f64, f64)>,
}

impl TensorGrid {
    /// Panels no wider than `max_panel`, split at `x_cuts`/`y_cuts`.
    pub fn new(domain: &BoxDomain, x_cuts: &[f64], y_cuts: &[f64], max_panel: f64, order: usize) -> Self {
        let rule = GaussLegendre::new(order);
        Self {
            x: composite_points(&rule, 0.0, domain.x_len, x_cuts, max_panel),
            y: composite_points(&rule, 0.0, domain.y_len, y_cuts, max_panel),
        }
    }

    /// Grid adapted to the seams of the given phase functions.
    pub fn for_phases(domain: &BoxDomain, kernel: &Kernel, phases: &[&PhaseTerms]) -> Self {
        let w = kernel.half_width();
        let mut xc = Vec::new();
        let mut yc = Vec::new();
        for p in phases {
            for t in p.terms() {
                xc.extend([t.x_edge - w, t.x_edge, t.x_edge + w]);
                yc.extend([t.y_edge - w, t.y_edge, t.y_edge + w]);
            }
        }
        // 12-point panels of width <= w/2 resolve e^{i theta} across a kernel
        // and the highest basis frequencies away from it.
        Self::new(domain, &xc, &yc, 0.5 * w, 12)
    }

    /// `B[i, m] = sqrt(weight_i) * phi_m(s_i)`.
    fn weighted_modes(points: &[(f64, f64)], len: f64, modes: usize) -> DMatrix<f64> {
        DMatrix::from_fn(points.len(), modes, |i, m| {
            let (s, w) = points[i];
            w.sqrt() * wall_mode(m + 1, len, s)
        })
    }

    /// Unweighted mode values, `B[i, m] = phi_m(s_i)`.
    pub fn mode_table(points: &[(f64, f64)], len: f64, modes: usize) -> DMatrix<f64> {
        DMatrix::from_fn(points.len(), modes, |i, m| wall_mode(m + 1, len, points[i].0))
    }

    /// Projects `f` onto the mode basis: `c_(mx,my) = int chi eta f`.
    /// Result is `Mx x My`, row-major over `(mx, my)`.
    pub fn project<F: Fn(f64, f64) -> Complex<f64>>(
        &self,
        domain: &BoxDomain,
        mx: usize,
        my: usize,
        f: F,
    ) -> DMatrix<Complex<f64>> {
        let bx = Self::weighted_modes(&self.x, domain.x_len, mx).map(|v| Complex::new(v, 0.0));
        let by = Self::weighted_modes(&self.y, domain.y_len, my).map(|v| Complex::new(v, 0.0));
        let field = DMatrix::from_fn(self.x.len(), self.y.len(), |i, j| {
            let s = (self.x[i].1 * self.y[j].1).sqrt();
            f(self.x[i].0, self.y[j].0) * s
        });
        bx.transpose() * field * by
    }

    /// `sum_ij w_i w_j conj(a_ij) b_ij g(x_i, y_j)` for fields sampled on this grid.
    pub fn inner<G: Fn(f64, f64) -> Complex<f64>>(
        &self,
        a: &DMatrix<Complex<f64>>,
        b: &DMatrix<Complex<f64>>,
        g: G,
    ) -> Complex<f64> {
        let mut acc = Complex::new(0.0, 0.0);
        for (i, &(x, wx)) in self.x.iter().enumerate() {
            for (j, &(y, wy)) in self.y.iter().enumerate() {
                acc += a[(i, j)].conj() * b[(i, j)] * g(x, y) * (wx * wy);
            }
        }
        acc
    }
}
