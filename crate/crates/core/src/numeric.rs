//! Small numerical kernels shared by the modules: uniform-grid
//! differences and quadrature, cubic interpolation, banded LU.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;

fn gl_rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(12).unwrap()).as_node_weight_pairs().to_vec())
}

/// Composite 12-point Gauss-Legendre over `panels` equal panels.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, panels: usize) -> f64 {
    let rule = gl_rule();
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let (lo, hi) = (a + k as f64 * h, a + (k + 1) as f64 * h);
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        let mut s = 0.0;
        for &(x, w) in rule {
            s += w * f(mid + half * x);
        }
        total += half * s;
    }
    total
}

/// Integral over `[a, inf)` of an integrand decaying at least like `exp(-rate x)`.
pub fn integrate_tail<F: FnMut(f64) -> f64>(f: F, a: f64, rate: f64) -> f64 {
    let cut = a + 42.0 / rate.max(1e-3);
    let panels = ((cut - a) * 8.0).ceil().max(64.0) as usize;
    integrate(f, a, cut, panels)
}

/// Fourth-order first derivative of samples on a uniform grid.
pub fn diff1(y: &[f64], h: f64, periodic: bool) -> Vec<f64> {
    let n = y.len();
    assert!(n >= 6, "need at least six samples");
    let mut d = vec![0.0; n];
    if periodic {
        // last sample duplicates the first
        let m = n - 1;
        let at = |i: isize| y[i.rem_euclid(m as isize) as usize];
        for i in 0..n {
            let i = i as isize;
            d[i as usize] = (at(i - 2) - 8.0 * at(i - 1) + 8.0 * at(i + 1) - at(i + 2)) / (12.0 * h);
        }
        return d;
    }
    for i in 2..n - 2 {
        d[i] = (y[i - 2] - 8.0 * y[i - 1] + 8.0 * y[i + 1] - y[i + 2]) / (12.0 * h);
    }
    let fwd =
        |s: &dyn Fn(usize) -> f64| (-25.0 * s(0) + 48.0 * s(1) - 36.0 * s(2) + 16.0 * s(3) - 3.0 * s(4)) / (12.0 * h);
    let fwd1 = |s: &dyn Fn(usize) -> f64| (-3.0 * s(0) - 10.0 * s(1) + 18.0 * s(2) - 6.0 * s(3) + s(4)) / (12.0 * h);
    d[0] = fwd(&|k| y[k]);
    d[1] = fwd1(&|k| y[k]);
    d[n - 1] = -fwd(&|k| y[n - 1 - k]);
    d[n - 2] = -fwd1(&|k| y[n - 1 - k]);
    d
}

/// Fourth-order second derivative of samples on a uniform grid.
pub fn diff2(y: &[f64], h: f64, periodic: bool) -> Vec<f64> {
    let n = y.len();
    assert!(n >= 7, "need at least seven samples");
    let h2 = h * h;
    let mut d = vec![0.0; n];
    if periodic {
        let m = n - 1;
        let at = |i: isize| y[i.rem_euclid(m as isize) as usize];
        for i in 0..n {
            let i = i as isize;
            d[i as usize] = (-at(i - 2) + 16.0 * at(i - 1) - 30.0 * at(i) + 16.0 * at(i + 1) - at(i + 2)) / (12.0 * h2);
        }
        return d;
    }
    for i in 2..n - 2 {
        d[i] = (-y[i - 2] + 16.0 * y[i - 1] - 30.0 * y[i] + 16.0 * y[i + 1] - y[i + 2]) / (12.0 * h2);
    }
    let end = |s: &dyn Fn(usize) -> f64| {
        (45.0 * s(0) - 154.0 * s(1) + 214.0 * s(2) - 156.0 * s(3) + 61.0 * s(4) - 10.0 * s(5)) / (12.0 * h2)
    };
    let end1 = |s: &dyn Fn(usize) -> f64| {
        (10.0 * s(0) - 15.0 * s(1) - 4.0 * s(2) + 14.0 * s(3) - 6.0 * s(4) + s(5)) / (12.0 * h2)
    };
    d[0] = end(&|k| y[k]);
    d[1] = end1(&|k| y[k]);
    d[n - 1] = end(&|k| y[n - 1 - k]);
    d[n - 2] = end1(&|k| y[n - 1 - k]);
    d
}

/// Cumulative integral from the first node, fourth order (trapezoid with endpoint correction).
pub fn cumulative(y: &[f64], h: f64, periodic: bool) -> Vec<f64> {
    let d = diff1(y, h, periodic);
    let mut out = vec![0.0; y.len()];
    for i in 1..y.len() {
        out[i] = out[i - 1] + 0.5 * h * (y[i - 1] + y[i]) - h * h / 12.0 * (d[i] - d[i - 1]);
    }
    out
}

pub fn integral(y: &[f64], h: f64) -> f64 {
    *cumulative(y, h, false).last().unwrap()
}

pub fn max_abs(y: &[f64]) -> f64 {
    y.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Cubic spline through uniform samples, clamped with fourth-order end slopes
/// (or periodic when the last sample repeats the first).
#[derive(Debug, Clone)]
pub struct Spline {
    x0: f64,
    h: f64,
    y: Vec<f64>,
    m: Vec<f64>,
    periodic: bool,
}

impl Spline {
    pub fn new(x0: f64, h: f64, y: Vec<f64>, periodic: bool) -> Self {
        let n = y.len();
        assert!(n >= 7, "spline needs at least seven samples");
        let m = if periodic {
            periodic_second_derivs(&y, h)
        } else {
            let d = diff1(&y, h, false);
            clamped_second_derivs(&y, h, d[0], d[n - 1])
        };
        Spline { x0, h, y, m, periodic }
    }

    pub fn uniform(a: f64, b: f64, y: Vec<f64>) -> Self {
        let h = (b - a) / (y.len() - 1) as f64;
        Spline::new(a, h, y, false)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.y
    }

    /// Value, first and second derivative.
    pub fn eval3(&self, x: f64) -> (f64, f64, f64) {
        let n = self.y.len();
        let mut s = (x - self.x0) / self.h;
        if self.periodic {
            let period = (n - 1) as f64;
            s = s.rem_euclid(period);
        }
        let i = (s.floor() as isize).clamp(0, n as isize - 2) as usize;
        let b = s - i as f64;
        let a = 1.0 - b;
        let h = self.h;
        let (y0, y1, m0, m1) = (self.y[i], self.y[i + 1], self.m[i], self.m[i + 1]);
        let v = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d = (y1 - y0) / h + (-(3.0 * a * a - 1.0) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        let dd = a * m0 + b * m1;
        (v, d, dd)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval3(x).0
    }
}

fn clamped_second_derivs(y: &[f64], h: f64, d0: f64, d1: f64) -> Vec<f64> {
    let n = y.len();
    let mut sub = vec![1.0; n];
    let mut diag = vec![4.0; n];
    let mut sup = vec![1.0; n];
    let mut rhs = vec![0.0; n];
    diag[0] = 2.0;
    rhs[0] = 6.0 / h * ((y[1] - y[0]) / h - d0);
    diag[n - 1] = 2.0;
    rhs[n - 1] = 6.0 / h * (d1 - (y[n - 1] - y[n - 2]) / h);
    for i in 1..n - 1 {
        rhs[i] = 6.0 * (y[i + 1] - 2.0 * y[i] + y[i - 1]) / (h * h);
    }
    sub[0] = 0.0;
    sup[n - 1] = 0.0;
    thomas(&sub, &diag, &sup, &rhs)
}

fn periodic_second_derivs(y: &[f64], h: f64) -> Vec<f64> {
    let m = y.len() - 1;
    let at = |i: isize| y[i.rem_euclid(m as isize) as usize];
    let rhs: Vec<f64> = (0..m as isize).map(|i| 6.0 * (at(i + 1) - 2.0 * at(i) + at(i - 1)) / (h * h)).collect();
    let mut out = cyclic_thomas(1.0, 4.0, 1.0, &rhs);
    out.push(out[0]);
    out
}

/// Tridiagonal solve; `sub[0]` and `sup[n-1]` are ignored.
pub fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let den = diag[i] - sub[i] * c[i - 1];
        c[i] = if i + 1 < n { sup[i] / den } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / den;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    x
}

/// Constant-coefficient cyclic tridiagonal solve (Sherman-Morrison).
fn cyclic_thomas(lo: f64, di: f64, up: f64, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let gamma = -di;
    let mut diag = vec![di; n];
    diag[0] = di - gamma;
    diag[n - 1] = di - up * lo / gamma;
    let sub = vec![lo; n];
    let sup = vec![up; n];
    let x = thomas(&sub, &diag, &sup, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = lo;
    let z = thomas(&sub, &diag, &sup, &u);
    let fact = (x[0] + up * x[n - 1] / gamma) / (1.0 + z[0] + up * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(a, b)| a - fact * b).collect()
}

/// Band matrix with LU factorisation by partial pivoting.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    a: Vec<f64>,
    piv: Vec<usize>,
    factored: bool,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix { n, kl, ku, width, a: vec![0.0; n * width], piv: Vec::new(), factored: false }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku + self.kl, "entry ({i},{j}) outside band");
        i * self.width + (j + self.kl - i)
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i},{j}) outside band");
        let k = self.idx(i, j);
        self.a[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku + self.kl {
            return 0.0;
        }
        self.a[self.idx(i, j)]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert!(!self.factored);
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// Dense copy, used for singular value diagnostics.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        assert!(!self.factored);
        nalgebra::DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Factor in place. Returns `false` on an exactly zero pivot.
    pub fn factor(&mut self) -> bool {
        let n = self.n;
        let reach = self.ku + self.kl;
        self.piv = (0..n).collect();
        for k in 0..n {
            let last = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.a[self.idx(k, k)].abs();
            for i in k + 1..=last {
                let v = self.a[self.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return false;
            }
            self.piv[k] = p;
            let jmax = (k + reach).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let (ia, ib) = (self.idx(k, j), self.idx(p, j));
                    self.a.swap(ia, ib);
                }
            }
            let pivot = self.a[self.idx(k, k)];
            for i in k + 1..=last {
                let ik = self.idx(i, k);
                let l = self.a[ik] / pivot;
                self.a[ik] = l;
                if l != 0.0 {
                    for j in k + 1..=jmax {
                        let kj = self.a[self.idx(k, j)];
                        let ij = self.idx(i, j);
                        self.a[ij] -= l * kj;
                    }
                }
            }
        }
        self.factored = true;
        true
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert!(self.factored, "factor before solving");
        let n = self.n;
        let reach = self.ku + self.kl;
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
            let last = (k + self.kl).min(n - 1);
            for i in k + 1..=last {
                x[i] -= self.a[self.idx(i, k)] * x[k];
            }
        }
        for k in (0..n).rev() {
            let jmax = (k + reach).min(n - 1);
            let mut s = x[k];
            for j in k + 1..=jmax {
                s -= self.a[self.idx(k, j)] * x[j];
            }
            x[k] = s / self.a[self.idx(k, k)];
        }
        x
    }
}

/// Smallest singular value of a dense matrix.
pub fn sigma_min(m: &nalgebra::DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    sv.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Smooth step: 1 on `(-inf, a]`, 0 on `[b, inf)`, C-infinity in between.
pub fn smooth_cutoff(x: f64, a: f64, b: f64) -> f64 {
    if x <= a {
        return 1.0;
    }
    if x >= b {
        return 0.0;
    }
    let s = (x - a) / (b - a);
    let f = |u: f64| if u <= 0.0 { 0.0 } else { (-1.0 / u).exp() };
    let (p, q) = (f(1.0 - s), f(s));
    p / (p + q)
}

/// Derivative of [`smooth_cutoff`] in `x`.
pub fn smooth_cutoff_d(x: f64, a: f64, b: f64) -> f64 {
    if x <= a || x >= b {
        return 0.0;
    }
    let s = (x - a) / (b - a);
    let (u, v) = (1.0 - s, s);
    let p = (-1.0 / u).exp();
    let q = (-1.0 / v).exp();
    let dp = -p / (u * u);
    let dq = q / (v * v);
    (dp * (p + q) - p * (dp + dq)) / ((p + q) * (p + q)) / (b - a)
}
