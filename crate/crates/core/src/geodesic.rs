//! The weighted length
//!
//! ```text
//! J(t) = int V^sigma(G) sqrt(a2 G1'^2 + a1 G2'^2) dtheta,   G(theta) = F(t(theta), theta),
//! ```
//!
//! its first variation (stationarity), its second variation
//! `int H1 h'^2 + 2 H2 h h' + H3 h^2` and the quantities built on it.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::geometry::{FermiChart, GeometryError};
use crate::numeric::{self, Spline};

#[derive(Debug, Error)]
pub enum GeodesicError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("grid too coarse for the nondegeneracy check (M = {0})")]
    GridTooCoarse(usize),
}

pub type Result<T> = std::result::Result<T, GeodesicError>;

/// `J` for the deformation `theta -> F(t(theta), theta)`; `deform` returns `(t, t')`.
pub fn weighted_length(ch: &FermiChart, deform: &dyn Fn(f64) -> (f64, f64), panels: usize) -> Result<f64> {
    let sigma = ch.sigma;
    let fields = &ch.fields;
    let mut err = None;
    let j = numeric::integrate(
        |th| {
            let (t, td) = deform(th);
            let eval = || -> std::result::Result<f64, GeometryError> {
                let (y, ft, fth) = ch.map(t, th)?;
                let g = [ft[0] * td + fth[0], ft[1] * td + fth[1]];
                let a1 = fields.a1.eval(y)?;
                let a2 = fields.a2.eval(y)?;
                let v = fields.v.eval(y)?;
                Ok(v.powf(sigma) * (a2 * g[0] * g[0] + a1 * g[1] * g[1]).sqrt())
            };
            eval().unwrap_or_else(|e| {
                err = Some(e);
                0.0
            })
        },
        0.0,
        1.0,
        panels,
    );
    match err {
        Some(e) => Err(e.into()),
        None => Ok(j),
    }
}

/// `D = a1 a~2 n1^2 + a2 a~1 n2^2` at each node.
pub fn denominator(ch: &FermiChart) -> Vec<f64> {
    let t = &ch.t;
    (0..=ch.m()).map(|i| t.a1[i] * t.at2[i] * t.n1[i].powi(2) + t.a2[i] * t.at1[i] * t.n2[i].powi(2)).collect()
}

/// `r = k - RHS`: zero exactly when the curve is stationary for `J`.
pub fn stationarity_residual(ch: &FermiChart) -> Vec<f64> {
    let t = &ch.t;
    let d = denominator(ch);
    (0..=ch.m())
        .map(|i| {
            let (n1, n2) = (t.n1[i], t.n2[i]);
            let rhs = n1 * n2 * (t.a1[i] * t.at2_d[i] - t.a2[i] * t.at1_d[i])
                + 0.5 * (t.a1_t[i] * n1 * n1 + t.a2_t[i] * n2 * n2)
                + ch.sigma * t.v_t[i] / t.v[i] * t.f0[i];
            t.k[i] - rhs / d[i]
        })
        .collect()
}

/// Density of the first variation, `J'(0)[h] = int density * h`.
pub fn first_variation_density(ch: &FermiChart) -> Vec<f64> {
    let t = &ch.t;
    let s = ch.sigma;
    (0..=ch.m())
        .map(|i| {
            let v = t.v[i];
            let rf = t.f0[i].sqrt();
            s * v.powf(s - 1.0) * t.v_t[i] * rf + 0.5 * v.powf(s) * t.f1[i] / rf
        })
        .collect()
}

/// Tables derived from the second variation, all on the chart grid.
#[derive(Debug, Clone)]
pub struct VariationReport {
    pub sigma: f64,
    pub closed: bool,
    pub r: Vec<f64>,
    pub hc1: Vec<f64>,
    pub hc2: Vec<f64>,
    pub hc3: Vec<f64>,
    pub hc1_d: Vec<f64>,
    pub hc2_d: Vec<f64>,
    pub tau1: Vec<f64>,
    pub tau2: Vec<f64>,
    pub beta_d: Vec<f64>,
    pub beta_dd: Vec<f64>,
    pub alpha_d: Vec<f64>,
    pub zeta: Vec<f64>,
    pub hbar1: Vec<f64>,
    pub hbar2: Vec<f64>,
    pub hbar5: Vec<f64>,
    pub alpha_tilde: Vec<f64>,
    pub k1: f64,
    pub k2: f64,
    pub stationary: bool,
    pub admissible: bool,
    pub tau2_positive: bool,
    pub max_residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct VariationTolerances {
    pub stationarity: f64,
    pub admissibility: f64,
}

impl Default for VariationTolerances {
    fn default() -> Self {
        VariationTolerances { stationarity: 1e-4, admissibility: 1e-6 }
    }
}

pub fn second_variation(ch: &FermiChart, tol: VariationTolerances) -> VariationReport {
    let t = &ch.t;
    let m = ch.m();
    let h = ch.h();
    let closed = ch.closed();
    let s = ch.sigma;
    let mut hc1 = Vec::with_capacity(m + 1);
    let mut hc2 = Vec::with_capacity(m + 1);
    let mut hc3 = Vec::with_capacity(m + 1);
    for i in 0..=m {
        let v = t.v[i];
        let vs = v.powf(s);
        let rf = t.f0[i].sqrt();
        hc1.push(vs * t.w0[i] / rf);
        hc2.push(vs * t.l1[i] / rf);
        hc3.push(
            vs * t.f2[i] / rf
                + (s * t.v_tt[i] * v.powf(s - 1.0) + s * (s - 1.0) * t.v_t[i].powi(2) * v.powf(s - 2.0)) * rf
                + s * t.v_t[i] * v.powf(s - 1.0) * t.f1[i] / rf
                - 0.25 * vs * t.f1[i].powi(2) / (rf * rf * rf),
        );
    }
    let hc1_d = numeric::diff1(&hc1, h, closed);
    let hc2_d = numeric::diff1(&hc2, h, closed);
    let beta_d = numeric::diff1(&t.beta, h, closed);
    let beta_dd = numeric::diff2(&t.beta, h, closed);
    let alpha_d = numeric::diff1(&t.alpha, h, closed);
    let mut tau1 = Vec::with_capacity(m + 1);
    let mut tau2 = Vec::with_capacity(m + 1);
    let mut zeta = Vec::with_capacity(m + 1);
    let mut hbar1 = Vec::with_capacity(m + 1);
    let mut hbar2 = Vec::with_capacity(m + 1);
    let mut hbar5 = Vec::with_capacity(m + 1);
    let mut alpha_tilde = Vec::with_capacity(m + 1);
    for i in 0..=m {
        let b = t.beta[i];
        let bl = beta_d[i] / b;
        let al = alpha_d[i] / t.alpha[i];
        tau1.push(hc1_d[i] - 2.0 * bl * hc1[i]);
        tau2.push(hc2_d[i] - hc3[i] + 2.0 * bl * bl * hc1[i] - beta_dd[i] / b * hc1[i] - bl * hc1_d[i]);
        zeta.push(1.0 / (t.alpha[i].powi(2) * b * t.hh1[i].sqrt()));
        hbar1.push(t.h2[i] * (bl + 2.0 * al) + t.h4[i] - 0.5 * t.h6[i]);
        hbar2.push(
            -(t.h5[i] - t.h7[i] + s * t.v_tt[i] / (b * b)) - t.h6[i] * (0.5 * bl + al)
                + s * t.v_t[i] / (b * b) * (t.v_t[i] / t.v[i] - t.h8[i] / t.h1[i]),
        );
        let h5 = (2.0 * al / (b * b) + t.h4[i] / (b * b)) - 0.5 * (t.h2[i] * bl / (b * b) + t.h6[i] / (b * b));
        hbar5.push(h5);
        alpha_tilde.push(b * b * h5);
    }
    let (k1, k2) = if closed {
        (0.0, 0.0)
    } else {
        (beta_d[0] / t.beta[0] + ch.b.b2 / ch.b.b1, beta_d[m] / t.beta[m] + ch.b.b7 / ch.b.b6)
    };
    let r = stationarity_residual(ch);
    let max_residual = numeric::max_abs(&r);
    let tau2_positive = tau2.iter().all(|&x| x > 0.0);
    VariationReport {
        sigma: s,
        closed,
        stationary: max_residual <= tol.stationarity,
        admissible: closed || (k1.abs() <= tol.admissibility && k2.abs() <= tol.admissibility),
        tau2_positive,
        max_residual,
        r,
        hc1,
        hc2,
        hc3,
        hc1_d,
        hc2_d,
        tau1,
        tau2,
        beta_d,
        beta_dd,
        alpha_d,
        zeta,
        hbar1,
        hbar2,
        hbar5,
        alpha_tilde,
        k1,
        k2,
    }
}

/// `int H1 h'^2 + 2 H2 h h' + H3 h^2` for a perturbation returning `(h, h')`.
pub fn quadratic_form(ch: &FermiChart, rep: &VariationReport, pert: &dyn Fn(f64) -> (f64, f64), panels: usize) -> f64 {
    let s1 = ch.spline(&rep.hc1);
    let s2 = ch.spline(&rep.hc2);
    let s3 = ch.spline(&rep.hc3);
    numeric::integrate(
        |th| {
            let (v, d) = pert(th);
            s1.eval(th) * d * d + 2.0 * s2.eval(th) * v * d + s3.eval(th) * v * v
        },
        0.0,
        1.0,
        panels,
    )
}

/// `int density * h` for the first variation.
pub fn first_variation(ch: &FermiChart, pert: &dyn Fn(f64) -> (f64, f64), panels: usize) -> f64 {
    let dens = ch.spline(&first_variation_density(ch));
    numeric::integrate(|th| dens.eval(th) * pert(th).0, 0.0, 1.0, panels)
}

/// Tabulated variations against five-point differences of the weighted length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariationSample {
    pub first: f64,
    pub first_fd: f64,
    pub second: f64,
    pub second_fd: f64,
}

impl VariationSample {
    /// Largest discrepancy, relative to `max(|value|, 1)`.
    pub fn error(&self) -> f64 {
        let r = |a: f64, b: f64| (a - b).abs() / a.abs().max(1.0);
        r(self.first, self.first_fd).max(r(self.second, self.second_fd))
    }
}

/// Smooth bump supported in `(c - w, c + w)` times a sine mode.
fn bump(c: f64, w: f64, amp: f64, freq: f64) -> impl Fn(f64) -> (f64, f64) {
    move |th| {
        let x = (th - c) / w;
        if x.abs() >= 1.0 {
            return (0.0, 0.0);
        }
        let q = 1.0 - x * x;
        let b = (-1.0 / q).exp();
        let bd = b * (-2.0 * x / (q * q)) / w;
        let (s, co) = (freq * th).sin_cos();
        (amp * b * s, amp * (bd * s + b * freq * co))
    }
}

/// Compare the tabulated first and second variations with finite differences
/// on `count` random compactly supported perturbations.
pub fn variation_samples(
    ch: &FermiChart,
    rep: &VariationReport,
    seed: u64,
    count: usize,
) -> Result<Vec<VariationSample>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let s = 1e-3;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let w = rng.gen_range(0.1..0.3);
        let c = rng.gen_range(w + 0.02..1.0 - w - 0.02);
        let pert = bump(c, w, rng.gen_range(0.5..2.0), rng.gen_range(0.0..8.0));
        let mut j = [0.0; 5];
        for (k, v) in j.iter_mut().enumerate() {
            let sk = (k as f64 - 2.0) * s;
            *v = weighted_length(
                ch,
                &|th| {
                    let (a, d) = pert(th);
                    (sk * a, sk * d)
                },
                400,
            )?;
        }
        let [m2, m1, z, p1, p2] = j;
        out.push(VariationSample {
            first: first_variation(ch, &pert, 400),
            first_fd: (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * s),
            second: quadratic_form(ch, rep, &pert, 400),
            second_fd: (-p2 + 16.0 * p1 - 30.0 * z + 16.0 * m1 - m2) / (12.0 * s * s),
        });
    }
    Ok(out)
}

/// The Jacobi operator `(H1 f')' + c f` with Robin or periodic end conditions.
pub struct JacobiOperator {
    pub hc1: Box<dyn Fn(f64) -> f64>,
    pub c: Box<dyn Fn(f64) -> f64>,
    /// `(b1, b2, b6, b7)` for `b1 f'(0) - b2 f(0) = 0`, `b6 f'(1) - b7 f(1) = 0`.
    pub robin: Option<(f64, f64, f64, f64)>,
}

impl JacobiOperator {
    pub fn from_report(ch: &FermiChart, rep: &VariationReport) -> Self {
        let s1: Spline = ch.spline(&rep.hc1);
        let c: Vec<f64> = (0..=ch.m()).map(|i| rep.hc2_d[i] - rep.hc3[i]).collect();
        let sc = ch.spline(&c);
        let b = ch.b;
        JacobiOperator {
            hc1: Box::new(move |x| s1.eval(x)),
            c: Box::new(move |x| sc.eval(x)),
            robin: if ch.closed() { None } else { Some((b.b1, b.b2, b.b6, b.b7)) },
        }
    }

    /// Diagonal and off-diagonal of the symmetrised conservative discretisation.
    fn tridiagonal(&self, m: usize) -> (Vec<f64>, Vec<f64>) {
        let (b1, b2, b6, b7) = self.robin.expect("tridiagonal form is for Robin ends");
        let h = 1.0 / m as f64;
        let flux: Vec<f64> = (0..m).map(|j| (self.hc1)((j as f64 + 0.5) * h) / h).collect();
        let w: Vec<f64> = (0..=m).map(|j| if j == 0 || j == m { 0.5 * h } else { h }).collect();
        let mut diag = vec![0.0; m + 1];
        let mut off = vec![0.0; m];
        for j in 0..=m {
            let mut s = (self.c)(j as f64 * h) * w[j];
            if j > 0 {
                s -= flux[j - 1];
            }
            if j < m {
                s -= flux[j];
            }
            if j == 0 {
                s -= (self.hc1)(0.0) * b2 / b1;
            }
            if j == m {
                s += (self.hc1)(1.0) * b7 / b6;
            }
            diag[j] = s / w[j];
        }
        for j in 0..m {
            off[j] = flux[j] / (w[j] * w[j + 1]).sqrt();
        }
        (diag, off)
    }

    fn periodic_matrix(&self, m: usize) -> DMatrix<f64> {
        let h = 1.0 / m as f64;
        let mut a = DMatrix::zeros(m, m);
        for j in 0..m {
            let fl = (self.hc1)((j as f64 + 0.5) * h) / (h * h);
            let k = (j + 1) % m;
            a[(j, k)] += fl;
            a[(k, j)] += fl;
            a[(j, j)] -= fl;
            a[(k, k)] -= fl;
        }
        for j in 0..m {
            a[(j, j)] += (self.c)(j as f64 * h);
        }
        a
    }

    /// Eigenvalue closest to `target`.
    fn eigenvalue_near(&self, m: usize, target: f64) -> f64 {
        if self.robin.is_none() {
            let eig = self.periodic_matrix(m).symmetric_eigenvalues();
            return eig.iter().cloned().min_by(|a, b| (a - target).abs().total_cmp(&(b - target).abs())).unwrap();
        }
        let (d, e) = self.tridiagonal(m);
        let below = sturm_count(&d, &e, target);
        let bound = d.iter().map(|x| x.abs()).fold(0.0, f64::max) + 2.0 * e.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let mut best = f64::NAN;
        for k in [below.wrapping_sub(1), below] {
            if k >= d.len() {
                continue;
            }
            let lam = kth_eigenvalue(&d, &e, k, -bound - 1.0, bound + 1.0);
            if best.is_nan() || (lam - target).abs() < (best - target).abs() {
                best = lam;
            }
        }
        best
    }
}

/// Number of eigenvalues of the symmetric tridiagonal matrix below `x`.
fn sturm_count(d: &[f64], e: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = d[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..d.len() {
        let prev = if q == 0.0 { 1e-300 } else { q };
        q = d[i] - x - e[i - 1] * e[i - 1] / prev;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// The `k`-th smallest eigenvalue (0-based) by bisection.
fn kth_eigenvalue(d: &[f64], e: &[f64], k: usize, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sturm_count(d, e, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nondegeneracy {
    /// Eigenvalue of smallest modulus, extrapolated from grids `M`, `2M`, `4M`.
    pub eigenvalue: f64,
    pub sigma_min: f64,
    /// Same quantity on grid `M` alone.
    pub sigma_min_raw: f64,
    pub nondegenerate: bool,
}

/// Smallest singular value of the Jacobi problem. The discrete operator is
/// self-adjoint in the grid inner product, so this is the smallest
/// eigenvalue modulus; two Richardson steps remove the `h^2` and `h^4` errors.
pub fn nondegeneracy(op: &JacobiOperator, m: usize, tol: f64) -> Result<Nondegeneracy> {
    if m < 8 {
        return Err(GeodesicError::GridTooCoarse(m));
    }
    let l1 = op.eigenvalue_near(m, 0.0);
    let l2 = op.eigenvalue_near(2 * m, l1);
    let l4 = op.eigenvalue_near(4 * m, l2);
    let r1 = (4.0 * l2 - l1) / 3.0;
    let r2 = (4.0 * l4 - l2) / 3.0;
    let ext = (16.0 * r2 - r1) / 15.0;
    Ok(Nondegeneracy {
        eigenvalue: ext,
        sigma_min: ext.abs(),
        sigma_min_raw: l1.abs(),
        nondegenerate: ext.abs() >= tol,
    })
}
