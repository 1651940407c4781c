//! Transversal profiles: the ground state `w`, the principal eigenpair
//! `(lambda0, Z)`, the correction profiles `omega_0..omega_3` and the
//! interaction constants `rho_1..rho_4`.

use thiserror::Error;

use crate::geodesic;
use crate::geometry::FermiChart;
use crate::numeric::{self, BandMatrix, Spline};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("exponent p = {0} must exceed 1")]
    InvalidExponent(f64),
    #[error("truncation L = {l} and grid N = {n} too small (need L >= 15, N >= 2000)")]
    InvalidGrid { l: f64, n: usize },
    #[error("omega_{k}: solvability residual {residual:e} above tolerance")]
    Solvability { k: usize, residual: f64 },
    #[error("stationarity relation violated by {0:e} on a stationary curve")]
    RelationViolated(f64),
}

pub type Result<T> = std::result::Result<T, ProfileError>;

const SOLVABILITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Profile {
    pub p: f64,
    pub sigma: f64,
    pub c_p: f64,
    pub lambda0: f64,
    /// Truncation half-width.
    pub l: f64,
    /// Grid on `[-L, L]`.
    pub x: Vec<f64>,
    pub h: f64,
    /// `omega_k` on `x`.
    pub omega: [Vec<f64>; 4],
    /// `int rhs_k w_x`, by quadrature of the closed forms.
    pub solvability: [f64; 4],
    /// `int w^(p+1)`.
    pub wp1: f64,
    pub rho: [f64; 4],
    splines: [Spline; 4],
}

impl Profile {
    /// Ground state, eigenpair, correction profiles and constants on `N` points.
    pub fn new(p: f64, l: f64, n: usize) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(ProfileError::InvalidExponent(p));
        }
        if !(l >= 15.0) || n < 2000 {
            return Err(ProfileError::InvalidGrid { l, n });
        }
        let half = n / 2;
        let h = l / half as f64;
        let sigma = crate::geometry::sigma_of(p);
        let c_p = (2.0 * (p + 1.0)).powf(1.0 / (p - 1.0));
        let mut pr = Profile {
            p,
            sigma,
            c_p,
            lambda0: (p - 1.0) * (p + 3.0) / 4.0,
            l,
            x: (0..=2 * half).map(|i| -l + i as f64 * h).collect(),
            h,
            omega: Default::default(),
            solvability: [0.0; 4],
            wp1: 0.0,
            rho: [0.0; 4],
            splines: std::array::from_fn(|_| Spline::new(0.0, 1.0, vec![0.0; 8], false)),
        };
        pr.wp1 = 2.0 * numeric::integrate_tail(|x| pr.w(x).powf(p + 1.0), 0.0, p + 1.0);
        for k in 0..4 {
            pr.solvability[k] = numeric::integrate(|x| pr.rhs(k, x) * pr.w_x(x), -40.0, 40.0, 640);
            if pr.solvability[k].abs() > SOLVABILITY_TOL {
                return Err(ProfileError::Solvability { k, residual: pr.solvability[k] });
            }
            let (table, at_zero) = pr.solve_omega(k, half);
            if k < 2 && at_zero.abs() > SOLVABILITY_TOL {
                return Err(ProfileError::Solvability { k, residual: at_zero });
            }
            pr.splines[k] = Spline::new(-l, h, table.clone(), false);
            pr.omega[k] = table;
        }
        pr.rho = pr.interaction_constants();
        Ok(pr)
    }

    fn mu(&self) -> f64 {
        0.5 * (self.p - 1.0)
    }

    /// `w(x) = C_p (2 cosh(mu x))^(-1/mu)`, `mu = (p-1)/2`.
    pub fn w(&self, x: f64) -> f64 {
        self.w_exp(x.abs()) * (-x.abs()).exp()
    }

    /// `w(x) e^x` for `x >= 0`, bounded.
    fn w_exp(&self, x: f64) -> f64 {
        let mu = self.mu();
        self.c_p * (1.0 + (-2.0 * mu * x).exp()).powf(-1.0 / mu)
    }

    pub fn w_x(&self, x: f64) -> f64 {
        -(self.mu() * x).tanh() * self.w(x)
    }

    pub fn w_xx(&self, x: f64) -> f64 {
        let w = self.w(x);
        w - w.powf(self.p)
    }

    fn z_scale(&self) -> f64 {
        1.0 / self.wp1.sqrt()
    }

    /// `Z = w^((p+1)/2) / sqrt(int w^(p+1))`.
    pub fn z(&self, x: f64) -> f64 {
        self.z_scale() * self.w(x).powf(0.5 * (self.p + 1.0))
    }

    /// `(Z, Z', Z'')`.
    pub fn z3(&self, x: f64) -> (f64, f64, f64) {
        let q = 0.5 * (self.p + 1.0);
        let (w, wx, wxx) = (self.w(x), self.w_x(x), self.w_xx(x));
        let c = self.z_scale();
        (
            c * w.powf(q),
            c * q * w.powf(q - 1.0) * wx,
            c * q * ((q - 1.0) * w.powf(q - 2.0) * wx * wx + w.powf(q - 1.0) * wxx),
        )
    }

    /// Right-hand side of `-omega'' + omega - p w^(p-1) omega = rhs_k`.
    pub fn rhs(&self, k: usize, x: f64) -> f64 {
        let s = self.sigma;
        match k {
            0 => self.w_x(x) + x * self.w(x) / s,
            1 => -x * self.w(x) / (2.0 * s) + x * self.w_xx(x),
            2 => self.w(x),
            3 => self.w_xx(x),
            _ => panic!("omega index {k} out of range"),
        }
    }

    /// Numerov on `[0, L]`, Dirichlet at `L`. Even problems use the reflection
    /// at 0; odd ones solve the `omega'(0) = 0` problem, whose value at 0
    /// vanishes exactly when the problem is solvable, then add a multiple of
    /// `w_x` to make the result orthogonal to the kernel.
    fn solve_omega(&self, k: usize, half: usize) -> (Vec<f64>, f64) {
        let h = self.h;
        let odd = k < 2;
        let n = half;
        let g: Vec<f64> = (0..=n).map(|i| 1.0 - self.p * self.w(i as f64 * h).powf(self.p - 1.0)).collect();
        let s: Vec<f64> = (0..=n).map(|i| -self.rhs(k, i as f64 * h)).collect();
        let a: Vec<f64> = g.iter().map(|gi| 1.0 - h * h * gi / 12.0).collect();
        let b: Vec<f64> = g.iter().map(|gi| -2.0 * (1.0 + 5.0 * h * h * gi / 12.0)).collect();
        let c12 = h * h / 12.0;
        let mut mat = BandMatrix::zeros(n, 1, 1);
        let mut r = vec![0.0; n];
        // row 0 with ghost omega(-h) = omega(h) + delta
        let (s_m1, delta) = if odd {
            let e = 1e-4;
            let d_rhs = (self.rhs(k, e) - self.rhs(k, -e)) / (2.0 * e);
            (-s[1], h * h * h * d_rhs / 3.0)
        } else {
            (s[1], 0.0)
        };
        mat.add(0, 0, b[0]);
        mat.add(0, 1, 2.0 * a[1]);
        r[0] = c12 * (s_m1 + 10.0 * s[0] + s[1]) - a[1] * delta;
        for i in 1..n {
            mat.add(i, i - 1, a[i - 1]);
            mat.add(i, i, b[i]);
            if i + 1 < n {
                mat.add(i, i + 1, a[i + 1]);
            }
            r[i] = c12 * (s[i - 1] + 10.0 * s[i] + s[i + 1]);
        }
        assert!(mat.factor(), "Numerov matrix singular");
        let mut sol = mat.solve(&r);
        sol.push(0.0);
        let at_zero = if odd { sol[0] } else { 0.0 };
        if odd {
            sol[0] = 0.0;
            let wx: Vec<f64> = (0..=n).map(|i| self.w_x(i as f64 * h)).collect();
            let num: Vec<f64> = sol.iter().zip(&wx).map(|(a, b)| a * b).collect();
            let den: Vec<f64> = wx.iter().map(|b| b * b).collect();
            let c = numeric::integral(&num, h) / numeric::integral(&den, h);
            for (o, b) in sol.iter_mut().zip(&wx) {
                *o -= c * b;
            }
        }
        let sign = if odd { -1.0 } else { 1.0 };
        let mut full = Vec::with_capacity(2 * n + 1);
        full.extend(sol.iter().skip(1).rev().map(|v| sign * v));
        full.extend(sol.iter().cloned());
        (full, at_zero)
    }

    /// `omega_k(x)`, zero outside `[-L, L]`.
    pub fn omega_at(&self, k: usize, x: f64) -> f64 {
        if x.abs() >= self.l {
            0.0
        } else {
            self.splines[k].eval(x)
        }
    }

    /// `(omega, omega', omega'')` at `x`.
    pub fn omega3(&self, k: usize, x: f64) -> (f64, f64, f64) {
        if x.abs() >= self.l {
            (0.0, 0.0, 0.0)
        } else {
            self.splines[k].eval3(x)
        }
    }

    fn interaction_constants(&self) -> [f64; 4] {
        let p = self.p;
        let mu = self.mu();
        let rate = p - 1.0;
        let rho1 = 2.0 * numeric::integrate_tail(|x| self.w_x(x).powi(2), 0.0, 2.0);
        // w_x (e^-x - e^x) = tanh(mu x) (w e^x) (1 - e^-2x)
        let rho2 = p
            * self.c_p
            * numeric::integrate_tail(
                |x| self.w(x).powf(p - 1.0) * (mu * x).tanh() * self.w_exp(x) * (1.0 - (-2.0 * x).exp()),
                0.0,
                rate,
            );
        let rho3 = 4.0 * numeric::integrate_tail(|x| self.w_xx(x) * self.z(x), 0.0, 1.0);
        // Z e^x = Z / w * (w e^x)
        let q = 0.5 * (p + 1.0);
        let rho4 = p
            * self.c_p
            * numeric::integrate_tail(
                |x| {
                    let w = self.w(x);
                    -w.powf(p - 1.0) * self.z_scale() * w.powf(q - 1.0) * self.w_exp(x) * (1.0 - (-2.0 * x).exp())
                },
                0.0,
                rate,
            );
        [rho1, rho2, rho3, rho4]
    }

    /// Integral over the grid of `f(x_i)` times a table.
    pub fn grid_integral(&self, f: impl Fn(usize, f64) -> f64) -> f64 {
        let y: Vec<f64> = self.x.iter().enumerate().map(|(i, &x)| f(i, x)).collect();
        numeric::integral(&y, self.h)
    }

    pub fn identities(&self) -> ProfileIdentities {
        let s = self.sigma;
        let rho1 = self.rho[0];
        let w2 = 2.0 * numeric::integrate_tail(|x| self.w(x).powi(2), 0.0, 2.0);
        let xwx = 2.0 * numeric::integrate_tail(|x| x * self.w_x(x) * self.w_xx(x), 0.0, 2.0);
        let om2_wx = -self.grid_integral(|i, x| self.omega[2][i] * self.w_xx(x));
        let om3_w = self.grid_integral(|i, x| self.omega[3][i] * self.w(x));
        let orth: [f64; 4] = std::array::from_fn(|k| self.grid_integral(|i, x| self.omega[k][i] * self.w_x(x)));
        ProfileIdentities {
            w2_vs_wx2: w2 - 2.0 * s * rho1,
            wx2_vs_xwxwxx: rho1 + 2.0 * xwx,
            omega2_wx: 2.0 * om2_wx,
            omega2_wx_expected: -s * rho1,
            omega3_w: om3_w,
            omega3_w_expected: 0.5 * s * rho1,
            orthogonality: orth,
        }
    }

    /// CSV rows `(x, w, w', Z, omega_0..omega_3)`.
    pub fn csv(&self) -> String {
        let mut out = String::from("x,w,w_x,Z,omega0,omega1,omega2,omega3\n");
        for (i, &x) in self.x.iter().enumerate() {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                x,
                self.w(x),
                self.w_x(x),
                self.z(x),
                self.omega[0][i],
                self.omega[1][i],
                self.omega[2][i],
                self.omega[3][i]
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ProfileIdentities {
    /// `int w^2 - 2 sigma int w_x^2`.
    pub w2_vs_wx2: f64,
    /// `int w_x^2 + 2 int x w_x w_xx`.
    pub wx2_vs_xwxwxx: f64,
    /// `2 int omega_2' w_x`.
    pub omega2_wx: f64,
    pub omega2_wx_expected: f64,
    pub omega3_w: f64,
    pub omega3_w_expected: f64,
    /// `int omega_k w_x`.
    pub orthogonality: [f64; 4],
}

/// Per-node coefficients of the first-order correction.
#[derive(Debug, Clone)]
pub struct CorrectionCoefficients {
    pub a10: Vec<f64>,
    pub a11: Vec<f64>,
    pub a12: Vec<f64>,
    pub a13: Vec<f64>,
    /// `h3 - h8/2 + sigma V_t / beta^2`; zero on stationary curves.
    pub relation_residual: Vec<f64>,
    /// `-(D / hh1) r`, the same quantity through the stationarity residual `r`.
    pub relation_predicted: Vec<f64>,
}

pub fn correction_coefficients(ch: &FermiChart) -> Result<CorrectionCoefficients> {
    let t = &ch.t;
    let s = ch.sigma;
    let m = ch.m();
    let r = geodesic::stationarity_residual(ch);
    let d = geodesic::denominator(ch);
    let mut out = CorrectionCoefficients {
        a10: Vec::with_capacity(m + 1),
        a11: Vec::with_capacity(m + 1),
        a12: Vec::with_capacity(m + 1),
        a13: Vec::with_capacity(m + 1),
        relation_residual: Vec::with_capacity(m + 1),
        relation_predicted: Vec::with_capacity(m + 1),
    };
    for i in 0..=m {
        let b = t.beta[i];
        out.a10.push(t.h3[i] / (b * t.h1[i]));
        out.a11.push(t.h8[i] / (b * t.h1[i]));
        out.a12.push(-t.v_t[i] / (b * b * t.h1[i]));
        out.a13.push(t.h8[i] / t.h1[i]);
        out.relation_residual.push(t.h3[i] - 0.5 * t.h8[i] + s * t.v_t[i] / (b * b));
        out.relation_predicted.push(-d[i] / t.hh1[i] * r[i]);
    }
    if numeric::max_abs(&r) < 1e-6 {
        let worst = numeric::max_abs(&out.relation_residual);
        if worst > 1e-6 {
            return Err(ProfileError::RelationViolated(worst));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(Profile::new(1.0, 20.0, 4000), Err(ProfileError::InvalidExponent(_))));
        assert!(matches!(Profile::new(3.0, 10.0, 4000), Err(ProfileError::InvalidGrid { .. })));
        assert!(matches!(Profile::new(3.0, 20.0, 100), Err(ProfileError::InvalidGrid { .. })));
    }

    #[test]
    fn quadratic_nonlinearity() {
        let pr = Profile::new(2.0, 20.0, 4000).unwrap();
        assert!((pr.w(0.0) - 1.5).abs() < 1e-14);
        assert!((pr.lambda0 - 1.25).abs() < 1e-15);
        assert!((pr.sigma - 2.5).abs() < 1e-15);
    }
}
