//! The reduced Jacobi-Toda system for the layer positions `f_1 < ... < f_N`,
//! the resonant linear problems behind its constructive solution, the
//! equation for the amplitude corrections `e`, and the gap bookkeeping.

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::geodesic::VariationReport;
use crate::geometry::FermiChart;
use crate::numeric::{self, BandMatrix, Spline};
use crate::profiles::Profile;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TodaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("rho equation did not converge (eps = {eps}, c = {c})")]
    RhoNoConvergence { eps: f64, c: f64 },
    #[error("tau2 must be positive (min {0})")]
    TauNotPositive(f64),
    #[error("boundary admissibility violated: K1 = {k1:e}, K2 = {k2:e}")]
    NotAdmissible { k1: f64, k2: f64 },
    #[error("linear system singular")]
    Singular,
    #[error("near-resonant system: sigma_min {sigma_min:e} below {threshold:e}")]
    NearResonant { sigma_min: f64, threshold: f64 },
    #[error("Newton failed after {iterations} iterations (scaled residual {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },
    #[error("line search could not keep the layers ordered (iteration {0})")]
    OrderingViolated(usize),
    #[error("fixed point did not contract (factor {contraction:.3} after {iterations} iterations)")]
    FixedPointFailed { contraction: f64, iterations: usize },
}

pub type Result<T> = std::result::Result<T, TodaError>;

// ---------------------------------------------------------------- rho_eps

/// Root of `e^-rho = eps^2 c rho` near `2|ln eps|`.
pub fn rho_scalar(eps: f64, c: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 0.2) || !(c > 0.0) || !c.is_finite() {
        return Err(TodaError::InvalidInput(format!(
            "rho equation needs 0 < eps <= 0.2, c > 0 (eps = {eps}, c = {c})"
        )));
    }
    // log form: g(rho) = rho + ln(eps^2 c rho), increasing for rho > 0
    let l = (eps * eps * c).ln();
    let mut rho = 2.0 * eps.ln().abs();
    for _ in 0..100 {
        let g = rho + l + rho.ln();
        let step = g / (1.0 + 1.0 / rho);
        let mut next = rho - step;
        if next <= 0.0 {
            next = 0.5 * rho;
        }
        rho = next;
        if step.abs() <= 1e-15 * rho {
            let res = (-rho).exp() - eps * eps * c * rho;
            if res.abs() <= 1e-12 {
                return Ok(rho);
            }
        }
    }
    let res = (-rho).exp() - eps * eps * c * rho;
    if res.abs() <= 1e-12 {
        Ok(rho)
    } else {
        Err(TodaError::RhoNoConvergence { eps, c })
    }
}

pub fn rho_epsilon(eps: f64, c: &[f64]) -> Result<Vec<f64>> {
    c.iter().map(|&ci| rho_scalar(eps, ci)).collect()
}

/// `2|ln eps| - ln(2|ln eps|) - ln c`.
pub fn rho_asymptotic(eps: f64, c: f64) -> f64 {
    let le = eps.ln().abs();
    2.0 * le - (2.0 * le).ln() - c.ln()
}

/// `kappa = 1/(2|ln eps| - ln(2|ln eps|))`.
pub fn kappa(eps: f64) -> f64 {
    let le = eps.ln().abs();
    1.0 / (2.0 * le - (2.0 * le).ln())
}

// ---------------------------------------------------------------- offsets

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOffsets {
    /// `f..` with zero sum.
    pub f: Vec<f64>,
    /// `a_0..a_N`, `a_0 = a_N = 0`.
    pub a: Vec<f64>,
}

/// Solution of `-e^-(f_n - f_{n-1}) + e^-(f_{n+1} - f_n) = -(n - (N+1)/2)`.
pub fn cluster_offsets(n: usize) -> ClusterOffsets {
    assert!(n >= 1, "need at least one layer");
    let mid = 0.5 * (n as f64 + 1.0);
    let mut a = vec![0.0; n + 1];
    for k in 1..n {
        a[k] = a[k - 1] - (k as f64 - mid);
        assert!(a[k] > 0.0, "offset recursion produced a[{k}] = {}", a[k]);
    }
    let mut f = vec![0.0; n];
    for k in 1..n {
        f[k] = f[k - 1] - a[k].ln();
    }
    let mean = f.iter().sum::<f64>() / n as f64;
    f.iter_mut().for_each(|x| *x -= mean);
    ClusterOffsets { f, a }
}

#[derive(Debug, Clone)]
pub struct TodaMatrix {
    pub a: DMatrix<f64>,
    /// Descending; the last one is the zero mode.
    pub eigenvalues: Vec<f64>,
    /// Orthogonal, columns ordered as `eigenvalues`, last column `1/sqrt(N)`.
    pub p: DMatrix<f64>,
}

/// The tridiagonal coupling matrix with off-diagonals `-a_n` and its spectral
/// decomposition. `a` holds `a_1..a_{N-1}`.
pub fn toda_matrix(a: &[f64]) -> TodaMatrix {
    let n = a.len() + 1;
    let mut m = DMatrix::zeros(n, n);
    for (k, &ak) in a.iter().enumerate() {
        m[(k, k)] += ak;
        m[(k + 1, k + 1)] += ak;
        m[(k, k + 1)] -= ak;
        m[(k + 1, k)] -= ak;
    }
    let eig: SymmetricEigen<f64, nalgebra::Dyn> = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut p = DMatrix::zeros(n, n);
    let mut vals = Vec::with_capacity(n);
    for (col, &k) in order.iter().enumerate() {
        vals.push(eig.eigenvalues[k]);
        p.set_column(col, &eig.eigenvectors.column(k));
    }
    // the kernel is spanned by the constant vector; pin it exactly
    let c = 1.0 / (n as f64).sqrt();
    for r in 0..n {
        p[(r, n - 1)] = c;
    }
    for col in 0..n - 1 {
        // fix a sign convention so results are reproducible
        let pivot = (0..n).map(|r| p[(r, col)]).fold(0.0, |s: f64, v| if v.abs() > s.abs() { v } else { s });
        if pivot < 0.0 {
            for r in 0..n {
                p[(r, col)] = -p[(r, col)];
            }
        }
    }
    TodaMatrix { a: m, eigenvalues: vals, p }
}

// ---------------------------------------------------------------- linear BVPs

/// `a v' + b v = g` at an end, or periodic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EndCondition {
    Robin { a: f64, b: f64, g: f64 },
    Periodic,
}

impl EndCondition {
    pub const NEUMANN: EndCondition = EndCondition::Robin { a: 1.0, b: 0.0, g: 0.0 };
}

/// Tridiagonal grid operator (rows `lo, di, up`) plus a constant from the end data.
#[derive(Debug, Clone)]
pub struct Tridiag {
    pub lo: Vec<f64>,
    pub di: Vec<f64>,
    pub up: Vec<f64>,
    /// Contribution of inhomogeneous end data to each row.
    pub constant: Vec<f64>,
    pub periodic: bool,
}

impl Tridiag {
    /// Second-order centred discretisation of `p2 v'' + p1 v' + p0 v` with
    /// ghost points eliminated through the end conditions.
    pub fn second_order(h: f64, p2: &[f64], p1: &[f64], p0: &[f64], left: EndCondition, right: EndCondition) -> Self {
        let n = p2.len();
        let mut t = Tridiag {
            lo: vec![0.0; n],
            di: vec![0.0; n],
            up: vec![0.0; n],
            constant: vec![0.0; n],
            periodic: matches!(left, EndCondition::Periodic),
        };
        let h2 = h * h;
        for i in 0..n {
            t.lo[i] = p2[i] / h2 - p1[i] / (2.0 * h);
            t.di[i] = -2.0 * p2[i] / h2 + p0[i];
            t.up[i] = p2[i] / h2 + p1[i] / (2.0 * h);
        }
        if t.periodic {
            return t;
        }
        if let EndCondition::Robin { a, b, g } = left {
            if a == 0.0 {
                t.lo[0] = 0.0;
                t.up[0] = 0.0;
                t.di[0] = b;
                t.constant[0] = -g;
            } else {
                // v_{-1} = v_1 - 2h (g - b v_0)/a
                let gl = t.lo[0];
                t.up[0] += gl;
                t.di[0] += gl * 2.0 * h * b / a;
                t.constant[0] = -gl * 2.0 * h * g / a;
                t.lo[0] = 0.0;
            }
        }
        if let EndCondition::Robin { a, b, g } = right {
            let m = n - 1;
            if a == 0.0 {
                t.lo[m] = 0.0;
                t.up[m] = 0.0;
                t.di[m] = b;
                t.constant[m] = -g;
            } else {
                // v_{M+1} = v_{M-1} + 2h (g - b v_M)/a
                let gu = t.up[m];
                t.lo[m] += gu;
                t.di[m] -= gu * 2.0 * h * b / a;
                t.constant[m] = gu * 2.0 * h * g / a;
                t.up[m] = 0.0;
            }
        }
        t
    }

    pub fn len(&self) -> usize {
        self.di.len()
    }

    pub fn is_empty(&self) -> bool {
        self.di.is_empty()
    }

    /// Homogeneous part applied to `v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut s = self.di[i] * v[i];
                if i > 0 {
                    s += self.lo[i] * v[i - 1];
                } else if self.periodic {
                    s += self.lo[i] * v[n - 1];
                }
                if i + 1 < n {
                    s += self.up[i] * v[i + 1];
                } else if self.periodic {
                    s += self.up[i] * v[0];
                }
                s
            })
            .collect()
    }

    /// Row scaling `v -> s_i (T (v / s))_i`.
    pub fn conjugate(&self, s: &[f64]) -> Self {
        let n = self.len();
        let mut t = self.clone();
        for i in 0..n {
            let prev = if i > 0 { i - 1 } else { n - 1 };
            let next = if i + 1 < n { i + 1 } else { 0 };
            t.lo[i] *= s[i] / s[prev];
            t.up[i] *= s[i] / s[next];
            t.constant[i] *= s[i];
        }
        t
    }

    /// `c T + diag(d)`.
    pub fn scaled_plus_diag(&self, c: f64, d: &[f64]) -> Self {
        let mut t = self.clone();
        for i in 0..self.len() {
            t.lo[i] *= c;
            t.up[i] *= c;
            t.di[i] = c * t.di[i] + d[i];
            t.constant[i] *= c;
        }
        t
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] += self.di[i];
            if i > 0 {
                m[(i, i - 1)] += self.lo[i];
            } else if self.periodic {
                m[(i, n - 1)] += self.lo[i];
            }
            if i + 1 < n {
                m[(i, i + 1)] += self.up[i];
            } else if self.periodic {
                m[(i, 0)] += self.up[i];
            }
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let n = self.len();
        let mut t = self.clone();
        for i in 0..n {
            let prev = if i > 0 { i - 1 } else { n - 1 };
            let next = if i + 1 < n { i + 1 } else { 0 };
            t.lo[i] = self.up[prev];
            t.up[i] = self.lo[next];
        }
        if !self.periodic {
            t.lo[0] = 0.0;
            t.up[n - 1] = 0.0;
        }
        t
    }

    /// Smallest singular value by inverse iteration on `T^T T`.
    pub fn sigma_min(&self) -> f64 {
        let (Ok(f), Ok(ft)) = (self.factor(), self.transpose().factor()) else {
            return 0.0;
        };
        let n = self.len();
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.37 * ((i * 7919) % 101) as f64 / 101.0).collect();
        let mut mu = 0.0;
        for _ in 0..500 {
            let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            x.iter_mut().for_each(|v| *v /= nx);
            let y = f.solve(&ft.solve(&x));
            let next = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
            x = y;
            if !next.is_finite() {
                return 0.0;
            }
            if (next - mu).abs() <= 1e-12 * next.abs() {
                mu = next;
                break;
            }
            mu = next;
        }
        1.0 / mu.sqrt()
    }

    pub fn factor(&self) -> Result<Factored> {
        if self.periodic {
            let lu = self.dense().lu();
            if lu.determinant() == 0.0 {
                return Err(TodaError::Singular);
            }
            return Ok(Factored::Dense(lu));
        }
        let n = self.len();
        let mut b = BandMatrix::zeros(n, 1, 1);
        for i in 0..n {
            b.add(i, i, self.di[i]);
            if i > 0 {
                b.add(i, i - 1, self.lo[i]);
            }
            if i + 1 < n {
                b.add(i, i + 1, self.up[i]);
            }
        }
        if !b.factor() {
            return Err(TodaError::Singular);
        }
        Ok(Factored::Band(b))
    }

    /// Solve `T v + constant = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let f = self.factor()?;
        let r: Vec<f64> = rhs.iter().zip(&self.constant).map(|(a, b)| a - b).collect();
        Ok(f.solve(&r))
    }
}

pub enum Factored {
    Band(BandMatrix),
    Dense(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl Factored {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        match self {
            Factored::Band(b) => b.solve(rhs),
            Factored::Dense(lu) => {
                let v = lu.solve(&nalgebra::DVector::from_column_slice(rhs)).expect("factored matrix");
                v.iter().cloned().collect()
            }
        }
    }
}

fn l2(v: &[f64], h: f64) -> f64 {
    let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
    numeric::integral(&sq, h).max(0.0).sqrt()
}

/// End conditions for the Jacobi operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JacobiEnds {
    Neumann,
    /// `b1 v'(0) - b2 v(0) = 0`, `b6 v'(1) - b7 v(1) = 0`.
    Robin {
        b1: f64,
        b2: f64,
        b6: f64,
        b7: f64,
    },
    Periodic,
}

impl JacobiEnds {
    fn conditions(self) -> (EndCondition, EndCondition) {
        match self {
            JacobiEnds::Neumann => (EndCondition::NEUMANN, EndCondition::NEUMANN),
            JacobiEnds::Robin { b1, b2, b6, b7 } => {
                (EndCondition::Robin { a: b1, b: -b2, g: 0.0 }, EndCondition::Robin { a: b6, b: -b7, g: 0.0 })
            }
            JacobiEnds::Periodic => (EndCondition::Periodic, EndCondition::Periodic),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub v: Vec<f64>,
    /// `||v|| / ||rhs||` in `L^2`.
    pub bound: f64,
}

/// `H1 v'' + tau1 v' + tau2 v = rhs` on a uniform grid over `[0, 1]`.
pub fn solve_linear_jacobi(
    hc1: &[f64],
    tau1: &[f64],
    tau2: &[f64],
    rhs: &[f64],
    ends: JacobiEnds,
) -> Result<LinearSolution> {
    let n = hc1.len();
    if n < 8 || tau1.len() != n || tau2.len() != n || rhs.len() != n {
        return Err(TodaError::InvalidInput("tables must share a grid of at least 8 nodes".into()));
    }
    let periodic = matches!(ends, JacobiEnds::Periodic);
    let h = 1.0 / (n - 1) as f64;
    let (l, r) = ends.conditions();
    let (rows, rr) = if periodic {
        // last node repeats the first
        let m = n - 1;
        (Tridiag::second_order(h, &hc1[..m], &tau1[..m], &tau2[..m], l, r), rhs[..m].to_vec())
    } else {
        (Tridiag::second_order(h, hc1, tau1, tau2, l, r), rhs.to_vec())
    };
    let mut v = rows.solve(&rr)?;
    if periodic {
        v.push(v[0]);
    }
    let nr = l2(rhs, h);
    Ok(LinearSolution { bound: if nr > 0.0 { l2(&v, h) / nr } else { 0.0 }, v })
}

#[derive(Debug, Clone)]
pub struct ResonantSolution {
    pub v: Vec<f64>,
    pub sigma_min: f64,
    /// `C` in `||v|| <= C sqrt(|ln eps|) ||p||`.
    pub bound: f64,
}

/// `kappa [H1 v'' + tau1 v' + tau2 v] + lambda Pi v = rhs` with Neumann ends.
/// Refuses when the discrete smallest singular value is below `eps^pow`.
#[allow(clippy::too_many_arguments)]
pub fn solve_resonant_linear(
    eps: f64,
    kappa: f64,
    lambda: f64,
    hc1: &[f64],
    tau1: &[f64],
    tau2: &[f64],
    pi: &[f64],
    rhs: &[f64],
    pow: f64,
) -> Result<ResonantSolution> {
    let n = hc1.len();
    let h = 1.0 / (n - 1) as f64;
    let base = Tridiag::second_order(h, hc1, tau1, tau2, EndCondition::NEUMANN, EndCondition::NEUMANN);
    let d: Vec<f64> = pi.iter().map(|p| lambda * p).collect();
    let op = base.scaled_plus_diag(kappa, &d);
    let sigma_min = op.sigma_min();
    let threshold = eps.powf(pow);
    if sigma_min < threshold {
        return Err(TodaError::NearResonant { sigma_min, threshold });
    }
    let v = op.solve(rhs)?;
    let nr = l2(rhs, h);
    Ok(ResonantSolution { bound: if nr > 0.0 { l2(&v, h) / (nr * eps.ln().abs().sqrt()) } else { 0.0 }, sigma_min, v })
}

#[derive(Debug, Clone)]
pub struct Corrector {
    pub u: Vec<f64>,
    pub du: Vec<f64>,
}

/// Sine-profile corrector with prescribed end slopes `g1`, `g2` (zero for `lambda = 0`).
pub fn boundary_correctors(kappa: f64, lambda: f64, pi: &[f64], g1: f64, g2: f64) -> Corrector {
    let n = pi.len();
    if lambda <= 0.0 || (g1 == 0.0 && g2 == 0.0) {
        return Corrector { u: vec![0.0; n], du: vec![0.0; n] };
    }
    let h = 1.0 / (n - 1) as f64;
    let ell = (kappa / lambda).sqrt();
    let sq: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
    let vt = numeric::cumulative(&sq, h, false);
    let l0 = vt[n - 1];
    let (s0, s1) = (sq[0], sq[n - 1]);
    let mut u = vec![0.0; n];
    let mut du = vec![0.0; n];
    for i in 0..n {
        let th = i as f64 * h;
        let chi = numeric::smooth_cutoff(th, 0.125, 0.25);
        let dchi = numeric::smooth_cutoff_d(th, 0.125, 0.25);
        let (a, b) = (vt[i] / ell, (l0 - vt[i]) / ell);
        u[i] = chi * g1 * ell / s0 * a.sin() - (1.0 - chi) * g2 * ell / s1 * b.sin();
        du[i] = chi * g1 * sq[i] / s0 * a.cos()
            + (1.0 - chi) * g2 * sq[i] / s1 * b.cos()
            + dchi * g1 * ell / s0 * a.sin()
            + dchi * g2 * ell / s1 * b.sin();
    }
    Corrector { u, du }
}

// ---------------------------------------------------------------- gap condition

/// First `j >= 1` with `|lambda* - j^2 eps^2| < c eps`, if any.
pub fn gap_violation(eps: f64, lambda_star: f64, c_tilde: f64) -> Option<usize> {
    let jmax = (lambda_star.sqrt() / eps).ceil() as usize + 1;
    (1..=jmax).find(|&j| (lambda_star - (j * j) as f64 * eps * eps).abs() < c_tilde * eps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapScan {
    pub admissible: Vec<f64>,
    /// `(eps, j)` for each rejected candidate.
    pub rejected: Vec<(f64, usize)>,
}

/// Log-spaced scan of `[eps_min, eps_max]` against the gap condition.
pub fn gap_sequence(eps_min: f64, eps_max: f64, lambda_star: f64, c_tilde: f64, points: usize) -> Result<GapScan> {
    if !(eps_min > 0.0 && eps_min < eps_max) || points < 2 || !(lambda_star > 0.0) || c_tilde < 0.0 {
        return Err(TodaError::InvalidInput("gap scan needs 0 < eps_min < eps_max, lambda* > 0, c >= 0".into()));
    }
    let (a, b) = (eps_min.ln(), eps_max.ln());
    let mut scan = GapScan { admissible: Vec::new(), rejected: Vec::new() };
    for k in 0..points {
        let eps = (a + (b - a) * k as f64 / (points - 1) as f64).exp();
        match gap_violation(eps, lambda_star, c_tilde) {
            None => scan.admissible.push(eps),
            Some(j) => scan.rejected.push((eps, j)),
        }
    }
    Ok(scan)
}

/// `lambda* = lambda0 ell^2 / pi^2`.
pub fn lambda_star(lambda0: f64, ell: f64) -> f64 {
    lambda0 * ell * ell / (std::f64::consts::PI * std::f64::consts::PI)
}

// ---------------------------------------------------------------- e equation

#[derive(Debug, Clone)]
pub struct EquationE {
    pub e: Vec<f64>,
    /// `||e||_inf + eps ||e'|| + eps^2 ||e''||`.
    pub norm: f64,
    /// `C` in `norm <= C eps^-1 ||g||`.
    pub bound: f64,
    pub sigma_min: f64,
}

/// Tables for `-eps^2 h2 e'' - eps^2 alpha~ e' - beta^2 h1 lambda0 e = g`.
pub struct ECoefficients<'a> {
    pub h1: &'a [f64],
    pub h2: &'a [f64],
    pub beta: &'a [f64],
    pub alpha_tilde: &'a [f64],
    pub lambda0: f64,
    /// `alpha'(0)/alpha(0)` and `alpha'(1)/alpha(1)`.
    pub b5: f64,
    pub b6: f64,
}

pub fn solve_e_equation(eps: f64, co: &ECoefficients, g: &[f64], pow: f64) -> Result<EquationE> {
    let n = co.h1.len();
    let h = 1.0 / (n - 1) as f64;
    let p2: Vec<f64> = co.h2.iter().map(|x| -eps * eps * x).collect();
    let p1: Vec<f64> = co.alpha_tilde.iter().map(|x| -eps * eps * x).collect();
    let p0: Vec<f64> = (0..n).map(|i| -co.beta[i].powi(2) * co.h1[i] * co.lambda0).collect();
    let op = Tridiag::second_order(
        h,
        &p2,
        &p1,
        &p0,
        EndCondition::Robin { a: 1.0, b: co.b5, g: 0.0 },
        EndCondition::Robin { a: 1.0, b: co.b6, g: 0.0 },
    );
    let sigma_min = op.sigma_min();
    let threshold = eps.powf(pow);
    if sigma_min < threshold {
        return Err(TodaError::NearResonant { sigma_min, threshold });
    }
    let e = op.solve(g)?;
    let d1 = numeric::diff1(&e, h, false);
    let d2 = numeric::diff2(&e, h, false);
    let norm = numeric::max_abs(&e) + eps * l2(&d1, h) + eps * eps * l2(&d2, h);
    let ng = l2(g, h);
    Ok(EquationE { bound: if ng > 0.0 { norm * eps / ng } else { 0.0 }, norm, sigma_min, e })
}

// ---------------------------------------------------------------- Toda problem

#[derive(Debug, Clone)]
pub struct TodaProblem {
    pub n: usize,
    pub eps: f64,
    /// Collocation grid on `[0, 1]`.
    pub theta: Vec<f64>,
    pub varsigma: Vec<f64>,
    pub beta: Vec<f64>,
    pub hc1: Vec<f64>,
    pub hc1_d: Vec<f64>,
    /// `H2' - H3` (plus `alpha_2` when supplied).
    pub c: Vec<f64>,
    pub tau1: Vec<f64>,
    pub tau2: Vec<f64>,
    pub b1: f64,
    pub b2: f64,
    pub b6: f64,
    pub b7: f64,
    pub k1: f64,
    pub k2: f64,
    /// Right-hand side of each equation, `forcing[j][i]`.
    pub forcing: Option<Vec<Vec<f64>>>,
}

fn resample(s: &Spline, m: usize) -> Vec<f64> {
    (0..=m).map(|i| s.eval(i as f64 / m as f64)).collect()
}

impl TodaProblem {
    /// Coefficients from a chart and its second-variation report, on `m + 1` nodes.
    pub fn from_chart(
        ch: &FermiChart,
        rep: &VariationReport,
        profile: &Profile,
        eps: f64,
        n: usize,
        m: usize,
    ) -> Result<Self> {
        if ch.closed() {
            return Err(TodaError::InvalidInput("the Jacobi-Toda system is posed on an open curve".into()));
        }
        if n == 0 || m < 16 {
            return Err(TodaError::InvalidInput(format!("need N >= 1 and at least 16 intervals (N = {n}, M = {m})")));
        }
        let t = &ch.t;
        let rho1 = profile.rho[0];
        let rho2 = profile.rho[1];
        let varsigma: Vec<f64> = (0..=ch.m()).map(|i| rho1 / (t.beta[i] * rho2 * t.h1[i])).collect();
        let c: Vec<f64> = (0..=ch.m()).map(|i| rep.hc2_d[i] - rep.hc3[i]).collect();
        let sp = |v: &[f64]| resample(&ch.spline(v), m);
        Ok(TodaProblem {
            n,
            eps,
            theta: (0..=m).map(|i| i as f64 / m as f64).collect(),
            varsigma: sp(&varsigma),
            beta: sp(&t.beta),
            hc1: sp(&rep.hc1),
            hc1_d: sp(&rep.hc1_d),
            c: sp(&c),
            tau1: sp(&rep.tau1),
            tau2: sp(&rep.tau2),
            b1: ch.b.b1,
            b2: ch.b.b2,
            b6: ch.b.b6,
            b7: ch.b.b7,
            k1: rep.k1,
            k2: rep.k2,
            forcing: None,
        })
    }

    /// Constant coefficients with Neumann ends.
    pub fn constant(n: usize, eps: f64, varsigma: f64, beta: f64, hc1: f64, tau2: f64, m: usize) -> Self {
        let k = |v: f64| vec![v; m + 1];
        TodaProblem {
            n,
            eps,
            theta: (0..=m).map(|i| i as f64 / m as f64).collect(),
            varsigma: k(varsigma),
            beta: k(beta),
            hc1: k(hc1),
            hc1_d: k(0.0),
            c: k(tau2),
            tau1: k(0.0),
            tau2: k(tau2),
            b1: 1.0,
            b2: 0.0,
            b6: 1.0,
            b7: 0.0,
            k1: 0.0,
            k2: 0.0,
            forcing: None,
        }
    }

    /// Add `alpha_2` to the potential term of the Jacobi operator.
    pub fn with_alpha2(mut self, alpha2: &[f64]) -> Self {
        for (c, a) in self.c.iter_mut().zip(alpha2) {
            *c += a;
        }
        self
    }

    pub fn m(&self) -> usize {
        self.theta.len() - 1
    }

    pub fn h(&self) -> f64 {
        1.0 / self.m() as f64
    }

    /// `c = varsigma tau2 / beta`.
    pub fn rho_coefficient(&self) -> Vec<f64> {
        (0..=self.m()).map(|i| self.varsigma[i] * self.tau2[i] / self.beta[i]).collect()
    }

    pub fn rho(&self) -> Result<Vec<f64>> {
        rho_epsilon(self.eps, &self.rho_coefficient())
    }

    /// Grid form of `H1 f'' + H1' f' + (H2' - H3) f` with the Robin ends.
    pub fn jacobi_rows(&self) -> Tridiag {
        Tridiag::second_order(
            self.h(),
            &self.hc1,
            &self.hc1_d,
            &self.c,
            EndCondition::Robin { a: self.b1, b: -self.b2, g: 0.0 },
            EndCondition::Robin { a: self.b6, b: -self.b7, g: 0.0 },
        )
    }

    fn forcing_at(&self, j: usize, i: usize) -> f64 {
        self.forcing.as_ref().map_or(0.0, |f| f[j][i])
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps <= 0.2) {
            return Err(TodaError::InvalidInput(format!("eps = {} outside (0, 0.2]", self.eps)));
        }
        if let Some(f) = &self.forcing {
            if f.len() != self.n || f.iter().any(|r| r.len() != self.theta.len()) {
                return Err(TodaError::InvalidInput("forcing must be N tables on the grid".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Direct,
    Constructive,
}

#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub method: Method,
    pub iterations: usize,
    /// Largest observed ratio of successive fixed-point increments.
    pub contraction: Option<f64>,
    /// `L^2` norms of the corrector, linear and nonlinear parts per mode.
    pub component_norms: Option<[Vec<f64>; 3]>,
    /// Smallest singular value of each mode operator `kappa L + lambda Pi`.
    pub mode_sigma_min: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct TodaSolution {
    pub eps: f64,
    pub theta: Vec<f64>,
    /// `f[j][i]`, layer `j` at node `i`.
    pub f: Vec<Vec<f64>>,
    /// Max norm of the discrete residual.
    pub residual: f64,
    /// `residual / eps^2`.
    pub residual_scaled: f64,
    /// Max of `|b1 f'(0) - b2 f(0)|`, `|b6 f'(1) - b7 f(1)|` by one-sided differences.
    pub boundary_residual: f64,
    pub min_gap: f64,
    pub max_gap: f64,
    /// Minimum of `beta (f_{j+1} - f_j)`.
    pub min_scaled_gap: f64,
    pub center_of_mass: Vec<f64>,
    pub rho: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Discrete residual `R[i*N + j]` of the Jacobi-Toda equations.
pub fn toda_residual(pb: &TodaProblem, f: &[Vec<f64>]) -> Vec<f64> {
    let n = pb.n;
    let m = pb.m();
    let rows = pb.jacobi_rows();
    let e2 = pb.eps * pb.eps;
    let mut out = vec![0.0; (m + 1) * n];
    for j in 0..n {
        let lf = rows.apply(&f[j]);
        for i in 0..=m {
            let b = pb.beta[i];
            let left = if j > 0 { (-b * (f[j][i] - f[j - 1][i])).exp() } else { 0.0 };
            let right = if j + 1 < n { (-b * (f[j + 1][i] - f[j][i])).exp() } else { 0.0 };
            out[i * n + j] = e2 * pb.varsigma[i] * lf[i] - left + right - pb.forcing_at(j, i);
        }
    }
    out
}

fn finish(pb: &TodaProblem, f: Vec<Vec<f64>>, rho: Vec<f64>, diagnostics: Diagnostics) -> TodaSolution {
    let n = pb.n;
    let m = pb.m();
    let h = pb.h();
    let res = numeric::max_abs(&toda_residual(pb, &f));
    let mut min_gap = f64::INFINITY;
    let mut max_gap = f64::NEG_INFINITY;
    let mut min_scaled = f64::INFINITY;
    for j in 0..n.saturating_sub(1) {
        for i in 0..=m {
            let g = f[j + 1][i] - f[j][i];
            min_gap = min_gap.min(g);
            max_gap = max_gap.max(g);
            min_scaled = min_scaled.min(pb.beta[i] * g);
        }
    }
    let mut bres: f64 = 0.0;
    for fj in &f {
        let d = numeric::diff1(fj, h, false);
        bres = bres.max((pb.b1 * d[0] - pb.b2 * fj[0]).abs());
        bres = bres.max((pb.b6 * d[m] - pb.b7 * fj[m]).abs());
    }
    TodaSolution {
        eps: pb.eps,
        theta: pb.theta.clone(),
        center_of_mass: (0..=m).map(|i| f.iter().map(|fj| fj[i]).sum()).collect(),
        residual: res,
        residual_scaled: res / (pb.eps * pb.eps),
        boundary_residual: bres,
        min_gap: if n > 1 { min_gap } else { f64::NAN },
        max_gap: if n > 1 { max_gap } else { f64::NAN },
        min_scaled_gap: if n > 1 { min_scaled } else { f64::NAN },
        rho,
        f,
        diagnostics,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DirectOptions {
    pub max_iterations: usize,
    /// Stop when `max |R| <= tol * eps^2`.
    pub tol: f64,
}

impl Default for DirectOptions {
    fn default() -> Self {
        DirectOptions { max_iterations: 60, tol: 1e-10 }
    }
}

/// Damped Newton on the collocation equations, unknowns ordered node-major.
pub fn solve_toda_direct(pb: &TodaProblem, guess: Option<&[Vec<f64>]>, opts: DirectOptions) -> Result<TodaSolution> {
    pb.validate()?;
    let n = pb.n;
    let m = pb.m();
    let rho = pb.rho()?;
    let mid = 0.5 * (n as f64 + 1.0);
    let mut f: Vec<Vec<f64>> = match guess {
        Some(g) => g.to_vec(),
        None => (0..n).map(|j| (0..=m).map(|i| (j as f64 + 1.0 - mid) * rho[i] / pb.beta[i]).collect()).collect(),
    };
    let e2 = pb.eps * pb.eps;
    let min_gap = pb.eps.ln().abs();
    let ordered = |f: &[Vec<f64>]| {
        (0..n.saturating_sub(1)).all(|j| (0..=m).all(|i| pb.beta[i] * (f[j + 1][i] - f[j][i]) >= min_gap))
    };
    let scaled_norm = |r: &[f64]| numeric::max_abs(r) / e2;
    let rows = pb.jacobi_rows();
    let mut r = toda_residual(pb, &f);
    let mut norm = scaled_norm(&r);
    let mut it = 0;
    while norm > opts.tol {
        if it >= opts.max_iterations {
            return Err(TodaError::NewtonDiverged { iterations: it, residual: norm });
        }
        it += 1;
        let dim = (m + 1) * n;
        let mut jac = BandMatrix::zeros(dim, n, n);
        for i in 0..=m {
            let b = pb.beta[i];
            let s = e2 * pb.varsigma[i];
            for j in 0..n {
                let row = i * n + j;
                jac.add(row, row, s * rows.di[i]);
                if i > 0 {
                    jac.add(row, row - n, s * rows.lo[i]);
                }
                if i < m {
                    jac.add(row, row + n, s * rows.up[i]);
                }
                if j > 0 {
                    let el = (-b * (f[j][i] - f[j - 1][i])).exp();
                    jac.add(row, row, b * el);
                    jac.add(row, row - 1, -b * el);
                }
                if j + 1 < n {
                    let er = (-b * (f[j + 1][i] - f[j][i])).exp();
                    jac.add(row, row, b * er);
                    jac.add(row, row + 1, -b * er);
                }
            }
        }
        if !jac.factor() {
            return Err(TodaError::Singular);
        }
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        let step = jac.solve(&neg);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<Vec<f64>> =
                (0..n).map(|j| (0..=m).map(|i| f[j][i] + alpha * step[i * n + j]).collect()).collect();
            if ordered(&trial) {
                let rt = toda_residual(pb, &trial);
                let nt = scaled_norm(&rt);
                if nt < norm || nt <= opts.tol {
                    f = trial;
                    r = rt;
                    norm = nt;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(TodaError::OrderingViolated(it));
        }
    }
    Ok(finish(
        pb,
        f,
        rho,
        Diagnostics {
            method: Method::Direct,
            iterations: it,
            contraction: None,
            component_norms: None,
            mode_sigma_min: None,
        },
    ))
}

#[derive(Debug, Clone, Copy)]
pub struct ConstructiveOptions {
    pub max_iterations: usize,
    /// Stop when the fixed-point increment is below this (max norm).
    pub tol: f64,
    pub admissibility_tol: f64,
    /// Refuse mode operators whose smallest singular value is below `eps^pow`.
    pub resonance_pow: f64,
}

impl Default for ConstructiveOptions {
    fn default() -> Self {
        ConstructiveOptions { max_iterations: 200, tol: 1e-10, admissibility_tol: 1e-6, resonance_pow: 3.0 }
    }
}

fn mode_operator(lt: &Tridiag, kap: f64, lam: f64, pi: &[f64]) -> Tridiag {
    let d: Vec<f64> = pi.iter().map(|p| lam * p).collect();
    lt.scaled_plus_diag(kap, &d)
}

/// Smallest singular values of the constructive solver's mode operators.
pub fn mode_conditioning(pb: &TodaProblem) -> Result<Vec<f64>> {
    let rho = pb.rho()?;
    let kap = kappa(pb.eps);
    let pi: Vec<f64> = (0..=pb.m()).map(|i| kap * pb.tau2[i] * rho[i]).collect();
    let offsets = cluster_offsets(pb.n);
    let tm = toda_matrix(&offsets.a[1..pb.n]);
    let lt = pb.jacobi_rows().conjugate(&pb.beta);
    Ok((0..pb.n)
        .map(|k| {
            let lam = if k + 1 == pb.n { 0.0 } else { tm.eigenvalues[k] };
            mode_operator(&lt, kap, lam, &pi).sigma_min()
        })
        .collect())
}

/// Layered construction: `beta f = rho (n - (N+1)/2) + f.. + P (u^ + w~ + u)`,
/// where the last part is found by fixed-point iteration on the modes.
pub fn solve_toda_constructive(pb: &TodaProblem, opts: ConstructiveOptions) -> Result<TodaSolution> {
    pb.validate()?;
    let n = pb.n;
    let m = pb.m();
    let h = pb.h();
    let min_tau = pb.tau2.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min_tau > 0.0) {
        return Err(TodaError::TauNotPositive(min_tau));
    }
    if pb.k1.abs() > opts.admissibility_tol || pb.k2.abs() > opts.admissibility_tol {
        return Err(TodaError::NotAdmissible { k1: pb.k1, k2: pb.k2 });
    }
    let eps = pb.eps;
    let rho = pb.rho()?;
    let kap = kappa(eps);
    let delta2: Vec<f64> = (0..=m).map(|i| 1.0 / (pb.tau2[i] * rho[i])).collect();
    let pi: Vec<f64> = delta2.iter().map(|d| kap / d).collect();
    let offsets = cluster_offsets(n);
    let tm = toda_matrix(&offsets.a[1..n]);
    let mid = 0.5 * (n as f64 + 1.0);
    let cn: Vec<f64> = (0..n).map(|j| j as f64 + 1.0 - mid).collect();

    // operator on beta f, ends inherited from the Robin conditions on f
    let lt = pb.jacobi_rows().conjugate(&pb.beta);
    let l_rho = lt.apply(&rho);
    let l_one = lt.apply(&vec![1.0; m + 1]);
    let g: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..=m).map(|i| -cn[j] * (l_rho[i] - pb.tau2[i] * rho[i]) - offsets.f[j] * l_one[i]).collect())
        .collect();
    let forcing: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..=m).map(|i| kap * pb.beta[i] / (pb.varsigma[i] * eps * eps) * pb.forcing_at(j, i)).collect())
        .collect();
    let rotate = |v: &[Vec<f64>], k: usize, i: usize| -> f64 { (0..n).map(|j| tm.p[(j, k)] * v[j][i]).sum() };
    let gg: Vec<Vec<f64>> = (0..n).map(|k| (0..=m).map(|i| rotate(&g, k, i)).collect()).collect();
    let gf: Vec<Vec<f64>> = (0..n).map(|k| (0..=m).map(|i| rotate(&forcing, k, i)).collect()).collect();

    // boundary slopes of f~ and their rotation
    let drho = numeric::diff1(&rho, h, false);
    let g1: Vec<f64> = cn.iter().map(|c| -c * drho[0]).collect();
    let g2: Vec<f64> = cn.iter().map(|c| -c * drho[m]).collect();

    let mut mode_sigma = Vec::with_capacity(n);
    let mut facts = Vec::with_capacity(n);
    let mut u_hat = Vec::with_capacity(n);
    let mut w_til = Vec::with_capacity(n);
    for k in 0..n {
        let lam = if k + 1 == n { 0.0 } else { tm.eigenvalues[k] };
        let op = mode_operator(&lt, kap, lam, &pi);
        let sigma_min = op.sigma_min();
        let threshold = eps.powf(opts.resonance_pow);
        if sigma_min < threshold {
            return Err(TodaError::NearResonant { sigma_min, threshold });
        }
        mode_sigma.push(sigma_min);
        let fac = op.factor()?;
        let gt1: f64 = (0..n).map(|j| tm.p[(j, k)] * g1[j]).sum();
        let gt2: f64 = (0..n).map(|j| tm.p[(j, k)] * g2[j]).sum();
        let cor = if k + 1 == n {
            boundary_correctors(kap, 0.0, &pi, 0.0, 0.0)
        } else {
            boundary_correctors(kap, lam, &pi, gt1, gt2)
        };
        let applied = op.apply(&cor.u);
        let rhs: Vec<f64> = (0..=m).map(|i| kap * gg[k][i] - applied[i]).collect();
        w_til.push(fac.solve(&rhs));
        u_hat.push(cor.u);
        facts.push(fac);
    }

    let nonlinear = |ft: &[Vec<f64>], i: usize, j: usize| -> f64 {
        let phi = |x: f64| (-x).exp() - 1.0 + x;
        let mut s = 0.0;
        if j > 0 {
            s += offsets.a[j] * phi(ft[j][i] - ft[j - 1][i]);
        }
        if j + 1 < n {
            s -= offsets.a[j + 1] * phi(ft[j + 1][i] - ft[j][i]);
        }
        s
    };
    let to_layers = |modes: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..n).map(|j| (0..=m).map(|i| (0..n).map(|k| tm.p[(j, k)] * modes[k][i]).sum()).collect()).collect()
    };

    let mut u_chk: Vec<Vec<f64>> = vec![vec![0.0; m + 1]; n];
    let mut prev_inc = f64::NAN;
    let mut contraction: f64 = 0.0;
    let mut it = 0;
    loop {
        let modes: Vec<Vec<f64>> =
            (0..n).map(|k| (0..=m).map(|i| u_hat[k][i] + w_til[k][i] + u_chk[k][i]).collect()).collect();
        let ft = to_layers(&modes);
        let nl: Vec<Vec<f64>> = (0..n).map(|j| (0..=m).map(|i| nonlinear(&ft, i, j)).collect()).collect();
        let mut next = Vec::with_capacity(n);
        for k in 0..n {
            let rhs: Vec<f64> = (0..=m).map(|i| gf[k][i] + pi[i] * rotate(&nl, k, i)).collect();
            next.push(facts[k].solve(&rhs));
        }
        let inc = (0..n)
            .flat_map(|k| (0..=m).map(move |i| (k, i)))
            .map(|(k, i)| (next[k][i] - u_chk[k][i]).abs())
            .fold(0.0, f64::max);
        u_chk = next;
        it += 1;
        if prev_inc.is_finite() && prev_inc > 0.0 {
            contraction = contraction.max(inc / prev_inc);
        }
        if inc <= opts.tol {
            break;
        }
        if it >= opts.max_iterations || !inc.is_finite() || (it > 5 && inc > prev_inc) {
            return Err(TodaError::FixedPointFailed {
                contraction: if prev_inc > 0.0 { inc / prev_inc } else { f64::INFINITY },
                iterations: it,
            });
        }
        prev_inc = inc;
    }
    let modes: Vec<Vec<f64>> =
        (0..n).map(|k| (0..=m).map(|i| u_hat[k][i] + w_til[k][i] + u_chk[k][i]).collect()).collect();
    let ft = to_layers(&modes);
    let f: Vec<Vec<f64>> =
        (0..n).map(|j| (0..=m).map(|i| (cn[j] * rho[i] + offsets.f[j] + ft[j][i]) / pb.beta[i]).collect()).collect();
    let norms = [
        u_hat.iter().map(|v| l2(v, h)).collect(),
        w_til.iter().map(|v| l2(v, h)).collect(),
        u_chk.iter().map(|v| l2(v, h)).collect(),
    ];
    Ok(finish(
        pb,
        f,
        rho,
        Diagnostics {
            method: Method::Constructive,
            iterations: it,
            contraction: Some(contraction),
            component_norms: Some(norms),
            mode_sigma_min: Some(mode_sigma),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_small_cases() {
        let o = cluster_offsets(1);
        assert_eq!(o.f, vec![0.0]);
        let o = cluster_offsets(2);
        assert!((o.a[1] - 0.5).abs() < 1e-15);
        assert!((o.f[0] + 0.5 * 2f64.ln()).abs() < 1e-15);
        let o = cluster_offsets(3);
        assert!(o.f.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn sigma_min_matches_dense() {
        let n = 60;
        let h = 1.0 / (n - 1) as f64;
        let p2: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * h).collect();
        let p1: Vec<f64> = (0..n).map(|i| (i as f64 * h).sin()).collect();
        let p0 = vec![-20.0; n];
        for (l, r) in [
            (EndCondition::NEUMANN, EndCondition::Robin { a: 1.0, b: 0.5, g: 0.0 }),
            (EndCondition::Periodic, EndCondition::Periodic),
        ] {
            let t = Tridiag::second_order(h, &p2, &p1, &p0, l, r);
            let dense = numeric::sigma_min(&t.dense());
            assert!((t.sigma_min() - dense).abs() < 1e-8 * dense, "{} {}", t.sigma_min(), dense);
        }
    }

    #[test]
    fn ghost_rows_reproduce_quadratics() {
        // v = x^2 has v'(0) = 0, v'(1) = 2 and v'' = 2; the scheme is exact for it
        let n = 21;
        let h = 1.0 / 20.0;
        let one = vec![1.0; n];
        let zero = vec![0.0; n];
        let t = Tridiag::second_order(
            h,
            &one,
            &zero,
            &zero,
            EndCondition::NEUMANN,
            EndCondition::Robin { a: 1.0, b: 0.0, g: 2.0 },
        );
        let v: Vec<f64> = (0..n).map(|i| (i as f64 * h).powi(2)).collect();
        let lv = t.apply(&v);
        for i in 0..n {
            assert!((lv[i] + t.constant[i] - 2.0).abs() < 1e-9, "{i}");
        }
    }
}
