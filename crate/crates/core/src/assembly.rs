//! Assembly of the multi-layer ansatz on the plane and its direct
//! finite-difference residual.

use rayon::prelude::*;
use thiserror::Error;

use crate::fieldexpr::ExprError;
use crate::geometry::FermiChart;
use crate::numeric::{self, Spline};
use crate::profiles::{self, Profile, ProfileError};
use crate::toda::TodaSolution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("Fermi inversion failed at y = ({0}, {1})")]
    Inversion(f64, f64),
    #[error("grid spacing {h} does not resolve the layer (need h <= eps/8 = {limit})")]
    GridTooCoarse { h: f64, limit: f64 },
    #[error("resonant eps: |sin(sqrt(lambda0) ell / eps)| = {0:e}")]
    Resonant(f64),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

pub type Result<T> = std::result::Result<T, AssemblyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Toggles {
    pub leading: bool,
    pub omega_corrections: bool,
    pub resonance_a: bool,
    pub ez_term: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles { leading: true, omega_corrections: false, resonance_a: false, ez_term: false }
    }
}

// ---------------------------------------------------------------- resonance profile

#[derive(Debug, Clone)]
pub struct ResonanceProfile {
    pub theta: Vec<f64>,
    /// `d~(theta) = int_0^theta Q`.
    pub dtilde: Vec<f64>,
    /// `A(d~(theta))`.
    pub a: Vec<f64>,
    /// `z = theta / eps` and `Upsilon(z) = d~(theta) / eps`.
    pub z: Vec<f64>,
    pub upsilon: Vec<f64>,
}

/// `A(s) = (c0 cos(k ell) - c1)/(sqrt(lambda0) sin(k ell)) cos(k s) + c0/sqrt(lambda0) sin(k s)`
/// with `k = sqrt(lambda0)/eps`.
pub fn resonance_a(c0: f64, c1: f64, eps: f64, lambda0: f64, ell: f64, s: f64) -> Result<f64> {
    let r = lambda0.sqrt();
    let k = r / eps;
    let den = (k * ell).sin();
    if den.abs() < 1e-3 {
        return Err(AssemblyError::Resonant(den.abs()));
    }
    Ok((c0 * (k * ell).cos() - c1) / (r * den) * (k * s).cos() + c0 / r * (k * s).sin())
}

/// Tabulate `A` along the curve from a `Q` table on a uniform grid over `[0, 1]`.
pub fn resonance_profile(c0: f64, c1: f64, eps: f64, lambda0: f64, ell: f64, q: &[f64]) -> Result<ResonanceProfile> {
    let n = q.len();
    if n < 8 || !(eps > 0.0) || !(lambda0 > 0.0) {
        return Err(AssemblyError::InvalidInput("resonance profile needs eps, lambda0 > 0 and a Q table".into()));
    }
    let h = 1.0 / (n - 1) as f64;
    let dtilde = numeric::cumulative(q, h, false);
    let a = dtilde.iter().map(|&s| resonance_a(c0, c1, eps, lambda0, ell, s)).collect::<Result<Vec<_>>>()?;
    let theta: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
    Ok(ResonanceProfile {
        z: theta.iter().map(|t| t / eps).collect(),
        upsilon: dtilde.iter().map(|d| d / eps).collect(),
        theta,
        dtilde,
        a,
    })
}

/// Boundary constants `c0`, `c1` of the resonance correction.
pub fn boundary_constants(ch: &FermiChart, pr: &Profile) -> (f64, f64) {
    let xwz = numeric::integrate(|x| x * pr.w_x(x) * pr.z(x), -40.0, 40.0, 640);
    let wz = numeric::integrate(|x| pr.w(x) * pr.z(x), -40.0, 40.0, 640);
    let t = &ch.t;
    let m = ch.m();
    let h = ch.h();
    let db = numeric::diff1(&t.beta, h, false);
    let da = numeric::diff1(&t.alpha, h, false);
    let b = &ch.b;
    let c0 = (b.b2 + b.b1 * db[0] / t.beta[0]) * xwz + b.b1 * da[0] / t.alpha[0] * wz;
    let c1 = (b.b7 + b.b6 * db[m] / t.beta[m]) * xwz + b.b6 * da[m] / t.alpha[m] * wz;
    (c0, c1)
}

// ---------------------------------------------------------------- ansatz

pub struct LayerAnsatz<'a> {
    pub eps: f64,
    /// Cutoff radius in chart units: full weight for `|t| <= 3 delta`, zero beyond `6 delta`.
    pub delta: f64,
    pub toggles: Toggles,
    pub chart: &'a FermiChart,
    pub profile: &'a Profile,
    layers: Vec<Spline>,
    alpha: Spline,
    beta: Spline,
    coeff: [Spline; 4],
    resonance: Option<Spline>,
    e: Vec<Spline>,
}

fn uniform_spline(v: &[f64]) -> Spline {
    Spline::new(0.0, 1.0 / (v.len() - 1) as f64, v.to_vec(), false)
}

/// Build the ansatz. Without a Toda solution a single layer on the curve is used.
pub fn build_ansatz<'a>(
    chart: &'a FermiChart,
    profile: &'a Profile,
    toda: Option<&TodaSolution>,
    eps: f64,
    delta: f64,
    toggles: Toggles,
    e_tables: Option<&[Vec<f64>]>,
) -> Result<LayerAnsatz<'a>> {
    if !(eps > 0.0) || !(delta > 0.0) {
        return Err(AssemblyError::InvalidInput(format!("eps = {eps} and delta = {delta} must be positive")));
    }
    if (profile.p - chart.p).abs() > 1e-12 {
        return Err(AssemblyError::InvalidInput("profile and chart use different exponents".into()));
    }
    let layers = match toda {
        Some(sol) => {
            if (sol.eps - eps).abs() > 1e-14 * eps {
                return Err(AssemblyError::InvalidInput(format!("Toda solution was computed for eps = {}", sol.eps)));
            }
            sol.f.iter().map(|f| uniform_spline(f)).collect()
        }
        None => vec![uniform_spline(&[0.0; 9])],
    };
    let t = &chart.t;
    let cc = profiles::correction_coefficients(chart)?;
    let resonance = if toggles.resonance_a {
        let (c0, c1) = boundary_constants(chart, profile);
        let ell = numeric::integral(&t.q, chart.h());
        let rp = resonance_profile(c0, c1, eps, profile.lambda0, ell, &t.q)?;
        let m = chart.m();
        let xi: Vec<f64> = (0..=m)
            .map(|i| {
                let chi = numeric::smooth_cutoff(chart.theta[i], 0.125, 0.375);
                chi / t.q[0] + (1.0 - chi) / t.q[m]
            })
            .collect();
        Some(chart.spline(&rp.a.iter().zip(&xi).map(|(a, x)| a * x).collect::<Vec<_>>()))
    } else {
        None
    };
    let e = match e_tables {
        Some(tabs) if toggles.ez_term => {
            if tabs.len() != layers.len() {
                return Err(AssemblyError::InvalidInput("one e table per layer".into()));
            }
            tabs.iter().map(|v| uniform_spline(v)).collect()
        }
        _ => Vec::new(),
    };
    Ok(LayerAnsatz {
        eps,
        delta,
        toggles,
        chart,
        profile,
        layers,
        alpha: chart.spline(&t.alpha),
        beta: chart.spline(&t.beta),
        coeff: [chart.spline(&cc.a10), chart.spline(&cc.a11), chart.spline(&cc.a12), chart.spline(&cc.a13)],
        resonance,
        e,
    })
}

impl LayerAnsatz<'_> {
    pub fn n(&self) -> usize {
        self.layers.len()
    }

    /// Chart coordinates of `y`, or `None` when `y` is clearly outside the support.
    pub fn locate(&self, y: [f64; 2]) -> Result<Option<(f64, f64)>> {
        let guess = self.chart.project(y);
        if guess.0.abs() > 8.0 * self.delta {
            return Ok(None);
        }
        match self.chart.invert(y, Some(guess)) {
            Some(tt) => Ok(Some(tt)),
            None => {
                if guess.0.abs() > 6.0 * self.delta {
                    Ok(None)
                } else {
                    Err(AssemblyError::Inversion(y[0], y[1]))
                }
            }
        }
    }

    /// The ansatz in chart coordinates.
    pub fn eval_local(&self, t: f64, theta: f64) -> f64 {
        let eta = numeric::smooth_cutoff(t.abs(), 3.0 * self.delta, 6.0 * self.delta);
        if eta == 0.0 {
            return 0.0;
        }
        let th = theta.clamp(0.0, 1.0);
        let b = self.beta.eval(th);
        let x = b * t / self.eps;
        let pr = self.profile;
        let res = self.resonance.as_ref().map(|s| s.eval(th));
        let mut v = 0.0;
        for (j, fj) in self.layers.iter().enumerate() {
            let f = fj.eval(th);
            let xj = x - b * f;
            if self.toggles.leading {
                v += pr.w(xj);
            }
            if self.toggles.omega_corrections {
                let c: Vec<f64> = self.coeff.iter().map(|s| s.eval(th)).collect();
                v += self.eps
                    * (c[0] * pr.omega_at(0, xj)
                        + c[1] * pr.omega_at(1, xj)
                        + f * (c[2] * pr.omega_at(2, xj) + c[3] * pr.omega_at(3, xj)));
            }
            if let Some(a) = res {
                v += self.eps * a * pr.z(xj);
            }
            if let Some(e) = self.e.get(j) {
                v += self.eps * e.eval(th) * pr.z(xj);
            }
        }
        eta * self.alpha.eval(th) * v
    }

    pub fn eval(&self, y: [f64; 2]) -> Result<f64> {
        Ok(match self.locate(y)? {
            Some((t, th)) => self.eval_local(t, th),
            None => 0.0,
        })
    }

    /// `(t, y1, y2, u)` along the normal line at `theta`.
    pub fn transect(&self, theta: f64, points: usize) -> Result<Vec<[f64; 4]>> {
        let tmax = 6.0 * self.delta;
        (0..points)
            .map(|k| {
                let t = -tmax + 2.0 * tmax * k as f64 / (points - 1).max(1) as f64;
                let (y, _, _) = self.chart.map(t, theta).map_err(|e| AssemblyError::InvalidInput(e.to_string()))?;
                Ok([t, y[0], y[1], self.eval_local(t, theta)])
            })
            .collect()
    }
}

// ---------------------------------------------------------------- residual

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub y1: (f64, f64),
    pub y2: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub eps: f64,
    /// Spacing of the reported grid; the extrapolation also uses `h/2`.
    pub h: f64,
    pub n1: usize,
    pub n2: usize,
    /// Row-major over `y2` then `y1`: `(y1, y2, u, R)` at every node; `R = 0` on the rectangle edge.
    pub field: Vec<[f64; 4]>,
    /// Sup of `|R|` over interior nodes with `|t| <= 3 delta`, extrapolated in `h`.
    pub sup_band: f64,
    /// The same without extrapolation, at spacing `h`.
    pub sup_band_raw: f64,
    pub l2: f64,
    pub max_up: f64,
    /// Sup of the conormal flux `a grad u . nu` over the rectangle edges.
    pub sup_boundary_flux: f64,
}

impl ResidualReport {
    pub fn relative(&self) -> f64 {
        self.sup_band / self.max_up
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("y1,y2,u,R\n");
        for r in &self.field {
            s.push_str(&format!("{:.16e},{:.16e},{:.16e},{:.16e}\n", r[0], r[1], r[2], r[3]));
        }
        s
    }
}

/// `eps^2 div(a grad u) - V u + u^p` by conservative differences on spacings `h` and
/// `h/2`, combined to remove the `h^2` error term.
pub fn pde_residual(an: &LayerAnsatz, rect: Rect, h: f64) -> Result<ResidualReport> {
    let eps = an.eps;
    if h > eps / 8.0 * (1.0 + 1e-12) {
        return Err(AssemblyError::GridTooCoarse { h, limit: eps / 8.0 });
    }
    let n1 = ((rect.y1.1 - rect.y1.0) / h).round() as usize;
    let n2 = ((rect.y2.1 - rect.y2.0) / h).round() as usize;
    if n1 < 4 || n2 < 4 || ((n1 as f64) * h - (rect.y1.1 - rect.y1.0)).abs() > 1e-9 {
        return Err(AssemblyError::InvalidInput("rectangle sides must be multiples of h".into()));
    }
    let (f1, f2) = (2 * n1, 2 * n2);
    let hf = 0.5 * h;
    let at = |i: usize, j: usize| [rect.y1.0 + i as f64 * hf, rect.y2.0 + j as f64 * hf];
    // fine-grid values: (u, t) with t = NaN off the support
    let vals: Vec<(f64, f64)> = (0..=f2)
        .into_par_iter()
        .flat_map_iter(|j| (0..=f1).map(move |i| (i, j)))
        .map(|(i, j)| {
            let y = at(i, j);
            match an.locate(y)? {
                Some((t, th)) => Ok((an.eval_local(t, th), t)),
                None => Ok((0.0, f64::NAN)),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let u = |i: usize, j: usize| vals[j * (f1 + 1) + i].0;
    let fields = &an.chart.fields;
    let p = an.chart.p;
    let lap = |i: usize, j: usize, s: usize| -> std::result::Result<f64, ExprError> {
        let k = s as f64 * hf;
        let y = at(i, j);
        let c = u(i, j);
        let a1p = fields.a1.eval([y[0] + 0.5 * k, y[1]])?;
        let a1m = fields.a1.eval([y[0] - 0.5 * k, y[1]])?;
        let a2p = fields.a2.eval([y[0], y[1] + 0.5 * k])?;
        let a2m = fields.a2.eval([y[0], y[1] - 0.5 * k])?;
        Ok((a1p * (u(i + s, j) - c) - a1m * (c - u(i - s, j)) + a2p * (u(i, j + s) - c) - a2m * (c - u(i, j - s)))
            / (k * k))
    };
    let band = 3.0 * an.delta;
    let rows: Vec<Vec<([f64; 4], f64, f64, bool)>> = (0..=n2)
        .into_par_iter()
        .map(|jc| {
            (0..=n1)
                .map(|ic| {
                    let (i, j) = (2 * ic, 2 * jc);
                    let y = at(i, j);
                    let c = u(i, j);
                    if ic == 0 || jc == 0 || ic == n1 || jc == n2 || c == 0.0 && vals[j * (f1 + 1) + i].1.is_nan() {
                        return Ok(([y[0], y[1], c, 0.0], 0.0, 0.0, false));
                    }
                    let v = fields.v.eval(y)?;
                    let rest = -v * c + c.max(0.0).powf(p);
                    let fine = eps * eps * lap(i, j, 1)? + rest;
                    let coarse = eps * eps * lap(i, j, 2)? + rest;
                    let ext = (4.0 * fine - coarse) / 3.0;
                    let t = vals[j * (f1 + 1) + i].1;
                    let in_band = t.is_finite() && t.abs() <= band;
                    Ok(([y[0], y[1], c, ext], coarse, c.max(0.0).powf(p), in_band))
                })
                .collect::<std::result::Result<Vec<_>, ExprError>>()
        })
        .collect::<std::result::Result<Vec<_>, ExprError>>()?;
    let mut rep = ResidualReport {
        eps,
        h,
        n1,
        n2,
        field: Vec::with_capacity((n1 + 1) * (n2 + 1)),
        sup_band: 0.0,
        sup_band_raw: 0.0,
        l2: 0.0,
        max_up: 0.0,
        sup_boundary_flux: 0.0,
    };
    let mut sq = 0.0;
    for row in rows {
        for (rec, coarse, up, in_band) in row {
            sq += rec[3] * rec[3];
            rep.max_up = rep.max_up.max(up);
            if in_band {
                rep.sup_band = rep.sup_band.max(rec[3].abs());
                rep.sup_band_raw = rep.sup_band_raw.max(coarse.abs());
            }
            rep.field.push(rec);
        }
    }
    rep.l2 = (sq * h * h).sqrt();
    // conormal flux on the edges, one-sided second order on the fine grid
    let mut flux: f64 = 0.0;
    for ic in 0..=n1 {
        let i = 2 * ic;
        for (j, sgn) in [(0usize, -1.0), (f2, 1.0)] {
            let y = at(i, j);
            let d = if j == 0 {
                (-3.0 * u(i, 0) + 4.0 * u(i, 1) - u(i, 2)) / (2.0 * hf)
            } else {
                (3.0 * u(i, f2) - 4.0 * u(i, f2 - 1) + u(i, f2 - 2)) / (2.0 * hf)
            };
            flux = flux.max((sgn * fields.a2.eval(y)? * d).abs());
        }
    }
    for jc in 0..=n2 {
        let j = 2 * jc;
        for (i, sgn) in [(0usize, -1.0), (f1, 1.0)] {
            let y = at(i, j);
            let d = if i == 0 {
                (-3.0 * u(0, j) + 4.0 * u(1, j) - u(2, j)) / (2.0 * hf)
            } else {
                (3.0 * u(f1, j) - 4.0 * u(f1 - 1, j) + u(f1 - 2, j)) / (2.0 * hf)
            };
            flux = flux.max((sgn * fields.a1.eval(y)? * d).abs());
        }
    }
    rep.sup_boundary_flux = flux;
    Ok(rep)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    num / den
}

// ---------------------------------------------------------------- spacing

#[derive(Debug, Clone, PartialEq)]
pub struct SpacingReport {
    /// `min_theta (f_{j+1} - f_j) beta / (2|ln eps|)` for each neighbouring pair.
    pub pair_ratios: Vec<f64>,
    pub ratio: Option<f64>,
}

/// `beta` must be tabulated on the solution's grid.
pub fn spacing_report(sol: &TodaSolution, eps: f64, beta: &[f64]) -> SpacingReport {
    let n = sol.f.len();
    let scale = 2.0 * eps.ln().abs();
    let pair_ratios: Vec<f64> = (0..n.saturating_sub(1))
        .map(|j| {
            (0..sol.theta.len())
                .map(|i| (sol.f[j + 1][i] - sol.f[j][i]) * beta[i] / scale)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    SpacingReport { ratio: pair_ratios.iter().cloned().reduce(f64::min), pair_ratios }
}
