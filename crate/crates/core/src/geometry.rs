//! Plane curves, boundary contact and the modified Fermi chart.
//!
//! A curve is reparametrised by normalised arc length `theta in [0, 1]`.
//! With unit normal `n` and `gamma' = (-n2, n1)` the chart is
//!
//! ```text
//! F(t, theta) = gamma(Theta) + t (a~1 n1, a~2 n2)(Theta),
//! Theta = theta + t^2/2 * ((k~2 - k~1) theta + k~1),
//! ```
//!
//! where `a~i = ai / |a|` and `k~i` is half the signed curvature of the
//! boundary at the respective endpoint. Closed curves use `Theta = theta`.
//!
//! All coefficient tables are Taylor coefficients in `t` at `t = 0`,
//! obtained by multiplying truncated series rather than by expanding
//! the products by hand.

use std::ops::{Add, Mul, Sub};

use thiserror::Error;

use crate::fieldexpr::{ExprError, Expression, FieldJets, Fields, Jet2};
use crate::numeric::{self, Spline};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("curve length {0} is not 1; rescale the domain so the curve has unit length")]
    LengthNotUnit(f64),
    #[error("endpoint {which} does not lie on its boundary graph (residual {residual:e})")]
    EndpointOffGraph { which: usize, residual: f64 },
    #[error("curve does not meet boundary {which} orthogonally (|cos| = {residual:e})")]
    NonOrthogonal { which: usize, residual: f64 },
    #[error("a1 != a2 at endpoint {which} (a1 = {a1}, a2 = {a2})")]
    EndpointAnisotropy { which: usize, a1: f64, a2: f64 },
    #[error("degenerate chart: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// How a curve is given.
#[derive(Debug, Clone)]
pub enum CurveSource {
    /// `s -> (x(s), y(s))` on `[s0, s1]`.
    Parametric { x: Expression, y: Expression, s0: f64, s1: f64 },
    /// Interpolating cubic spline through the points, parametrised by index.
    Points(Vec<[f64; 2]>),
}

#[derive(Debug, Clone)]
pub struct CurveSpec {
    pub source: CurveSource,
    pub closed: bool,
}

/// Position, unit tangent, unit normal and signed curvature at one point.
///
/// The curvature is `gamma'' . n`, so a circle traversed clockwise has
/// positive curvature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub theta: f64,
    pub pos: [f64; 2],
    pub tangent: [f64; 2],
    pub normal: [f64; 2],
    pub k: f64,
}

#[derive(Debug, Clone)]
enum Raw {
    Parametric { x: Expression, y: Expression },
    Points { x: Spline, y: Spline },
}

impl Raw {
    /// Position and first two parameter derivatives.
    fn eval(&self, s: f64) -> Result<([f64; 2], [f64; 2], [f64; 2])> {
        match self {
            Raw::Parametric { x, y } => {
                let (x0, x1, x2) = x.eval_curve(s)?;
                let (y0, y1, y2) = y.eval_curve(s)?;
                Ok(([x0, y0], [x1, y1], [x2, y2]))
            }
            Raw::Points { x, y } => {
                let (x0, x1, x2) = x.eval3(s);
                let (y0, y1, y2) = y.eval3(s);
                Ok(([x0, y0], [x1, y1], [x2, y2]))
            }
        }
    }

    fn speed(&self, s: f64) -> Result<f64> {
        let (_, d, _) = self.eval(s)?;
        Ok(d[0].hypot(d[1]))
    }
}

/// A curve reparametrised by normalised arc length.
#[derive(Debug, Clone)]
pub struct PlaneCurve {
    raw: Raw,
    pub closed: bool,
    pub length: f64,
    s_range: (f64, f64),
    /// Source parameter as a function of `theta`.
    s_of_theta: Spline,
    /// Nodes of the requested grid.
    pub nodes: Vec<CurvePoint>,
}

const PANELS_PER_NODE: usize = 2;

/// Reparametrise the curve by arc length and tabulate it on `m + 1` uniform nodes.
pub fn build_curve(spec: &CurveSpec, m: usize) -> Result<PlaneCurve> {
    if m < 8 {
        return Err(GeometryError::InvalidCurve(format!("grid too coarse: M = {m}")));
    }
    let (raw, s0, s1) = match &spec.source {
        CurveSource::Parametric { x, y, s0, s1 } => {
            if !(s1 > s0) {
                return Err(GeometryError::InvalidCurve("empty parameter range".into()));
            }
            (Raw::Parametric { x: x.clone(), y: y.clone() }, *s0, *s1)
        }
        CurveSource::Points(pts) => {
            let mut pts = pts.clone();
            if spec.closed {
                let (a, b) = (pts[0], *pts.last().unwrap());
                if (a[0] - b[0]).hypot(a[1] - b[1]) > 1e-12 {
                    pts.push(a);
                }
            }
            if pts.len() < 7 {
                return Err(GeometryError::InvalidCurve("need at least seven points".into()));
            }
            let xs = pts.iter().map(|p| p[0]).collect();
            let ys = pts.iter().map(|p| p[1]).collect();
            let last = (pts.len() - 1) as f64;
            (
                Raw::Points { x: Spline::new(0.0, 1.0, xs, spec.closed), y: Spline::new(0.0, 1.0, ys, spec.closed) },
                0.0,
                last,
            )
        }
    };

    // Cumulative arc length on a fine parameter grid.
    let fine = (m.max(1024)) * PANELS_PER_NODE;
    let ds = (s1 - s0) / fine as f64;
    let mut acc = vec![0.0; fine + 1];
    for i in 0..fine {
        let a = s0 + i as f64 * ds;
        let mut err = None;
        let piece = numeric::integrate(
            |s| {
                raw.speed(s).unwrap_or_else(|e| {
                    err = Some(e);
                    0.0
                })
            },
            a,
            a + ds,
            1,
        );
        if let Some(e) = err {
            return Err(e);
        }
        acc[i + 1] = acc[i] + piece;
    }
    let length = acc[fine];
    if !(length > 1e-12) {
        return Err(GeometryError::InvalidCurve("curve has zero length".into()));
    }

    let invert = |target: f64| -> Result<f64> {
        let k = match acc.binary_search_by(|v| v.partial_cmp(&target).unwrap()) {
            Ok(k) => return Ok(s0 + k as f64 * ds),
            Err(k) => k.clamp(1, fine) - 1,
        };
        let base = s0 + k as f64 * ds;
        let mut s = base + ds * (target - acc[k]) / (acc[k + 1] - acc[k]);
        for _ in 0..30 {
            let l = acc[k] + numeric::integrate(|u| raw.speed(u).unwrap_or(0.0), base, s, 1);
            let step = (l - target) / raw.speed(s)?;
            s -= step;
            if step.abs() < 1e-15 * (1.0 + s.abs()) {
                break;
            }
        }
        Ok(s)
    };

    let table_n = m.max(1024);
    let mut s_tab = Vec::with_capacity(table_n + 1);
    for i in 0..=table_n {
        s_tab.push(invert(length * i as f64 / table_n as f64)?);
    }
    if spec.closed {
        // store s - theta * range so the periodic spline sees a periodic function
        let range = s1 - s0;
        for (i, s) in s_tab.iter_mut().enumerate() {
            *s -= range * i as f64 / table_n as f64;
        }
    }
    let s_of_theta = Spline::new(0.0, 1.0 / table_n as f64, s_tab, spec.closed);
    let node_s = (0..=m).map(|i| invert(length * i as f64 / m as f64)).collect::<Result<Vec<f64>>>()?;
    let mut curve = PlaneCurve { raw, closed: spec.closed, length, s_range: (s0, s1), s_of_theta, nodes: Vec::new() };
    let mut nodes = Vec::with_capacity(m + 1);
    for (i, s) in node_s.into_iter().enumerate() {
        nodes.push(curve.point_at_param(i as f64 / m as f64, s)?);
    }
    curve.nodes = nodes;
    Ok(curve)
}

impl PlaneCurve {
    fn param(&self, theta: f64) -> f64 {
        let s = self.s_of_theta.eval(theta);
        if self.closed {
            let range = self.s_range.1 - self.s_range.0;
            s + range * theta
        } else {
            s
        }
    }

    fn point_at_param(&self, theta: f64, s: f64) -> Result<CurvePoint> {
        let (p, d1, d2) = self.raw.eval(s)?;
        let v = d1[0].hypot(d1[1]);
        if v < 1e-14 {
            return Err(GeometryError::InvalidCurve(format!("curve is singular at theta = {theta}")));
        }
        let tangent = [d1[0] / v, d1[1] / v];
        Ok(CurvePoint {
            theta,
            pos: p,
            tangent,
            normal: [tangent[1], -tangent[0]],
            // gamma'' = k n with n = (gamma2', -gamma1')
            k: (d1[1] * d2[0] - d1[0] * d2[1]) / (v * v * v),
        })
    }

    /// Evaluate at any `theta`; open curves are continued past their ends.
    pub fn eval(&self, theta: f64) -> Result<CurvePoint> {
        self.point_at_param(theta, self.param(theta))
    }

    pub fn m(&self) -> usize {
        self.nodes.len() - 1
    }
}

/// A boundary component near an endpoint, as a graph over one coordinate.
#[derive(Debug, Clone)]
pub enum BoundaryGraph {
    /// `y2 = phi(y1)`, expression in `y1`.
    Y2OfY1(Expression),
    /// `y1 = phi(y2)`, expression in `y2`.
    Y1OfY2(Expression),
}

impl BoundaryGraph {
    pub fn y2_of_y1(src: &str) -> std::result::Result<Self, ExprError> {
        Ok(BoundaryGraph::Y2OfY1(Expression::parse_with_vars(src, &["y1"])?))
    }

    pub fn y1_of_y2(src: &str) -> std::result::Result<Self, ExprError> {
        Ok(BoundaryGraph::Y1OfY2(Expression::parse_with_vars(src, &["y2"])?))
    }

    /// Signed distance along the graph axis, unit tangent (increasing graph
    /// variable) and signed curvature for that traversal.
    fn local(&self, y: [f64; 2]) -> Result<(f64, [f64; 2], f64)> {
        let (res, tan, k) = match self {
            BoundaryGraph::Y2OfY1(e) => {
                let (v, d, dd) = e.eval_curve(y[0])?;
                let w = (1.0 + d * d).sqrt();
                (y[1] - v, [1.0 / w, d / w], dd / (w * w * w))
            }
            BoundaryGraph::Y1OfY2(e) => {
                let (v, d, dd) = e.eval_curve(y[1])?;
                let w = (1.0 + d * d).sqrt();
                (y[0] - v, [d / w, 1.0 / w], -dd / (w * w * w))
            }
        };
        Ok((res, tan, k))
    }

    /// Signed residual of `y` with respect to the graph.
    pub fn residual(&self, y: [f64; 2]) -> Result<f64> {
        Ok(self.local(y)?.0)
    }
}

/// Contact data of the curve with the boundary at its two endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryContact {
    /// Signed boundary curvature at each endpoint, traversed along the curve normal.
    pub k: [f64; 2],
    /// Boundary curvature in chart coordinates.
    pub k_tilde: [f64; 2],
    /// `|cos|` of the angle between boundary and curve.
    pub orthogonality: [f64; 2],
}

impl BoundaryContact {
    /// Straight boundaries meeting the curve at right angles.
    pub fn flat() -> Self {
        BoundaryContact { k: [0.0; 2], k_tilde: [0.0; 2], orthogonality: [0.0; 2] }
    }
}

pub fn endpoint_contact(curve: &PlaneCurve, boundary: [&BoundaryGraph; 2], tol: f64) -> Result<BoundaryContact> {
    if curve.closed {
        return Err(GeometryError::InvalidCurve("closed curves have no endpoints".into()));
    }
    let ends = [curve.nodes[0], *curve.nodes.last().unwrap()];
    let mut out = BoundaryContact::flat();
    for (i, (pt, graph)) in ends.iter().zip(boundary).enumerate() {
        let (res, tan, k) = graph.local(pt.pos)?;
        if res.abs() > 1e-6 {
            return Err(GeometryError::EndpointOffGraph { which: i + 1, residual: res.abs() });
        }
        let cosang = (tan[0] * pt.tangent[0] + tan[1] * pt.tangent[1]).abs();
        if cosang > tol {
            return Err(GeometryError::NonOrthogonal { which: i + 1, residual: cosang });
        }
        let along = tan[0] * pt.normal[0] + tan[1] * pt.normal[1];
        let signed = if along >= 0.0 { k } else { -k };
        out.k[i] = signed;
        out.k_tilde[i] = 0.5 * signed;
        out.orthogonality[i] = cosang;
    }
    Ok(out)
}

/// Three-term Taylor series in `t`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Ser(pub [f64; 3]);

impl Ser {
    pub fn c(v: f64) -> Self {
        Ser([v, 0.0, 0.0])
    }

    pub fn scale(self, s: f64) -> Self {
        Ser([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }

    pub fn recip(self) -> Self {
        let [a, b, c] = self.0;
        let r = 1.0 / a;
        Ser([r, -b * r * r, (b * b * r - c) * r * r])
    }

    pub fn sqrt(self) -> Self {
        let [a, b, c] = self.0;
        let r = a.sqrt();
        let s1 = b / (2.0 * r);
        Ser([r, s1, (c - s1 * s1) / (2.0 * r)])
    }

    /// Term-wise `d/dt`, truncated to the retained order.
    pub fn dt(self) -> Self {
        Ser([self.0[1], 2.0 * self.0[2], 0.0])
    }
}

impl Add for Ser {
    type Output = Ser;
    fn add(self, o: Ser) -> Ser {
        Ser([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Ser {
    type Output = Ser;
    fn sub(self, o: Ser) -> Ser {
        self + o.scale(-1.0)
    }
}

impl Mul for Ser {
    type Output = Ser;
    fn mul(self, o: Ser) -> Ser {
        let (a, b) = (self.0, o.0);
        Ser([a[0] * b[0], a[0] * b[1] + a[1] * b[0], a[0] * b[2] + a[1] * b[1] + a[2] * b[0]])
    }
}

/// Geometric and field data along the curve at one `theta`.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub pt: CurvePoint,
    pub jets: FieldJets,
    pub at: [f64; 2],
    pub at_d: [f64; 2],
}

impl Frame {
    /// Derivative of `(a~1 n1, a~2 n2)` along the curve.
    pub fn an_d(&self) -> [f64; 2] {
        let n = self.pt.normal;
        let k = self.pt.k;
        let nd = [k * n[1], -k * n[0]];
        [self.at_d[0] * n[0] + self.at[0] * nd[0], self.at_d[1] * n[1] + self.at[1] * nd[1]]
    }

    pub fn an(&self) -> [f64; 2] {
        [self.at[0] * self.pt.normal[0], self.at[1] * self.pt.normal[1]]
    }
}

fn frame(curve: &PlaneCurve, fields: &Fields, pt: CurvePoint) -> Result<Frame> {
    let jets = fields.jets(pt.pos)?;
    let (a1, a2) = (jets.a1.v, jets.a2.v);
    if a1 <= 0.0 || a2 <= 0.0 {
        return Err(GeometryError::Degenerate(format!(
            "anisotropy not positive at theta = {} (a1 = {a1}, a2 = {a2})",
            pt.theta
        )));
    }
    let _ = curve;
    let t = pt.tangent;
    let d1 = jets.a1.g[0] * t[0] + jets.a1.g[1] * t[1];
    let d2 = jets.a2.g[0] * t[0] + jets.a2.g[1] * t[1];
    let norm = a1.hypot(a2);
    let dot = (a1 * d1 + a2 * d2) / norm.powi(3);
    Ok(Frame { pt, jets, at: [a1 / norm, a2 / norm], at_d: [d1 / norm - a1 * dot, d2 / norm - a2 * dot] })
}

/// Taylor data of the chart at one node.
#[derive(Debug, Clone, Copy, Default)]
pub struct NodeSeries {
    pub g11: Ser,
    pub g12: Ser,
    pub g22: Ser,
    pub det: Ser,
    pub g: Ser,
    pub a1: Ser,
    pub a2: Ser,
    pub v: Ser,
    /// Coefficient of `u_t` in the pulled-back operator, without the `theta`-derivative part.
    pub ut_partial: Ser,
    pub ftheta: [Ser; 2],
    pub ft: [Ser; 2],
}

fn field_series(j: &Jet2, d: [f64; 2], q: [f64; 2]) -> Ser {
    let (first, second) = j.directional(d);
    Ser([j.v, first, 0.5 * (second + j.g[0] * q[0] + j.g[1] * q[1])])
}

fn node_series(fr: &Frame, theta_tt: f64, theta_tt_d: f64) -> NodeSeries {
    let t = fr.pt.tangent;
    let n = fr.pt.normal;
    let k = fr.pt.k;
    let an = fr.an();
    let an_d = fr.an_d();
    let q = [theta_tt * t[0], theta_tt * t[1]];
    let qd = [theta_tt_d * t[0] + theta_tt * k * n[0], theta_tt_d * t[1] + theta_tt * k * n[1]];
    let mm = [3.0 * theta_tt * an_d[0], 3.0 * theta_tt * an_d[1]];
    let fth = [Ser([t[0], an_d[0], 0.5 * qd[0]]), Ser([t[1], an_d[1], 0.5 * qd[1]])];
    let ft = [Ser([an[0], q[0], 0.5 * mm[0]]), Ser([an[1], q[1], 0.5 * mm[1]])];
    let a1 = field_series(&fr.jets.a1, an, q);
    let a2 = field_series(&fr.jets.a2, an, q);
    let v = field_series(&fr.jets.v, an, q);
    let g11 = a1 * fth[1] * fth[1] + a2 * fth[0] * fth[0];
    let g12 = a1 * fth[1] * ft[1] + a2 * fth[0] * ft[0];
    let g22 = a1 * ft[1] * ft[1] + a2 * ft[0] * ft[0];
    let det = ft[0] * fth[1] - ft[1] * fth[0];
    let g = det * det;
    let rs = g.sqrt().recip();
    let ut_partial = rs * (g11 * rs).dt();
    NodeSeries { g11, g12, g22, det, g, a1, a2, v, ut_partial, ftheta: fth, ft }
}

/// Per-node tables of the chart. Every vector has `m + 1` entries.
#[derive(Debug, Clone, Default)]
pub struct ChartTables {
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub n1: Vec<f64>,
    pub n2: Vec<f64>,
    pub k: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub at1: Vec<f64>,
    pub at2: Vec<f64>,
    pub at1_d: Vec<f64>,
    pub at2_d: Vec<f64>,
    pub a1_t: Vec<f64>,
    pub a2_t: Vec<f64>,
    pub a1_tt: Vec<f64>,
    pub a2_tt: Vec<f64>,
    pub v: Vec<f64>,
    pub v_t: Vec<f64>,
    pub v_tt: Vec<f64>,
    pub theta_tt: Vec<f64>,
    pub f0: Vec<f64>,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub l0: Vec<f64>,
    pub l1: Vec<f64>,
    pub w0: Vec<f64>,
    pub w1: Vec<f64>,
    pub hh1: Vec<f64>,
    pub hh2: Vec<f64>,
    pub hh3: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub h3: Vec<f64>,
    pub h4: Vec<f64>,
    pub h5: Vec<f64>,
    pub h6: Vec<f64>,
    pub h7: Vec<f64>,
    pub h8: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub q: Vec<f64>,
    pub ell: Vec<f64>,
}

impl ChartTables {
    /// Column names and data, in CSV order.
    pub fn columns(&self) -> Vec<(&'static str, &Vec<f64>)> {
        vec![
            ("y1", &self.y1),
            ("y2", &self.y2),
            ("n1", &self.n1),
            ("n2", &self.n2),
            ("k", &self.k),
            ("a1", &self.a1),
            ("a2", &self.a2),
            ("at1", &self.at1),
            ("at2", &self.at2),
            ("at1_d", &self.at1_d),
            ("at2_d", &self.at2_d),
            ("a1_t", &self.a1_t),
            ("a2_t", &self.a2_t),
            ("a1_tt", &self.a1_tt),
            ("a2_tt", &self.a2_tt),
            ("V", &self.v),
            ("V_t", &self.v_t),
            ("V_tt", &self.v_tt),
            ("Theta_tt", &self.theta_tt),
            ("f0", &self.f0),
            ("f1", &self.f1),
            ("f2", &self.f2),
            ("l1", &self.l1),
            ("w0", &self.w0),
            ("w1", &self.w1),
            ("hh1", &self.hh1),
            ("hh2", &self.hh2),
            ("hh3", &self.hh3),
            ("h1", &self.h1),
            ("h2", &self.h2),
            ("h3", &self.h3),
            ("h4", &self.h4),
            ("h5", &self.h5),
            ("h6", &self.h6),
            ("h7", &self.h7),
            ("h8", &self.h8),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("Q", &self.q),
            ("ell", &self.ell),
        ]
    }
}

/// Boundary coefficients of the Robin conditions at `theta = 0` and `theta = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoundaryCoefficients {
    pub b1: f64,
    pub b2: f64,
    pub b6: f64,
    pub b7: f64,
}

#[derive(Debug, Clone)]
pub struct FermiChart {
    pub curve: PlaneCurve,
    pub fields: Fields,
    pub contact: BoundaryContact,
    pub p: f64,
    pub sigma: f64,
    pub theta: Vec<f64>,
    pub t: ChartTables,
    pub b: BoundaryCoefficients,
    /// Total weighted length `int Q dtheta`.
    pub ell_total: f64,
}

/// Exponent of the potential in the weighted length.
pub fn sigma_of(p: f64) -> f64 {
    (p + 1.0) / (p - 1.0) - 0.5
}

/// Build the chart tables on the curve's node grid.
pub fn build_chart(curve: &PlaneCurve, fields: &Fields, contact: &BoundaryContact, p: f64) -> Result<FermiChart> {
    if !(p > 1.0) {
        return Err(GeometryError::Degenerate(format!("exponent p = {p} must exceed 1")));
    }
    if (curve.length - 1.0).abs() > 1e-6 {
        return Err(GeometryError::LengthNotUnit(curve.length));
    }
    let m = curve.m();
    let h = 1.0 / m as f64;
    let kt = if curve.closed { [0.0, 0.0] } else { contact.k_tilde };
    let mut t = ChartTables::default();
    let mut series = Vec::with_capacity(m + 1);
    for (i, pt) in curve.nodes.iter().enumerate() {
        let fr = frame(curve, fields, *pt)?;
        if !curve.closed && (i == 0 || i == m) {
            let (a1, a2) = (fr.jets.a1.v, fr.jets.a2.v);
            if (a1 - a2).abs() > 1e-8 * a1.max(a2) {
                return Err(GeometryError::EndpointAnisotropy { which: if i == 0 { 1 } else { 2 }, a1, a2 });
            }
        }
        if fr.jets.v.v <= 0.0 {
            return Err(GeometryError::Degenerate(format!("potential not positive at theta = {}", pt.theta)));
        }
        let tt = (kt[1] - kt[0]) * pt.theta + kt[0];
        let s = node_series(&fr, tt, kt[1] - kt[0]);
        t.y1.push(pt.pos[0]);
        t.y2.push(pt.pos[1]);
        t.n1.push(pt.normal[0]);
        t.n2.push(pt.normal[1]);
        t.k.push(pt.k);
        t.a1.push(fr.jets.a1.v);
        t.a2.push(fr.jets.a2.v);
        t.at1.push(fr.at[0]);
        t.at2.push(fr.at[1]);
        t.at1_d.push(fr.at_d[0]);
        t.at2_d.push(fr.at_d[1]);
        t.a1_t.push(s.a1.0[1]);
        t.a2_t.push(s.a2.0[1]);
        t.a1_tt.push(2.0 * s.a1.0[2]);
        t.a2_tt.push(2.0 * s.a2.0[2]);
        t.v.push(s.v.0[0]);
        t.v_t.push(s.v.0[1]);
        t.v_tt.push(2.0 * s.v.0[2]);
        t.theta_tt.push(tt);
        t.f0.push(s.g11.0[0]);
        t.f1.push(s.g11.0[1]);
        t.f2.push(s.g11.0[2]);
        t.l0.push(s.g12.0[0]);
        t.l1.push(s.g12.0[1]);
        t.w0.push(s.g22.0[0]);
        t.w1.push(s.g22.0[1]);
        t.hh1.push(s.g.0[0]);
        t.hh2.push(s.g.0[1]);
        t.hh3.push(s.g.0[2]);
        let ratio = s.g11 * s.g.recip();
        t.h1.push(ratio.0[0]);
        t.h2.push(s.g22.0[0] / s.g.0[0]);
        t.h3.push(s.ut_partial.0[0]);
        t.h6.push(-2.0 * s.g12.0[1] / s.g.0[0]);
        t.h7.push(ratio.0[2]);
        t.h8.push(ratio.0[1]);
        series.push(s);
    }
    let closed = curve.closed;
    let w_over: Vec<f64> = (0..=m).map(|i| t.w0[i] / t.hh1[i].sqrt()).collect();
    let l_over: Vec<f64> = (0..=m).map(|i| t.l1[i] / t.hh1[i].sqrt()).collect();
    let dw = numeric::diff1(&w_over, h, closed);
    let dl = numeric::diff1(&l_over, h, closed);
    for i in 0..=m {
        let r = t.hh1[i].sqrt();
        t.h4.push(dw[i] / r - t.l1[i] / t.hh1[i]);
        t.h5.push(series[i].ut_partial.0[1] - dl[i] / r);
    }
    for i in 0..=m {
        let v = t.v[i];
        if t.h1[i] <= 0.0 || t.h2[i] <= 0.0 {
            return Err(GeometryError::Degenerate(format!("metric degenerate at theta = {}", i as f64 * h)));
        }
        t.alpha.push(v.powf(1.0 / (p - 1.0)));
        t.beta.push((v / t.h1[i]).sqrt());
        t.q.push((v / t.h2[i]).sqrt());
    }
    t.ell = numeric::cumulative(&t.q, h, closed);
    let ell_total = *t.ell.last().unwrap();
    let b = BoundaryCoefficients { b1: 2.0 * t.w0[0], b2: -2.0 * t.l1[0], b6: 2.0 * t.w0[m], b7: -2.0 * t.l1[m] };
    Ok(FermiChart {
        curve: curve.clone(),
        fields: fields.clone(),
        contact: *contact,
        p,
        sigma: sigma_of(p),
        theta: (0..=m).map(|i| i as f64 * h).collect(),
        t,
        b,
        ell_total,
    })
}

/// Map value and first derivatives evaluated directly from the curve and fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricDirect {
    pub y: [f64; 2],
    pub f_t: [f64; 2],
    pub f_theta: [f64; 2],
    pub g11: f64,
    pub g12: f64,
    pub g22: f64,
    pub g: f64,
    /// Anisotropic inverse-metric numerators, without the `1/g` factor.
    pub gt11: f64,
    pub gt12: f64,
    pub gt22: f64,
}

impl FermiChart {
    pub fn m(&self) -> usize {
        self.theta.len() - 1
    }

    pub fn h(&self) -> f64 {
        1.0 / self.m() as f64
    }

    pub fn closed(&self) -> bool {
        self.curve.closed
    }

    fn theta_tt(&self, theta: f64) -> (f64, f64) {
        if self.curve.closed {
            return (0.0, 0.0);
        }
        let kt = self.contact.k_tilde;
        ((kt[1] - kt[0]) * theta + kt[0], kt[1] - kt[0])
    }

    /// `F(t, theta)` with its first derivatives, evaluated from scratch.
    pub fn map(&self, t: f64, theta: f64) -> Result<([f64; 2], [f64; 2], [f64; 2])> {
        let (tt, tt_d) = self.theta_tt(theta);
        let big = theta + 0.5 * t * t * tt;
        let big_t = t * tt;
        let big_theta = 1.0 + 0.5 * t * t * tt_d;
        let fr = frame(&self.curve, &self.fields, self.curve.eval(big)?)?;
        let an = fr.an();
        let an_d = fr.an_d();
        let tan = fr.pt.tangent;
        let y = [fr.pt.pos[0] + t * an[0], fr.pt.pos[1] + t * an[1]];
        let along = [tan[0] + t * an_d[0], tan[1] + t * an_d[1]];
        let f_t = [big_t * along[0] + an[0], big_t * along[1] + an[1]];
        let f_theta = [big_theta * along[0], big_theta * along[1]];
        Ok((y, f_t, f_theta))
    }

    /// Exact Gram quantities of the chart at `(t, theta)`.
    pub fn metric_direct(&self, t: f64, theta: f64) -> Result<MetricDirect> {
        let (y, ft, fth) = self.map(t, theta)?;
        let a1 = self.fields.a1.eval(y)?;
        let a2 = self.fields.a2.eval(y)?;
        let det = ft[0] * fth[1] - ft[1] * fth[0];
        Ok(MetricDirect {
            y,
            f_t: ft,
            f_theta: fth,
            g11: ft[0] * ft[0] + ft[1] * ft[1],
            g12: ft[0] * fth[0] + ft[1] * fth[1],
            g22: fth[0] * fth[0] + fth[1] * fth[1],
            g: det * det,
            gt11: a1 * fth[1] * fth[1] + a2 * fth[0] * fth[0],
            gt12: a1 * fth[1] * ft[1] + a2 * fth[0] * ft[0],
            gt22: a1 * ft[1] * ft[1] + a2 * ft[0] * ft[0],
        })
    }

    /// Solve `F(t, theta) = y` by Newton's method from `guess`.
    pub fn invert(&self, y: [f64; 2], guess: Option<(f64, f64)>) -> Option<(f64, f64)> {
        let (mut t, mut th) = match guess {
            Some(g) => g,
            None => self.nearest_node(y),
        };
        for _ in 0..40 {
            let (f, ft, fth) = self.map(t, th).ok()?;
            let r = [f[0] - y[0], f[1] - y[1]];
            let det = ft[0] * fth[1] - ft[1] * fth[0];
            if det.abs() < 1e-14 {
                return None;
            }
            let dt = (r[0] * fth[1] - r[1] * fth[0]) / det;
            let dth = (ft[0] * r[1] - ft[1] * r[0]) / det;
            let damp = if dt.abs() > 0.5 || dth.abs() > 0.25 { 0.5 } else { 1.0 };
            t -= damp * dt;
            th -= damp * dth;
            if !t.is_finite() || !th.is_finite() || th.abs() > 10.0 {
                return None;
            }
            if dt.abs() < 1e-13 && dth.abs() < 1e-13 {
                return Some((t, th));
            }
        }
        None
    }

    /// Crude `(t, theta)` from the nearest node; the starting point of [`FermiChart::invert`].
    pub fn project(&self, y: [f64; 2]) -> (f64, f64) {
        self.nearest_node(y)
    }

    fn nearest_node(&self, y: [f64; 2]) -> (f64, f64) {
        let t = &self.t;
        let mut best = (f64::INFINITY, 0usize);
        for i in 0..t.y1.len() {
            let d = (t.y1[i] - y[0]).powi(2) + (t.y2[i] - y[1]).powi(2);
            if d < best.0 {
                best = (d, i);
            }
        }
        let i = best.1;
        let tt = ((y[0] - t.y1[i]) * t.n1[i] * t.at1[i] + (y[1] - t.y2[i]) * t.n2[i] * t.at2[i])
            / (t.at1[i].powi(2) * t.n1[i].powi(2) + t.at2[i].powi(2) * t.n2[i].powi(2));
        (tt, self.theta[i])
    }

    /// Interpolating spline of a chart table.
    pub fn spline(&self, values: &[f64]) -> Spline {
        Spline::new(0.0, self.h(), values.to_vec(), self.closed())
    }

    /// Series data at one node; exposed for consistency checks.
    pub fn node_series(&self, i: usize) -> Result<NodeSeries> {
        let pt = self.curve.nodes[i];
        let fr = frame(&self.curve, &self.fields, pt)?;
        let (tt, tt_d) = self.theta_tt(pt.theta);
        Ok(node_series(&fr, tt, tt_d))
    }
}
