//! Batch front end: a TOML run configuration in, CSV tables and a JSON
//! report out. The configuration schema is documented in `docs/config.md`.
//!
//! Exit codes: 0 success, 1 configuration error, 2 a hypothesis of the
//! construction fails (non-stationary curve, degenerate Jacobi operator,
//! `tau2 <= 0`, inadmissible ends or resonant `eps`), 3 solver failure.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::assembly::{self, build_ansatz, pde_residual, AssemblyError, LayerAnsatz, Rect, Toggles};
use crate::fieldexpr::{Expression, Fields};
use crate::geodesic::{self, JacobiOperator, VariationReport, VariationTolerances};
use crate::geometry::{
    build_chart, build_curve, endpoint_contact, BoundaryContact, BoundaryGraph, CurveSource, CurveSpec, FermiChart,
    GeometryError,
};
use crate::profiles::Profile;
use crate::toda::{self, ConstructiveOptions, DirectOptions, TodaError, TodaProblem, TodaSolution};

pub const SCHEMA_VERSION: u32 = 1;
/// Environment variable that overrides the output directory (and nothing else).
pub const OUT_ENV: &str = "LAYERFORGE_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    CheckGeometry,
    CheckGeodesic,
    Profiles,
    Toda,
    Assemble,
    Residual,
    Gaps,
    All,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::CheckGeometry => "check-geometry",
            Command::CheckGeodesic => "check-geodesic",
            Command::Profiles => "profiles",
            Command::Toda => "toda",
            Command::Assemble => "assemble",
            Command::Residual => "residual",
            Command::Gaps => "gaps",
            Command::All => "all",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "layerforge", version, about = "Multi-layer concentration profiles: batch pipeline")]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(short = 'c', long = "config")]
    pub config: PathBuf,
    /// Output directory; overrides the config and the environment.
    #[arg(short = 'o', long = "out")]
    pub out: Option<PathBuf>,
    /// Seed for the randomized variational check.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Multiplies every tolerance.
    #[arg(long = "tol-scale", default_value_t = 1.0)]
    pub tol_scale: f64,
}

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub field: FieldSection,
    pub curve: CurveSection,
    pub boundary: Option<BoundarySection>,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub toggles: ToggleSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub tolerances: ToleranceSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub p: f64,
    #[serde(default = "one")]
    pub n: usize,
    pub eps: Option<f64>,
    pub eps_range: Option<[f64; 2]>,
    #[serde(default = "d_eps_points")]
    pub eps_points: usize,
    #[serde(default = "d_c_tilde")]
    pub c_tilde: f64,
    pub lambda_star: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    pub a1: String,
    pub a2: String,
    #[serde(rename = "V")]
    pub v: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSection {
    pub x: Option<String>,
    pub y: Option<String>,
    #[serde(default)]
    pub s0: f64,
    #[serde(default = "one_f")]
    pub s1: f64,
    pub points: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub closed: bool,
}

/// Boundary graphs at the two endpoints. `*_axis = "y2"` means `y2 = phi(y1)`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySection {
    pub start: String,
    #[serde(default = "d_axis")]
    pub start_axis: String,
    pub end: String,
    #[serde(default = "d_axis")]
    pub end_axis: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub m_theta: usize,
    pub m_toda: usize,
    pub m_nondegeneracy: usize,
    pub n_x: usize,
    pub l: f64,
    pub delta: f64,
    pub h_y: Option<f64>,
    pub rect: Option<[f64; 4]>,
    pub transects: Vec<f64>,
    pub transect_points: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            m_theta: 512,
            m_toda: 200,
            m_nondegeneracy: 200,
            n_x: 4000,
            l: 20.0,
            delta: 0.1,
            h_y: None,
            rect: None,
            transects: vec![0.25, 0.5, 0.75],
            transect_points: 401,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToggleSection {
    pub omega_corrections: bool,
    pub resonance_a: bool,
    pub ez_term: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverChoice {
    Direct,
    Constructive,
    Both,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub method: SolverChoice,
    pub variation_samples: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection { method: SolverChoice::Direct, variation_samples: 10 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceSection {
    pub stationarity: f64,
    pub admissibility: f64,
    pub nondegeneracy: f64,
    pub contact: f64,
    pub toda: f64,
}

impl Default for ToleranceSection {
    fn default() -> Self {
        ToleranceSection { stationarity: 1e-4, admissibility: 1e-6, nondegeneracy: 1e-6, contact: 1e-8, toda: 1e-10 }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn d_eps_points() -> usize {
    400
}
fn d_c_tilde() -> f64 {
    0.1
}
fn d_axis() -> String {
    "y2".into()
}

const REQUIRED: [(&str, &str); 4] = [("problem", "p"), ("field", "a1"), ("field", "a2"), ("field", "V")];

/// A failed run: exit code and one-line reason.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: i32,
    pub reason: String,
}

impl Failure {
    fn config(r: impl Into<String>) -> Self {
        Failure { code: 1, reason: r.into() }
    }
    fn hypothesis(r: impl Into<String>) -> Self {
        Failure { code: 2, reason: r.into() }
    }
    fn solver(r: impl Into<String>) -> Self {
        Failure { code: 3, reason: r.into() }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Failure::config(one_line(e.message())))?;
        for (sec, key) in REQUIRED {
            let present = table.get(sec).and_then(|s| s.as_table()).is_some_and(|s| s.contains_key(key));
            if !present {
                return Err(Failure::config(format!("missing {sec}.{key}")));
            }
        }
        if !table.contains_key("curve") {
            return Err(Failure::config("missing curve"));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Failure::config(one_line(e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), Failure> {
        let pr = &self.problem;
        let g = &self.grid;
        if !(pr.p > 1.0) {
            return Err(Failure::config(format!("problem.p must exceed 1 (got {})", pr.p)));
        }
        if pr.n == 0 {
            return Err(Failure::config("problem.n must be at least 1"));
        }
        if let Some(e) = pr.eps {
            if !(e > 0.0 && e <= 0.2) {
                return Err(Failure::config(format!("problem.eps must lie in (0, 0.2] (got {e})")));
            }
        }
        if let Some([a, b]) = pr.eps_range {
            if !(a > 0.0 && a < b) {
                return Err(Failure::config("problem.eps_range must satisfy 0 < min < max"));
            }
        }
        if g.m_theta == 0 || g.m_toda == 0 || g.m_nondegeneracy == 0 || g.n_x == 0 || g.transect_points < 2 {
            return Err(Failure::config("grid sizes must be positive"));
        }
        if !(g.l > 0.0 && g.delta > 0.0) || g.h_y.is_some_and(|h| !(h > 0.0)) {
            return Err(Failure::config("grid.l, grid.delta and grid.h_y must be positive"));
        }
        let c = &self.curve;
        if c.points.is_none() && (c.x.is_none() || c.y.is_none()) {
            return Err(Failure::config("missing curve.x/curve.y (or curve.points)"));
        }
        if self.toggles.ez_term {
            return Err(Failure::config("toggles.ez_term needs e tables, which the batch pipeline does not produce"));
        }
        Ok(())
    }

    fn eps(&self) -> Result<f64, Failure> {
        self.problem.eps.ok_or_else(|| Failure::config("missing problem.eps"))
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

// ---------------------------------------------------------------- output

/// Writes every float with 17 significant digits; non-finite values become `null`.
struct FixedFloats;

impl serde_json::ser::Formatter for FixedFloats {
    fn write_f64<W: ?Sized + std::io::Write>(&mut self, w: &mut W, v: f64) -> std::io::Result<()> {
        if v.is_finite() {
            write!(w, "{v:.16e}")
        } else {
            w.write_all(b"null")
        }
    }
}

/// Deterministic JSON text for a value.
pub fn to_json(v: &Value) -> String {
    use serde::Serialize;
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedFloats);
    v.serialize(&mut ser).expect("in-memory serialisation");
    buf.push(b'\n');
    String::from_utf8(buf).expect("utf8")
}

fn csv(columns: &[(&str, &[f64])]) -> String {
    let mut s = columns.iter().map(|c| c.0).collect::<Vec<_>>().join(",");
    s.push('\n');
    let rows = columns.iter().map(|c| c.1.len()).min().unwrap_or(0);
    for i in 0..rows {
        let line: Vec<String> = columns.iter().map(|c| format!("{:.16e}", c.1[i])).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

// ---------------------------------------------------------------- pipeline

struct Run<'a> {
    cfg: &'a RunConfig,
    out: PathBuf,
    seed: u64,
    tol: ToleranceSection,
    report: Map<String, Value>,
    chart: Option<FermiChart>,
    variation: Option<VariationReport>,
    profile: Option<Profile>,
    toda: Option<TodaSolution>,
}

impl<'a> Run<'a> {
    fn write(&self, name: &str, text: &str) -> Result<(), Failure> {
        fs::write(self.out.join(name), text).map_err(|e| Failure::config(format!("cannot write {name}: {e}")))
    }

    fn geometry(&mut self) -> Result<(), Failure> {
        if self.chart.is_some() {
            return Ok(());
        }
        let cfg = self.cfg;
        let expr = |e: crate::fieldexpr::ExprError, what: &str| Failure::config(format!("{what}: {e}"));
        let fields = Fields::parse(&cfg.field.a1, &cfg.field.a2, &cfg.field.v).map_err(|e| expr(e, "field"))?;
        let c = &cfg.curve;
        let source = match (&c.points, &c.x, &c.y) {
            (Some(pts), _, _) => CurveSource::Points(pts.clone()),
            (None, Some(x), Some(y)) => CurveSource::Parametric {
                x: Expression::parse_curve(x).map_err(|e| expr(e, "curve.x"))?,
                y: Expression::parse_curve(y).map_err(|e| expr(e, "curve.y"))?,
                s0: c.s0,
                s1: c.s1,
            },
            _ => return Err(Failure::config("missing curve.x/curve.y (or curve.points)")),
        };
        let spec = CurveSpec { source, closed: c.closed };
        let curve = build_curve(&spec, cfg.grid.m_theta).map_err(geometry_failure)?;
        let contact = match &cfg.boundary {
            None => BoundaryContact::flat(),
            Some(b) => {
                let graph = |src: &str, axis: &str, which: &str| match axis {
                    "y2" => BoundaryGraph::y2_of_y1(src).map_err(|e| expr(e, which)),
                    "y1" => BoundaryGraph::y1_of_y2(src).map_err(|e| expr(e, which)),
                    other => Err(Failure::config(format!("{which}_axis must be \"y1\" or \"y2\" (got {other:?})"))),
                };
                let g0 = graph(&b.start, &b.start_axis, "boundary.start")?;
                let g1 = graph(&b.end, &b.end_axis, "boundary.end")?;
                endpoint_contact(&curve, [&g0, &g1], self.tol.contact).map_err(geometry_failure)?
            }
        };
        let ch = build_chart(&curve, &fields, &contact, cfg.problem.p).map_err(geometry_failure)?;
        let cols: Vec<(&str, &[f64])> = std::iter::once(("theta", ch.theta.as_slice()))
            .chain(ch.t.columns().into_iter().map(|(n, v)| (n, v.as_slice())))
            .collect();
        self.write("chart.csv", &csv(&cols))?;
        self.report.insert(
            "geometry".into(),
            json!({
                "m_theta": ch.m(),
                "closed": ch.closed(),
                "sigma": num(ch.sigma),
                "ell": num(ch.ell_total),
                "b": [num(ch.b.b1), num(ch.b.b2), num(ch.b.b6), num(ch.b.b7)],
                "boundary_curvature": [num(contact.k[0]), num(contact.k[1])],
                "chart_boundary_curvature": [num(contact.k_tilde[0]), num(contact.k_tilde[1])],
                "orthogonality": [num(contact.orthogonality[0]), num(contact.orthogonality[1])],
            }),
        );
        self.chart = Some(ch);
        Ok(())
    }

    /// Second variation and non-degeneracy. Hypothesis failures are recorded
    /// in the report and returned only when `strict`.
    fn geodesic(&mut self, strict: bool) -> Result<(), Failure> {
        if self.variation.is_none() {
            self.geometry()?;
            let ch = self.chart.as_ref().expect("chart");
            let tol =
                VariationTolerances { stationarity: self.tol.stationarity, admissibility: self.tol.admissibility };
            let rep = geodesic::second_variation(ch, tol);
            let op = JacobiOperator::from_report(ch, &rep);
            let nd = geodesic::nondegeneracy(&op, self.cfg.grid.m_nondegeneracy, self.tol.nondegeneracy)
                .map_err(|e| Failure::solver(format!("non-degeneracy: {e}")))?;
            let samples = geodesic::variation_samples(ch, &rep, self.seed, self.cfg.solver.variation_samples)
                .map_err(|e| Failure::solver(format!("variation check: {e}")))?;
            let worst = samples.iter().map(|s| s.error()).fold(0.0, f64::max);
            self.write(
                "variation.csv",
                &csv(&[
                    ("theta", &ch.theta),
                    ("r", &rep.r),
                    ("H1", &rep.hc1),
                    ("H2", &rep.hc2),
                    ("H3", &rep.hc3),
                    ("tau1", &rep.tau1),
                    ("tau2", &rep.tau2),
                    ("zeta", &rep.zeta),
                    ("hbar1", &rep.hbar1),
                    ("hbar2", &rep.hbar2),
                    ("alpha_tilde", &rep.alpha_tilde),
                ]),
            )?;
            self.report.insert(
                "geodesic".into(),
                json!({
                    "stationary": rep.stationary,
                    "tau2_positive": rep.tau2_positive,
                    "admissible": rep.admissible,
                    "nondegenerate": nd.nondegenerate,
                    "sigma_min": num(nd.sigma_min),
                    "sigma_min_raw": num(nd.sigma_min_raw),
                    "max_residual": num(rep.max_residual),
                    "K": [num(rep.k1), num(rep.k2)],
                    "variation_check": {"seed": self.seed, "samples": samples.len(), "max_error": num(worst)},
                }),
            );
            self.variation = Some(rep);
            if !nd.nondegenerate && strict {
                return Err(Failure::hypothesis(format!(
                    "degenerate: sigma_min {:e} below {:e}",
                    nd.sigma_min, self.tol.nondegeneracy
                )));
            }
        }
        let rep = self.variation.as_ref().expect("variation");
        if strict {
            if !rep.stationary {
                return Err(Failure::hypothesis(format!("non-stationary: max residual {:e}", rep.max_residual)));
            }
            if !rep.tau2_positive {
                return Err(Failure::hypothesis("tau2 not positive"));
            }
            if !rep.admissible {
                return Err(Failure::hypothesis(format!("inadmissible: K1 = {:e}, K2 = {:e}", rep.k1, rep.k2)));
            }
            let nd = &self.report["geodesic"]["nondegenerate"];
            if nd == &Value::Bool(false) {
                return Err(Failure::hypothesis("degenerate Jacobi operator"));
            }
        }
        Ok(())
    }

    fn profiles(&mut self) -> Result<(), Failure> {
        if self.profile.is_some() {
            return Ok(());
        }
        let g = &self.cfg.grid;
        let pr = Profile::new(self.cfg.problem.p, g.l, g.n_x).map_err(|e| Failure::solver(format!("profiles: {e}")))?;
        let id = pr.identities();
        self.write("profile.csv", &pr.csv())?;
        self.report.insert(
            "profiles".into(),
            json!({
                "p": num(pr.p),
                "sigma": num(pr.sigma),
                "lambda0": num(pr.lambda0),
                "w0": num(pr.w(0.0)),
                "rho": pr.rho.iter().map(|&r| num(r)).collect::<Vec<_>>(),
                "solvability": pr.solvability.iter().map(|&r| num(r)).collect::<Vec<_>>(),
                "identities": {
                    "w2_vs_wx2": num(id.w2_vs_wx2),
                    "omega2_wx": num(id.omega2_wx),
                    "omega2_wx_expected": num(id.omega2_wx_expected),
                    "omega3_w": num(id.omega3_w),
                    "omega3_w_expected": num(id.omega3_w_expected),
                },
            }),
        );
        self.profile = Some(pr);
        Ok(())
    }

    fn lambda_star(&mut self) -> Result<f64, Failure> {
        if let Some(l) = self.cfg.problem.lambda_star {
            return Ok(l);
        }
        self.geometry()?;
        self.profiles()?;
        let ell = self.chart.as_ref().expect("chart").ell_total;
        Ok(toda::lambda_star(self.profile.as_ref().expect("profile").lambda0, ell))
    }

    fn gaps(&mut self) -> Result<(), Failure> {
        let ls = self.lambda_star()?;
        let pr = &self.cfg.problem;
        let [lo, hi] = pr.eps_range.ok_or_else(|| Failure::config("missing problem.eps_range"))?;
        let scan =
            toda::gap_sequence(lo, hi, ls, pr.c_tilde, pr.eps_points).map_err(|e| Failure::config(e.to_string()))?;
        let mut sec = json!({
            "lambda_star": num(ls),
            "c_tilde": num(pr.c_tilde),
            "admissible": scan.admissible.iter().map(|&e| num(e)).collect::<Vec<_>>(),
            "rejected": scan.rejected.iter().map(|&(e, j)| json!({"eps": num(e), "j": j})).collect::<Vec<_>>(),
        });
        if let Some(e) = pr.eps {
            sec["eps"] = num(e);
            sec["eps_resonant_mode"] = toda::gap_violation(e, ls, pr.c_tilde).map_or(Value::Null, |j| json!(j));
        }
        self.report.insert("gaps".into(), sec);
        Ok(())
    }

    fn toda(&mut self) -> Result<(), Failure> {
        if self.toda.is_some() {
            return Ok(());
        }
        let eps = self.cfg.eps()?;
        self.geodesic(true)?;
        self.profiles()?;
        let ls = self.lambda_star()?;
        if let Some(j) = toda::gap_violation(eps, ls, self.cfg.problem.c_tilde) {
            return Err(Failure::hypothesis(format!("resonant eps {eps:e}: gap condition fails at j = {j}")));
        }
        let ch = self.chart.as_ref().expect("chart");
        let rep = self.variation.as_ref().expect("variation");
        let pr = self.profile.as_ref().expect("profile");
        let pb = TodaProblem::from_chart(ch, rep, pr, eps, self.cfg.problem.n, self.cfg.grid.m_toda)
            .map_err(toda_failure)?;
        let direct = DirectOptions { tol: self.tol.toda, ..DirectOptions::default() };
        let constructive = ConstructiveOptions {
            tol: self.tol.toda,
            admissibility_tol: self.tol.admissibility,
            ..ConstructiveOptions::default()
        };
        let (sol, discrepancy) = match self.cfg.solver.method {
            SolverChoice::Direct => (toda::solve_toda_direct(&pb, None, direct).map_err(toda_failure)?, None),
            SolverChoice::Constructive => {
                (toda::solve_toda_constructive(&pb, constructive).map_err(toda_failure)?, None)
            }
            SolverChoice::Both => {
                let a = toda::solve_toda_direct(&pb, None, direct).map_err(toda_failure)?;
                let b = toda::solve_toda_constructive(&pb, constructive).map_err(toda_failure)?;
                let d =
                    a.f.iter()
                        .zip(&b.f)
                        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
                        .fold(0.0, f64::max);
                (a, Some(d))
            }
        };
        let spacing = assembly::spacing_report(&sol, eps, &pb.beta);
        let d = &sol.diagnostics;
        let doc = json!({
            "schema_version": SCHEMA_VERSION,
            "eps": num(eps),
            "n": pb.n,
            "theta": sol.theta.iter().map(|&v| num(v)).collect::<Vec<_>>(),
            "f": sol.f.iter().map(|r| r.iter().map(|&v| num(v)).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "rho": sol.rho.iter().map(|&v| num(v)).collect::<Vec<_>>(),
            "center_of_mass": sol.center_of_mass.iter().map(|&v| num(v)).collect::<Vec<_>>(),
        });
        self.write("toda.json", &to_json(&doc))?;
        self.report.insert(
            "toda".into(),
            json!({
                "eps": num(eps),
                "n": pb.n,
                "method": format!("{:?}", d.method).to_lowercase(),
                "iterations": d.iterations,
                "contraction": d.contraction.map_or(Value::Null, num),
                "residual": num(sol.residual),
                "residual_scaled": num(sol.residual_scaled),
                "boundary_residual": num(sol.boundary_residual),
                "min_gap": num(sol.min_gap),
                "max_gap": num(sol.max_gap),
                "min_scaled_gap": num(sol.min_scaled_gap),
                "spacing_ratio": spacing.ratio.map_or(Value::Null, num),
                "center_of_mass_max": num(max_abs(&sol.center_of_mass)),
                "dual_discrepancy": discrepancy.map_or(Value::Null, num),
            }),
        );
        self.toda = Some(sol);
        Ok(())
    }

    fn toggles(&self) -> Toggles {
        let t = &self.cfg.toggles;
        Toggles { leading: true, omega_corrections: t.omega_corrections, resonance_a: t.resonance_a, ez_term: false }
    }

    fn ansatz(&self) -> Result<LayerAnsatz<'_>, Failure> {
        let ch = self.chart.as_ref().expect("chart");
        let pr = self.profile.as_ref().expect("profile");
        build_ansatz(ch, pr, self.toda.as_ref(), self.cfg.eps()?, self.cfg.grid.delta, self.toggles(), None)
            .map_err(assembly_failure)
    }

    fn assemble(&mut self) -> Result<(), Failure> {
        if self.cfg.problem.n == 1 {
            // a single layer sits on the curve; the Toda system is not needed
            self.geodesic(false)?;
            self.profiles()?;
            self.cfg.eps()?;
        } else {
            self.toda()?;
        }
        let g = &self.cfg.grid;
        let an = self.ansatz()?;
        let mut rows: Vec<[f64; 5]> = Vec::new();
        for &th in &g.transects {
            if !(0.0..=1.0).contains(&th) {
                return Err(Failure::config(format!("grid.transects entries must lie in [0, 1] (got {th})")));
            }
            for r in an.transect(th, g.transect_points).map_err(assembly_failure)? {
                rows.push([th, r[0], r[1], r[2], r[3]]);
            }
        }
        let max_u = rows.iter().fold(0.0f64, |m, r| m.max(r[4]));
        let mut s = String::from("theta,t,y1,y2,u\n");
        for r in &rows {
            s.push_str(&format!("{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n", r[0], r[1], r[2], r[3], r[4]));
        }
        let sec = json!({
            "layers": an.n(),
            "delta": num(g.delta),
            "toggles": {
                "omega_corrections": self.cfg.toggles.omega_corrections,
                "resonance_a": self.cfg.toggles.resonance_a,
            },
            "max_u_on_transects": num(max_u),
        });
        self.write("transects.csv", &s)?;
        self.report.insert("assemble".into(), sec);
        Ok(())
    }

    fn residual(&mut self) -> Result<(), Failure> {
        self.assemble()?;
        let eps = self.cfg.eps()?;
        let g = &self.cfg.grid;
        let [a, b, c, d] = g.rect.ok_or_else(|| Failure::config("missing grid.rect"))?;
        let h = g.h_y.unwrap_or(eps / 8.0);
        let an = self.ansatz()?;
        let rep = pde_residual(&an, Rect { y1: (a, b), y2: (c, d) }, h).map_err(assembly_failure)?;
        let sec = json!({
            "eps": num(eps),
            "h": num(rep.h),
            "n1": rep.n1,
            "n2": rep.n2,
            "sup_band": num(rep.sup_band),
            "sup_band_raw": num(rep.sup_band_raw),
            "relative": num(rep.relative()),
            "l2": num(rep.l2),
            "max_up": num(rep.max_up),
            "sup_boundary_flux": num(rep.sup_boundary_flux),
        });
        self.write("residual.csv", &rep.csv())?;
        self.report.insert("residual".into(), sec);
        Ok(())
    }
}

fn geometry_failure(e: GeometryError) -> Failure {
    match e {
        GeometryError::Expr(_) | GeometryError::InvalidCurve(_) => Failure::config(one_line(&e.to_string())),
        _ => Failure::hypothesis(one_line(&e.to_string())),
    }
}

fn toda_failure(e: TodaError) -> Failure {
    match e {
        TodaError::TauNotPositive(_) | TodaError::NotAdmissible { .. } | TodaError::NearResonant { .. } => {
            Failure::hypothesis(one_line(&e.to_string()))
        }
        TodaError::InvalidInput(_) => Failure::config(one_line(&e.to_string())),
        _ => Failure::solver(one_line(&e.to_string())),
    }
}

fn assembly_failure(e: AssemblyError) -> Failure {
    match e {
        AssemblyError::Resonant(_) => Failure::hypothesis(one_line(&e.to_string())),
        AssemblyError::InvalidInput(_) | AssemblyError::GridTooCoarse { .. } | AssemblyError::Expr(_) => {
            Failure::config(one_line(&e.to_string()))
        }
        _ => Failure::solver(one_line(&e.to_string())),
    }
}

fn hash_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Outcome of [`run`]: exit code and the report that was written.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub code: i32,
    pub report: Value,
    pub out_dir: PathBuf,
}

fn stages(cfg: &RunConfig, command: Command, run: &mut Run) -> Result<(), Failure> {
    match command {
        Command::CheckGeometry => run.geometry(),
        Command::CheckGeodesic => run.geodesic(true),
        Command::Profiles => run.profiles(),
        Command::Toda => run.toda(),
        Command::Assemble => run.assemble(),
        Command::Residual => run.residual(),
        Command::Gaps => run.gaps(),
        Command::All => {
            run.geometry()?;
            run.geodesic(true)?;
            run.profiles()?;
            if cfg.problem.eps_range.is_some() {
                run.gaps()?;
            }
            if cfg.problem.eps.is_some() {
                run.toda()?;
                run.assemble()?;
                if cfg.grid.rect.is_some() {
                    run.residual()?;
                }
            }
            Ok(())
        }
    }
}

/// Run one command. Every outcome, including configuration errors, writes
/// `report.json` and `manifest.json` into the output directory when it can be created.
pub fn run(command: Command, config: &Path, out: Option<&Path>, seed: u64, tol_scale: f64) -> Outcome {
    let text = fs::read_to_string(config);
    let parsed = match &text {
        Ok(t) => RunConfig::parse(t),
        Err(e) => Err(Failure::config(format!("cannot read config: {e}"))),
    };
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| parsed.as_ref().ok().and_then(|c| c.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("."));
    let mut report = Map::new();
    report.insert("schema_version".into(), json!(SCHEMA_VERSION));
    report.insert("command".into(), json!(command.name()));
    let result = parsed.and_then(|cfg| {
        fs::create_dir_all(&out_dir).map_err(|e| Failure::config(format!("cannot create output directory: {e}")))?;
        if !(tol_scale > 0.0) {
            return Err(Failure::config("--tol-scale must be positive"));
        }
        let t = &cfg.tolerances;
        let tol = ToleranceSection {
            stationarity: t.stationarity * tol_scale,
            admissibility: t.admissibility * tol_scale,
            nondegeneracy: t.nondegeneracy * tol_scale,
            contact: t.contact * tol_scale,
            toda: t.toda * tol_scale,
        };
        let mut r = Run {
            cfg: &cfg,
            out: out_dir.clone(),
            seed,
            tol,
            report: Map::new(),
            chart: None,
            variation: None,
            profile: None,
            toda: None,
        };
        let res = stages(&cfg, command, &mut r);
        report.extend(std::mem::take(&mut r.report));
        res
    });
    let code = match &result {
        Ok(()) => {
            report.insert("status".into(), json!("ok"));
            report.insert("reason".into(), Value::Null);
            0
        }
        Err(f) => {
            report.insert("status".into(), json!("error"));
            report.insert("reason".into(), json!(f.reason));
            f.code
        }
    };
    report.insert("exit_code".into(), json!(code));
    let report = Value::Object(report);
    if fs::create_dir_all(&out_dir).is_ok() {
        let _ = fs::write(out_dir.join("report.json"), to_json(&report));
        let manifest = json!({
            "tool": "layerforge",
            "version": env!("CARGO_PKG_VERSION"),
            "schema_version": SCHEMA_VERSION,
            "command": command.name(),
            "config_sha256": text.as_ref().map_or(Value::Null, |t| json!(hash_hex(t.as_bytes()))),
            "seed": seed,
            "tol_scale": num(tol_scale),
        });
        let _ = fs::write(out_dir.join("manifest.json"), to_json(&manifest));
    }
    Outcome { code, report, out_dir }
}

/// Entry point for the binary.
pub fn main_with(args: Args) -> i32 {
    let o = run(args.command, &args.config, args.out.as_deref(), args.seed, args.tol_scale);
    let line = match o.report.get("reason") {
        Some(Value::String(r)) => format!("{}: {} ({})", o.report["command"].as_str().unwrap_or(""), r, o.code),
        _ => format!("{}: ok", o.report["command"].as_str().unwrap_or("")),
    };
    let _ = writeln!(std::io::stderr(), "{line}");
    o.code
}
