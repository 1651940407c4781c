#![allow(dead_code)]

use layerforge::fieldexpr::{Expression, Fields};
use layerforge::geometry::{
    build_chart, build_curve, endpoint_contact, BoundaryContact, BoundaryGraph, CurveSource, CurveSpec, FermiChart,
    PlaneCurve,
};

pub fn segment(m: usize) -> PlaneCurve {
    let spec = CurveSpec {
        source: CurveSource::Parametric {
            x: Expression::parse_curve("0").unwrap(),
            y: Expression::parse_curve("s").unwrap(),
            s0: 0.0,
            s1: 1.0,
        },
        closed: false,
    };
    build_curve(&spec, m).unwrap()
}

pub fn flat_chart(m: usize) -> FermiChart {
    let f = Fields::parse("1", "1", "1").unwrap();
    build_chart(&segment(m), &f, &BoundaryContact::flat(), 3.0).unwrap()
}

/// Isotropic, `V = 2 - y1^2`, curve `y1 = 0` in the strip `0 < y2 < 1`.
pub fn v_chart(m: usize) -> FermiChart {
    let f = Fields::parse("1", "1", "2 - y1^2").unwrap();
    build_chart(&segment(m), &f, &BoundaryContact::flat(), 3.0).unwrap()
}

pub const ARC_R: f64 = 2.0;

/// Unit-length circular arc of radius 2 meeting two curved boundary graphs
/// orthogonally, with anisotropy that is isotropic only at the endpoints.
pub fn curved_setup(m: usize) -> (PlaneCurve, Fields, BoundaryContact) {
    let spec = CurveSpec {
        source: CurveSource::Parametric {
            x: Expression::parse_curve("2*(1 - cos(s/2))").unwrap(),
            y: Expression::parse_curve("2*sin(s/2)").unwrap(),
            s0: 0.0,
            s1: 1.0,
        },
        closed: false,
    };
    let curve = build_curve(&spec, m).unwrap();
    let px = ARC_R * (1.0 - 0.5f64.cos());
    let py = ARC_R * 0.5f64.sin();
    let slope = -(0.5f64.tan());
    let g1 = BoundaryGraph::y2_of_y1("0.4*y1^2").unwrap();
    let g2 = BoundaryGraph::y2_of_y1(&format!("{py:?} + ({slope:?})*(y1 - {px:?}) - 0.3*(y1 - {px:?})^2")).unwrap();
    let contact = endpoint_contact(&curve, [&g1, &g2], 1e-8).unwrap();
    let fields = Fields::parse(
        "exp(0.2*y1 + 0.1*y2)",
        &format!("exp(0.2*y1 + 0.1*y2) + 0.5*y2*(y2 - {py:?})"),
        "2 - (y1 - 0.3)^2 + 0.2*y2",
    )
    .unwrap();
    (curve, fields, contact)
}

pub fn curved_chart(m: usize) -> FermiChart {
    let (c, f, k) = curved_setup(m);
    build_chart(&c, &f, &k, 3.0).unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-3)
}

/// Anisotropic fields for which `y1 = 0` stays stationary: the gradient of
/// `a` across the curve is balanced by the matching drift of `V^sigma`.
/// Both vary along the curve, so the second-variation tables are not constant.
pub fn aniso_chart(m: usize) -> FermiChart {
    let a = "exp(0.5*y1)*(1 + 0.3*sin(pi*y2)^2)";
    let f = Fields::parse(a, a, "(2 - y1^2)*exp(-y1/6)*(1 + 0.2*cos(pi*y2))").unwrap();
    build_chart(&segment(m), &f, &BoundaryContact::flat(), 3.0).unwrap()
}

/// Isotropic with `V = (2 - y1^2)(1 + amp cos(pi y2))`: `y1 = 0` is stationary,
/// `K1 = K2 = 0`, `tau2 > 0`, and `beta` varies along the curve. At amp 0.2 the
/// variation of rho is too strong for either Toda solver at eps ~ 1e-2.
pub fn modulated_chart(m: usize) -> FermiChart {
    modulated_chart_amp(m, 0.05)
}

pub fn modulated_chart_amp(m: usize, amp: f64) -> FermiChart {
    let f = Fields::parse("1", "1", &format!("(2 - y1^2)*(1 + {amp:?}*cos(pi*y2))")).unwrap();
    build_chart(&segment(m), &f, &BoundaryContact::flat(), 3.0).unwrap()
}
