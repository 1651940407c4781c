mod common;

use common::*;
use layerforge::fieldexpr::{Expression, Fields};
use layerforge::geometry::{
    build_chart, build_curve, endpoint_contact, BoundaryContact, BoundaryGraph, CurveSource, CurveSpec, FermiChart,
    GeometryError,
};
use proptest::prelude::*;

/// Taylor coefficients `[f(0), f'(0), f''(0)/2]` by fourth-order central differences.
fn taylor3(f: impl Fn(f64) -> f64, tau: f64) -> [f64; 3] {
    let (m2, m1, z, p1, p2) = (f(-2.0 * tau), f(-tau), f(0.0), f(tau), f(2.0 * tau));
    [
        z,
        (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * tau),
        0.5 * (-m2 + 16.0 * m1 - 30.0 * z + 16.0 * p1 - p2) / (12.0 * tau * tau),
    ]
}

fn check_series_against_direct(ch: &FermiChart, tol: f64) {
    let m = ch.m();
    for &i in &[0, m / 10, m / 3, m / 2, 4 * m / 5, m] {
        let th = ch.theta[i];
        let md = |t: f64| ch.metric_direct(t, th).unwrap();
        let tau = 1e-2;
        let g11 = taylor3(|t| md(t).gt11, tau);
        let g12 = taylor3(|t| md(t).gt12, tau);
        let g22 = taylor3(|t| md(t).gt22, tau);
        let g = taylor3(|t| md(t).g, tau);
        let t = &ch.t;
        let pairs = [
            ("f0", g11[0], t.f0[i]),
            ("f1", g11[1], t.f1[i]),
            ("f2", g11[2], t.f2[i]),
            ("l0", g12[0], t.l0[i]),
            ("l1", g12[1], t.l1[i]),
            ("w0", g22[0], t.w0[i]),
            ("w1", g22[1], t.w1[i]),
            ("hh1", g[0], t.hh1[i]),
            ("hh2", g[1], t.hh2[i]),
            ("hh3", g[2], t.hh3[i]),
        ];
        for (name, direct, table) in pairs {
            assert!(
                (direct - table).abs() <= tol * (1.0 + table.abs()),
                "{name} at theta={th}: direct {direct} vs table {table}"
            );
        }
    }
}

#[test]
fn tables_match_direct_metric_on_curved_chart() {
    let ch = curved_chart(256);
    assert!(ch.contact.k_tilde[0] != 0.0 && ch.contact.k_tilde[1] != 0.0);
    check_series_against_direct(&ch, 1e-7);
}

#[test]
fn tables_match_direct_metric_on_v_chart() {
    check_series_against_direct(&v_chart(128), 1e-9);
}

/// Expanded-by-hand forms of the first coefficients, as an independent route.
#[test]
fn hand_expanded_coefficients() {
    let ch = curved_chart(256);
    let t = &ch.t;
    for i in (0..=ch.m()).step_by(17) {
        let (n1, n2, k) = (t.n1[i], t.n2[i], t.k[i]);
        let (a1, a2) = (t.a1[i], t.a2[i]);
        let (b1, b2) = (t.at1[i], t.at2[i]);
        let (d1, d2) = (t.at1_d[i], t.at2_d[i]);
        let (at1, at2) = (t.a1_t[i], t.a2_t[i]);
        let (att1, att2) = (t.a1_tt[i], t.a2_tt[i]);
        let tt = t.theta_tt[i];
        let dtt = ch.contact.k_tilde[1] - ch.contact.k_tilde[0];
        // q' = (Theta_tt gamma')'
        let q1d = dtt * (-n2) + tt * k * n1;
        let q2d = dtt * n1 + tt * k * n2;
        let f0 = a1 * n1 * n1 + a2 * n2 * n2;
        let f1 = 2.0 * (a1 * d2 - a2 * d1) * n1 * n2 - 2.0 * k * (a1 * b2 * n1 * n1 + a2 * b1 * n2 * n2)
            + (at1 * n1 * n1 + at2 * n2 * n2);
        let f2 = (a1 * n1 * q2d - a2 * n2 * q1d) + (a1 * d2 * d2 * n2 * n2 + a2 * d1 * d1 * n1 * n1)
            - 2.0 * k * (a1 * b2 * d2 - a2 * b1 * d1) * n1 * n2
            + k * k * (a1 * b2 * b2 * n1 * n1 + a2 * b1 * b1 * n2 * n2)
            + 2.0 * (at1 * d2 - at2 * d1) * n1 * n2
            - 2.0 * k * (at1 * b2 * n1 * n1 + at2 * b1 * n2 * n2)
            + 0.5 * (att1 * n1 * n1 + att2 * n2 * n2);
        let d0 = b1 * n1 * n1 + b2 * n2 * n2;
        let w0 = a1 * b2 * b2 * n2 * n2 + a2 * b1 * b1 * n1 * n1;
        assert!(rel(t.f0[i], f0) < 1e-12, "f0 at {i}");
        assert!(rel(t.f1[i], f1) < 1e-12, "f1 at {i}");
        assert!(rel(t.f2[i], f2) < 1e-11, "f2 at {i}: {} vs {f2}", t.f2[i]);
        assert!(rel(t.hh1[i], d0 * d0) < 1e-12, "hh1 at {i}");
        assert!(rel(t.w0[i], w0) < 1e-12, "w0 at {i}");
        assert!(t.l0[i].abs() < 1e-13, "l0 at {i}");
    }
}

/// The operator coefficients against closed forms in the metric coefficients.
#[test]
fn operator_coefficients_closed_forms() {
    let ch = curved_chart(256);
    let t = &ch.t;
    let h = ch.h();
    let sq: Vec<f64> = t.hh1.iter().map(|x| x.sqrt()).collect();
    let lo: Vec<f64> = (0..=ch.m()).map(|i| t.l1[i] / sq[i]).collect();
    let dlo = layerforge::numeric::diff1(&lo, h, false);
    for i in 0..=ch.m() {
        let (f0, f1, f2) = (t.f0[i], t.f1[i], t.f2[i]);
        let (g1, g2, g3) = (t.hh1[i], t.hh2[i], t.hh3[i]);
        let h3 = f1 / g1 - 0.5 * g2 * f0 / (g1 * g1);
        let h5 = 2.0 * f2 / g1 - 1.5 * g2 * f1 / (g1 * g1) + g2 * g2 * f0 / g1.powi(3)
            - g3 * f0 / (g1 * g1)
            - dlo[i] / sq[i];
        let h7 = f2 / g1 - g2 * f1 / (g1 * g1) + (g2 * g2 / g1.powi(3) - g3 / (g1 * g1)) * f0;
        let h8 = f1 / g1 - g2 * f0 / (g1 * g1);
        assert!((t.h3[i] - h3).abs() < 1e-12, "h3 at {i}");
        assert!((t.h5[i] - h5).abs() < 1e-10, "h5 at {i}: {} vs {h5}", t.h5[i]);
        assert!((t.h7[i] - h7).abs() < 1e-12, "h7 at {i}");
        assert!((t.h8[i] - h8).abs() < 1e-12, "h8 at {i}");
        assert!((t.h6[i] + 2.0 * t.l1[i] / g1).abs() < 1e-14);
    }
}

/// The pulled-back operator at `t = 0` reproduces `div(A grad U)` for a Cartesian test function.
#[test]
fn operator_consistency_at_curve() {
    let ch = curved_chart(512);
    let u = Expression::parse("sin(1.3*y1 + 0.7*y2) + y1^2*y2").unwrap();
    let fields = &ch.fields;
    let uu = |t: f64, th: f64| {
        let (y, _, _) = ch.map(t, th).unwrap();
        u.eval(y).unwrap()
    };
    let e = 1e-3;
    for &i in &[40usize, 128, 256, 400, 470] {
        let th = ch.theta[i];
        let y = [ch.t.y1[i], ch.t.y2[i]];
        let j = u.jet(y).unwrap();
        let a1 = fields.a1.jet(y).unwrap();
        let a2 = fields.a2.jet(y).unwrap();
        let exact = a1.v * j.h[0] + a1.g[0] * j.g[0] + a2.v * j.h[2] + a2.g[1] * j.g[1];
        let c = uu(0.0, th);
        let u_t = (uu(-2.0 * e, th) - 8.0 * uu(-e, th) + 8.0 * uu(e, th) - uu(2.0 * e, th)) / (12.0 * e);
        let u_tt =
            (-uu(-2.0 * e, th) + 16.0 * uu(-e, th) - 30.0 * c + 16.0 * uu(e, th) - uu(2.0 * e, th)) / (12.0 * e * e);
        let u_s = (uu(0.0, th - 2.0 * e) - 8.0 * uu(0.0, th - e) + 8.0 * uu(0.0, th + e) - uu(0.0, th + 2.0 * e))
            / (12.0 * e);
        let u_ss = (-uu(0.0, th - 2.0 * e) + 16.0 * uu(0.0, th - e) - 30.0 * c + 16.0 * uu(0.0, th + e)
            - uu(0.0, th + 2.0 * e))
            / (12.0 * e * e);
        let t = &ch.t;
        let local = t.h1[i] * u_tt + t.h2[i] * u_ss + t.h3[i] * u_t + t.h4[i] * u_s;
        assert!((local - exact).abs() < 1e-5 * (1.0 + exact.abs()), "theta={th}: {local} vs {exact}");
    }
}

#[test]
fn flat_chart_closed_values() {
    let ch = flat_chart(64);
    for i in 0..=ch.m() {
        assert!((ch.t.h1[i] - 2.0).abs() < 1e-10);
        assert!((ch.t.h2[i] - 1.0).abs() < 1e-10);
        assert!((ch.t.beta[i] - 0.5f64.sqrt()).abs() < 1e-10);
    }
    assert!((ch.ell_total - 1.0).abs() < 1e-10);
    assert!((ch.b.b1 - 1.0).abs() < 1e-10 && ch.b.b2.abs() < 1e-10);
}

/// Lens: segment `y1 = 0` between the circles `|y - (0,1)| = 1` and `|y| = 1`.
#[test]
fn endpoint_model_matches_boundary() {
    let c = segment(128);
    let g1 = BoundaryGraph::y2_of_y1("1 - sqrt(1 - y1^2)").unwrap();
    let g2 = BoundaryGraph::y2_of_y1("sqrt(1 - y1^2)").unwrap();
    let contact = endpoint_contact(&c, [&g1, &g2], 1e-10).unwrap();
    assert!((contact.k[0] - 1.0).abs() < 1e-12);
    assert!((contact.k[1] + 1.0).abs() < 1e-12);
    let fields = Fields::parse("1 + 0.2*y1", "1 - 0.2*y1", "2 - y1^2").unwrap();
    let ch = build_chart(&c, &fields, &contact, 3.0).unwrap();
    // Solve H(t, phi(t)) on the boundary for small t, with H the unmodified chart.
    for (which, graph, th0) in [(0usize, &g1, 0.0), (1, &g2, 1.0)] {
        let phi = |t: f64| {
            let mut th = th0;
            for _ in 0..60 {
                let pt = ch.curve.eval(th).unwrap();
                let a1 = fields.a1.eval(pt.pos).unwrap();
                let a2 = fields.a2.eval(pt.pos).unwrap();
                let n = a1.hypot(a2);
                let y = [pt.pos[0] + t * a1 / n * pt.normal[0], pt.pos[1] + t * a2 / n * pt.normal[1]];
                let r = graph.residual(y).unwrap();
                // the residual is y2 - phi(y1); d/dth is about 1
                th -= r;
                if r.abs() < 1e-16 {
                    break;
                }
            }
            th - th0
        };
        let tau = 2e-4;
        let est = |t: f64| (phi(t) + phi(-t)) / (t * t);
        let kt = (4.0 * est(tau / 2.0) - est(tau)) / 3.0;
        assert!(
            (kt - contact.k[which] / 2.0).abs() < 1e-6,
            "endpoint {which}: measured {kt}, model {}",
            contact.k_tilde[which]
        );
    }
}

#[test]
fn quarter_ellipse_from_points() {
    let (a, b) = (1.0f64, 0.6f64);
    let pts: Vec<[f64; 2]> = (0..200)
        .map(|i| {
            let phi = std::f64::consts::FRAC_PI_2 * i as f64 / 199.0;
            [a * phi.cos(), b * phi.sin()]
        })
        .collect();
    let spec = CurveSpec { source: CurveSource::Points(pts), closed: false };
    let c = build_curve(&spec, 100).unwrap();
    let mut worst = 0.0f64;
    for n in &c.nodes {
        let phi = (n.pos[1] / b).atan2(n.pos[0] / a);
        let exact = a * b / (a * a * phi.sin().powi(2) + b * b * phi.cos().powi(2)).powf(1.5);
        // counter-clockwise traversal: the normal points outward
        worst = worst.max((n.k + exact).abs() / exact);
    }
    assert!(worst < 1e-3, "curvature error {worst}");
}

#[test]
fn contact_errors() {
    let c = segment(64);
    let tilted = BoundaryGraph::y2_of_y1("0.5*y1").unwrap();
    let flat = BoundaryGraph::y2_of_y1("1").unwrap();
    assert!(matches!(endpoint_contact(&c, [&tilted, &flat], 1e-8), Err(GeometryError::NonOrthogonal { which: 1, .. })));
    let off = BoundaryGraph::y2_of_y1("0.1").unwrap();
    assert!(matches!(endpoint_contact(&c, [&off, &flat], 1e-8), Err(GeometryError::EndpointOffGraph { which: 1, .. })));
    let f = Fields::parse("1 + y2", "1", "1").unwrap();
    assert!(matches!(
        build_chart(&c, &f, &BoundaryContact::flat(), 3.0),
        Err(GeometryError::EndpointAnisotropy { which: 2, .. })
    ));
}

#[test]
fn closed_chart_agrees_with_flat_contact_arc() {
    let circle = |closed: bool| CurveSpec {
        source: CurveSource::Parametric {
            x: Expression::parse_curve("cos(2*pi*s)/(2*pi)").unwrap(),
            y: Expression::parse_curve("sin(2*pi*s)/(2*pi)").unwrap(),
            s0: 0.0,
            s1: 1.0,
        },
        closed,
    };
    let f = Fields::parse("1 + 0.1*y1^2", "1 + 0.1*y1^2", "2 - y1^2 - y2^2").unwrap();
    let closed = build_chart(&build_curve(&circle(true), 128).unwrap(), &f, &BoundaryContact::flat(), 3.0).unwrap();
    let open = build_chart(&build_curve(&circle(false), 128).unwrap(), &f, &BoundaryContact::flat(), 3.0).unwrap();
    for i in 0..=128 {
        for (a, b) in [
            (closed.t.f0[i], open.t.f0[i]),
            (closed.t.f1[i], open.t.f1[i]),
            (closed.t.f2[i], open.t.f2[i]),
            (closed.t.hh3[i], open.t.hh3[i]),
            (closed.t.v_tt[i], open.t.v_tt[i]),
        ] {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn frame_is_orthonormal(c1 in -0.3f64..0.3, c2 in -0.3f64..0.3, m in 16usize..80) {
        let spec = CurveSpec {
            source: CurveSource::Parametric {
                x: Expression::parse_curve(&format!("{c1:?}*sin(3*s) + s")).unwrap(),
                y: Expression::parse_curve(&format!("{c2:?}*s^2 + 0.5*s")).unwrap(),
                s0: 0.0,
                s1: 1.0,
            },
            closed: false,
        };
        let c = build_curve(&spec, m).unwrap();
        for n in &c.nodes {
            let t = n.tangent;
            prop_assert!((t[0].hypot(t[1]) - 1.0).abs() < 1e-12);
            prop_assert!((t[0] * n.normal[0] + t[1] * n.normal[1]).abs() < 1e-12);
            // gamma' = (-n2, n1)
            prop_assert!((t[0] + n.normal[1]).abs() < 1e-12 && (t[1] - n.normal[0]).abs() < 1e-12);
        }
        // node spacing is uniform in arc length
        let h = c.length / m as f64;
        for w in c.nodes.windows(2) {
            let chord = (w[1].pos[0] - w[0].pos[0]).hypot(w[1].pos[1] - w[0].pos[1]);
            prop_assert!(chord <= h * (1.0 + 1e-9));
            prop_assert!(chord >= h * (1.0 - 0.05));
        }
    }
}
