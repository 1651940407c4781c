mod common;

use layerforge::fieldexpr::Fields;
use layerforge::geometry::{build_chart, BoundaryContact};
use layerforge::profiles::{correction_coefficients, Profile};
use proptest::prelude::*;
use std::f64::consts::PI;

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
}

fn oracle(f: &dyn Fn(f64) -> f64) -> f64 {
    // integrands here are even or supported on x >= 0 after folding
    (-60..60).map(|k| adaptive_simpson(f, 0.5 * k as f64, 0.5 * (k + 1) as f64, 1e-15)).sum()
}

fn sech(x: f64) -> f64 {
    1.0 / x.cosh()
}

fn cubic() -> Profile {
    Profile::new(3.0, 20.0, 8000).unwrap()
}

#[test]
fn cubic_closed_forms() {
    let pr = cubic();
    assert_eq!(pr.lambda0, 3.0);
    assert!((pr.c_p - 2.0 * 2f64.sqrt()).abs() < 1e-14);
    assert!((pr.w(0.0) - 2f64.sqrt()).abs() < 1e-15);
    for x in [-7.0, -1.3, 0.0, 0.4, 2.5, 11.0] {
        assert!((pr.w(x) - 2f64.sqrt() * sech(x)).abs() < 1e-15);
        assert!((pr.z(x) - 0.75f64.sqrt() * sech(x).powi(2)).abs() < 1e-14);
    }
    let w2 = oracle(&|x| 2.0 * sech(x).powi(2));
    let wx2 = oracle(&|x| 2.0 * (sech(x) * x.tanh()).powi(2));
    let w4 = oracle(&|x| 4.0 * sech(x).powi(4));
    assert!((w2 - 4.0).abs() < 1e-9 && (wx2 - 4.0 / 3.0).abs() < 1e-9 && (w4 - 16.0 / 3.0).abs() < 1e-9);
    assert!((pr.rho[0] - wx2).abs() < 1e-9);
    assert!((pr.wp1 - w4).abs() < 1e-9);
    let id = pr.identities();
    assert!(id.w2_vs_wx2.abs() < 1e-9);
    assert!(id.wx2_vs_xwxwxx.abs() < 1e-9);
    assert!((pr.z(0.0) - 3f64.sqrt() / 2.0).abs() < 1e-12);
}

fn check_ground_state(pr: &Profile) {
    let p = pr.p;
    let mu = 0.5 * (p - 1.0);
    let zint = oracle(&|x| pr.z(x).powi(2));
    assert!((zint - 1.0).abs() < 1e-8, "int Z^2 = {zint}");
    for i in (0..pr.x.len()).step_by(7) {
        let x = pr.x[i];
        let w = pr.w(x);
        // second derivative of the closed form, differentiated by hand
        let wxx = w * ((mu * x).tanh().powi(2) - mu * sech(mu * x).powi(2));
        assert!((wxx - w + w.powf(p)).abs() < 1e-10);
        assert!((pr.w(-x) - w).abs() < 1e-15);
        let (z, _, zxx) = pr.z3(x);
        if x.abs() < pr.l - 1.0 {
            let res = zxx - z + p * w.powf(p - 1.0) * z - pr.lambda0 * z;
            assert!(res.abs() < 1e-8, "x = {x}: {res}");
        }
    }
    // finite differences of w agree with the closed-form derivatives
    let e = 1e-3;
    for x in [0.0, 0.3, 1.7, 4.0] {
        let fd1 = (pr.w(x - 2.0 * e) - 8.0 * pr.w(x - e) + 8.0 * pr.w(x + e) - pr.w(x + 2.0 * e)) / (12.0 * e);
        let fd2 = (-pr.w(x - 2.0 * e) + 16.0 * pr.w(x - e) - 30.0 * pr.w(x) + 16.0 * pr.w(x + e) - pr.w(x + 2.0 * e))
            / (12.0 * e * e);
        assert!((fd1 - pr.w_x(x)).abs() < 1e-9);
        assert!((fd2 - pr.w_xx(x)).abs() < 1e-7);
    }
    assert!(pr.w_x(0.0).abs() < 1e-15);
    // the tail is C_p e^-|x|, and C_p = 2^(2/(p-1)) w(0)
    assert!(pr.w(pr.l) <= (-pr.l).exp() * pr.c_p * 1.1);
    assert!(pr.w(pr.l) >= (-pr.l).exp() * pr.c_p * 0.9);
    assert!((pr.c_p / pr.w(0.0) - 2f64.powf(1.0 / mu)).abs() < 1e-12);
}

#[test]
fn ground_state_invariants() {
    check_ground_state(&cubic());
    let quad = Profile::new(2.0, 20.0, 4000).unwrap();
    assert!((quad.w(0.0) - 1.5).abs() < 1e-15);
    check_ground_state(&quad);
}

#[test]
fn omega_solvability_and_identities() {
    let pr = cubic();
    for k in 0..4 {
        assert!(pr.solvability[k].abs() <= 1e-8, "k = {k}: {}", pr.solvability[k]);
    }
    let id = pr.identities();
    for k in 0..4 {
        assert!(id.orthogonality[k].abs() <= 1e-8, "k = {k}");
    }
    assert!((id.omega2_wx - id.omega2_wx_expected).abs() < 1e-6);
    assert!((id.omega2_wx + 2.0).abs() < 1e-6);
    assert!((id.omega3_w - id.omega3_w_expected).abs() < 1e-6);
    assert!((id.omega3_w - 1.0).abs() < 1e-6);
    let n = pr.x.len();
    for i in 0..n {
        let j = n - 1 - i;
        assert!((pr.omega[0][i] + pr.omega[0][j]).abs() < 1e-10);
        assert!((pr.omega[1][i] + pr.omega[1][j]).abs() < 1e-10);
        assert!((pr.omega[2][i] - pr.omega[2][j]).abs() < 1e-10);
        assert!((pr.omega[3][i] - pr.omega[3][j]).abs() < 1e-10);
    }
}

#[test]
fn even_omegas_match_closed_forms() {
    for p in [2.0, 3.0, 4.5] {
        let pr = Profile::new(p, 20.0, 8000).unwrap();
        for (i, &x) in pr.x.iter().enumerate() {
            if x.abs() > 15.0 {
                continue;
            }
            let om2 = -pr.w(x) / (p - 1.0) - 0.5 * x * pr.w_x(x);
            let om3 = -0.5 * x * pr.w_x(x);
            assert!((pr.omega[2][i] - om2).abs() < 1e-7, "p={p} x={x}");
            assert!((pr.omega[3][i] - om3).abs() < 1e-7, "p={p} x={x}");
        }
    }
}

#[test]
fn odd_omegas_solve_their_equations() {
    let pr = cubic();
    let h = pr.h;
    for k in 0..2 {
        let om = &pr.omega[k];
        for i in (2..pr.x.len() - 2).step_by(5) {
            let x = pr.x[i];
            if x.abs() > 15.0 {
                continue;
            }
            let d2 = (-om[i - 2] + 16.0 * om[i - 1] - 30.0 * om[i] + 16.0 * om[i + 1] - om[i + 2]) / (12.0 * h * h);
            let res = -d2 + om[i] - 3.0 * pr.w(x).powi(2) * om[i] - pr.rhs(k, x);
            assert!(res.abs() < 1e-6, "k={k} x={x} res={res}");
        }
    }
}

#[test]
fn interaction_constants_match_oracle() {
    let pr = cubic();
    let r2 = 2f64.sqrt();
    let o1 = oracle(&|x| 2.0 * (sech(x) * x.tanh()).powi(2));
    let fold = |f: &dyn Fn(f64) -> f64| oracle(&|x: f64| if x >= 0.0 { f(x) } else { 0.0 });
    let o2 = 3.0 * 2.0 * r2 * fold(&|x| 2.0 * sech(x).powi(2) * (-r2 * sech(x) * x.tanh()) * (-2.0 * x.sinh()));
    let o3 = 2.0 * oracle(&|x| (r2 * sech(x) - 2.0 * r2 * sech(x).powi(3)) * 0.75f64.sqrt() * sech(x).powi(2));
    let o4 = 3.0 * 2.0 * r2 * fold(&|x| 2.0 * sech(x).powi(2) * 0.75f64.sqrt() * sech(x).powi(2) * (-2.0 * x.sinh()));
    let oracle_vals = [o1, o2, o3, o4];
    let closed = [4.0 / 3.0, 16.0, -6f64.sqrt() * PI / 4.0, -4.0 * 6f64.sqrt()];
    for k in 0..4 {
        assert!((oracle_vals[k] - closed[k]).abs() < 1e-8, "oracle {k}: {}", oracle_vals[k]);
        assert!((pr.rho[k] - oracle_vals[k]).abs() < 1e-8, "rho {k}: {}", pr.rho[k]);
    }
}

#[test]
fn constants_independent_of_grid() {
    let a = Profile::new(3.0, 20.0, 4000).unwrap();
    let b = Profile::new(3.0, 20.0, 8000).unwrap();
    let c = Profile::new(3.0, 40.0, 8000).unwrap();
    for k in 0..4 {
        assert!((a.rho[k] - b.rho[k]).abs() <= 1e-8);
        assert!((b.rho[k] - c.rho[k]).abs() <= 1e-10);
    }
}

#[test]
fn constants_for_mild_nonlinearity() {
    // integrands decay like exp(-(p-1)x), so p below 2 is still fine
    let pr = Profile::new(1.5, 20.0, 4000).unwrap();
    assert!(pr.rho.iter().all(|r| r.is_finite()));
    assert!(pr.rho[1] > 0.0 && pr.rho[3] < 0.0);
}

#[test]
fn correction_coefficients_trivial_charts() {
    for ch in [common::flat_chart(100), common::v_chart(100)] {
        let cc = correction_coefficients(&ch).unwrap();
        for v in [&cc.a10, &cc.a11, &cc.a12, &cc.a13, &cc.relation_residual] {
            assert!(v.iter().all(|x| x.abs() < 1e-12));
        }
    }
}

#[test]
fn relation_residual_tracks_stationarity() {
    let f = Fields::parse("1", "1", "2 - (y1 - 0.1)^2").unwrap();
    let tilted = build_chart(&common::segment(200), &f, &BoundaryContact::flat(), 3.0).unwrap();
    for ch in [tilted, common::curved_chart(200)] {
        let cc = correction_coefficients(&ch).unwrap();
        assert!(cc.a12.iter().any(|x| x.abs() > 1e-3) || cc.a10.iter().any(|x| x.abs() > 1e-3));
        assert!(cc.relation_residual.iter().any(|x| x.abs() > 1e-3));
        for i in 0..=ch.m() {
            assert!((cc.relation_residual[i] - cc.relation_predicted[i]).abs() < 1e-6);
        }
    }
    let cc = correction_coefficients(&common::aniso_chart(200)).unwrap();
    assert!(cc.relation_residual.iter().all(|x| x.abs() < 1e-6));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn profile_invariants(p in 1.3f64..6.0) {
        let pr = Profile::new(p, 20.0, 2000).unwrap();
        let id = pr.identities();
        prop_assert!(id.w2_vs_wx2.abs() < 1e-8);
        prop_assert!(id.wx2_vs_xwxwxx.abs() < 1e-8);
        for k in 0..4 {
            prop_assert!(pr.solvability[k].abs() < 1e-8);
            prop_assert!(id.orthogonality[k].abs() < 1e-8);
        }
        prop_assert!((id.omega2_wx - id.omega2_wx_expected).abs() < 1e-5);
        prop_assert!((id.omega3_w - id.omega3_w_expected).abs() < 1e-5);
        prop_assert!(pr.rho[1] > 0.0);
    }
}
