use bubbleflow::correction::*;
use bubbleflow::profiles::BubbleSpec;

const T: f64 = 0.01;

fn lstar(t: f64) -> (f64, f64) {
    let g = T - t;
    (g / g.ln().powi(2), -1.0 / g.ln().powi(2))
}

#[test]
fn error_term_tails_on_lambda_star() {
    let t = T / 2.0;
    let (lam, ldot) = lstar(t);
    let spec = BubbleSpec::boundary(lam, 0.0);
    let rate = RealRate(|s: f64| lstar(s).1);
    let motion = BubbleMotion {
        lambda_dot: ldot,
        xi_dot: [0.0, 0.0],
    };
    let window = TimeWindow::from_final_time(T);
    let (mut rho, mut k01, mut k02) = (vec![], vec![], vec![]);
    for i in 0..=20 {
        let r = 10f64.powf(1.0 + 2.0 * i as f64 / 20.0);
        let e = error_k(&rate, &spec, &motion, r, 0.0, t, window).unwrap();
        rho.push(r);
        k01.push(e.k01.c1);
        k02.push(e.k02.c1);
    }
    let p01 = fitted_exponent(&rho, &k01);
    let p02 = fitted_exponent(&rho, &k02);
    // both corrected terms decay like rho^-3; the 1/rho tail of the bare
    // error is gone
    assert!((p01 + 3.36).abs() < 0.05, "{p01}");
    assert!((p02 + 2.99).abs() < 0.05, "{p02}");
    assert!(p01 < p02);
}
