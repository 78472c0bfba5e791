use super::*;
use crate::factory::build_bezout_factors;
use crate::robotino;
use crate::stats::{self, rng_stream};
use proptest::prelude::*;

fn factors() -> BezoutFactors {
    let model = robotino::model().unwrap();
    let gains = robotino::gains(&model, &robotino::noise().unwrap()).unwrap();
    build_bezout_factors(&model, &gains).unwrap()
}

fn sigma_ry() -> Mat {
    crate::sscore::kalman_gain(&robotino::model().unwrap(), &robotino::noise().unwrap())
        .unwrap()
        .innovation_cov
        .unwrap()
}

fn white(rng: &mut stats::SimRng, factor: &Mat, n: usize) -> Vec<Vector> {
    (0..n).map(|_| stats::gaussian(rng, factor)).collect()
}

fn empirical_cov(xs: &[Vector]) -> Mat {
    let k = xs[0].len();
    let mut acc = Mat::zeros(k, k);
    for x in xs {
        acc += x * x.transpose();
    }
    acc / xs.len() as f64
}

#[test]
fn resilience_norms_match_reference_values() {
    let f = factors();
    let nominal = resilient_performance_check(&f, &robotino::q_r1().unwrap(), &robotino::q_r2().unwrap(), &robotino::q_umc().unwrap(), (Some(0.5), None)).unwrap();
    assert!((nominal.gamma_theta - 0.4).abs() < 1e-6, "{}", nominal.gamma_theta);
    assert!(nominal.gamma_theta_pass);
    assert!(nominal.gamma_ry.is_finite() && nominal.gamma_ry > 0.0);
    let ftc = resilient_performance_check(&f, &robotino::q_r1().unwrap(), &robotino::q_r2_scaled(-90.0).unwrap(), &robotino::q_umc().unwrap(), (None, None)).unwrap();
    assert!((ftc.gamma_theta - 1.1099e-3).abs() < 1e-7, "{}", ftc.gamma_theta);
}

#[test]
fn static_postfilter_is_inverse_square_root() {
    let sigma = Mat::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
    let r = design_attack_postfilter(&StateSpace::identity(2, 0.1), &sigma).unwrap();
    let expect = linalg::inv_sqrtm_pd(&sigma, "s").unwrap();
    assert!((r.d() - &expect).amax() < 1e-12);
    assert!(r.n() == 0 || (r.c().amax() < 1e-12));
}

#[test]
fn postfilter_whitens_fused_output_residual() {
    let sigma = sigma_ry();
    let q_r1 = robotino::q_r1().unwrap();
    let r = design_attack_postfilter(&q_r1, &sigma).unwrap();
    assert!(r.is_stable().unwrap());
    let chain = series_connect(&q_r1, &r).unwrap();
    let mut rng = rng_stream(11, 0);
    let fac = linalg::psd_factor(&sigma, "s").unwrap();
    let mut f = LtiFilter::new(chain.clone());
    let out: Vec<Vector> = white(&mut rng, &fac, 100_050).iter().map(|x| f.step(x).unwrap()).collect();
    let cov = empirical_cov(&out[50..]);
    let err = (&cov - Mat::identity(3, 3)).norm() / 3f64.sqrt();
    assert!(err < 0.05, "whitening error {err}");

    // A filter designed for the wrong covariance fails the same check.
    let wrong = design_attack_postfilter(&q_r1, &(&sigma * 4.0)).unwrap();
    let mut g = LtiFilter::new(series_connect(&q_r1, &wrong).unwrap());
    let mut rng = rng_stream(11, 0);
    let out: Vec<Vector> = white(&mut rng, &fac, 20_050).iter().map(|x| g.step(x).unwrap()).collect();
    let cov = empirical_cov(&out[50..]);
    assert!((&cov - Mat::identity(3, 3)).norm() / 3f64.sqrt() > 0.5);
}

#[test]
fn switch_detector_static_identity() {
    let sw = build_switch_detector(&StateSpace::identity(3, 0.1), 0, 1, 0.2).unwrap();
    assert_eq!(sw.tau, 1);
    assert!((sw.sigma_min - 1.0).abs() < 1e-12 && (sw.sigma_max - 1.0).abs() < 1e-12);
    assert!((sw.l_l - 0.2).abs() < 1e-12 && (sw.l_u - 0.2).abs() < 1e-12);
    assert_eq!(sw.h_eta, Mat::identity(3, 3));
}

#[test]
fn switch_detector_for_robot_and_rayleigh_bounds() {
    let r = design_attack_postfilter(&robotino::q_r1().unwrap(), &sigma_ry()).unwrap();
    let sw = build_switch_detector(&r, 30, 500, 1e-4).unwrap();
    assert_eq!(sw.tau, 530);
    assert!(sw.l_l < sw.l_u);
    assert!((sw.l_l - (530.0 * sw.sigma_min).sqrt() * 1e-4).abs() < 1e-15);
    assert_eq!(sw.h_eta.shape(), (93, 1590));
    let hh = &sw.h_eta * sw.h_eta.transpose();
    let mut rng = rng_stream(3, 0);
    for _ in 0..1000 {
        let x = stats::standard_normal(&mut rng, 93);
        let q = (x.transpose() * &hh * &x)[(0, 0)];
        let n2 = x.norm_squared();
        assert!(q >= sw.sigma_min * n2 * (1.0 - 1e-9) && q <= sw.sigma_max * n2 * (1.0 + 1e-9));
    }
    let slow = StateSpace::new(Mat::from_element(1, 1, 0.9), Mat::identity(1, 1), Mat::identity(1, 1), Mat::identity(1, 1), 0.1).unwrap();
    assert!(build_switch_detector(&slow, 5, 20, 1e-3).is_err());
}

#[test]
fn llr_branch_constants_from_fixed_bounds() {
    let rho = 129.15f64.sqrt();
    let [a, b, c] = llr_branches(rho, 0.1433, 1.0474);
    assert!((a - 53.2207).abs() < 1e-3, "{a}");
    assert!((b + 9.7366).abs() < 1e-3, "{b}");
    assert!((c + 62.9573).abs() < 1e-3, "{c}");
    assert_eq!(llr_branches(1.0474, 0.1433, 1.0474)[0], 0.0);
}

#[test]
fn llr_threshold_quantile_and_degenerate_bounds() {
    let rho_sq = stats::ncx2_quantile(0.99, 93.0, 1.0970).unwrap();
    assert!((rho_sq - 129.15).abs() < 0.5, "{rho_sq}");
    let mut sw = build_switch_detector(&StateSpace::identity(3, 0.1), 30, 1, 1.0).unwrap();
    sw.l_l = 0.1433;
    sw.l_u = 1.0474;
    let th = llr_threshold(&sw, 0.01).unwrap();
    assert!((th.rho_sq - 129.15).abs() < 0.5);
    assert!((th.effective - th.per_branch[2]).abs() < 1e-12);
    let loose = llr_threshold(&sw, 0.05).unwrap();
    assert!(loose.rho_sq < th.rho_sq && loose.effective > th.effective);
    sw.l_u = 1e-9;
    let central = llr_threshold(&sw, 0.01).unwrap();
    let chi = stats::chi2_quantile(0.99, 93.0).unwrap();
    assert!((central.rho_sq - chi).abs() < 1e-6);
    assert!(th.rho_sq > chi);
}

/// Closest points on the admissible sets by explicit projection.
fn brute_llr(r: &Vector, l_l: f64, l_u: f64) -> f64 {
    let rho = r.norm();
    let inside = r * (l_l / rho).min(1.0);
    let outside = r * (l_u / rho).max(1.0);
    0.5 * (r - outside).norm_squared() - 0.5 * (r - inside).norm_squared()
}

#[test]
fn llr_matches_projection_oracle() {
    let mut sw = build_switch_detector(&StateSpace::identity(3, 0.1), 30, 1, 1.0).unwrap();
    sw.l_l = 0.8;
    sw.l_u = 1.6;
    let th = llr_threshold(&sw, 0.01).unwrap();
    let mut rng = rng_stream(5, 0);
    for i in 0..100 {
        let dir = stats::standard_normal(&mut rng, 93);
        let r = &dir / dir.norm() * (0.02 * i as f64 + 0.01);
        let v = llr_statistic(&sw, &th, 0, &r).unwrap();
        let oracle = brute_llr(&r, sw.l_l, sw.l_u);
        assert!((v.statistic - oracle).abs() < 1e-9);
        // No random feasible point beats the projections.
        for _ in 0..20 {
            let z = stats::standard_normal(&mut rng, 93);
            let small = &z / z.norm() * sw.l_l * 0.999;
            let big = &z / z.norm() * sw.l_u * 1.001;
            assert!((&r - small).norm_squared() >= (&r - r.clone() * (sw.l_l / r.norm()).min(1.0)).norm_squared() - 1e-12);
            assert!((&r - big).norm_squared() >= (&r - r.clone() * (sw.l_u / r.norm()).max(1.0)).norm_squared() - 1e-12);
        }
    }
}

#[test]
fn glr_zero_at_nominal_and_positive_otherwise() {
    let sigma = Mat::identity(2, 2);
    let window = vec![
        Vector::from_vec(vec![1.0, 1.0]),
        Vector::from_vec(vec![1.0, -1.0]),
    ];
    // Sample covariance of this window is the identity.
    assert!(glr_statistic(&window, &sigma).unwrap().abs() < 1e-12);
    let scaled: Vec<Vector> = window.iter().map(|x| x * 3.0).collect();
    assert!(glr_statistic(&scaled, &sigma).unwrap() > 1.0);
    assert!(glr_statistic(&window[..1], &sigma).is_err());
}

#[test]
fn glr_calibration_controls_false_alarms() {
    let mut rng = rng_stream(8, 0);
    let eye = Mat::identity(3, 3);
    let sample = |rng: &mut stats::SimRng| -> f64 {
        let w = white(rng, &eye, 50);
        glr_statistic(&w, &eye).unwrap()
    };
    let cal: Vec<f64> = (0..10_000).map(|_| sample(&mut rng)).collect();
    let th = calibrate_threshold(&cal, 0.01).unwrap();
    let hits = (0..10_000).filter(|_| sample(&mut rng) > th).count() as u64;
    assert!(stats::RateEstimate::new(hits, 10_000).covers(0.01));
}

#[test]
fn schedule_cycles_through_dwell_times() {
    let s = DetectorSchedule::new(
        vec![(DetectorPhase::Regular, 150), (DetectorPhase::Additive, 50), (DetectorPhase::Multiplicative, 50)],
        20,
    )
    .unwrap();
    assert_eq!(s.phase_at(0), (DetectorPhase::Regular, 0));
    assert_eq!(s.phase_at(149), (DetectorPhase::Regular, 149));
    assert_eq!(s.phase_at(150), (DetectorPhase::Additive, 0));
    assert_eq!(s.phase_at(210), (DetectorPhase::Multiplicative, 10));
    assert_eq!(s.phase_at(250), (DetectorPhase::Regular, 0));
    assert!(DetectorSchedule::new(vec![(DetectorPhase::Regular, 10), (DetectorPhase::Additive, 5)], 5).is_err());
}

#[test]
fn control_law_cancels_reference_path() {
    let f = factors();
    let reference = ReferenceConfig::new(vec![(0, Vector::zeros(3)), (5, Vector::from_vec(vec![0.1, 0.0, 0.05]))], None, robotino::q_v().unwrap()).unwrap();
    let cfg = McConfig {
        factors: f,
        q_r1: robotino::q_r1().unwrap(),
        q_r2: robotino::q_r2().unwrap(),
        q_umc: robotino::q_umc().unwrap(),
        reference,
        sigma_ry: sigma_ry(),
        alpha: 0.01,
        switch: None,
        pdd: None,
        schedule: DetectorSchedule::regular_only(),
    };
    let mut mc = McStation::new(cfg).unwrap();
    let mut q_r2 = LtiFilter::new(robotino::q_r2().unwrap());
    let t = robotino::q_v_gain();
    for k in 0..40 {
        let v = if k >= 5 { &t * Vector::from_vec(vec![0.1, 0.0, 0.05]) } else { Vector::zeros(3) };
        let r = q_r2.step(&v).unwrap();
        let peek = mc.mc_control(&r).unwrap();
        let step = mc.commit(&r).unwrap();
        assert_eq!(peek, step.u_mc);
        assert!((step.u_mc - &v).amax() < 1e-9 * v.amax().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn llr_is_monotone_in_norm(a in 0.0f64..20.0, b in 0.0f64..20.0, lo in 0.01f64..2.0, gap in 0.01f64..3.0) {
        let hi = lo + gap;
        let ja = llr_branches(a, lo, hi)[llr_branch(a, lo, hi) as usize];
        let jb = llr_branches(b, lo, hi)[llr_branch(b, lo, hi) as usize];
        if a < b { prop_assert!(ja >= jb - 1e-12); }
    }
}
