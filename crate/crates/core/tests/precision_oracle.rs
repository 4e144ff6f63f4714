mod oracle;

use fieldnet::precision::{glasso_kkt, glasso_objective};
use fieldnet::{graphical_lasso, GlassoOptions};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, 2 * n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() / (2 * n) as f64 + DMatrix::identity(n, n) * 0.05
}

#[test]
fn matches_dual_oracle_on_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..20 {
        let s = random_spd(4, &mut rng);
        let nu = rng.random_range(0.01..0.3);
        let est = graphical_lasso(&s, nu, &GlassoOptions::default()).unwrap();
        assert!(est.converged, "case {case}");
        assert!(glasso_kkt(&s, &est.omega, nu).unwrap() <= 1e-5, "case {case}");
        let reference = oracle::glasso_dual(&s, nu, 20_000);
        let (ours, theirs) = (glasso_objective(&s, &est.omega, nu), glasso_objective(&s, &reference, nu));
        assert!(ours <= theirs + 1e-5, "case {case}: {ours} vs {theirs}");
        assert!((ours - theirs).abs() <= 1e-5, "case {case}: {ours} vs {theirs}");
        assert!((&est.omega - &reference).amax() <= 1e-3 * reference.amax(), "case {case}");
    }
}

#[test]
fn converged_estimates_meet_the_kkt_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..300 {
        let n = rng.random_range(2..=6);
        let s = random_spd(n, &mut rng);
        let nu = rng.random_range(0.0..0.4);
        let est = graphical_lasso(&s, nu, &GlassoOptions::default()).unwrap();
        assert!(est.converged, "case {case}");
        let kkt = glasso_kkt(&s, &est.omega, nu).unwrap();
        assert!(kkt <= GlassoOptions::default().kkt_tol, "case {case}: {kkt}");
    }
}

#[test]
fn diagonal_covariance_without_penalty_inverts_exactly() {
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 2.0, 4.0, 1.25]));
    let est = graphical_lasso(&s, 0.0, &GlassoOptions::default()).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let want = if i == j { 1.0 / s[(i, i)] } else { 0.0 };
            assert_eq!(est.omega[(i, j)], want);
        }
    }
}

#[test]
fn penalty_above_largest_covariance_gives_diagonal_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = random_spd(5, &mut rng);
    let off = (0..5).flat_map(|j| (0..5).filter(move |i| *i != j).map(move |i| (i, j))).map(|(i, j)| s[(i, j)].abs()).fold(0.0, f64::max);
    let est = graphical_lasso(&s, 1.01 * off, &GlassoOptions::default()).unwrap();
    assert_eq!(est.edges(), 0);
    for i in 0..5 {
        assert!((est.omega[(i, i)] - 1.0 / s[(i, i)]).abs() < 1e-10);
    }
}
