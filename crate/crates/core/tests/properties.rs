use lrmc::svd::{full_svd, thin_qr};
use lrmc::{dist, incoherence, project, sample_mask, DenseMatrix, FactorPair, GroundTruth};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    prop::collection::vec(-10.0..10.0f64, rows * cols)
        .prop_map(move |data| DenseMatrix::new(rows, cols, data).unwrap())
}

fn any_matrix() -> impl Strategy<Value = DenseMatrix> {
    (1usize..12, 1usize..12).prop_flat_map(|(r, c)| matrix(r, c))
}

fn matrix_pair() -> impl Strategy<Value = (DenseMatrix, DenseMatrix)> {
    (1usize..15, 1usize..15).prop_flat_map(|(r, c)| (matrix(r, c), matrix(r, c)))
}

fn orthogonal(r: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    thin_qr(&random(r, r, &mut rng)).0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn projection_is_idempotent_self_adjoint_and_contractive(
        (a, b) in matrix_pair(),
        p in 0.05..1.0f64,
        seed in any::<u64>(),
    ) {
        let mask = sample_mask(a.rows(), a.cols(), p, seed).unwrap();
        let pa = project(&a, &mask).unwrap();
        prop_assert_eq!(project(&pa, &mask).unwrap(), pa.clone());
        let pb = project(&b, &mask).unwrap();
        let (lhs, rhs) = (pa.inner(&b), a.inner(&pb));
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        prop_assert!(pa.frobenius_norm() <= a.frobenius_norm());
    }

    #[test]
    fn norm_inequalities(m in any_matrix()) {
        let (spec, frob, two_inf) = (m.spectral_norm(), m.frobenius_norm(), m.two_inf_norm());
        let k = m.rows().min(m.cols()) as f64;
        prop_assert!(spec <= frob * (1.0 + 1e-9) + 1e-12);
        prop_assert!(frob <= k.sqrt() * spec * (1.0 + 1e-9) + 1e-12);
        prop_assert!(two_inf <= frob * (1.0 + 1e-12));
    }

    #[test]
    fn full_svd_is_deterministic(m in any_matrix()) {
        let first = full_svd(&m).unwrap();
        let second = full_svd(&m).unwrap();
        prop_assert_eq!(first.u, second.u);
        prop_assert_eq!(first.sigma, second.sigma);
        prop_assert_eq!(first.v, second.v);
    }

    #[test]
    fn dist_is_invariant_under_orthogonal_alignment(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d1, d2, r) = (9, 7, 3);
        let f_star = FactorPair::new(random(d1, r, &mut rng), random(d2, r, &mut rng)).unwrap();
        let mut f = f_star.clone();
        f.x.axpy(0.1, &random(d1, r, &mut rng));
        f.y.axpy(0.1, &random(d2, r, &mut rng));
        let base = dist(&f, &f_star).unwrap();
        let rotated = f.right_mul(&orthogonal(r, seed ^ 1));
        let moved = dist(&rotated, &f_star).unwrap();
        prop_assert!((base - moved).abs() <= 1e-8 * (1.0 + base));
        prop_assert!(dist(&f_star, &f_star).unwrap() < 1e-12);
    }
}

#[test]
fn incoherence_is_at_least_one_on_random_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let r = rng.random_range(1..=4);
        let d1 = rng.random_range(r..=20);
        let d2 = rng.random_range(r..=20);
        let u = thin_qr(&random(d1, r, &mut rng)).0;
        let v = thin_qr(&random(d2, r, &mut rng)).0;
        let mu = incoherence(&u, &v).unwrap();
        assert!(
            mu >= 1.0 - 1e-12,
            "mu = {mu} for a {d1}x{d2} rank-{r} frame"
        );
        let sigma: Vec<f64> = (0..r).map(|k| 1.0 / (k + 1) as f64).collect();
        let gt = GroundTruth::from_factors(u, sigma, v).unwrap();
        assert!(gt.mu >= 1.0 - 1e-12 && gt.kappa >= 1.0);
    }
}

#[test]
fn mask_sizes_follow_the_binomial_law() {
    let (d1, d2, p) = (50, 40, 0.3);
    let n = (d1 * d2) as f64;
    let (mean, sd) = (n * p, (n * p * (1.0 - p)).sqrt());
    let counts: Vec<f64> = (0..100)
        .map(|seed| sample_mask(d1, d2, p, seed).unwrap().len() as f64)
        .collect();
    for &c in &counts {
        assert!((c - mean).abs() <= 5.0 * sd, "count {c}");
    }
    let avg = counts.iter().sum::<f64>() / counts.len() as f64;
    assert!((avg - mean).abs() <= 4.0 * sd / 10.0, "average {avg}");
    let var = counts.iter().map(|c| (c - avg).powi(2)).sum::<f64>() / 99.0;
    assert!(var > 0.5 * sd * sd && var < 1.6 * sd * sd, "variance {var}");
}
