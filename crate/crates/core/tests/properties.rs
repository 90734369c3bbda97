use fl_ntk_core::dataset::{generate, partition_iid, partition_skewed, Dataset, DistributionSpec};
use fl_ntk_core::kernel::{gram_pair, ntk_infinity};
use fl_ntk_core::model::{forward, init};
use fl_ntk_core::numerics::{eigh_symmetric, solve_spd, spectral_norm, streams, DenseMatrix, RngStream};
use fl_ntk_core::theory::{contraction_factor, generalization_bound, rounds_to_eps};
use proptest::prelude::*;

fn symmetric(n: usize, seed: u64) -> DenseMatrix {
    let g = fl_ntk_core::numerics::gaussian_matrix(&RngStream::new(seed, 50), n, n, 1.0).unwrap();
    g.add_scaled(1.0, &g.transpose()).unwrap()
}

fn dataset(n: usize, d: usize, seed: u64) -> Dataset {
    generate(&DistributionSpec::uniform_sphere(), n, d, &RngStream::new(seed, streams::DATA)).unwrap()
}

/// Random rotation from the eigenvectors of a random symmetric matrix.
fn rotation(d: usize, seed: u64) -> DenseMatrix {
    eigh_symmetric(&symmetric(d, seed)).unwrap().vectors
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn eigen_reconstructs(n in 1usize..9, seed in any::<u64>()) {
        let a = symmetric(n, seed);
        let e = eigh_symmetric(&a).unwrap();
        let v = &e.vectors;
        let lam = DenseMatrix::diagonal(&e.values);
        let back = v.matmul(&lam).unwrap().matmul(&v.transpose()).unwrap();
        prop_assert!(back.sub(&a).unwrap().max_abs() <= 1e-10 * (1.0 + a.max_abs()));
        let gram = v.transpose().matmul(v).unwrap();
        prop_assert!(gram.sub(&DenseMatrix::identity(n)).unwrap().max_abs() <= 1e-12);
        prop_assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        let s = spectral_norm(&a).unwrap();
        let top = e.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        prop_assert!((s - top).abs() <= 1e-8 * (1.0 + top));
    }

    #[test]
    fn spd_solve_round_trips(n in 1usize..9, seed in any::<u64>()) {
        let g = fl_ntk_core::numerics::gaussian_matrix(&RngStream::new(seed, 51), n, n, 1.0).unwrap();
        let a = g.matmul(&g.transpose()).unwrap().add_scaled(1.0, &DenseMatrix::identity(n)).unwrap();
        let x: Vec<f64> = (0..n).map(|i| (i as f64 - 2.0) * 0.3).collect();
        let b = a.matvec(&x).unwrap();
        let solved = solve_spd(&a, &b).unwrap();
        for (p, q) in solved.iter().zip(&x) {
            prop_assert!((p - q).abs() <= 1e-10);
        }
    }

    #[test]
    fn network_is_positively_homogeneous(seed in any::<u64>(), c in 0.01f64..100.0) {
        let ds = dataset(3, 4, seed);
        let p = init(32, 4, 1.0, &RngStream::new(seed, streams::INIT)).unwrap();
        let scaled = p.with_weights(p.weights().scaled(c)).unwrap();
        for i in 0..3 {
            let (a, b) = (forward(&p, ds.input(i)).unwrap(), forward(&scaled, ds.input(i)).unwrap());
            prop_assert!((b - c * a).abs() <= 1e-12 * (1.0 + (c * a).abs()));
        }
    }

    #[test]
    fn swapping_kernel_sides_transposes(seed in any::<u64>()) {
        let ds = dataset(6, 3, seed);
        let a = init(64, 3, 1.0, &RngStream::new(seed, streams::INIT)).unwrap();
        let b = init(64, 3, 1.0, &RngStream::new(seed.wrapping_add(1), streams::INIT)).unwrap();
        let ab = gram_pair(&ds, a.weights(), b.weights()).unwrap();
        let ba = gram_pair(&ds, b.weights(), a.weights()).unwrap();
        prop_assert!(ab.matrix.transpose().sub(&ba.matrix).unwrap().max_abs() <= 1e-15);
    }

    #[test]
    fn infinite_kernel_is_positive_semidefinite(n in 2usize..12, seed in any::<u64>()) {
        let h = ntk_infinity(&dataset(n, 4, seed));
        let e = eigh_symmetric(&h.matrix).unwrap();
        prop_assert!(e.values[0] >= -1e-12);
    }

    #[test]
    fn generalization_bound_is_rotation_invariant(seed in any::<u64>()) {
        let (n, d) = (6, 4);
        let ds = dataset(n, d, seed);
        let rotated_inputs = ds.inputs().matmul(&rotation(d, seed)).unwrap();
        let rotated = Dataset::new(rotated_inputs, ds.labels().to_vec()).unwrap();
        let a = generalization_bound(&ntk_infinity(&ds), ds.labels(), 0.1, 1.0).unwrap();
        let b = generalization_bound(&ntk_infinity(&rotated), ds.labels(), 0.1, 1.0).unwrap();
        prop_assert!((a.total - b.total).abs() <= 1e-8 * a.total);
    }

    #[test]
    fn contraction_factor_is_monotone(
        lambda in 0.01f64..1.0, eta in 1e-4f64..0.1, k in 1usize..8, clients in 1usize..8
    ) {
        let base = contraction_factor(lambda, eta, 1.0, k, clients).unwrap().factor;
        prop_assert!(contraction_factor(lambda, eta, 1.0, k, clients + 1).unwrap().factor > base);
        prop_assert!(contraction_factor(lambda * 1.5, eta, 1.0, k, clients).unwrap().factor < base);
        prop_assert!(contraction_factor(lambda, eta * 1.5, 1.0, k, clients).unwrap().factor < base);
        prop_assert!(contraction_factor(lambda, eta, 1.5, k, clients).unwrap().factor < base);
        prop_assert!(contraction_factor(lambda, eta, 1.0, k + 1, clients).unwrap().factor < base);
    }

    #[test]
    fn rounds_to_eps_is_the_smallest_sufficient_count(factor in 0.01f64..0.999, eps in 1e-6f64..1.0) {
        let t = rounds_to_eps(factor, eps).unwrap() as i32;
        prop_assert!(factor.powi(t) <= eps);
        if t > 0 {
            prop_assert!(factor.powi(t - 1) > eps);
        }
    }

    #[test]
    fn partitions_cover_every_point(n in 1usize..60, clients in 1usize..8, seed in any::<u64>(), alpha in 0.05f64..10.0) {
        prop_assume!(clients <= n);
        let stream = RngStream::new(seed, streams::PARTITION);
        let labels: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 1.0 } else { -0.5 }).collect();
        for part in [partition_iid(n, clients, &stream).unwrap(), partition_skewed(&labels, clients, alpha, &stream).unwrap()] {
            let mut all: Vec<usize> = part.clients().concat();
            all.sort();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert!(part.sizes().iter().all(|&s| s > 0));
        }
    }
}
