use proptest::prelude::*;

use swae::cli::{checkpoint_bytes, model_from_checkpoint};
use swae::data::Dataset;
use swae::eval::{denoise_report, knn_accuracy, reconstruction_error, spearman};
use swae::model::{ModelConfig, SwaeModel};
use swae::nncore::{Activation, Rng, Tensor};
use swae::ot::{
    empirical_wasserstein, min_cost_assignment, permutation_cost, EmpiricalDistribution,
};

fn points(n: usize, dim: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-4.0..4.0f64, n * dim)
        .prop_map(move |d| Tensor::matrix(n, dim, d).unwrap())
}

fn pair(max_n: usize) -> impl Strategy<Value = (Tensor, Tensor)> {
    (1..=max_n, 1..4usize).prop_flat_map(|(n, d)| (points(n, d), points(n, d)))
}

fn shuffled(t: &Tensor, seed: u64) -> Tensor {
    t.select_rows(&Rng::new(seed).permutation(t.rows()))
        .unwrap()
}

fn dist(t: &Tensor) -> EmpiricalDistribution {
    EmpiricalDistribution::new(t.clone()).unwrap()
}

fn brute_force(c: &Tensor) -> f64 {
    fn go(c: &Tensor, row: usize, used: &mut Vec<bool>, perm: &mut Vec<usize>, best: &mut f64) {
        let n = c.rows();
        if row == n {
            *best = best.min(permutation_cost(c, perm));
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                perm.push(j);
                go(c, row + 1, used, perm, best);
                perm.pop();
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(c, 0, &mut vec![false; c.rows()], &mut Vec::new(), &mut best);
    best
}

fn small_model(seed: u64, dim_x: usize, dim_z: usize, hidden: Vec<usize>, k: usize) -> SwaeModel {
    let config = ModelConfig {
        dim_x,
        dim_z,
        hidden,
        k,
        hidden_activation: Activation::Tanh,
        decoder_output: Activation::Identity,
    };
    let mut rng = Rng::new(seed);
    let mut data = vec![0.0; k * dim_x];
    rng.fill_normal(&mut data);
    SwaeModel::init(config, &Tensor::matrix(k, dim_x, data).unwrap(), &mut rng).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wasserstein_is_symmetric_and_vanishes_on_itself((a, b) in pair(7), p in 1u32..=2) {
        let (da, db) = (dist(&a), dist(&b));
        let ab = empirical_wasserstein(&da, &db, p).unwrap();
        let ba = empirical_wasserstein(&db, &da, p).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-9);
        prop_assert_eq!(empirical_wasserstein(&da, &da, p).unwrap(), 0.0);
    }

    #[test]
    fn wasserstein_ignores_atom_order((a, b) in pair(7), p in 1u32..=2, seed in any::<u64>()) {
        let w = empirical_wasserstein(&dist(&a), &dist(&b), p).unwrap();
        let w2 = empirical_wasserstein(&dist(&shuffled(&a, seed)), &dist(&shuffled(&b, seed ^ 1)), p).unwrap();
        prop_assert!((w - w2).abs() <= 1e-9);
    }

    #[test]
    fn wasserstein_triangle((a, b) in pair(6), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let mut cd = vec![0.0; a.len()];
        rng.fill_normal(&mut cd);
        let c = Tensor::matrix(a.rows(), a.cols(), cd).unwrap();
        let w = |x: &Tensor, y: &Tensor| empirical_wasserstein(&dist(x), &dist(y), 2).unwrap();
        prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-9);
    }

    #[test]
    fn assignment_matches_enumeration(n in 1usize..=5, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let mut d = vec![0.0; n * n];
        rng.fill_normal(&mut d);
        let c = Tensor::matrix(n, n, d).unwrap();
        let a = min_cost_assignment(&c).unwrap();
        let mut sorted = a.permutation.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(a.cost, brute_force(&c));
    }

    #[test]
    fn spearman_bounded_and_rank_based(
        v in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 3..40)
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let r = spearman(&a, &b).rho;
        prop_assert!((-1.0..=1.0).contains(&r));
        let warped: Vec<f64> = b.iter().map(|x| (x / 4.0).exp() * 3.0 + 1.0).collect();
        prop_assert_eq!(spearman(&a, &warped).rho, r);
    }

    #[test]
    fn reconstruction_error_ignores_sample_order(seed in any::<u64>(), n in 1usize..30) {
        let model = small_model(seed, 4, 2, vec![5], 3);
        let mut rng = Rng::new(seed ^ 7);
        let mut d = vec![0.0; n * 4];
        rng.fill_normal(&mut d);
        let x = Tensor::matrix(n, 4, d).unwrap();
        let e1 = reconstruction_error(&model, &Dataset::new(x.clone(), None).unwrap()).unwrap();
        let e2 = reconstruction_error(&model, &Dataset::new(shuffled(&x, seed), None).unwrap()).unwrap();
        prop_assert!((e1 - e2).abs() <= 1e-12 * e1.max(1.0));
    }

    #[test]
    fn noiseless_denoising_is_reconstruction(seed in any::<u64>(), n in 1usize..20) {
        let model = small_model(seed, 3, 2, vec![4], 2);
        let mut rng = Rng::new(seed ^ 3);
        let mut d = vec![0.0; n * 3];
        rng.fill_normal(&mut d);
        let clean = Dataset::new(Tensor::matrix(n, 3, d).unwrap(), None).unwrap();
        let r = denoise_report(&model, &clean, 0.0, seed).unwrap();
        prop_assert_eq!(r.mse_noisy_to_clean, 0.0);
        prop_assert_eq!(r.mse_recon_to_clean, reconstruction_error(&model, &clean).unwrap());
    }

    #[test]
    fn knn_accuracy_is_a_fraction_and_rotation_invariant(
        seed in any::<u64>(), n_train in 5usize..30, n_test in 1usize..15, k in 1usize..5, angle in 0.0..std::f64::consts::TAU
    ) {
        let mut rng = Rng::new(seed);
        let mut gen = |n: usize| {
            let mut d = vec![0.0; n * 2];
            rng.fill_normal(&mut d);
            let labels: Vec<u32> = d.chunks(2).map(|p| u32::from(p[0] > 0.0) + u32::from(p[1] > 0.5)).collect();
            (Tensor::matrix(n, 2, d).unwrap(), labels)
        };
        let (tr, try_) = gen(n_train);
        let (te, tey) = gen(n_test);
        let acc = knn_accuracy(&tr, &try_, &te, &tey, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        let (s, c) = angle.sin_cos();
        let rot = |t: &Tensor| {
            Tensor::matrix(t.rows(), 2, t.iter_rows().flat_map(|r| [c * r[0] - s * r[1], s * r[0] + c * r[1]]).collect()).unwrap()
        };
        prop_assert_eq!(knn_accuracy(&rot(&tr), &try_, &rot(&te), &tey, k).unwrap(), acc);
    }

    #[test]
    fn checkpoint_round_trip(
        seed in any::<u64>(), dim_x in 1usize..6, dim_z in 1usize..4,
        hidden in prop::collection::vec(1usize..6, 0..3), k in 1usize..4
    ) {
        let model = small_model(seed, dim_x, dim_z, hidden, k);
        let bytes = checkpoint_bytes(&model);
        let back = model_from_checkpoint(&bytes).unwrap();
        prop_assert_eq!(&back, &model);
        prop_assert_eq!(checkpoint_bytes(&back), bytes);
    }
}
