use coreset_ssl::baselines::{craig_select_perbatch, gradmatch_omp_perbatch, BatchedGradients};
use coreset_ssl::data::{generate_blobs, generate_two_moons, inject_ood, split_ssl, Matrix, UnlabeledSet};
use coreset_ssl::model::{
    ce_loss, full_gradient, last_layer_gradient, sgd_step, Architecture, LossKind, LrSchedule, ModelParams,
    OptimizerState, Targets,
};
use coreset_ssl::retrieve::{greedy_select, SelectorConfig};
use coreset_ssl::ssl::{compute_mask, unlabeled_term, SslAlgorithm, SslLossConfig, UnlabeledTerm};
use coreset_ssl::verify::{random_instance, InstanceSpec};
use proptest::prelude::*;

fn arch() -> impl Strategy<Value = Architecture> {
    prop_oneof![Just(Architecture::Linear), Just(Architecture::Mlp1)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn split_is_a_partition(n in 40usize..200, lpc in 1usize..6, tf in 0.05f64..0.4, seed in any::<u64>()) {
        let ds = generate_two_moons(n, 0.1, seed).unwrap();
        let s = split_ssl(&ds, lpc, tf, seed).unwrap();
        let mut all: Vec<usize> = s.labeled_idx.iter().chain(&s.unlabeled_idx).chain(&s.test_idx).copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(s.labeled.class_counts(), vec![lpc, lpc]);
    }

    #[test]
    fn ood_injection_keeps_size_and_flag_count(m in 10usize..120, ratio in 0.0f64..0.95, seed in any::<u64>()) {
        let u = UnlabeledSet::from_dataset(&generate_two_moons(m, 0.1, seed).unwrap());
        let ood = generate_blobs(m, &[vec![9.0, 9.0], vec![-9.0, 9.0]], 0.5, seed ^ 1).unwrap();
        let out = inject_ood(&u, ratio, &ood, seed).unwrap();
        prop_assert_eq!(out.len(), m);
        prop_assert_eq!(out.ood_count(), (ratio * m as f64).round() as usize);
    }

    #[test]
    fn ce_is_permutation_equivariant(z in prop::collection::vec(-5.0f64..5.0, 4), y in 0usize..4, rot in 1usize..4) {
        let perm: Vec<usize> = (0..4).map(|c| (c + rot) % 4).collect();
        let mut zp = vec![0.0; 4];
        for c in 0..4 {
            zp[perm[c]] = z[c];
        }
        let a = ce_loss(&Matrix::new(1, 4, z).unwrap(), Targets::Classes(&[y])).unwrap();
        let b = ce_loss(&Matrix::new(1, 4, zp).unwrap(), Targets::Classes(&[perm[y]])).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn last_layer_matches_full_gradient_tail(a in arch(), seed in any::<u64>(), x in prop::collection::vec(-2.0f64..2.0, 3), y in 0usize..3) {
        let p = ModelParams::init(a, 3, 5, 3, seed).unwrap();
        let mut q = vec![0.0; 3];
        q[y] = 1.0;
        let ll = last_layer_gradient(&p, &x, &q, LossKind::CrossEntropy).unwrap();
        let (_, full) = full_gradient(&p, &Matrix::new(1, 3, x).unwrap(), &Matrix::new(1, 3, q).unwrap(), LossKind::CrossEntropy).unwrap();
        let tail = &full[full.len() - ll.len()..];
        for (u, v) in ll.iter().zip(tail) {
            prop_assert!((u - v).abs() <= 1e-10 * u.abs().max(v.abs()).max(1e-300));
        }
    }

    #[test]
    fn consistency_masks_are_all_ones(a in arch(), seed in any::<u64>(), mt in any::<bool>()) {
        let p = ModelParams::init(a, 2, 6, 2, seed).unwrap();
        let u = UnlabeledSet::from_dataset(&generate_two_moons(30, 0.1, seed).unwrap());
        let algo = if mt { SslAlgorithm::MeanTeacher } else { SslAlgorithm::Vat };
        let mask = compute_mask(&p, &u, &SslLossConfig::with_algorithm(algo), seed);
        prop_assert_eq!(mask.count_ones(), 30);
    }

    #[test]
    fn ssl_terms_are_nonnegative_and_masked_terms_vanish(a in arch(), seed in any::<u64>(), x in prop::collection::vec(-2.0f64..2.0, 2), tau in 0.5f64..1.0) {
        let p = ModelParams::init(a, 2, 6, 2, seed).unwrap();
        for algo in [SslAlgorithm::MeanTeacher, SslAlgorithm::Vat, SslAlgorithm::PseudoLabel, SslAlgorithm::EntropyMin] {
            let cfg = SslLossConfig { tau, ..SslLossConfig::with_algorithm(algo) };
            let term: UnlabeledTerm = unlabeled_term(&p, Some(&p), &x, &cfg, seed).unwrap();
            let (loss, g) = term.full(&p);
            prop_assert!(loss >= 0.0);
            if !term.mask {
                prop_assert_eq!(loss, 0.0);
                prop_assert!(g.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn quartered_step_moves_a_quarter(lr in 0.01f64..1.0, g in prop::collection::vec(-3.0f64..3.0, 9)) {
        let p0 = ModelParams::zeros(Architecture::Linear, 2, 0, 3).unwrap();
        let step = |lr: f64| {
            let mut p = p0.clone();
            let mut opt = OptimizerState::new(&p, lr, 0.0, LrSchedule::Constant);
            sgd_step(&mut p, &g, &mut opt).unwrap();
            p.flat()
        };
        let (full, quarter) = (step(lr), step(lr / 2.0 / 2.0));
        for (a, b) in full.iter().zip(&quarter) {
            prop_assert!((a / 4.0 - b).abs() <= 1e-15 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn greedy_output_is_unique_sized_and_reproducible(seed in any::<u64>(), m in 4usize..14, k in 1usize..6, eps in 0.01f64..0.5) {
        let inst = random_instance(InstanceSpec { m, ..InstanceSpec::default() }, seed).unwrap();
        let cfg = SelectorConfig { budget: k.min(m), epsilon: eps, seed, alpha: 0.5, lambda: 1.0 };
        let a = greedy_select(&inst.params, &inst.labeled, &inst.grads, &cfg).unwrap();
        let mut idx = a.coreset.indices.clone();
        idx.sort();
        idx.dedup();
        prop_assert_eq!(idx.len(), k.min(m));
        prop_assert_eq!(a.coreset.indices.len(), k.min(m));
        let b = greedy_select(&inst.params, &inst.labeled, &inst.grads, &cfg).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn craig_weights_sum_to_batch_count(rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 2..12), k in 1usize..5) {
        let bg = BatchedGradients::from_sums(rows.clone()).unwrap();
        let sel = craig_select_perbatch(&bg, k.min(rows.len())).unwrap();
        prop_assert_eq!(sel.weights.iter().sum::<f64>(), rows.len() as f64);
    }

    #[test]
    fn omp_weights_nonnegative_residual_monotone(rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 2..10)) {
        let bg = BatchedGradients::from_sums(rows.clone()).unwrap();
        let r = gradmatch_omp_perbatch(&bg, rows.len(), 0.0).unwrap();
        prop_assert!(r.selection.weights.iter().all(|&w| w >= 0.0));
        prop_assert!(r.residual_norms.windows(2).all(|w| w[1] <= w[0]));
    }
}
