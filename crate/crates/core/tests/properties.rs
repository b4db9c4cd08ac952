use cardiovae::data::format::{decode_tensor, encode_tensor};
use cardiovae::evaluation::{auroc, frechet_distance, gaussian_stats, welch_t_test, GaussianStats};
use cardiovae::latent::{kl_standard_normal, poe_fuse, DiagonalGaussian};
use cardiovae::numerics::Tensor;
use proptest::prelude::*;

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..40).prop_flat_map(|n| {
        (prop::collection::vec(-5.0f64..5.0, n), prop::collection::vec(0u8..=1, n)).prop_map(|(s, mut l)| {
            l[0] = 0;
            l[1] = 1;
            (s, l)
        })
    })
}

fn gaussian(d: usize) -> impl Strategy<Value = DiagonalGaussian<f64>> {
    (prop::collection::vec(-3.0f64..3.0, d), prop::collection::vec(-3.0f64..3.0, d))
        .prop_map(|(m, v)| DiagonalGaussian::new(m, v).unwrap())
}

proptest! {
    #[test]
    fn auroc_ignores_monotone_transforms((scores, labels) in scored_labels()) {
        let squashed: Vec<f64> = scores.iter().map(|s| (0.7 * s).tanh() * 3.0 + 1.0).collect();
        prop_assert_eq!(auroc(&scores, &labels).unwrap(), auroc(&squashed, &labels).unwrap());
    }

    #[test]
    fn flipping_labels_complements_auroc((scores, labels) in scored_labels()) {
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        prop_assume!(sorted.len() == scores.len());
        let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        let sum = auroc(&scores, &labels).unwrap() + auroc(&scores, &flipped).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kl_is_non_negative(q in gaussian(4)) {
        prop_assert!(kl_standard_normal(&q) >= 0.0);
    }

    #[test]
    fn fusing_with_the_prior_never_widens(a in gaussian(3), b in gaussian(3)) {
        let fused = poe_fuse(&[&a, &b], true).unwrap();
        for ((f, va), vb) in fused.variance().iter().zip(a.variance()).zip(b.variance()) {
            prop_assert!(*f <= va.min(vb).min(1.0) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn frechet_is_symmetric(
        xs in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 6..20),
        ys in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 6..20),
    ) {
        let (a, b) = (gaussian_stats(&xs).unwrap(), gaussian_stats(&ys).unwrap());
        let (ab, ba) = (frechet_distance(&a, &b).unwrap(), frechet_distance(&b, &a).unwrap());
        prop_assert!((ab - ba).abs() <= 1e-8 * (1.0 + ab.abs()));
        prop_assert!(frechet_distance(&a, &a).unwrap().abs() <= 1e-8);
    }

    #[test]
    fn tensors_round_trip_bitwise(
        dims in prop::collection::vec(1usize..5, 1..4),
        seed in any::<u64>(),
    ) {
        let n: usize = dims.iter().product();
        let data: Vec<f32> = (0..n).map(|i| f32::from_bits((seed as u32).wrapping_mul(2654435761).wrapping_add(i as u32) & 0x7f7f_ffff)).collect();
        let t = Tensor::new(dims, data).unwrap();
        let mut bytes = Vec::new();
        encode_tensor(&t, &mut bytes);
        prop_assert!(decode_tensor::<f32>(&bytes).unwrap().bit_eq(&t));
    }

    #[test]
    fn welch_is_antisymmetric(
        a in prop::collection::vec(-5.0f64..5.0, 3..12),
        b in prop::collection::vec(-5.0f64..5.0, 3..12),
    ) {
        prop_assume!(a.iter().any(|v| *v != a[0]) && b.iter().any(|v| *v != b[0]));
        let (t1, p1) = welch_t_test(&a, &b).unwrap();
        let (t2, p2) = welch_t_test(&b, &a).unwrap();
        prop_assert!((t1 + t2).abs() < 1e-12);
        prop_assert!((p1 - p2).abs() < 1e-12);
    }
}

#[test]
fn gaussian_stats_validation() {
    assert!(GaussianStats::new(vec![], vec![]).is_err());
    assert!(GaussianStats::new(vec![0.0, 0.0], vec![1.0, 0.0, 0.0]).is_err());
    assert!(GaussianStats::new(vec![0.0, 0.0], vec![1.0, 0.5, 0.4, 1.0]).is_err());
    let s = GaussianStats::new(vec![1.0, 2.0], vec![2.0, 0.5, 0.5, 1.0]).unwrap();
    assert_eq!(s.dim(), 2);
}
