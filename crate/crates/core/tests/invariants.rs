use noiseprobe::corruptions::{corrupt, CorruptionKind, CorruptionSpec};
use noiseprobe::detector::{similarity_score, DetectorConfig};
use noiseprobe::embedder::{LinearEmbedder, RffEmbedder, RffParams};
use noiseprobe::perturbation::{perturb, sample_noise, NoiseDistribution, NoiseSpec};
use noiseprobe::types::{ImageTensor, TensorShape};
use proptest::prelude::*;

fn image(h: usize, w: usize, seed: u64) -> ImageTensor {
    ImageTensor::from_fn(h, w, |c, y, x| {
        let v = (seed as usize).wrapping_mul(2654435761) ^ (c * 7919 + y * 104729 + x * 15485863);
        (v % 256) as f32 / 255.0
    })
    .unwrap()
}

fn distribution() -> impl Strategy<Value = NoiseDistribution> {
    prop::sample::select(NoiseDistribution::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn noise_is_reproducible_per_stream(dist in distribution(), lambda in 0.0f64..0.5, seed in any::<u64>(), stream in any::<u64>()) {
        let shape = TensorShape::new(5, 7).unwrap();
        let spec = NoiseSpec::new(dist, lambda, seed).unwrap();
        let a = sample_noise(shape, &spec, stream).unwrap();
        let b = sample_noise(shape, &spec, stream).unwrap();
        prop_assert_eq!(a.len(), 3 * 5 * 7);
        prop_assert_eq!(&a, &b);
        let c = sample_noise(shape, &spec, stream.wrapping_add(1)).unwrap();
        prop_assert!(lambda == 0.0 || a != c);
    }

    #[test]
    fn perturbation_keeps_shape(dist in distribution(), lambda in 0.0f64..0.5, seed in any::<u64>()) {
        let x = image(6, 4, seed);
        let spec = NoiseSpec::new(dist, lambda, seed).unwrap();
        let y = perturb(&x, &spec, 0).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert!(y.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_lambda_gives_unit_similarity(dist in distribution(), seed in any::<u64>(), draws in 1usize..4) {
        let x = image(4, 4, seed);
        let e = LinearEmbedder::random(TensorShape::new(4, 4).unwrap(), 48, 16, seed).unwrap();
        let det = DetectorConfig::new(NoiseSpec::new(dist, 0.0, seed).unwrap()).with_draws(draws);
        prop_assert_eq!(similarity_score(&x, &e, &det, seed).unwrap(), 1.0);
    }

    #[test]
    fn similarity_is_bounded(dist in distribution(), lambda in 0.01f64..1.0, seed in any::<u64>()) {
        let x = image(4, 4, seed);
        let e = RffEmbedder::new(RffParams { input_dim: 48, output_dim: 64, frequency_scale: 2.0, seed }, None).unwrap();
        let det = DetectorConfig::new(NoiseSpec::new(dist, lambda, seed).unwrap());
        let s = similarity_score(&x, &e, &det, 0).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s), "{}", s);
    }

    #[test]
    fn corruptions_stay_in_range(kind_ix in 0usize..3, level in 0.0f64..6.0, seed in any::<u64>()) {
        let kind = CorruptionKind::ALL[kind_ix];
        let level = if kind == CorruptionKind::Jpeg { (1.0 + level * 16.0).round().min(100.0) } else { level };
        let x = image(9, 11, seed);
        let y = corrupt(&x, &CorruptionSpec::new(kind, level, seed).unwrap(), "id").unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
