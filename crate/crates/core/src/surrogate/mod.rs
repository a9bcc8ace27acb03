//! Gaussian-process surrogates: the precise GP, the imprecise (prior-mean set) GP
//! and the heteroscedastic noise model.

mod gp;
mod hyper;
mod imprecise;
mod noise;

pub use gp::{GpPosterior, HyperMode, KernelConfig, Prediction};
pub use hyper::{estimate_hyperparams, HyperOptions, DEFAULT_NUGGET_RATIO};
pub use imprecise::{ImpreciseGpPosterior, MeanEnvelope};
pub use noise::{NoiseModel, NoiseOptions};

use crate::error::Result;
use crate::space::{Design, ParamSpace};

pub fn fit_gp(design: &Design, kernel: &KernelConfig) -> Result<GpPosterior> {
    GpPosterior::fit(design, kernel)
}

pub fn fit_imprecise_gp(
    design: &Design,
    imprecision: f64,
    kernel: &KernelConfig,
) -> Result<ImpreciseGpPosterior> {
    ImpreciseGpPosterior::fit(design, imprecision, kernel)
}

pub fn fit_noise_model(design: &Design, space: &ParamSpace) -> Result<NoiseModel> {
    NoiseModel::fit(design, space, &NoiseOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Observation;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_design(seed: u64, n: usize, space: &ParamSpace) -> Design {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Design::from_observations(
            space
                .sample_n(n, &mut rng)
                .into_iter()
                .map(|t| {
                    let y = t.iter().map(|x| x.sin() * 3.0 + x * x).sum();
                    Observation::new(t, y)
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn batch_predict_equals_loop() {
        let space = ParamSpace::cube(3, -2.0, 2.0).unwrap();
        let d = random_design(11, 25, &space);
        let k = estimate_hyperparams(&d, &space, &HyperOptions::default()).unwrap();
        let gp = fit_gp(&d, &k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pts = space.sample_n(100, &mut rng);
        let batch = gp.predict_batch(&pts).unwrap();
        for (p, b) in pts.iter().zip(&batch) {
            assert_eq!(gp.predict(p).unwrap(), *b);
        }
    }

    #[test]
    fn sd_at_datum_below_far_corner() {
        let space = ParamSpace::cube(2, 0.0, 1.0).unwrap();
        let d = random_design(5, 6, &space);
        let gp = fit_gp(&d, &KernelConfig::fixed(0.2, 0.0, 1e-6)).unwrap();
        let at = gp.predict(&d.observations()[0].theta).unwrap().sd;
        let corners = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
        let far = corners
            .iter()
            .map(|c| gp.predict(c).unwrap().sd)
            .fold(0.0f64, f64::max);
        assert!(at <= far);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn sd_nonnegative_and_deterministic(seed in any::<u64>(), n in 1usize..30) {
            let space = ParamSpace::cube(2, -3.0, 3.0).unwrap();
            let d = random_design(seed, n, &space);
            let gp = fit_gp(&d, &KernelConfig::fixed(0.8, 1.0, 1e-6).with_signal_var(2.0)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            for t in space.sample_n(40, &mut rng) {
                let a = gp.predict(&t).unwrap();
                prop_assert!(a.sd >= 0.0);
                let b = gp.predict(&t).unwrap();
                prop_assert_eq!(a.mean.to_bits(), b.mean.to_bits());
                prop_assert_eq!(a.sd.to_bits(), b.sd.to_bits());
            }
        }

        #[test]
        fn conditioning_never_increases_sd(seed in any::<u64>(), n in 1usize..20) {
            let space = ParamSpace::cube(2, -3.0, 3.0).unwrap();
            let d = random_design(seed, n + 1, &space);
            let k = KernelConfig::fixed(1.1, 0.0, 1e-4);
            let before = fit_gp(&d.prefix(n), &k).unwrap();
            let after = fit_gp(&d, &k).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
            for t in space.sample_n(30, &mut rng) {
                let (sb, sa) = (before.predict(&t).unwrap().sd, after.predict(&t).unwrap().sd);
                prop_assert!(sa <= sb + 1e-9, "{} > {}", sa, sb);
            }
        }
    }
}
