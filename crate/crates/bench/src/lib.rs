//! Deterministic fixtures shared by the benchmarks: a mixture design with a
//! moderate signal, its noisy labels, and ready-made solver configurations.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use noisyglm_core::simgen::{flip_labels, gen_design, gen_labels};
use noisyglm_core::{Ar1Cov, Dataset, Design, NoiseModel};

pub struct Fixture {
    pub data: Dataset,
    pub nm: NoiseModel,
    pub beta0: DVector<f64>,
}

/// Mixture design with separation `2/sqrt(p)`, AR(1) tail correlation 0.2,
/// equal-magnitude signal of unit norm, and a (0.1, 0.05) noise channel.
pub fn fixture(n: usize, p: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let design = Design::Mixture {
        cov: Ar1Cov { rho: 0.2, scale: 1.0 },
        separation: 2.0 / (p as f64).sqrt(),
    };
    let x = gen_design(n, p, &design, &mut rng).expect("fixture dimensions are valid");
    let beta0 = DVector::from_element(p, 1.0 / (p as f64).sqrt());
    let y = gen_labels(&x, &beta0, &mut rng).expect("matching dimensions");
    let nm = NoiseModel::new(0.1, 0.05).expect("valid rates");
    let z = flip_labels(&y, &nm, &mut rng);
    let data = Dataset::new(x, z).expect("finite design");
    Fixture { data, nm, beta0 }
}
