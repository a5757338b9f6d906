//! ISO+LineDD variation: isotropic Gaussian noise plus a random step along
//! the line joining two parents.

use crate::controller::{Genotype, GENOTYPE_LEN};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationParams {
    pub sigma_iso: f64,
    pub sigma_line: f64,
}

impl Default for VariationParams {
    fn default() -> Self {
        Self { sigma_iso: 0.01, sigma_line: 0.2 }
    }
}

/// `child_i = clamp(x_i + sigma_iso * n_i + sigma_line * (y_i - x_i) * m)`.
///
/// Draws the 24 per-gene normals first, then the shared line coefficient.
pub fn iso_line_dd<R: Rng + ?Sized>(x: &Genotype, y: &Genotype, p: &VariationParams, rng: &mut R) -> Genotype {
    let mut iso = [0.0; GENOTYPE_LEN];
    for n in iso.iter_mut() {
        *n = rng.sample(StandardNormal);
    }
    let line: f64 = rng.sample(StandardNormal);
    let (xs, ys) = (x.params(), y.params());
    Genotype::new(std::array::from_fn(|i| xs[i] + p.sigma_iso * iso[i] + p.sigma_line * (ys[i] - xs[i]) * line))
}
