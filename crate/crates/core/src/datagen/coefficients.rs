use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::field::{sample_grf_with, Field, GrfSpec};
use crate::pde::Equation;

/// Latent field law for each equation's coefficient.
pub fn default_coefficient_grf(eq: Equation) -> GrfSpec {
    match eq {
        // Pointwise std around 0.6; smooth enough that the one-step residual
        // of a true pair stays well below that of a perturbed one.
        Equation::NavierStokes => GrfSpec::inverse_laplacian_squared(25.0).with_amplitude(8.0),
        _ => GrfSpec::inverse_laplacian_squared(9.0),
    }
}

/// Draws one coefficient field `a` (batch 1, channel 1) from the centered
/// latent field.
///
/// Darcy thresholds the latent field to `{3, 12}`, Poisson to `{0, 1}`.
/// Helmholtz assigns every 4-connected sign region of the latent field its
/// own level from `U[0.5, 2.5]`. Navier–Stokes returns the latent field as
/// initial vorticity.
pub fn sample_coefficient(eq: Equation, grf: &GrfSpec, size: usize, seed: u64) -> Result<Field> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = sample_grf_with(grf, 1, 1, size, &mut rng)?;
    // Centered: otherwise the constant mode dominates and whole fields share
    // one sign. Periodic vorticity has zero mean in any case.
    let mean = z.sum() / z.data().len() as f64;
    let z = z.map(|v| v - mean);
    Ok(match eq {
        Equation::Darcy => z.map(|v| if v > 0.0 { 12.0 } else { 3.0 }),
        Equation::Poisson => z.map(|v| if v > 0.0 { 1.0 } else { 0.0 }),
        Equation::Helmholtz => {
            let labels = sign_regions(z.plane(0, 0), size);
            let count = labels.iter().max().map_or(0, |m| m + 1);
            let levels: Vec<f64> = (0..count).map(|_| rng.random_range(0.5..2.5)).collect();
            let data = labels.iter().map(|&l| levels[l]).collect();
            Field::new(1, 1, size, data)?
        }
        Equation::NavierStokes => z,
    })
}

/// Labels 4-connected regions of equal sign, numbered in scan order.
fn sign_regions(z: &[f64], n: usize) -> Vec<usize> {
    const UNSET: usize = usize::MAX;
    let mut labels = vec![UNSET; n * n];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..n * n {
        if labels[start] != UNSET {
            continue;
        }
        let positive = z[start] > 0.0;
        labels[start] = next;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (i, j) = (p / n, p % n);
            let nbrs = [
                (i > 0).then(|| p - n),
                (i + 1 < n).then(|| p + n),
                (j > 0).then(|| p - 1),
                (j + 1 < n).then(|| p + 1),
            ];
            for q in nbrs.into_iter().flatten() {
                if labels[q] == UNSET && (z[q] > 0.0) == positive {
                    labels[q] = next;
                    stack.push(q);
                }
            }
        }
        next += 1;
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regions_of_checkerboard_are_singletons() {
        let z: Vec<f64> = (0..16).map(|p| if (p / 4 + p % 4) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let labels = sign_regions(&z, 4);
        assert_eq!(labels, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn regions_of_halves() {
        let z: Vec<f64> = (0..16).map(|p| if p % 4 < 2 { 1.0 } else { -1.0 }).collect();
        let labels = sign_regions(&z, 4);
        assert!(labels.iter().enumerate().all(|(p, &l)| l == usize::from(p % 4 >= 2)));
    }
}
