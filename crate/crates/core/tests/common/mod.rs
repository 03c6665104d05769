#![allow(dead_code)]

use landscape_core::featurize::{FeatureVector, Observation};
use landscape_core::models::CensoredModel;
use landscape_core::GaussianMixture;
use rand::seq::index::sample;
use rand::Rng;

/// Bias plus `per_record` distinct random columns out of `1..d`.
pub fn random_features(rng: &mut impl Rng, d: usize, per_record: usize) -> FeatureVector {
    let mut active: Vec<u32> = sample(rng, d - 1, per_record.min(d - 1))
        .into_iter()
        .map(|j| j as u32 + 1)
        .collect();
    active.push(0);
    FeatureVector::new(active, d).unwrap()
}

/// Auctions with prices around `centre`, bids uniform on `[0, 2·centre]`.
pub fn random_batch(rng: &mut impl Rng, d: usize, n: usize, centre: f64) -> Vec<Observation> {
    (0..n)
        .map(|_| {
            let w = (centre + 0.4 * centre * (rng.random::<f64>() * 2.0 - 1.0)).round() as u32;
            let bid = rng.random_range(0..=(2.0 * centre) as u32);
            let won = bid >= w;
            Observation {
                x: random_features(rng, d, 3),
                bid_price: bid,
                won,
                winning_price: won.then_some(w),
            }
        })
        .collect()
}

/// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)` over
/// `coords`, using central differences with step `h`.
pub fn max_gradient_error<M: CensoredModel>(
    model: &M,
    batch: &[Observation],
    l2: f64,
    coords: &[usize],
    h: f64,
    floor: f64,
) -> f64 {
    let (_, grad) = model.negloglik(batch, l2).unwrap();
    let mut worst: f64 = 0.0;
    for &i in coords {
        let mut plus = model.clone();
        plus.values_mut()[i] += h;
        let mut minus = model.clone();
        minus.values_mut()[i] -= h;
        let numeric = (plus.negloglik(batch, l2).unwrap().0
            - minus.negloglik(batch, l2).unwrap().0)
            / (2.0 * h);
        let err = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(floor);
        worst = worst.max(err);
    }
    worst
}

/// Random valid mixture: means in `mean_range`, stddevs log-uniform in `sigma_range`.
pub fn random_mixture(
    rng: &mut impl Rng,
    k: usize,
    mean_range: (f64, f64),
    sigma_range: (f64, f64),
) -> GaussianMixture {
    let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.05).collect();
    let z: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / z).collect();
    let means = (0..k)
        .map(|_| rng.random_range(mean_range.0..=mean_range.1))
        .collect();
    let (ls, hs) = (sigma_range.0.ln(), sigma_range.1.ln());
    let sigmas = (0..k).map(|_| rng.random_range(ls..=hs).exp()).collect();
    GaussianMixture::new(weights, means, sigmas).unwrap()
}
