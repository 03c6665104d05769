use rand::Rng;
use rand_distr::StandardNormal;

use super::heads::{censored_nll, Heads};
use super::{check_dimension, sharded_sum, CensoredModel, ModelKind, PriceScale};
use crate::dist::GaussianMixture;
use crate::error::{Error, Result};
use crate::featurize::{FeatureVector, Observation, BIAS_INDEX};

/// Sum of squares over the non-bias coordinates.
fn weight_norm2(v: &[f64]) -> f64 {
    v.iter()
        .enumerate()
        .filter(|(j, _)| *j != BIAS_INDEX as usize)
        .map(|(_, b)| b * b)
        .sum()
}

fn add_weight_decay(grad: &mut [f64], v: &[f64], l2: f64) {
    for (j, (g, b)) in grad.iter_mut().zip(v).enumerate() {
        if j != BIAS_INDEX as usize {
            *g += l2 * b;
        }
    }
}

/// Homoscedastic censored regression: `W ~ N(βᵀx, exp(s)²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrParams {
    d: usize,
    values: Vec<f64>,
    pub price: PriceScale,
}

impl CrParams {
    pub fn new(beta: Vec<f64>, s: f64) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::InvalidArgument("beta must be non-empty".into()));
        }
        let d = beta.len();
        let mut values = beta;
        values.push(s);
        Ok(Self {
            d,
            values,
            price: PriceScale::IDENTITY,
        })
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            d,
            values: vec![0.0; d + 1],
            price: PriceScale::IDENTITY,
        }
    }

    pub fn random(d: usize, init_scale: f64, rng: &mut impl Rng) -> Self {
        let values = (0..=d)
            .map(|_| init_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            d,
            values,
            price: PriceScale::IDENTITY,
        }
    }

    pub fn with_price(mut self, price: PriceScale) -> Self {
        self.price = price;
        self
    }

    pub fn beta(&self) -> &[f64] {
        &self.values[..self.d]
    }

    pub fn s(&self) -> f64 {
        self.values[self.d]
    }

    /// Rebuilds from a flat `[β | s]` vector.
    pub fn from_values(d: usize, values: Vec<f64>, price: PriceScale) -> Result<Self> {
        if values.len() != d + 1 {
            return Err(Error::DimensionMismatch {
                expected: d + 1,
                got: values.len(),
            });
        }
        Ok(Self { d, values, price })
    }
}

/// CR objective and its gradient; the gradient comes back CR-shaped.
pub fn cr_negloglik(params: &CrParams, batch: &[Observation], l2: f64) -> Result<(f64, CrParams)> {
    let d = params.d;
    let beta = params.beta();
    let price = params.price;
    let log_sigma = price.log_scale() + params.s();
    let (data, mut grad) = sharded_sum(batch, d + 1, d, |obs, g| {
        let mu = price.price(obs.x.dot(beta));
        let mut head_grad = [0.0; 3];
        let loss = censored_nll(
            &Heads {
                mu: &[mu],
                log_sigma: &[log_sigma],
                logits: &[0.0],
            },
            obs,
            &mut head_grad,
        );
        for &j in &obs.x.active {
            g[j as usize] += head_grad[0] * price.scale;
        }
        g[d] += head_grad[1];
        loss
    })?;
    add_weight_decay(&mut grad[..d], beta, l2);
    let loss = data + 0.5 * l2 * weight_norm2(beta);
    Ok((
        loss,
        CrParams {
            d,
            values: grad,
            price,
        },
    ))
}

impl CensoredModel for CrParams {
    fn kind(&self) -> ModelKind {
        ModelKind::Cr
    }

    fn dimension(&self) -> usize {
        self.d
    }

    fn values(&self) -> &[f64] {
        &self.values
    }

    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn negloglik(&self, batch: &[Observation], l2: f64) -> Result<(f64, Vec<f64>)> {
        cr_negloglik(self, batch, l2).map(|(l, g)| (l, g.values))
    }

    fn predict(&self, x: &FeatureVector) -> Result<GaussianMixture> {
        check_dimension(x, self.d)?;
        GaussianMixture::single(
            self.price.price(x.dot(self.beta())),
            self.price.scale * self.s().exp(),
        )
    }
}

/// Heteroscedastic censored regression: `W ~ N(βᵀx, exp(αᵀx)²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcrParams {
    d: usize,
    values: Vec<f64>,
    pub price: PriceScale,
}

impl PcrParams {
    pub fn new(beta: Vec<f64>, alpha: Vec<f64>) -> Result<Self> {
        if beta.is_empty() || beta.len() != alpha.len() {
            return Err(Error::DimensionMismatch {
                expected: beta.len(),
                got: alpha.len(),
            });
        }
        let d = beta.len();
        let mut values = beta;
        values.extend(alpha);
        Ok(Self {
            d,
            values,
            price: PriceScale::IDENTITY,
        })
    }

    pub fn random(d: usize, init_scale: f64, rng: &mut impl Rng) -> Self {
        let values = (0..2 * d)
            .map(|_| init_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            d,
            values,
            price: PriceScale::IDENTITY,
        }
    }

    /// The P-CR model whose stddev is CR's global one: α carries `s` on the bias column only.
    pub fn from_cr(cr: &CrParams) -> Self {
        let mut alpha = vec![0.0; cr.d];
        alpha[BIAS_INDEX as usize] = cr.s();
        let mut p = Self::new(cr.beta().to_vec(), alpha).expect("same length");
        p.price = cr.price;
        p
    }

    pub fn with_price(mut self, price: PriceScale) -> Self {
        self.price = price;
        self
    }

    pub fn beta(&self) -> &[f64] {
        &self.values[..self.d]
    }

    pub fn alpha(&self) -> &[f64] {
        &self.values[self.d..]
    }

    pub fn from_values(d: usize, values: Vec<f64>, price: PriceScale) -> Result<Self> {
        if values.len() != 2 * d {
            return Err(Error::DimensionMismatch {
                expected: 2 * d,
                got: values.len(),
            });
        }
        Ok(Self { d, values, price })
    }
}

pub fn pcr_negloglik(
    params: &PcrParams,
    batch: &[Observation],
    l2: f64,
) -> Result<(f64, PcrParams)> {
    let d = params.d;
    let (beta, alpha) = (params.beta(), params.alpha());
    let price = params.price;
    let (data, mut grad) = sharded_sum(batch, 2 * d, d, |obs, g| {
        let mu = price.price(obs.x.dot(beta));
        let log_sigma = price.log_scale() + obs.x.dot(alpha);
        let mut head_grad = [0.0; 3];
        let loss = censored_nll(
            &Heads {
                mu: &[mu],
                log_sigma: &[log_sigma],
                logits: &[0.0],
            },
            obs,
            &mut head_grad,
        );
        for &j in &obs.x.active {
            g[j as usize] += head_grad[0] * price.scale;
            g[d + j as usize] += head_grad[1];
        }
        loss
    })?;
    let (g_beta, g_alpha) = grad.split_at_mut(d);
    add_weight_decay(g_beta, beta, l2);
    add_weight_decay(g_alpha, alpha, l2);
    let loss = data + 0.5 * l2 * (weight_norm2(beta) + weight_norm2(alpha));
    Ok((
        loss,
        PcrParams {
            d,
            values: grad,
            price,
        },
    ))
}

impl CensoredModel for PcrParams {
    fn kind(&self) -> ModelKind {
        ModelKind::Pcr
    }

    fn dimension(&self) -> usize {
        self.d
    }

    fn values(&self) -> &[f64] {
        &self.values
    }

    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn negloglik(&self, batch: &[Observation], l2: f64) -> Result<(f64, Vec<f64>)> {
        pcr_negloglik(self, batch, l2).map(|(l, g)| (l, g.values))
    }

    fn predict(&self, x: &FeatureVector) -> Result<GaussianMixture> {
        check_dimension(x, self.d)?;
        GaussianMixture::single(
            self.price.price(x.dot(self.beta())),
            self.price.scale * x.dot(self.alpha()).exp(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    const HALF_LN_2PI: f64 = crate::dist::LN_SQRT_2PI;

    fn obs(active: Vec<u32>, d: usize, bid: u32, win: Option<u32>) -> Observation {
        Observation {
            x: FeatureVector {
                active,
                dimension: d,
            },
            bid_price: bid,
            won: win.is_some(),
            winning_price: win,
        }
    }

    #[test]
    fn won_at_mean_with_unit_sigma() {
        let p = CrParams::new(vec![60.0, 40.0, 7.0], 0.0).unwrap();
        let o = obs(vec![0, 1], 3, 120, Some(100));
        let (l, _) = cr_negloglik(&p, std::slice::from_ref(&o), 0.0).unwrap();
        assert!((l - HALF_LN_2PI).abs() < 1e-14);
        let (l_reg, _) = cr_negloglik(&p, &[o], 0.5).unwrap();
        assert!((l_reg - HALF_LN_2PI - 0.25 * (40.0f64.powi(2) + 49.0)).abs() < 1e-9);
    }

    #[test]
    fn lost_at_mean_is_log_two_for_any_sigma() {
        for s in [-3.0, 0.0, 4.0] {
            let p = CrParams::new(vec![30.0, 20.0], s).unwrap();
            let (l, _) = cr_negloglik(&p, &[obs(vec![0, 1], 2, 50, None)], 0.0).unwrap();
            assert!((l - LN_2).abs() < 1e-14);
        }
        let p = PcrParams::new(vec![30.0, 20.0], vec![1.3, -2.0]).unwrap();
        let (l, _) = pcr_negloglik(&p, &[obs(vec![0, 1], 2, 50, None)], 0.0).unwrap();
        assert!((l - LN_2).abs() < 1e-14);
    }

    #[test]
    fn bias_only_alpha_reduces_to_cr() {
        let cr = CrParams::new(vec![50.0, 3.0, -4.0], 2.5).unwrap();
        let pcr = PcrParams::from_cr(&cr);
        let batch = vec![
            obs(vec![0, 1], 3, 70, Some(44)),
            obs(vec![0, 2], 3, 20, None),
        ];
        let a = cr_negloglik(&cr, &batch, 0.1).unwrap().0;
        let b = pcr_negloglik(&pcr, &batch, 0.1).unwrap().0;
        assert!((a - b).abs() < 1e-12);
        let x = &batch[0].x;
        assert_eq!(cr.predict(x).unwrap(), pcr.predict(x).unwrap());
    }

    #[test]
    fn predict_zero_model_is_standard_normal() {
        let p = CrParams::zeros(4);
        let g = p
            .predict(&FeatureVector {
                active: vec![0, 3],
                dimension: 4,
            })
            .unwrap();
        assert_eq!((g.means()[0], g.stddevs()[0]), (0.0, 1.0));
        assert!(p
            .predict(&FeatureVector {
                active: vec![0],
                dimension: 5
            })
            .is_err());
    }

    #[test]
    fn empty_batch_and_dimension_errors() {
        let p = CrParams::zeros(2);
        assert!(cr_negloglik(&p, &[], 0.0).is_err());
        assert!(matches!(
            cr_negloglik(&p, &[obs(vec![0, 4], 5, 1, None)], 0.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
