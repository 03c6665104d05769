//! Mixture density censored network: `x → ReLU(W1·x + b1) → W2·h + b2`,
//! with the `3K` outputs read as `[μ (K) | log σ (K) | weight logits (K)]`.
//!
//! Flat parameter layout: `[W1 | b1 | W2 | b2]`. `W1` is the `H×D` input
//! matrix stored column by column (the `H` weights of input `j` are
//! contiguous), so a one-hot input gathers whole columns. `W2` is `3K×H`
//! row-major.

use rand::Rng;
use rand_distr::StandardNormal;

use super::heads::{censored_nll, Heads};
use super::{check_dimension, sharded_sum, CensoredModel, ModelKind, PcrParams, PriceScale};
use crate::dist::GaussianMixture;
use crate::error::{Error, Result};
use crate::featurize::{FeatureVector, Observation};

/// Component stddevs are clamped to `[SIGMA_MIN, SIGMA_MAX]` price units.
pub const SIGMA_MIN: f64 = 1e-3;
pub const SIGMA_MAX: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct McNetParams {
    d: usize,
    h: usize,
    k: usize,
    values: Vec<f64>,
    pub price: PriceScale,
}

struct Forward {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    out: Vec<f64>,
}

impl McNetParams {
    fn len_for(d: usize, h: usize, k: usize) -> usize {
        d * h + h + 3 * k * h + 3 * k
    }

    fn check_shape(d: usize, h: usize, k: usize) -> Result<()> {
        if d == 0 || h == 0 || k == 0 {
            return Err(Error::InvalidArgument(format!(
                "MCNet needs D, H, K >= 1 (got {d}, {h}, {k})"
            )));
        }
        Ok(())
    }

    pub fn zeros(d: usize, h: usize, k: usize) -> Result<Self> {
        Self::check_shape(d, h, k)?;
        Ok(Self {
            d,
            h,
            k,
            values: vec![0.0; Self::len_for(d, h, k)],
            price: PriceScale::IDENTITY,
        })
    }

    /// All entries drawn from `N(0, init_scale²)`.
    pub fn random(
        d: usize,
        h: usize,
        k: usize,
        init_scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut p = Self::zeros(d, h, k)?;
        for v in &mut p.values {
            *v = init_scale * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(p)
    }

    pub fn from_values(
        d: usize,
        h: usize,
        k: usize,
        values: Vec<f64>,
        price: PriceScale,
    ) -> Result<Self> {
        Self::check_shape(d, h, k)?;
        let expected = Self::len_for(d, h, k);
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(Self {
            d,
            h,
            k,
            values,
            price,
        })
    }

    /// Builds from `W1` given `H×D` row-major, as stored in model files.
    pub fn from_parts(
        d: usize,
        h: usize,
        k: usize,
        w1_row_major: &[f64],
        b1: &[f64],
        w2: &[f64],
        b2: &[f64],
        price: PriceScale,
    ) -> Result<Self> {
        let mut p = Self::zeros(d, h, k)?;
        for (got, want, what) in [
            (w1_row_major.len(), d * h, "W1"),
            (b1.len(), h, "b1"),
            (w2.len(), 3 * k * h, "W2"),
            (b2.len(), 3 * k, "b2"),
        ] {
            if got != want {
                return Err(Error::ModelFile(format!(
                    "{what} has {got} entries, expected {want}"
                )));
            }
        }
        for r in 0..h {
            for j in 0..d {
                p.values[j * h + r] = w1_row_major[r * d + j];
            }
        }
        let (_, rest) = p.values.split_at_mut(d * h);
        rest[..h].copy_from_slice(b1);
        rest[h..h + 3 * k * h].copy_from_slice(w2);
        rest[h + 3 * k * h..].copy_from_slice(b2);
        p.price = price;
        Ok(p)
    }

    /// The K = 1 network whose hidden layer copies the one-hot input
    /// (`H = D`, `W1 = I`, `b1 = 0`) and whose heads are P-CR's `β` and `α`.
    pub fn identity_from_pcr(pcr: &PcrParams) -> Self {
        let d = pcr.beta().len();
        let mut p = Self::zeros(d, d, 1).expect("non-empty");
        for j in 0..d {
            p.values[j * d + j] = 1.0;
        }
        let w2 = d * d + d;
        p.values[w2..w2 + d].copy_from_slice(pcr.beta());
        p.values[w2 + d..w2 + 2 * d].copy_from_slice(pcr.alpha());
        p.price = pcr.price;
        p
    }

    /// Sets the mean-head biases to the standard normal quantiles at
    /// `(k + ½)/K`, so components start apart in standardized price units.
    /// With identical starting components the loss sits on a symmetric plateau
    /// that early stopping mistakes for convergence.
    pub fn spread_component_means(&mut self) {
        let (k, start) = (self.k, self.d * self.h + self.h + 3 * self.k * self.h);
        let unit = GaussianMixture::single(0.0, 1.0).expect("valid");
        for c in 0..k {
            self.values[start + c] = unit.quantile((c as f64 + 0.5) / k as f64);
        }
    }

    pub fn hidden(&self) -> usize {
        self.h
    }

    pub fn components(&self) -> usize {
        self.k
    }

    fn w1(&self) -> &[f64] {
        &self.values[..self.d * self.h]
    }

    fn b1(&self) -> &[f64] {
        &self.values[self.d * self.h..self.d * self.h + self.h]
    }

    fn w2(&self) -> &[f64] {
        let start = self.d * self.h + self.h;
        &self.values[start..start + 3 * self.k * self.h]
    }

    fn b2(&self) -> &[f64] {
        &self.values[self.d * self.h + self.h + 3 * self.k * self.h..]
    }

    pub fn w1_row_major(&self) -> Vec<f64> {
        let (d, h) = (self.d, self.h);
        let w1 = self.w1();
        (0..h)
            .flat_map(|r| (0..d).map(move |j| w1[j * h + r]))
            .collect()
    }

    pub fn b1_values(&self) -> Vec<f64> {
        self.b1().to_vec()
    }

    pub fn w2_values(&self) -> Vec<f64> {
        self.w2().to_vec()
    }

    pub fn b2_values(&self) -> Vec<f64> {
        self.b2().to_vec()
    }

    fn forward(&self, x: &FeatureVector) -> Forward {
        let (h, k) = (self.h, self.k);
        let w1 = self.w1();
        let mut pre = self.b1().to_vec();
        for &j in &x.active {
            let col = &w1[j as usize * h..(j as usize + 1) * h];
            for (p, w) in pre.iter_mut().zip(col) {
                *p += w;
            }
        }
        let hidden: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        let w2 = self.w2();
        let out = self
            .b2()
            .iter()
            .enumerate()
            .map(|(r, b)| b + dot(&w2[r * h..(r + 1) * h], &hidden))
            .collect::<Vec<_>>();
        debug_assert_eq!(out.len(), 3 * k);
        Forward { pre, hidden, out }
    }

    /// Price-unit heads `(μ, log σ, logits)` and, per component, whether the
    /// stddev hit its clamp.
    fn heads(&self, out: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
        let k = self.k;
        let (lo, hi) = (SIGMA_MIN.ln(), SIGMA_MAX.ln());
        let mu = out[..k].iter().map(|&z| self.price.price(z)).collect();
        let mut clamped = vec![false; k];
        let log_sigma = out[k..2 * k]
            .iter()
            .zip(clamped.iter_mut())
            .map(|(&z, c)| {
                let ls = self.price.log_scale() + z;
                *c = !(lo..=hi).contains(&ls);
                ls.clamp(lo, hi)
            })
            .collect();
        (mu, log_sigma, clamped)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mixture predicted for `x`.
pub fn mcnet_forward(params: &McNetParams, x: &FeatureVector) -> Result<GaussianMixture> {
    check_dimension(x, params.d)?;
    let f = params.forward(x);
    let (mu, log_sigma, _) = params.heads(&f.out);
    let logits = &f.out[2 * params.k..];
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let weights = exps.iter().map(|e| e / total).collect();
    GaussianMixture::new(weights, mu, log_sigma.iter().map(|l| l.exp()).collect())
}

/// MCNet objective with `(l2/2)(‖W1‖² + ‖W2‖²)`, gradient by backpropagation.
pub fn mcnet_negloglik(
    params: &McNetParams,
    batch: &[Observation],
    l2: f64,
) -> Result<(f64, McNetParams)> {
    let (d, h, k) = (params.d, params.h, params.k);
    let n = params.values.len();
    let w2_off = d * h + h;
    let b2_off = w2_off + 3 * k * h;
    let scale = params.price.scale;
    let w2 = params.w2();

    let (data, mut grad) = sharded_sum(batch, n, d, |obs, g| {
        let f = params.forward(&obs.x);
        let (mu, log_sigma, clamped) = params.heads(&f.out);
        let mut head_grad = vec![0.0; 3 * k];
        let loss = censored_nll(
            &Heads {
                mu: &mu,
                log_sigma: &log_sigma,
                logits: &f.out[2 * k..],
            },
            obs,
            &mut head_grad,
        );
        // dL/dz for the raw outputs.
        let mut dz = head_grad;
        for c in 0..k {
            dz[c] *= scale;
            if clamped[c] {
                dz[k + c] = 0.0;
            }
        }
        let mut dpre = vec![0.0; h];
        for (r, &dzr) in dz.iter().enumerate() {
            g[b2_off + r] += dzr;
            let row = r * h;
            for u in 0..h {
                g[w2_off + row + u] += dzr * f.hidden[u];
                dpre[u] += dzr * w2[row + u];
            }
        }
        for u in 0..h {
            if f.pre[u] <= 0.0 {
                dpre[u] = 0.0;
            }
            g[d * h + u] += dpre[u];
        }
        for &j in &obs.x.active {
            let col = j as usize * h;
            for u in 0..h {
                g[col + u] += dpre[u];
            }
        }
        loss
    })?;

    let w1 = params.w1();
    let mut reg = 0.0;
    for (gi, wi) in grad[..d * h].iter_mut().zip(w1) {
        *gi += l2 * wi;
        reg += wi * wi;
    }
    for (gi, wi) in grad[w2_off..b2_off].iter_mut().zip(w2) {
        *gi += l2 * wi;
        reg += wi * wi;
    }
    let loss = data + 0.5 * l2 * reg;
    Ok((
        loss,
        McNetParams {
            d,
            h,
            k,
            values: grad,
            price: params.price,
        },
    ))
}

impl CensoredModel for McNetParams {
    fn kind(&self) -> ModelKind {
        ModelKind::McNet
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
        mcnet_negloglik(self, batch, l2).map(|(l, g)| (l, g.values))
    }

    fn predict(&self, x: &FeatureVector) -> Result<GaussianMixture> {
        mcnet_forward(self, x)
    }
}
