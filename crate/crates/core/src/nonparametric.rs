//! Feature-blind landscape estimators: the Kaplan–Meier product-limit
//! estimate with a beyond-max-bid tail bucket, the Random Strategy baseline,
//! and the KL-closest single Gaussian to a KM estimate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dist::{GaussianMixture, Landscape, LandscapePoint, PROB_FLOOR};
use crate::error::{Error, Result};
use crate::featurize::Observation;

/// Discrete winning-price distribution up to the largest bid, plus the mass
/// of "winning price above every bid seen".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KmParts", into = "KmParts")]
pub struct KMEstimate {
    prices: Vec<u32>,
    pmf: Vec<f64>,
    tail_mass: f64,
    max_bid: u32,
    /// `suffix[i] = Σ_{j ≥ i} pmf[j] + tail_mass`.
    suffix: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct KmParts {
    prices: Vec<u32>,
    pmf: Vec<f64>,
    tail_mass: f64,
    max_bid: u32,
}

impl TryFrom<KmParts> for KMEstimate {
    type Error = Error;

    fn try_from(p: KmParts) -> Result<Self> {
        KMEstimate::new(p.prices, p.pmf, p.tail_mass, p.max_bid)
    }
}

impl From<KMEstimate> for KmParts {
    fn from(k: KMEstimate) -> Self {
        KmParts {
            prices: k.prices,
            pmf: k.pmf,
            tail_mass: k.tail_mass,
            max_bid: k.max_bid,
        }
    }
}

impl KMEstimate {
    pub fn new(prices: Vec<u32>, pmf: Vec<f64>, tail_mass: f64, max_bid: u32) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if prices.len() != pmf.len() {
            return bad("prices and pmf differ in length".into());
        }
        if prices.windows(2).any(|w| w[0] >= w[1]) {
            return bad("prices must be strictly increasing".into());
        }
        if prices.last().is_some_and(|&p| p > max_bid) {
            return bad("support extends beyond max_bid".into());
        }
        if pmf.iter().any(|p| !(*p >= 0.0)) || !(tail_mass >= 0.0) {
            return bad("probabilities must be nonnegative".into());
        }
        let total = pmf.iter().sum::<f64>() + tail_mass;
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("mass sums to {total}"));
        }
        let mut suffix = vec![tail_mass; pmf.len() + 1];
        for i in (0..pmf.len()).rev() {
            suffix[i] = suffix[i + 1] + pmf[i];
        }
        suffix.pop();
        Ok(Self {
            prices,
            pmf,
            tail_mass,
            max_bid,
            suffix,
        })
    }

    pub fn prices(&self) -> &[u32] {
        &self.prices
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn max_bid(&self) -> u32 {
        self.max_bid
    }

    pub fn pmf_at(&self, price: i64) -> f64 {
        u32::try_from(price)
            .ok()
            .and_then(|p| self.prices.binary_search(&p).ok())
            .map_or(0.0, |i| self.pmf[i])
    }

    /// P(W ≥ price), tail included.
    pub fn mass_at_or_above(&self, price: i64) -> f64 {
        if price <= 0 {
            return self.suffix.first().copied().unwrap_or(self.tail_mass);
        }
        let p = u32::try_from(price).unwrap_or(u32::MAX);
        let i = self.prices.partition_point(|&v| v < p);
        self.suffix.get(i).copied().unwrap_or(self.tail_mass)
    }

    /// S(v) = P(W > v).
    pub fn survival(&self, price: i64) -> f64 {
        self.mass_at_or_above(price.saturating_add(1))
    }

    pub fn logprob_win(&self, w: i64) -> f64 {
        self.pmf_at(w).max(PROB_FLOOR).ln()
    }

    pub fn logprob_lose(&self, b: i64) -> f64 {
        self.mass_at_or_above(b).max(PROB_FLOOR).ln()
    }

    /// Rows `lo..=hi` with the mass below `lo` folded into the first row.
    pub fn landscape(&self, lo: i64, hi: i64) -> Result<Landscape> {
        if hi < lo {
            return Err(Error::InvalidArgument(format!(
                "empty price range {lo}..={hi}"
            )));
        }
        let points = (lo..=hi)
            .map(|price| {
                let cdf = 1.0 - self.survival(price);
                let pmf = if price == lo { cdf } else { self.pmf_at(price) };
                LandscapePoint { price, pmf, cdf }
            })
            .collect();
        Ok(Landscape {
            points,
            tail: self.survival(hi),
        })
    }
}

/// Product-limit estimate over all records. Won auctions are events at their
/// winning price; lost ones are censored at their bid. At a tied price,
/// events are counted before the censored records leave the risk set.
///
/// Computed by redistributing each censored record's mass over the records
/// still at risk, which equals the product-limit estimate and keeps the
/// uncensored case exactly the empirical frequencies.
pub fn km_fit(data: &[Observation]) -> Result<KMEstimate> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut times: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
    for o in data {
        match o.winning_price {
            Some(w) => times.entry(w).or_default().0 += 1,
            None => times.entry(o.bid_price).or_default().1 += 1,
        }
    }
    let n_total = data.len() as f64;
    let max_bid = data.iter().map(|o| o.bid_price).max().unwrap_or(0);
    let mut at_risk = data.len() as u64;
    let mut unit = 1.0;
    let mut prices = Vec::new();
    let mut pmf = Vec::new();
    let mut tail = 0.0;

    for (&price, &(events, censored)) in &times {
        if events > 0 {
            prices.push(price);
            pmf.push(events as f64 * unit / n_total);
            at_risk -= events;
        }
        if censored > 0 {
            let remaining = at_risk - censored;
            if remaining > 0 {
                unit *= at_risk as f64 / remaining as f64;
            } else {
                tail += censored as f64 * unit / n_total;
            }
            at_risk = remaining;
        }
    }
    debug_assert_eq!(at_risk, 0);
    KMEstimate::new(prices, pmf, tail, max_bid)
}

/// One KM estimate per group key.
pub fn km_fit_grouped<G: Ord>(
    data: &[Observation],
    key: impl Fn(&Observation) -> G,
) -> Result<BTreeMap<G, KMEstimate>> {
    let mut groups: BTreeMap<G, Vec<Observation>> = BTreeMap::new();
    for o in data {
        groups.entry(key(o)).or_default().push(o.clone());
    }
    groups
        .into_iter()
        .map(|(g, obs)| km_fit(&obs).map(|k| (g, k)))
        .collect()
}

/// Uniform-below-max-bid baseline scaled by the win rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RSModel {
    pub p_win: f64,
    pub z_max: u32,
}

pub fn rs_fit(train: &[Observation]) -> Result<RSModel> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let z_max = train.iter().map(|o| o.bid_price).max().unwrap_or(0);
    if z_max == 0 {
        return Err(Error::InvalidArgument("maximum bid price is 0".into()));
    }
    let wins = train.iter().filter(|o| o.won).count();
    Ok(RSModel {
        p_win: wins as f64 / train.len() as f64,
        z_max,
    })
}

impl RSModel {
    pub fn logprob_win(&self, w: i64) -> f64 {
        let z = f64::from(self.z_max);
        let p = if (0..=i64::from(self.z_max)).contains(&w) {
            self.p_win / z
        } else {
            0.0
        };
        p.max(PROB_FLOOR).ln()
    }

    pub fn logprob_lose(&self, b: i64) -> f64 {
        let z = f64::from(self.z_max);
        let p = if b > i64::from(self.z_max) {
            1.0 - self.p_win
        } else {
            let b = (b as f64).max(0.0);
            (1.0 - self.p_win) + self.p_win * (z - b) / z
        };
        p.max(PROB_FLOOR).ln()
    }

    /// The win-rate mass spread uniformly over `[0, z_max]`, the rest in the tail.
    pub fn landscape(&self, lo: i64, hi: i64) -> Result<Landscape> {
        if hi < lo {
            return Err(Error::InvalidArgument(format!(
                "empty price range {lo}..={hi}"
            )));
        }
        let z = f64::from(self.z_max);
        let cdf = |v: f64| self.p_win * (v + 0.5).clamp(0.0, z) / z;
        let points = (lo..=hi)
            .map(|price| {
                let c = cdf(price as f64);
                let pmf = if price == lo {
                    c
                } else {
                    c - cdf(price as f64 - 1.0)
                };
                LandscapePoint { price, pmf, cdf: c }
            })
            .collect();
        Ok(Landscape {
            points,
            tail: 1.0 - cdf(hi as f64),
        })
    }
}

pub fn rs_logprob_win(m: &RSModel, w: i64) -> f64 {
    m.logprob_win(w)
}

pub fn rs_logprob_lose(m: &RSModel, b: i64) -> f64 {
    m.logprob_lose(b)
}

/// Smallest stddev the KL fit returns.
pub const FIT_SIGMA_FLOOR: f64 = 1e-3;

/// Cross-entropy of the KM estimate against a quantized `N(mu, sigma)`
/// whose mass above `max_bid + 0.5` plays the tail bucket. Differs from
/// KL(KM‖N) only by the (constant) entropy of the KM estimate.
fn km_cross_entropy(est: &KMEstimate, mu: f64, sigma: f64) -> f64 {
    let g = match GaussianMixture::single(mu, sigma) {
        Ok(g) => g,
        Err(_) => return f64::INFINITY,
    };
    let mut total = 0.0;
    for (&price, &p) in est.prices.iter().zip(&est.pmf) {
        if p > 0.0 {
            let v = f64::from(price);
            total -= p * g.log_interval(v - 0.5, v + 0.5);
        }
    }
    if est.tail_mass > 0.0 {
        total -= est.tail_mass * g.log_sf(f64::from(est.max_bid) + 0.5);
    }
    if total.is_finite() {
        total
    } else {
        f64::INFINITY
    }
}

/// KL divergence of the KM estimate from a quantized Gaussian.
pub fn km_gaussian_kl(est: &KMEstimate, mu: f64, sigma: f64) -> f64 {
    let entropy: f64 = est
        .pmf
        .iter()
        .chain(std::iter::once(&est.tail_mass))
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    km_cross_entropy(est, mu, sigma) - entropy
}

/// The single Gaussian closest in KL to a KM estimate: a coarse grid over
/// `μ ∈ [0, 2·max_bid]`, `σ ∈ [1, 2·max_bid]`, then compass search until both
/// steps are below 1e-3.
pub fn fit_gaussian_to_km(est: &KMEstimate) -> Result<(f64, f64)> {
    let support: Vec<usize> = (0..est.pmf.len()).filter(|&i| est.pmf[i] > 0.0).collect();
    if est.tail_mass == 0.0 && support.len() == 1 {
        return Ok((f64::from(est.prices[support[0]]), FIT_SIGMA_FLOOR));
    }
    if est.tail_mass == 0.0 && support.is_empty() {
        return Err(Error::InvalidArgument("KM estimate has no mass".into()));
    }

    let span = (2.0 * f64::from(est.max_bid)).max(2.0);
    const MU_STEPS: usize = 80;
    const SIGMA_STEPS: usize = 60;
    let sigma_ratio = span.ln() / SIGMA_STEPS as f64;
    let mut best = (f64::INFINITY, 0.0, 1.0);
    for i in 0..=MU_STEPS {
        let mu = span * i as f64 / MU_STEPS as f64;
        for j in 0..=SIGMA_STEPS {
            let sigma = (sigma_ratio * j as f64).exp();
            let v = km_cross_entropy(est, mu, sigma);
            if v < best.0 {
                best = (v, mu, sigma);
            }
        }
    }

    let (mut f, mut mu, mut sigma) = best;
    let mut step_mu = span / MU_STEPS as f64;
    let mut step_sigma = sigma * (sigma_ratio.exp() - 1.0);
    const TOL: f64 = 1e-3;
    while step_mu >= TOL || step_sigma >= TOL {
        let mut moved = false;
        for (dm, ds) in [
            (step_mu, 0.0),
            (-step_mu, 0.0),
            (0.0, step_sigma),
            (0.0, -step_sigma),
        ] {
            if dm.abs() < TOL && ds.abs() < TOL {
                continue;
            }
            let (m2, s2) = (mu + dm, (sigma + ds).max(FIT_SIGMA_FLOOR));
            let v = km_cross_entropy(est, m2, s2);
            if v < f {
                (f, mu, sigma) = (v, m2, s2);
                moved = true;
                break;
            }
        }
        if !moved {
            step_mu *= 0.5;
            step_sigma *= 0.5;
        }
    }
    Ok((mu, sigma))
}
