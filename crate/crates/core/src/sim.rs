//! Synthetic second-price market with a known feature-conditional landscape.
//!
//! Each record draws one attribute per field. The attributes push every
//! mixture component's mean, log stddev and logit by a hashed amount, so the
//! same profile always has the same law and that law is additive in the
//! one-hot features.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::FlatConfig;
use crate::dist::GaussianMixture;
use crate::error::{Error, Result};
use crate::featurize::RawRecord;
use crate::quadrature::integrate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub components: usize,
    /// Component means are placed in `components` equal bands of this range.
    pub mean_range: (f64, f64),
    pub sigma_range: (f64, f64),
    /// Scale of the per-attribute logit effects; 0 gives equal weights.
    pub weight_spread: f64,
    /// Logit of component `k` is lowered by `tilt·k/(K−1)`, favouring cheap components.
    pub weight_tilt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BidPolicy {
    Fixed(u32),
    /// Integer bid uniform on `[lo, hi]`.
    Uniform {
        lo: u32,
        hi: u32,
    },
    /// Bid at the `q`-quantile of the record's own truth, rounded.
    TruthQuantile(f64),
}

impl BidPolicy {
    /// `fixed:<c>`, `uniform:<lo>:<hi>` or `quantile:<q>`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad bid policy {text:?}"));
        let parts: Vec<&str> = text.trim().split(':').collect();
        match parts.as_slice() {
            ["fixed", c] => Ok(BidPolicy::Fixed(c.parse().map_err(|_| bad())?)),
            ["uniform", lo, hi] => Ok(BidPolicy::Uniform {
                lo: lo.parse().map_err(|_| bad())?,
                hi: hi.parse().map_err(|_| bad())?,
            }),
            ["quantile", q] => Ok(BidPolicy::TruthQuantile(q.parse().map_err(|_| bad())?)),
            _ => Err(bad()),
        }
    }

    pub fn render(&self) -> String {
        match self {
            BidPolicy::Fixed(c) => format!("fixed:{c}"),
            BidPolicy::Uniform { lo, hi } => format!("uniform:{lo}:{hi}"),
            BidPolicy::TruthQuantile(q) => format!("quantile:{q}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_fields: usize,
    pub attrs_per_field: usize,
    pub n_records: usize,
    pub truth: TruthSpec,
    pub bid_policy: BidPolicy,
    /// Total spend after which every later auction is bid at 0. Off by default.
    pub budget: Option<f64>,
    pub seed: u64,
}

impl SimConfig {
    /// The pinned benchmark market: bimodal heteroscedastic truths, about half censored.
    pub fn benchmark() -> Self {
        Self {
            n_fields: 4,
            attrs_per_field: 8,
            n_records: 50_000,
            truth: TruthSpec {
                components: 2,
                mean_range: (50.0, 400.0),
                sigma_range: (5.0, 60.0),
                weight_spread: 0.5,
                weight_tilt: 1.0,
            },
            bid_policy: BidPolicy::Uniform { lo: 0, hi: 350 },
            budget: None,
            seed: 2024,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_fields == 0 || self.attrs_per_field == 0 || self.n_records == 0 {
            return bad("n_fields, attrs_per_field and n_records must be positive".into());
        }
        let t = &self.truth;
        if t.components == 0 {
            return bad("truth components must be positive".into());
        }
        let (mlo, mhi) = t.mean_range;
        let (slo, shi) = t.sigma_range;
        if !(mlo.is_finite() && mhi.is_finite() && mlo <= mhi) {
            return bad(format!("empty mean range {mlo}..{mhi}"));
        }
        if !(slo.is_finite() && shi.is_finite() && slo <= shi) {
            return bad(format!("empty sigma range {slo}..{shi}"));
        }
        if slo < 1.0 {
            return bad(format!("sigma range must start at 1 or more, got {slo}"));
        }
        if !(t.weight_spread.is_finite() && t.weight_spread >= 0.0) || !t.weight_tilt.is_finite() {
            return bad("weight_spread must be nonnegative and weight_tilt finite".into());
        }
        match self.bid_policy {
            BidPolicy::Uniform { lo, hi } if lo > hi => bad(format!("empty bid range {lo}..{hi}")),
            BidPolicy::TruthQuantile(q) if !(q > 0.0 && q < 1.0) => {
                bad(format!("bid quantile must be in (0, 1), got {q}"))
            }
            _ => Ok(()),
        }
    }

    /// Reads keys `n_fields`, `attrs_per_field`, `n_records`, `components`,
    /// `mean_lo`, `mean_hi`, `sigma_lo`, `sigma_hi`, `weight_spread`, `weight_tilt`,
    /// `bid_policy`, `budget`, `seed`; anything missing keeps the benchmark value.
    pub fn from_config(c: &FlatConfig) -> Result<Self> {
        let d = Self::benchmark();
        let cfg = Self {
            n_fields: c.get_or("n_fields", d.n_fields)?,
            attrs_per_field: c.get_or("attrs_per_field", d.attrs_per_field)?,
            n_records: c.get_or("n_records", d.n_records)?,
            truth: TruthSpec {
                components: c.get_or("components", d.truth.components)?,
                mean_range: (
                    c.get_or("mean_lo", d.truth.mean_range.0)?,
                    c.get_or("mean_hi", d.truth.mean_range.1)?,
                ),
                sigma_range: (
                    c.get_or("sigma_lo", d.truth.sigma_range.0)?,
                    c.get_or("sigma_hi", d.truth.sigma_range.1)?,
                ),
                weight_spread: c.get_or("weight_spread", d.truth.weight_spread)?,
                weight_tilt: c.get_or("weight_tilt", d.truth.weight_tilt)?,
            },
            bid_policy: match c.get_str("bid_policy") {
                Some(p) => BidPolicy::parse(p)?,
                None => d.bid_policy,
            },
            budget: c.get("budget")?,
            seed: c.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_config(&self) -> FlatConfig {
        let mut c = FlatConfig::default();
        c.set("n_fields", self.n_fields.to_string());
        c.set("attrs_per_field", self.attrs_per_field.to_string());
        c.set("n_records", self.n_records.to_string());
        c.set("components", self.truth.components.to_string());
        c.set("mean_lo", self.truth.mean_range.0.to_string());
        c.set("mean_hi", self.truth.mean_range.1.to_string());
        c.set("sigma_lo", self.truth.sigma_range.0.to_string());
        c.set("sigma_hi", self.truth.sigma_range.1.to_string());
        c.set("weight_spread", self.truth.weight_spread.to_string());
        c.set("weight_tilt", self.truth.weight_tilt.to_string());
        c.set("bid_policy", self.bid_policy.render());
        if let Some(b) = self.budget {
            c.set("budget", b.to_string());
        }
        c.set("seed", self.seed.to_string());
        c
    }

    pub fn field_name(f: usize) -> String {
        format!("F{f}")
    }

    pub fn attribute_name(a: usize) -> String {
        format!("a{a}")
    }

    /// The conditional law of a profile (one attribute index per field).
    pub fn truth_for(&self, profile: &[usize]) -> Result<GaussianMixture> {
        let t = &self.truth;
        let k = t.components;
        let nf = profile.len().max(1) as f64;
        let band = (t.mean_range.1 - t.mean_range.0) / k as f64;
        let (ln_lo, ln_hi) = (t.sigma_range.0.ln(), t.sigma_range.1.ln());
        let mut means = Vec::with_capacity(k);
        let mut sigmas = Vec::with_capacity(k);
        let mut logits = Vec::with_capacity(k);
        for c in 0..k {
            let avg = |slot: u64| {
                profile
                    .iter()
                    .enumerate()
                    .map(|(f, &a)| self.unit_hash(f, a, c, slot))
                    .sum::<f64>()
                    / nf
            };
            let mu = t.mean_range.0 + band * (c as f64 + avg(0));
            let sigma = (ln_lo + (ln_hi - ln_lo) * avg(1)).exp();
            // Keep the mass below zero negligible so clamping draws at 0 is harmless.
            let sigma = sigma.min((mu / 4.0).max(t.sigma_range.0));
            let logit: f64 = profile
                .iter()
                .enumerate()
                .map(|(f, &a)| 2.0 * self.unit_hash(f, a, c, 2) - 1.0)
                .sum();
            means.push(mu);
            sigmas.push(sigma);
            let tilt = if k > 1 {
                t.weight_tilt * c as f64 / (k - 1) as f64
            } else {
                0.0
            };
            logits.push(t.weight_spread * logit - tilt);
        }
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = exps.iter().sum();
        GaussianMixture::new(exps.iter().map(|e| e / z).collect(), means, sigmas)
    }

    fn unit_hash(&self, field: usize, attr: usize, component: usize, slot: u64) -> f64 {
        let mut h = splitmix64(self.seed ^ 0x005e_ed0f_7a11);
        for v in [field as u64, attr as u64, component as u64, slot] {
            h = splitmix64(h ^ v);
        }
        (h >> 11) as f64 / (1u64 << 53) as f64
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generated records with the law each winning price was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct SimData {
    pub records: Vec<RawRecord>,
    pub truths: Vec<GaussianMixture>,
}

/// Draws `config.n_records` auctions. Record `i` uses its own ChaCha stream,
/// so the output does not depend on the number of worker threads.
pub fn generate(config: &SimConfig) -> Result<SimData> {
    config.validate()?;
    let drawn: Vec<Result<(RawRecord, GaussianMixture, u32)>> = (0..config.n_records)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            let profile: Vec<usize> = (0..config.n_fields)
                .map(|_| rng.random_range(0..config.attrs_per_field))
                .collect();
            let truth = config.truth_for(&profile)?;
            let w = sample_price(&truth, &mut rng);
            let bid = match config.bid_policy {
                BidPolicy::Fixed(c) => c,
                BidPolicy::Uniform { lo, hi } => rng.random_range(lo..=hi),
                BidPolicy::TruthQuantile(q) => round_price(truth.quantile(q)),
            };
            let fields = profile
                .iter()
                .enumerate()
                .map(|(f, &a)| (SimConfig::field_name(f), SimConfig::attribute_name(a)))
                .collect();
            let won = bid >= w;
            let rec = RawRecord::new(fields, bid, won.then_some(w))?;
            Ok((rec, truth, w))
        })
        .collect();

    let mut records = Vec::with_capacity(config.n_records);
    let mut truths = Vec::with_capacity(config.n_records);
    let mut spent = 0.0;
    for item in drawn {
        let (mut rec, truth, w) = item?;
        if let Some(budget) = config.budget {
            if spent >= budget {
                rec = RawRecord::new(rec.fields, 0, (w == 0).then_some(0))?;
            }
            spent += rec.winning_price.map_or(0.0, f64::from);
        }
        records.push(rec);
        truths.push(truth);
    }
    Ok(SimData { records, truths })
}

/// Draw from the mixture, rounded into its `(l − 0.5, l + 0.5]` bin, clamped at 0.
pub fn sample_price(truth: &GaussianMixture, rng: &mut impl Rng) -> u32 {
    let u: f64 = rng.random();
    let mut k = 0;
    let mut acc = 0.0;
    for (i, &p) in truth.weights().iter().enumerate() {
        acc += p;
        k = i;
        if u < acc {
            break;
        }
    }
    let z: f64 = rng.sample(StandardNormal);
    round_price(truth.means()[k] + truth.stddevs()[k] * z)
}

fn round_price(x: f64) -> u32 {
    (x - 0.5).ceil().clamp(0.0, f64::from(u32::MAX)) as u32
}

/// Sidecar rows `record_id \t K \t π… \t μ… \t σ…`.
pub fn format_truths(truths: &[GaussianMixture]) -> String {
    let mut out = String::new();
    for (i, g) in truths.iter().enumerate() {
        let _ = write!(out, "{i}\t{}", g.k());
        for v in g.weights().iter().chain(g.means()).chain(g.stddevs()) {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_truths(text: &str) -> Result<Vec<GaussianMixture>> {
    let mut truths = Vec::new();
    for (n, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let bad = |reason: &str| Error::MalformedRecord {
            line: n + 1,
            reason: reason.into(),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        let id: usize = cols
            .first()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| bad("bad id"))?;
        if id != truths.len() {
            return Err(bad("record ids out of order"));
        }
        let k: usize = cols
            .get(1)
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| bad("bad K"))?;
        if k == 0 || cols.len() != 2 + 3 * k {
            return Err(bad("wrong column count"));
        }
        let nums: Vec<f64> = cols[2..]
            .iter()
            .map(|c| c.parse::<f64>().map_err(|_| bad("bad number")))
            .collect::<Result<_>>()?;
        truths.push(GaussianMixture::new(
            nums[..k].to_vec(),
            nums[k..2 * k].to_vec(),
            nums[2 * k..].to_vec(),
        )?);
    }
    Ok(truths)
}

pub fn read_truths(path: &Path) -> Result<Vec<GaussianMixture>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_truths(&text)
}

/// `∫₀^b w·pdf(w) dw` by adaptive quadrature. Only used to check the closed form.
pub fn true_expected_cost_check(truth: &GaussianMixture, b: f64) -> f64 {
    if b <= 0.0 {
        return 0.0;
    }
    let mut cuts = vec![0.0, b];
    for (&m, &s) in truth.means().iter().zip(truth.stddevs()) {
        for z in [-8.0, -3.0, 0.0, 3.0, 8.0] {
            let c = m + z * s;
            if c > 0.0 && c < b {
                cuts.push(c);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2)
        .map(|w| integrate(|v| v * truth.pdf(v), w[0], w[1], 1e-13, 1e-12))
        .sum()
}
