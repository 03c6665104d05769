//! Gaussian and Gaussian-mixture primitives evaluated in log space.
//!
//! Every predicted landscape in this crate is a [`GaussianMixture`]; the
//! single-Gaussian censored regressions are the `K = 1` case. Probabilities
//! that feed an evaluation score pass through [`PROB_FLOOR`] before the log.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `½·ln(2π)`.
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Smallest probability any quantized evaluator reports.
pub const PROB_FLOOR: f64 = 1e-12;

/// `ln(PROB_FLOOR)`.
pub fn log_prob_floor() -> f64 {
    PROB_FLOOR.ln()
}

/// Arguments below this use the asymptotic expansion of the Mills ratio.
const ASYMPTOTIC_CUTOFF: f64 = -8.0;

#[inline]
pub fn log_std_normal_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    log_std_normal_pdf(x).exp()
}

/// Φ(x) through the complementary error function; accurate in the lower tail.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// ln Φ(x), finite for every finite `x`.
pub fn log_std_normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    if x < ASYMPTOTIC_CUTOFF {
        log_std_normal_cdf_asymptotic(x)
    } else if x <= 0.0 {
        std_normal_cdf(x).ln()
    } else {
        // Φ(x) = 1 − Φ(−x); keep the small complement exact.
        (-std_normal_cdf(-x)).ln_1p()
    }
}

/// ln Φ(x) = ln φ(x) − ln(−x) + ln(1 − 1/x² + 3/x⁴ − 15/x⁶ + …) for x ≪ 0.
fn log_std_normal_cdf_asymptotic(x: f64) -> f64 {
    let inv_x2 = 1.0 / (x * x);
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    for n in 1..64 {
        let next = -term * (2 * n - 1) as f64 * inv_x2;
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    log_std_normal_pdf(x) - (-x).ln() + sum.ln()
}

/// φ(x)/Φ(x), the derivative of ln Φ.
#[inline]
pub fn inverse_mills_ratio(x: f64) -> f64 {
    (log_std_normal_pdf(x) - log_std_normal_cdf(x)).exp()
}

/// ln(Φ(hi) − Φ(lo)) for a standard normal, without cancellation in either tail.
pub fn log_std_normal_interval(lo: f64, hi: f64) -> f64 {
    if !(hi > lo) {
        return f64::NEG_INFINITY;
    }
    if hi <= 0.0 {
        log_diff_exp(log_std_normal_cdf(hi), log_std_normal_cdf(lo))
    } else if lo >= 0.0 {
        log_diff_exp(log_std_normal_cdf(-lo), log_std_normal_cdf(-hi))
    } else {
        (-(std_normal_cdf(lo) + std_normal_cdf(-hi))).ln_1p()
    }
}

/// ln(eᵃ − eᵇ) for a ≥ b.
#[inline]
fn log_diff_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    a + (-(b - a).exp()).ln_1p()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// A finite mixture of Gaussians over the price axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<f64>,
    stddevs: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, stddevs: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::InvalidMixture("no components".into()));
        }
        if means.len() != k || stddevs.len() != k {
            return Err(Error::InvalidMixture(format!(
                "component arrays disagree: {} weights, {} means, {} stddevs",
                k,
                means.len(),
                stddevs.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidMixture(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidMixture(format!("weights sum to {total}")));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidMixture("means must be finite".into()));
        }
        if stddevs.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidMixture(
                "stddevs must be finite and positive".into(),
            ));
        }
        Ok(Self {
            weights,
            means,
            stddevs,
        })
    }

    pub fn single(mean: f64, stddev: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![stddev])
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stddevs(&self) -> &[f64] {
        &self.stddevs
    }

    fn components(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.stddevs)
            .map(|((&p, &m), &s)| (p, m, s))
    }

    fn log_sum_components(&self, term: impl Fn(f64, f64) -> f64) -> f64 {
        let mut terms = [0.0; 8];
        let mut heap;
        let buf: &mut [f64] = if self.k() <= terms.len() {
            &mut terms[..self.k()]
        } else {
            heap = vec![0.0; self.k()];
            &mut heap
        };
        for (slot, (p, m, s)) in buf.iter_mut().zip(self.components()) {
            *slot = p.ln() + term(m, s);
        }
        log_sum_exp(buf)
    }

    /// E[W] over the whole real line.
    pub fn mean(&self) -> f64 {
        self.components().map(|(p, m, _)| p * m).sum()
    }

    pub fn log_pdf(&self, w: f64) -> f64 {
        self.log_sum_components(|m, s| log_std_normal_pdf((w - m) / s) - s.ln())
    }

    pub fn pdf(&self, w: f64) -> f64 {
        self.log_pdf(w).exp()
    }

    /// ln P(W > b).
    pub fn log_sf(&self, b: f64) -> f64 {
        self.log_sum_components(|m, s| log_std_normal_cdf((m - b) / s))
    }

    /// ln P(W ≤ b).
    pub fn log_cdf(&self, b: f64) -> f64 {
        self.log_sum_components(|m, s| log_std_normal_cdf((b - m) / s))
    }

    pub fn cdf(&self, b: f64) -> f64 {
        self.log_cdf(b).exp()
    }

    /// ln P(lo < W ≤ hi), unfloored.
    pub fn log_interval(&self, lo: f64, hi: f64) -> f64 {
        self.log_sum_components(|m, s| log_std_normal_interval((lo - m) / s, (hi - m) / s))
    }

    /// Probability of the unit bin `(price − 0.5, price + 0.5]`, unfloored.
    pub fn bin_prob(&self, price: i64) -> f64 {
        let p = price as f64;
        self.log_interval(p - 0.5, p + 0.5).exp()
    }

    /// ln P(W_bin = w), floored at [`PROB_FLOOR`].
    pub fn quantized_win_logprob(&self, w: i64) -> f64 {
        let p = w as f64;
        self.log_interval(p - 0.5, p + 0.5).max(log_prob_floor())
    }

    /// ln P(W_bin ≥ b) = ln P(W > b − 0.5), floored at [`PROB_FLOOR`].
    pub fn quantized_lose_logprob(&self, b: i64) -> f64 {
        self.log_sf(b as f64 - 0.5).max(log_prob_floor())
    }

    /// Expected payment ∫₀ᵇ w p(w) dw under a bid `b`, in closed form.
    pub fn expected_cost(&self, b: f64) -> Result<f64> {
        if !(b >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "bid must be nonnegative, got {b}"
            )));
        }
        if b == 0.0 {
            return Ok(0.0);
        }
        let total: f64 = self
            .components()
            .map(|(p, m, s)| {
                let lo = -m / s;
                let hi = (b - m) / s;
                let mass = log_std_normal_interval(lo, hi).exp();
                let part = m * mass + s * (std_normal_pdf(lo) - std_normal_pdf(hi));
                p * part.max(0.0)
            })
            .sum();
        Ok(total)
    }

    /// P(W ≤ b)·u: the expected utility of bidding `b` on an impression worth `u`.
    pub fn expected_utility(&self, b: f64, u: f64) -> f64 {
        let win = -self.log_sf(b).exp_m1();
        win * u
    }

    /// Smallest `w` with P(W ≤ w) ≥ q, by bisection.
    pub fn quantile(&self, q: f64) -> f64 {
        let q = q.clamp(1e-15, 1.0 - 1e-15);
        let spread = self.stddevs.iter().copied().fold(0.0, f64::max);
        let mut lo = self.means.iter().copied().fold(f64::INFINITY, f64::min) - 40.0 * spread;
        let mut hi = self.means.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 40.0 * spread;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * (1.0 + mid.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Rows for `lo..=hi` plus the mass beyond `hi`; the first row absorbs
    /// everything at or below `lo` so the curve sums to one.
    pub fn landscape(&self, lo: i64, hi: i64) -> Result<Landscape> {
        if hi < lo {
            return Err(Error::InvalidArgument(format!(
                "empty price range {lo}..={hi}"
            )));
        }
        let points = (lo..=hi)
            .map(|price| {
                let cdf = self.cdf(price as f64 + 0.5);
                let pmf = if price == lo {
                    cdf
                } else {
                    self.bin_prob(price)
                };
                LandscapePoint { price, pmf, cdf }
            })
            .collect();
        Ok(Landscape {
            points,
            tail: self.log_sf(hi as f64 + 0.5).exp(),
        })
    }
}

/// One row of an exported landscape curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandscapePoint {
    pub price: i64,
    pub pmf: f64,
    pub cdf: f64,
}

/// A discretised landscape: per-price rows and the mass above the last row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landscape {
    pub points: Vec<LandscapePoint>,
    pub tail: f64,
}

impl Landscape {
    pub fn total_mass(&self) -> f64 {
        self.points.iter().map(|p| p.pmf).sum::<f64>() + self.tail
    }

    /// `price,pmf,cdf` rows followed by `TAIL,<mass>,1.0`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("price,pmf,cdf\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.price, p.pmf, p.cdf);
        }
        let _ = writeln!(out, "TAIL,{},1.0", self.tail);
        out
    }

    /// Total-variation distance against another landscape over the same rows.
    pub fn total_variation(&self, other: &Landscape) -> Result<f64> {
        if self.points.len() != other.points.len()
            || self
                .points
                .iter()
                .zip(&other.points)
                .any(|(a, b)| a.price != b.price)
        {
            return Err(Error::InvalidArgument(
                "landscapes cover different prices".into(),
            ));
        }
        let body: f64 = self
            .points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| (a.pmf - b.pmf).abs())
            .sum();
        Ok(0.5 * (body + (self.tail - other.tail).abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_pdf_values() {
        assert_eq!(log_std_normal_pdf(0.0), -LN_SQRT_2PI);
        assert!((log_std_normal_pdf(0.0) + 0.918_938_533_204_672_7).abs() < 1e-15);
        assert!((log_std_normal_pdf(1.0) + 1.418_938_533_204_672_7).abs() < 1e-15);
        assert!((log_std_normal_pdf(40.0) + 800.918_938_533_204_7).abs() < 1e-12);
    }

    #[test]
    fn log_cdf_anchor_points() {
        assert!((log_std_normal_cdf(0.0) - 0.5f64.ln()).abs() < 1e-16);
        // Frozen from a 50-digit evaluation of Φ(−10) = 7.6198530241605260659733432515993e-24.
        let log_phi_m10 = -53.231_285_150_512_47;
        assert!((log_std_normal_cdf(-10.0) - log_phi_m10).abs() < 1e-9);
        let v = log_std_normal_cdf(10.0);
        assert!((v + 7.619_853_024_160_526e-24).abs() < 1e-35, "{v:e}");
        assert!(log_std_normal_cdf(-1e6).is_finite());
    }

    #[test]
    fn asymptotic_branch_is_continuous_at_cutoff() {
        let below = log_std_normal_cdf(ASYMPTOTIC_CUTOFF - 1e-12);
        let above = log_std_normal_cdf(ASYMPTOTIC_CUTOFF + 1e-12);
        assert!((below - above).abs() < 1e-9);
    }

    #[test]
    fn mixture_rejects_bad_components() {
        assert!(GaussianMixture::new(vec![0.5, 0.4], vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![0.0], vec![0.0]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![f64::NAN], vec![1.0]).is_err());
        assert!(GaussianMixture::new(vec![], vec![], vec![]).is_err());
        assert!(GaussianMixture::new(vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]).is_ok());
    }

    #[test]
    fn mixture_log_pdf_examples() {
        let g = GaussianMixture::single(0.0, 1.0).unwrap();
        assert!((g.log_pdf(0.0) + LN_SQRT_2PI).abs() < 1e-15);
        let g2 = GaussianMixture::new(vec![0.5, 0.5], vec![-1.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert!((g2.log_pdf(0.0) - log_std_normal_pdf(1.0)).abs() < 1e-14);
    }

    #[test]
    fn zero_weight_component_is_ignored() {
        let g = GaussianMixture::new(vec![1.0, 0.0], vec![0.0, 5.0], vec![1.0, 1.0]).unwrap();
        assert!((g.log_sf(0.0) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn quantized_examples() {
        let g = GaussianMixture::single(0.0, 1.0).unwrap();
        // Φ(0.5) − Φ(−0.5) = 0.38292492254802620727...
        assert!((g.quantized_win_logprob(0).exp() - 0.382_924_922_548_026_2).abs() < 1e-15);
        let far = GaussianMixture::single(0.0, 1.0).unwrap();
        assert_eq!(far.quantized_win_logprob(1000), log_prob_floor());
        let lose = GaussianMixture::single(9.5, 3.0).unwrap();
        assert!((lose.quantized_lose_logprob(10) - 0.5f64.ln()).abs() < 1e-15);
        assert!(lose.quantized_lose_logprob(-1_000_000).abs() < 1e-300);
    }

    #[test]
    fn expected_cost_rejects_negative_bid() {
        let g = GaussianMixture::single(100.0, 1.0).unwrap();
        assert!(g.expected_cost(-1.0).is_err());
        assert_eq!(g.expected_cost(0.0).unwrap(), 0.0);
        assert!((g.expected_cost(1e6).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn expected_utility_at_median() {
        let g = GaussianMixture::new(vec![0.5, 0.5], vec![10.0, 30.0], vec![2.0, 2.0]).unwrap();
        assert!((g.expected_utility(20.0, 3.0) - 1.5).abs() < 1e-12);
        assert_eq!(g.expected_utility(20.0, 0.0), 0.0);
    }

    #[test]
    fn landscape_csv_shape() {
        let g = GaussianMixture::single(5.0, 2.0).unwrap();
        let l = g.landscape(0, 10).unwrap();
        assert!((l.total_mass() - 1.0).abs() < 1e-12);
        let csv = l.to_csv();
        assert!(csv.starts_with("price,pmf,cdf\n0,"));
        assert!(csv.lines().last().unwrap().starts_with("TAIL,"));
        assert!(csv.trim_end().ends_with(",1.0"));
        assert!(g.landscape(3, 2).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        let g = GaussianMixture::new(vec![0.3, 0.7], vec![50.0, 200.0], vec![10.0, 30.0]).unwrap();
        for q in [0.01, 0.3, 0.5, 0.9] {
            assert!((g.cdf(g.quantile(q)) - q).abs() < 1e-9);
        }
    }
}
