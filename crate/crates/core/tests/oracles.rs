//! Library values against independent references: statrs' normal
//! distribution, direct (non-log) sums, and adaptive quadrature.

mod common;

use landscape_core::dist::{log_std_normal_cdf, GaussianMixture};
use landscape_core::evaluation::{anlp, oracle_anlp, oracle_report, FittedModel};
use landscape_core::featurize::{build_vocabulary, BinSpec, FeatureVector, Observation};
use landscape_core::models::{CrParams, ModelParams};
use landscape_core::quadrature::integrate;
use landscape_core::sim::{generate, sample_price, BidPolicy, SimConfig, TruthSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF, Normal};

fn normal(m: f64, s: f64) -> Normal {
    Normal::new(m, s).unwrap()
}

#[test]
fn log_cdf_agrees_with_statrs_on_moderate_range() {
    let n = normal(0.0, 1.0);
    let mut x = -8.0;
    while x <= 8.0 {
        let want = n.cdf(x);
        let got = log_std_normal_cdf(x).exp();
        assert!(
            ((got - want) / want).abs() < 1e-10,
            "x={x}: {got} vs {want}"
        );
        x += 0.0625;
    }
}

#[test]
fn mixture_log_pdf_matches_direct_sum() {
    let g = GaussianMixture::new(
        vec![0.2, 0.5, 0.3],
        vec![1.0, 2.0, 4.0],
        vec![0.5, 1.5, 2.0],
    )
    .unwrap();
    let direct: f64 = g
        .weights()
        .iter()
        .zip(g.means().iter().zip(g.stddevs()))
        .map(|(&p, (&m, &s))| p * normal(m, s).pdf(2.5))
        .sum();
    assert!((g.log_pdf(2.5) - direct.ln()).abs() < 1e-14);
}

#[test]
fn mixture_log_sf_combines_component_survivals() {
    let g = GaussianMixture::new(vec![0.3, 0.7], vec![100.0, 250.0], vec![20.0, 40.0]).unwrap();
    for b in [50.0, 120.0, 240.0, 400.0] {
        let want = 0.3 * normal(100.0, 20.0).sf(b) + 0.7 * normal(250.0, 40.0).sf(b);
        assert!((g.log_sf(b) - want.ln()).abs() < 1e-10, "b={b}");
    }
    let std = GaussianMixture::single(0.0, 1.0).unwrap();
    assert!((std.log_sf(-10.0) + 7.619_853_024_160_526e-24).abs() < 1e-35);
}

#[test]
fn quantized_win_with_wide_sigma_matches_quadrature() {
    let g = GaussianMixture::single(300.0, 1000.0).unwrap();
    let q = integrate(|v| g.pdf(v), 299.5, 300.5, 1e-16, 1e-14);
    assert!((g.quantized_win_logprob(300) - q.ln()).abs() < 1e-10);
    let unit = GaussianMixture::single(0.0, 1.0).unwrap();
    assert!((unit.quantized_win_logprob(0) - 0.382_924_922_548_026_2f64.ln()).abs() < 1e-14);
}

#[test]
fn quantized_lose_matches_quadrature() {
    let g = GaussianMixture::new(vec![0.4, 0.6], vec![180.0, 320.0], vec![25.0, 50.0]).unwrap();
    let upper = 320.0 + 40.0 * 50.0;
    let q = integrate(|v| g.pdf(v), 299.5, 320.0, 1e-15, 1e-13)
        + integrate(|v| g.pdf(v), 320.0, upper, 1e-15, 1e-13);
    assert!((g.quantized_lose_logprob(300).exp() - q).abs() < 1e-8);
    let at_mean = GaussianMixture::single(99.5, 7.0).unwrap();
    assert!((at_mean.quantized_lose_logprob(100) - 0.5f64.ln()).abs() < 1e-15);
    assert!(g.quantized_lose_logprob(-1_000_000).abs() < 1e-15);
}

#[test]
fn expected_utility_matches_quadrature() {
    let g = GaussianMixture::new(vec![0.5, 0.5], vec![100.0, 200.0], vec![10.0, 30.0]).unwrap();
    let b = 160.0;
    let below = integrate(|v| g.pdf(v), -400.0, 100.0, 1e-15, 1e-13)
        + integrate(|v| g.pdf(v), 100.0, b, 1e-15, 1e-13);
    assert!((g.expected_utility(b, 1.0) - below).abs() < 1e-10);
    assert_eq!(g.expected_utility(b, 0.0), 0.0);
    let median = g.quantile(0.5);
    assert!((g.expected_utility(median, 3.0) - 1.5).abs() < 1e-9);
}

#[test]
fn expected_cost_limits() {
    let g = GaussianMixture::single(100.0, 1.0).unwrap();
    assert_eq!(g.expected_cost(0.0).unwrap(), 0.0);
    assert!((g.expected_cost(1e6).unwrap() - 100.0).abs() < 1e-9);
    assert!(g.expected_cost(-1.0).is_err());
}

fn one_field(n: usize, policy: BidPolicy, seed: u64) -> SimConfig {
    SimConfig {
        n_fields: 1,
        attrs_per_field: 2,
        n_records: n,
        truth: TruthSpec {
            components: 2,
            mean_range: (50.0, 150.0),
            sigma_range: (5.0, 15.0),
            weight_spread: 0.5,
            weight_tilt: 0.0,
        },
        bid_policy: policy,
        budget: None,
        seed,
    }
}

#[test]
fn simulated_prices_follow_the_truth() {
    // Every auction is won, so winning prices are plain draws from the truth.
    let cfg = one_field(100_000, BidPolicy::Fixed(1_000_000_000), 77);
    let sim = generate(&cfg).unwrap();
    assert!(sim.records.iter().all(|r| r.won));
    for attr in 0..2 {
        let truth = cfg.truth_for(&[attr]).unwrap();
        let prices: Vec<u32> = sim
            .records
            .iter()
            .zip(&sim.truths)
            .filter(|(_, t)| **t == truth)
            .map(|(r, _)| r.winning_price.unwrap())
            .collect();
        // Cells of 5 price units, merged until every expected count is at least 20.
        let n = prices.len() as f64;
        let mut hist = std::collections::BTreeMap::new();
        for p in &prices {
            *hist.entry(p / 5).or_insert(0.0) += 1.0;
        }
        let top = *hist.keys().last().unwrap();
        let mut cells = Vec::new();
        let (mut obs, mut exp) = (0.0, 0.0);
        for c in 0..=top {
            obs += hist.get(&c).copied().unwrap_or(0.0);
            let lo = if c == 0 {
                f64::NEG_INFINITY
            } else {
                5.0 * c as f64 - 0.5
            };
            let hi = if c == top {
                f64::INFINITY
            } else {
                5.0 * c as f64 + 4.5
            };
            exp += n * (truth.cdf(hi) - truth.cdf(lo));
            if exp >= 20.0 {
                cells.push((obs, exp));
                obs = 0.0;
                exp = 0.0;
            }
        }
        if let Some(last) = cells.last_mut() {
            last.0 += obs;
            last.1 += exp;
        }
        let stat: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
        let df = (cells.len() - 1) as f64;
        let p = ChiSquared::new(df).unwrap().sf(stat);
        assert!(
            p > 0.01,
            "attribute {attr}: chi-square {stat:.1} on {df} df, p = {p:.4}"
        );
    }
}

#[test]
fn win_rate_converges_to_truth() {
    let cfg = one_field(100_000, BidPolicy::Fixed(100), 5);
    let sim = generate(&cfg).unwrap();
    let n = sim.records.len() as f64;
    let rate = sim.records.iter().filter(|r| r.won).count() as f64 / n;
    let expected: f64 = sim.truths.iter().map(|t| t.cdf(100.5)).sum::<f64>() / n;
    let se = (expected * (1.0 - expected) / n).sqrt();
    assert!(
        (rate - expected).abs() < 3.0 * se,
        "{rate} vs {expected} (se {se})"
    );
}

#[test]
fn zero_bids_lose_everything_and_score_zero() {
    let cfg = SimConfig {
        n_records: 3000,
        bid_policy: BidPolicy::Fixed(0),
        ..SimConfig::benchmark()
    };
    let sim = generate(&cfg).unwrap();
    let won = sim.records.iter().filter(|r| r.won).count();
    assert!(won as f64 / 3000.0 < 0.001);
    let v = build_vocabulary(&sim.records, 0, &BinSpec::new()).unwrap();
    let obs = v.encode_all(&sim.records);
    let lost: Vec<Observation> = obs.iter().filter(|o| !o.won).cloned().collect();
    let truths: Vec<GaussianMixture> = obs
        .iter()
        .zip(&sim.truths)
        .filter(|(o, _)| !o.won)
        .map(|(_, t)| t.clone())
        .collect();
    assert!(oracle_anlp(&lost, &truths).unwrap() < 1e-3);
}

#[test]
fn near_degenerate_truth_scores_near_zero() {
    let truths: Vec<GaussianMixture> = (0..50)
        .map(|i| GaussianMixture::single(f64::from(i), 1e-3).unwrap())
        .collect();
    let data: Vec<Observation> = (0..50u32)
        .map(|i| Observation {
            x: FeatureVector::new(vec![0], 1).unwrap(),
            bid_price: 60,
            won: true,
            winning_price: Some(i),
        })
        .collect();
    assert!(oracle_anlp(&data, &truths).unwrap() < 1e-12);
}

#[test]
fn oracle_lose_terms_are_truth_survival_at_bid_minus_half() {
    let cfg = SimConfig {
        n_records: 2000,
        ..SimConfig::benchmark()
    };
    let sim = generate(&cfg).unwrap();
    let v = build_vocabulary(&sim.records, 0, &BinSpec::new()).unwrap();
    let obs = v.encode_all(&sim.records);
    let rep = oracle_report(&obs, &sim.truths).unwrap();
    let lose: f64 = obs
        .iter()
        .zip(&sim.truths)
        .filter(|(o, _)| !o.won)
        .map(|(o, t)| -t.log_sf(f64::from(o.bid_price) - 0.5).max(1e-12f64.ln()))
        .sum();
    assert!((rep.anlp_lose * rep.n_lose as f64 - lose).abs() < 1e-9);
    let mixed =
        (rep.n_win as f64 * rep.anlp_win + rep.n_lose as f64 * rep.anlp_lose) / obs.len() as f64;
    assert!((rep.anlp - mixed).abs() < 1e-9);
}

#[test]
fn single_lost_zero_bid_scores_zero_for_every_model() {
    let o = [Observation {
        x: FeatureVector::new(vec![0], 1).unwrap(),
        bid_price: 0,
        won: false,
        winning_price: None,
    }];
    let cr = FittedModel::Params(ModelParams::Cr(CrParams::new(vec![120.0], 1.0).unwrap()));
    assert!(anlp(&cr, &o).unwrap().anlp.abs() < 1e-12);
    let truth = [GaussianMixture::single(200.0, 20.0).unwrap()];
    assert!(oracle_anlp(&o, &truth).unwrap().abs() < 1e-12);
}

#[test]
fn sampling_rounds_into_bins() {
    let g = GaussianMixture::single(10.0, 1e-9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!((0..100).all(|_| sample_price(&g, &mut rng) == 10));
}

#[test]
fn mcnet_sparse_forward_matches_dense_matrix_product() {
    use landscape_core::models::{mcnet_forward, McNetParams, PriceScale};
    let (d, h, k) = (40, 16, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut m = McNetParams::random(d, h, k, 0.3, &mut rng).unwrap();
    m.price = PriceScale::IDENTITY;
    let x = common::random_features(&mut rng, d, 11);
    assert_eq!(x.active.len(), 12);
    let mut dense = vec![0.0; d];
    for &j in &x.active {
        dense[j as usize] = 1.0;
    }
    let (w1, b1, w2, b2) = (
        m.w1_row_major(),
        m.b1_values(),
        m.w2_values(),
        m.b2_values(),
    );
    let hidden: Vec<f64> = (0..h)
        .map(|r| (b1[r] + (0..d).map(|j| w1[r * d + j] * dense[j]).sum::<f64>()).max(0.0))
        .collect();
    let out: Vec<f64> = (0..3 * k)
        .map(|r| b2[r] + (0..h).map(|c| w2[r * h + c] * hidden[c]).sum::<f64>())
        .collect();
    let z: f64 = out[2 * k..].iter().map(|v| v.exp()).sum();
    let g = mcnet_forward(&m, &x).unwrap();
    for c in 0..k {
        assert!((g.means()[c] - out[c]).abs() < 1e-12);
        assert!((g.stddevs()[c] - out[k + c].exp()).abs() < 1e-12 * g.stddevs()[c]);
        assert!((g.weights()[c] - out[2 * k + c].exp() / z).abs() < 1e-14);
    }
}

#[test]
fn two_component_expected_cost_at_150_matches_quadrature() {
    let g = GaussianMixture::new(vec![0.4, 0.6], vec![80.0, 240.0], vec![15.0, 45.0]).unwrap();
    let integrand = |w: f64| w * g.pdf(w);
    let quad = integrate(integrand, 0.0, 80.0, 1e-14, 1e-13)
        + integrate(integrand, 80.0, 150.0, 1e-14, 1e-13);
    let closed = g.expected_cost(150.0).unwrap();
    assert!(((closed - quad) / quad).abs() < 1e-6, "{closed} vs {quad}");
}

#[test]
fn benchmark_oracle_anlp_is_pinned() {
    // Oracle ANLP over the full 50,000-record benchmark market, computed once
    // and frozen as the reference every model is compared against.
    let sim = generate(&SimConfig::benchmark()).unwrap();
    let v = build_vocabulary(&sim.records, 0, &BinSpec::new()).unwrap();
    let got = oracle_anlp(&v.encode_all(&sim.records), &sim.truths).unwrap();
    assert!((got - 2.266_318_008_476_649).abs() < 1e-9, "{got}");

    // The same quantity from statrs' normal cdf, one record at a time.
    let mut total = 0.0;
    for (r, t) in sim.records.iter().zip(&sim.truths) {
        let comps = t.weights().iter().zip(t.means().iter().zip(t.stddevs()));
        let p: f64 = match r.winning_price {
            Some(w) => comps
                .map(|(&pi, (&m, &s))| {
                    let n = normal(m, s);
                    pi * (n.cdf(f64::from(w) + 0.5) - n.cdf(f64::from(w) - 0.5))
                })
                .sum(),
            None => comps
                .map(|(&pi, (&m, &s))| pi * normal(m, s).sf(f64::from(r.bid_price) - 0.5))
                .sum(),
        };
        total -= p.max(1e-12).ln();
    }
    let independent = total / sim.records.len() as f64;
    assert!((got - independent).abs() < 1e-8, "{got} vs {independent}");
}
