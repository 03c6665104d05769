//! The censored negative log-likelihood of one observation under a mixture
//! given in unconstrained form (means, log-stddevs, weight logits), with its
//! gradient with respect to those three blocks.

use crate::dist::{inverse_mills_ratio, log_std_normal_cdf, log_std_normal_pdf};
use crate::featurize::Observation;

/// Per-record head values for `K` components.
pub(crate) struct Heads<'a> {
    pub mu: &'a [f64],
    pub log_sigma: &'a [f64],
    pub logits: &'a [f64],
}

/// Gradient slots laid out `[d_mu (K) | d_log_sigma (K) | d_logits (K)]`.
pub(crate) fn censored_nll(heads: &Heads<'_>, obs: &Observation, grad: &mut [f64]) -> f64 {
    let k = heads.mu.len();
    debug_assert_eq!(grad.len(), 3 * k);

    let mut log_pi = [0.0f64; 16];
    let mut ell = [0.0f64; 16];
    let mut aux = [0.0f64; 16];
    let mut heap_pi;
    let mut heap_ell;
    let mut heap_aux;
    let (log_pi, ell, aux): (&mut [f64], &mut [f64], &mut [f64]) = if k <= 16 {
        (&mut log_pi[..k], &mut ell[..k], &mut aux[..k])
    } else {
        heap_pi = vec![0.0; k];
        heap_ell = vec![0.0; k];
        heap_aux = vec![0.0; k];
        (&mut heap_pi, &mut heap_ell, &mut heap_aux)
    };

    let max_logit = heads
        .logits
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let norm = max_logit
        + heads
            .logits
            .iter()
            .map(|z| (z - max_logit).exp())
            .sum::<f64>()
            .ln();
    for j in 0..k {
        log_pi[j] = heads.logits[j] - norm;
    }

    match obs.winning_price {
        Some(w) => {
            let w = f64::from(w);
            for j in 0..k {
                let sigma = heads.log_sigma[j].exp();
                let t = (w - heads.mu[j]) / sigma;
                aux[j] = t;
                ell[j] = log_pi[j] - heads.log_sigma[j] + log_std_normal_pdf(t);
            }
        }
        None => {
            let b = f64::from(obs.bid_price);
            for j in 0..k {
                let sigma = heads.log_sigma[j].exp();
                let u = (heads.mu[j] - b) / sigma;
                aux[j] = u;
                ell[j] = log_pi[j] + log_std_normal_cdf(u);
            }
        }
    }

    let m = ell.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total = m + ell.iter().map(|l| (l - m).exp()).sum::<f64>().ln();

    let (d_mu, rest) = grad.split_at_mut(k);
    let (d_log_sigma, d_logits) = rest.split_at_mut(k);
    for j in 0..k {
        let resp = (ell[j] - total).exp();
        let sigma = heads.log_sigma[j].exp();
        if obs.won {
            let t = aux[j];
            d_mu[j] = -resp * t / sigma;
            d_log_sigma[j] = -resp * (t * t - 1.0);
        } else {
            let u = aux[j];
            let lambda = inverse_mills_ratio(u);
            d_mu[j] = -resp * lambda / sigma;
            d_log_sigma[j] = resp * lambda * u;
        }
        d_logits[j] = -(resp - log_pi[j].exp());
    }
    -total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::FeatureVector;

    fn obs(won: bool, price: u32) -> Observation {
        Observation {
            x: FeatureVector {
                active: vec![0],
                dimension: 1,
            },
            bid_price: price,
            won,
            winning_price: won.then_some(price),
        }
    }

    fn fd_check(o: &Observation, mu: &[f64], ls: &[f64], lg: &[f64]) {
        let k = mu.len();
        let mut g = vec![0.0; 3 * k];
        censored_nll(
            &Heads {
                mu,
                log_sigma: ls,
                logits: lg,
            },
            o,
            &mut g,
        );
        let mut flat: Vec<f64> = [mu, ls, lg].concat();
        let eval = |f: &[f64]| {
            let mut scratch = vec![0.0; 3 * k];
            censored_nll(
                &Heads {
                    mu: &f[..k],
                    log_sigma: &f[k..2 * k],
                    logits: &f[2 * k..],
                },
                o,
                &mut scratch,
            )
        };
        for i in 0..3 * k {
            let h = 1e-6;
            let orig = flat[i];
            flat[i] = orig + h;
            let up = eval(&flat);
            flat[i] = orig - h;
            let down = eval(&flat);
            flat[i] = orig;
            let num = (up - down) / (2.0 * h);
            assert!(
                (num - g[i]).abs() < 1e-6 * (1.0 + num.abs()),
                "slot {i}: {num} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn gradients_match_differences() {
        fd_check(&obs(true, 12), &[10.0, 20.0], &[1.0, 2.0], &[0.3, -0.4]);
        fd_check(&obs(false, 12), &[10.0, 20.0], &[1.0, 2.0], &[0.3, -0.4]);
        fd_check(&obs(false, 300), &[10.0], &[0.5], &[0.0]);
    }

    #[test]
    fn censored_at_mean_is_log_two() {
        let mut g = [0.0; 3];
        let v = censored_nll(
            &Heads {
                mu: &[12.0],
                log_sigma: &[3.0],
                logits: &[0.7],
            },
            &obs(false, 12),
            &mut g,
        );
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(g[2], 0.0);
    }
}
