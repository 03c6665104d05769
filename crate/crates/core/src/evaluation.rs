//! ANLP scoring, landscape export and multi-seed experiments.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::FlatConfig;
use crate::dist::{GaussianMixture, Landscape};
use crate::error::{Error, Result};
use crate::featurize::{
    build_vocabulary, read_log, split_indices, BinSpec, FeatureVector, Observation, RawRecord,
};
use crate::model_file::ModelFile;
use crate::models::{train, ModelKind, ModelParams, TrainConfig};
use crate::nonparametric::{km_fit, rs_fit, KMEstimate, RSModel};
use crate::sim::{generate, read_truths, SimConfig};

/// Average negative log probability with its win/lose breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ANLPReport {
    pub anlp: f64,
    pub n_win: usize,
    pub n_lose: usize,
    pub anlp_win: f64,
    pub anlp_lose: f64,
    pub model_kind: ModelKind,
}

/// Scores every record with `logprob(i, obs)` and averages. Per-record terms
/// are computed in parallel and summed in record order.
pub fn anlp_with<F>(kind: ModelKind, data: &[Observation], logprob: F) -> Result<ANLPReport>
where
    F: Fn(usize, &Observation) -> Result<f64> + Sync,
{
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let terms: Vec<Result<f64>> = data
        .par_iter()
        .enumerate()
        .map(|(i, o)| logprob(i, o))
        .collect();
    let (mut win, mut lose) = (0.0, 0.0);
    let (mut n_win, mut n_lose) = (0usize, 0usize);
    for (i, (t, o)) in terms.into_iter().zip(data).enumerate() {
        let lp = t?;
        if !lp.is_finite() {
            return Err(Error::NonFinite {
                index: i,
                what: "log probability",
            });
        }
        if o.won {
            win -= lp;
            n_win += 1;
        } else {
            lose -= lp;
            n_lose += 1;
        }
    }
    let avg = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(ANLPReport {
        anlp: (win + lose) / data.len() as f64,
        n_win,
        n_lose,
        anlp_win: avg(win, n_win),
        anlp_lose: avg(lose, n_lose),
        model_kind: kind,
    })
}

fn mixture_logprob(g: &GaussianMixture, o: &Observation) -> f64 {
    match o.winning_price {
        Some(w) if o.won => g.quantized_win_logprob(i64::from(w)),
        _ => g.quantized_lose_logprob(i64::from(o.bid_price)),
    }
}

/// ANLP of a parametric model.
pub fn anlp_of(params: &ModelParams, data: &[Observation]) -> Result<ANLPReport> {
    anlp_with(params.kind(), data, |_, o| {
        Ok(mixture_logprob(&params.predict(&o.x)?, o))
    })
}

/// ANLP under the true per-record laws.
pub fn oracle_report(data: &[Observation], truths: &[GaussianMixture]) -> Result<ANLPReport> {
    if data.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} records but {} truths",
            data.len(),
            truths.len()
        )));
    }
    anlp_with(ModelKind::Oracle, data, |i, o| {
        Ok(mixture_logprob(&truths[i], o))
    })
}

pub fn oracle_anlp(data: &[Observation], truths: &[GaussianMixture]) -> Result<f64> {
    oracle_report(data, truths).map(|r| r.anlp)
}

/// Any fitted landscape estimator.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Params(ModelParams),
    Km(KMEstimate),
    Rs(RSModel),
}

impl FittedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            FittedModel::Params(p) => p.kind(),
            FittedModel::Km(_) => ModelKind::Km,
            FittedModel::Rs(_) => ModelKind::Rs,
        }
    }

    /// Feature dimension, if the model reads features at all.
    pub fn dimension(&self) -> Option<usize> {
        match self {
            FittedModel::Params(p) => Some(p.dimension()),
            _ => None,
        }
    }

    pub fn logprob(&self, o: &Observation) -> Result<f64> {
        let (won_at, bid) = (o.winning_price.filter(|_| o.won), i64::from(o.bid_price));
        Ok(match self {
            FittedModel::Params(p) => mixture_logprob(&p.predict(&o.x)?, o),
            FittedModel::Km(k) => match won_at {
                Some(w) => k.logprob_win(i64::from(w)),
                None => k.logprob_lose(bid),
            },
            FittedModel::Rs(r) => match won_at {
                Some(w) => r.logprob_win(i64::from(w)),
                None => r.logprob_lose(bid),
            },
        })
    }

    pub fn landscape(&self, x: &FeatureVector, lo: i64, hi: i64) -> Result<Landscape> {
        match self {
            FittedModel::Params(p) => p.predict(x)?.landscape(lo, hi),
            FittedModel::Km(k) => k.landscape(lo, hi),
            FittedModel::Rs(r) => r.landscape(lo, hi),
        }
    }
}

pub fn anlp(model: &FittedModel, data: &[Observation]) -> Result<ANLPReport> {
    anlp_with(model.kind(), data, |_, o| model.logprob(o))
}

/// Landscape of `model` at `x` over `range`, as CSV.
pub fn export_landscape(
    model: &FittedModel,
    x: &FeatureVector,
    range: (i64, i64),
) -> Result<String> {
    Ok(model.landscape(x, range.0, range.1)?.to_csv())
}

/// Where experiment data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Sim(SimConfig),
    Log {
        path: PathBuf,
        truths: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub models: Vec<ModelKind>,
    pub source: DataSource,
    pub seeds: Vec<u64>,
    pub l2_grid: Vec<f64>,
    /// Mixture sizes tried for MCNet.
    pub k_grid: Vec<usize>,
    /// Everything but `l2`, `components` and `seed`, which the runner sets.
    pub train: TrainConfig,
    pub trim: u64,
    pub bins: BinSpec,
    pub ratios: (f64, f64, f64),
    /// Landscapes exported for the first this many test records of each seed.
    pub landscape_records: usize,
    pub landscape_range: (i64, i64),
    /// Canonical text the digest is computed from.
    pub canonical: String,
}

/// Eight log-spaced points from 1e-6 to 10.
pub fn default_l2_grid() -> Vec<f64> {
    (0..8).map(|i| 10f64.powi(i - 6)).collect()
}

impl ExperimentSpec {
    /// Keys: `models`, `data` and `truths` or `sim.*`, `seeds`, `l2_grid`,
    /// `k_grid`, `lr`, `batch`, `epochs`, `patience`, `min_delta`, `hidden`,
    /// `init_scale`, `scale_prices`, `trim`, `bins`, `landscape_records`,
    /// `landscape_lo`, `landscape_hi`.
    pub fn from_config(c: &FlatConfig) -> Result<Self> {
        let models: Vec<ModelKind> = c
            .get_list::<String>("models")?
            .ok_or_else(|| Error::Config("missing key models".into()))?
            .iter()
            .map(|m| m.parse())
            .collect::<Result<_>>()?;
        if models.is_empty() || models.contains(&ModelKind::Oracle) {
            return Err(Error::Config(
                "models must list trainable estimators".into(),
            ));
        }
        let source = match c.get_str("data") {
            Some(p) => DataSource::Log {
                path: PathBuf::from(p),
                truths: c.get_str("truths").map(PathBuf::from),
            },
            None => DataSource::Sim(SimConfig::from_config(&c.section("sim"))?),
        };
        let d = TrainConfig::default();
        let train = TrainConfig {
            learning_rate: c.get_or("lr", d.learning_rate)?,
            batch_size: c.get_or("batch", d.batch_size)?,
            max_epochs: c.get_or("epochs", d.max_epochs)?,
            early_stop_patience: c.get_or("patience", d.early_stop_patience)?,
            early_stop_min_delta: c.get_or("min_delta", d.early_stop_min_delta)?,
            hidden: c.get_or("hidden", d.hidden)?,
            init_scale: c.get_or("init_scale", d.init_scale)?,
            scale_prices: c.get_or("scale_prices", d.scale_prices)?,
            ..d
        };
        train.validate()?;
        let spec = Self {
            models,
            source,
            seeds: c.get_list("seeds")?.unwrap_or_else(|| (0..5).collect()),
            l2_grid: c.get_list("l2_grid")?.unwrap_or_else(default_l2_grid),
            k_grid: c.get_list("k_grid")?.unwrap_or_else(|| vec![2, 3, 4]),
            train,
            trim: c.get_or("trim", 10)?,
            bins: match c.get_str("bins") {
                Some(b) => BinSpec::parse(b)?,
                None => BinSpec::new(),
            },
            ratios: (0.6, 0.2, 0.2),
            landscape_records: c.get_or("landscape_records", 3)?,
            landscape_range: (c.get_or("landscape_lo", 0)?, c.get_or("landscape_hi", 500)?),
            canonical: c.render(),
        };
        if spec.seeds.is_empty() || spec.l2_grid.is_empty() || spec.k_grid.is_empty() {
            return Err(Error::Config(
                "seeds, l2_grid and k_grid must be non-empty".into(),
            ));
        }
        if spec.l2_grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) || spec.k_grid.contains(&0) {
            return Err(Error::Config("bad l2_grid or k_grid entry".into()));
        }
        if spec.landscape_range.1 < spec.landscape_range.0 {
            return Err(Error::Config("empty landscape range".into()));
        }
        Ok(spec)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_config(&FlatConfig::read(path)?)
    }

    /// First 16 bytes of the SHA-256 of the canonical config, hex.
    pub fn digest(&self) -> String {
        Sha256::digest(self.canonical.as_bytes())[..16]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// One seed's outcome for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub l2: Option<f64>,
    pub components: Option<usize>,
    pub valid_anlp: Option<f64>,
    pub test: ANLPReport,
    /// Mean total-variation distance to the true landscapes on the exported records.
    pub truth_tv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub model_kind: ModelKind,
    pub per_seed: Vec<SeedResult>,
    pub mean: f64,
    /// Sample standard deviation over seeds; 0 for a single seed.
    pub std: f64,
    pub config_digest: String,
}

impl ExperimentReport {
    pub fn aggregate(model_kind: ModelKind, per_seed: Vec<SeedResult>, digest: &str) -> Self {
        let n = per_seed.len() as f64;
        let mean = per_seed.iter().map(|s| s.test.anlp).sum::<f64>() / n;
        let std = if per_seed.len() < 2 {
            0.0
        } else {
            (per_seed
                .iter()
                .map(|s| (s.test.anlp - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0))
                .sqrt()
        };
        Self {
            model_kind,
            per_seed,
            mean,
            std,
            config_digest: digest.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config_digest: String,
    pub models: Vec<ExperimentReport>,
    /// Present when the true laws are known.
    pub oracle: Option<ExperimentReport>,
}

impl ExperimentSummary {
    pub fn report(&self, kind: ModelKind) -> Option<&ExperimentReport> {
        if kind == ModelKind::Oracle {
            return self.oracle.as_ref();
        }
        self.models.iter().find(|r| r.model_kind == kind)
    }

    /// Plain-text `model mean std` table.
    pub fn table(&self) -> String {
        let mut out = format!("{:<8} {:>10} {:>10}\n", "model", "mean", "std");
        for r in self.models.iter().chain(&self.oracle) {
            out.push_str(&format!(
                "{:<8} {:>10.5} {:>10.5}\n",
                r.model_kind.as_str(),
                r.mean,
                r.std
            ));
        }
        out
    }
}

struct Prepared {
    records: Vec<RawRecord>,
    truths: Option<Vec<GaussianMixture>>,
}

fn prepare(source: &DataSource) -> Result<Prepared> {
    match source {
        DataSource::Sim(cfg) => {
            let d = generate(cfg)?;
            Ok(Prepared {
                records: d.records,
                truths: Some(d.truths),
            })
        }
        DataSource::Log { path, truths } => {
            let records = read_log(path)?;
            let truths = truths.as_deref().map(read_truths).transpose()?;
            if let Some(t) = &truths {
                if t.len() != records.len() {
                    return Err(Error::InvalidArgument(format!(
                        "{} records but {} truths",
                        records.len(),
                        t.len()
                    )));
                }
            }
            Ok(Prepared { records, truths })
        }
    }
}

/// Files one seed contributes, keyed by path relative to the output directory.
type Artifacts = Vec<(String, String)>;

struct SeedRun {
    results: Vec<SeedResult>,
    oracle: Option<SeedResult>,
    artifacts: Artifacts,
}

/// Runs every model on every seed: split, vocabulary on the training part,
/// grid search on validation ANLP, test ANLP. With `out`, writes
/// `report.json`, per-seed metrics and model files, and landscape CSVs.
pub fn run_experiment(spec: &ExperimentSpec, out: Option<&Path>) -> Result<ExperimentSummary> {
    let data = prepare(&spec.source)?;
    if data.records.is_empty() {
        return Err(Error::NoRecords);
    }
    let runs: Vec<Result<SeedRun>> = spec
        .seeds
        .par_iter()
        .map(|&seed| run_seed(spec, &data, seed))
        .collect();
    let runs: Vec<SeedRun> = runs.into_iter().collect::<Result<_>>()?;

    let digest = spec.digest();
    let models = spec
        .models
        .iter()
        .enumerate()
        .map(|(m, &kind)| {
            let per_seed = runs.iter().map(|r| r.results[m].clone()).collect();
            ExperimentReport::aggregate(kind, per_seed, &digest)
        })
        .collect();
    let oracle = data.truths.as_ref().map(|_| {
        let per_seed = runs.iter().filter_map(|r| r.oracle.clone()).collect();
        ExperimentReport::aggregate(ModelKind::Oracle, per_seed, &digest)
    });
    let summary = ExperimentSummary {
        config_digest: digest,
        models,
        oracle,
    };

    if let Some(dir) = out {
        let mut files: Artifacts = runs.into_iter().flat_map(|r| r.artifacts).collect();
        let json = serde_json::to_string_pretty(&summary)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        files.push(("report.json".into(), json + "\n"));
        files.push(("summary.txt".into(), summary.table()));
        for (rel, body) in files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(summary)
}

fn run_seed(spec: &ExperimentSpec, data: &Prepared, seed: u64) -> Result<SeedRun> {
    let (tr, va, te) = split_indices(data.records.len(), spec.ratios, seed)?;
    let pick = |ix: &[usize]| {
        ix.iter()
            .map(|&i| data.records[i].clone())
            .collect::<Vec<_>>()
    };
    let vocab = build_vocabulary(&pick(&tr), spec.trim, &spec.bins)?;
    let train_set = vocab.encode_all(&pick(&tr));
    let valid_set = vocab.encode_all(&pick(&va));
    let test_set = vocab.encode_all(&pick(&te));
    if train_set.is_empty() || valid_set.is_empty() || test_set.is_empty() {
        return Err(Error::InvalidArgument(
            "too few records for a three-way split".into(),
        ));
    }
    let test_truths: Option<Vec<GaussianMixture>> = data
        .truths
        .as_ref()
        .map(|t| te.iter().map(|&i| t[i].clone()).collect());

    let shown = spec.landscape_records.min(test_set.len());
    let (lo, hi) = spec.landscape_range;
    let mut artifacts: Artifacts = vec![(format!("seed{seed}/vocab.tsv"), vocab.to_text())];
    let truth_curves: Option<Vec<Landscape>> = test_truths
        .as_ref()
        .map(|t| {
            t[..shown]
                .iter()
                .map(|g| g.landscape(lo, hi))
                .collect::<Result<_>>()
        })
        .transpose()?;
    if let Some(curves) = &truth_curves {
        for (r, c) in curves.iter().enumerate() {
            artifacts.push((format!("seed{seed}/landscape_truth_{r}.csv"), c.to_csv()));
        }
    }

    let mut results = Vec::with_capacity(spec.models.len());
    for &kind in &spec.models {
        let fit = fit_selected(spec, kind, seed, &train_set, &valid_set)?;
        let test = anlp(&fit.model, &test_set)?;
        let name = kind.as_str();
        let mut tvs = Vec::new();
        for (r, o) in test_set[..shown].iter().enumerate() {
            let curve = fit.model.landscape(&o.x, lo, hi)?;
            if let Some(truth) = &truth_curves {
                tvs.push(curve.total_variation(&truth[r])?);
            }
            artifacts.push((
                format!("seed{seed}/landscape_{name}_{r}.csv"),
                curve.to_csv(),
            ));
        }
        if let Some(m) = fit.metrics {
            artifacts.push((format!("seed{seed}/metrics_{name}.csv"), m));
        }
        artifacts.push((
            format!("seed{seed}/model_{name}.json"),
            ModelFile::from_model(&fit.model, &vocab)?.to_json()?,
        ));
        log::info!("seed {seed} {name}: test ANLP {:.5}", test.anlp);
        results.push(SeedResult {
            seed,
            l2: fit.l2,
            components: fit.components,
            valid_anlp: fit.valid_anlp,
            test,
            truth_tv: (!tvs.is_empty()).then(|| tvs.iter().sum::<f64>() / tvs.len() as f64),
        });
    }

    let oracle = test_truths
        .as_ref()
        .map(|t| -> Result<SeedResult> {
            Ok(SeedResult {
                seed,
                l2: None,
                components: None,
                valid_anlp: None,
                test: oracle_report(&test_set, t)?,
                truth_tv: Some(0.0),
            })
        })
        .transpose()?;
    Ok(SeedRun {
        results,
        oracle,
        artifacts,
    })
}

struct Selected {
    model: FittedModel,
    l2: Option<f64>,
    components: Option<usize>,
    valid_anlp: Option<f64>,
    metrics: Option<String>,
}

/// Trains one model per grid point and keeps the best on validation ANLP
/// (the earliest grid point on ties).
fn fit_selected(
    spec: &ExperimentSpec,
    kind: ModelKind,
    seed: u64,
    train_set: &[Observation],
    valid_set: &[Observation],
) -> Result<Selected> {
    let plain = |model| Selected {
        model,
        l2: None,
        components: None,
        valid_anlp: None,
        metrics: None,
    };
    match kind {
        ModelKind::Km => return Ok(plain(FittedModel::Km(km_fit(train_set)?))),
        ModelKind::Rs => return Ok(plain(FittedModel::Rs(rs_fit(train_set)?))),
        ModelKind::Oracle => {
            return Err(Error::InvalidArgument("the oracle is not fitted".into()));
        }
        _ => {}
    }
    let ks: &[usize] = if kind == ModelKind::McNet {
        &spec.k_grid
    } else {
        &[1]
    };
    let mut best: Option<Selected> = None;
    for &k in ks {
        for &l2 in &spec.l2_grid {
            let cfg = TrainConfig {
                l2,
                components: k,
                seed,
                ..spec.train.clone()
            };
            let outcome = train(kind, train_set, &cfg)?;
            let v = anlp_of(&outcome.model, valid_set)?.anlp;
            log::debug!("seed {seed} {kind} l2={l2} k={k}: valid ANLP {v:.5}");
            if best
                .as_ref()
                .is_none_or(|b| v < b.valid_anlp.unwrap_or(f64::INFINITY))
            {
                best = Some(Selected {
                    metrics: Some(outcome.metrics_csv()),
                    model: FittedModel::Params(outcome.model),
                    l2: Some(l2),
                    components: (kind == ModelKind::McNet).then_some(k),
                    valid_anlp: Some(v),
                });
            }
        }
    }
    best.ok_or_else(|| Error::Config("empty hyperparameter grid".into()))
}
