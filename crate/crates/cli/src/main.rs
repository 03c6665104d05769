use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use landscape_core::config::FlatConfig;
use landscape_core::evaluation::{
    anlp, export_landscape, oracle_report, run_experiment, ExperimentSpec, FittedModel,
};
use landscape_core::featurize::{
    build_vocabulary, format_log, read_log, BinSpec, RawRecord, Vocabulary,
};
use landscape_core::model_file::{load_model, save_model};
use landscape_core::models::{train_monitored, ModelKind, TrainConfig};
use landscape_core::nonparametric::{fit_gaussian_to_km, km_fit, km_gaussian_kl, rs_fit};
use landscape_core::sim::{format_truths, generate, read_truths, SimConfig};
use landscape_core::Error;

#[derive(Parser)]
#[command(
    name = "landscape",
    version,
    about = "Bid landscape forecasting from censored auction logs"
)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a trimmed feature vocabulary from a log.
    Vocab {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        feat: FeatureArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train CR, P-CR or MCNet on a log.
    Train(TrainArgs),
    /// Score a saved model on a log (ANLP).
    Eval {
        #[arg(long)]
        model_file: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to vocab.tsv next to the model file.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Truth sidecar from `simulate`; adds the oracle score.
        #[arg(long)]
        truths: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic auction log with known landscapes.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_records: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the Kaplan–Meier baseline (and the uniform one with --model rs).
    Km {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "km")]
        model: ModelKind,
        #[command(flatten)]
        feat: FeatureArgs,
        #[arg(long, default_value = "0:500", value_parser = parse_range)]
        range: (i64, i64),
        #[arg(long)]
        out: PathBuf,
    },
    /// KL-closest Gaussian to the KM estimate of a log.
    Fitgauss {
        #[arg(long)]
        data: PathBuf,
        /// Keep only records carrying this `field=value` feature.
        #[arg(long)]
        filter: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the predicted landscape for one feature profile.
    Export {
        #[arg(long)]
        model_file: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Features as in the log, e.g. `City=3;Region=1`.
        #[arg(long, default_value = "")]
        record: String,
        #[arg(long, default_value = "0:500", value_parser = parse_range)]
        range: (i64, i64),
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a multi-seed experiment from a spec file.
    Experiment {
        #[arg(long, alias = "config")]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct FeatureArgs {
    #[arg(long, default_value_t = 10)]
    trim: u64,
    /// Numeric field bins, e.g. `Width=100,300;Height=90,250`.
    #[arg(long)]
    bins: Option<String>,
}

impl FeatureArgs {
    fn vocabulary(&self, records: &[RawRecord]) -> landscape_core::Result<Vocabulary> {
        let bins = match &self.bins {
            Some(b) => BinSpec::parse(b)?,
            None => BinSpec::new(),
        };
        build_vocabulary(records, self.trim, &bins)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: ModelKind,
    /// Key=value file with any of the flags below; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reuse a vocabulary instead of building one from --data.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Validation log scored after every epoch.
    #[arg(long)]
    valid: Option<PathBuf>,
    #[command(flatten)]
    feat: FeatureArgs,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Stddev of the normal initializer; 1 gives a plain standard normal.
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

impl TrainArgs {
    fn config(&self) -> landscape_core::Result<TrainConfig> {
        let file = match &self.config {
            Some(p) => FlatConfig::read(p)?,
            None => FlatConfig::default(),
        };
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            learning_rate: pick(self.lr, file.get("lr")?, d.learning_rate),
            batch_size: pick(self.batch, file.get("batch")?, d.batch_size),
            l2: pick(self.l2, file.get("l2")?, d.l2),
            max_epochs: pick(self.epochs, file.get("epochs")?, d.max_epochs),
            early_stop_patience: pick(self.patience, file.get("patience")?, d.early_stop_patience),
            early_stop_min_delta: file.get_or("min_delta", d.early_stop_min_delta)?,
            seed: pick(self.seed, file.get("seed")?, d.seed),
            components: pick(self.k, file.get("k")?, d.components),
            hidden: pick(self.hidden, file.get("hidden")?, d.hidden),
            init_scale: pick(self.init_scale, file.get("init_scale")?, d.init_scale),
            scale_prices: file.get_or("scale_prices", d.scale_prices)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn parse_range(s: &str) -> Result<(i64, i64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected lo:hi")?;
    let lo: i64 = lo.trim().parse().map_err(|_| format!("bad bound {lo:?}"))?;
    let hi: i64 = hi.trim().parse().map_err(|_| format!("bad bound {hi:?}"))?;
    if hi < lo {
        return Err(format!("empty range {lo}:{hi}"));
    }
    Ok((lo, hi))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        e if e.is_numeric() => 3,
        _ => 2,
    }
}

fn write(dir: &Path, name: &str, body: &str) -> landscape_core::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| Error::io(&path, e))
}

fn to_json(v: serde_json::Value) -> String {
    serde_json::to_string_pretty(&v).expect("serializable") + "\n"
}

fn sibling_vocab(model_file: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        model_file
            .parent()
            .unwrap_or(Path::new("."))
            .join("vocab.tsv")
    })
}

fn run(command: Command) -> landscape_core::Result<()> {
    match command {
        Command::Vocab { data, feat, out } => {
            let vocab = feat.vocabulary(&read_log(&data)?)?;
            write(&out, "vocab.tsv", &vocab.to_text())?;
            println!("dimension {}", vocab.dimension());
        }
        Command::Train(args) => {
            let cfg = args.config()?;
            let records = read_log(&args.data)?;
            let vocab = match &args.vocab {
                Some(p) => Vocabulary::read(p)?,
                None => args.feat.vocabulary(&records)?,
            };
            let data = vocab.encode_all(&records);
            let valid = args
                .valid
                .as_deref()
                .map(read_log)
                .transpose()?
                .map(|r| vocab.encode_all(&r));
            let outcome = train_monitored(args.model, &data, &cfg, valid.as_deref())?;
            let last = outcome.history.last().map_or(f64::NAN, |r| r.train_loss);
            log::info!(
                "trained {} for {} epochs",
                args.model,
                outcome.history.len()
            );
            let model = FittedModel::Params(outcome.model.clone());
            fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
            save_model(&args.out.join("model.json"), &model, &vocab)?;
            write(&args.out, "vocab.tsv", &vocab.to_text())?;
            write(&args.out, "metrics.csv", &outcome.metrics_csv())?;
            println!("final train loss {last:.6}");
        }
        Command::Eval {
            model_file,
            data,
            vocab,
            truths,
            out,
        } => {
            let vocab = Vocabulary::read(&sibling_vocab(&model_file, &vocab))?;
            let model = load_model(&model_file, &vocab)?;
            let obs = vocab.encode_all(&read_log(&data)?);
            let mut reports = vec![anlp(&model, &obs)?];
            if let Some(t) = truths {
                reports.push(oracle_report(&obs, &read_truths(&t)?)?);
            }
            write(
                &out,
                "report.json",
                &to_json(serde_json::to_value(&reports).expect("serializable")),
            )?;
            for r in &reports {
                println!("{} ANLP {:.6}", r.model_kind, r.anlp);
            }
        }
        Command::Simulate {
            config,
            seed,
            n_records,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => SimConfig::from_config(&FlatConfig::read(&p)?)?,
                None => SimConfig::benchmark(),
            };
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.n_records = n_records.unwrap_or(cfg.n_records);
            cfg.validate()?;
            let sim = generate(&cfg)?;
            write(&out, "log.tsv", &format_log(&sim.records))?;
            write(&out, "truths.tsv", &format_truths(&sim.truths))?;
            write(&out, "sim.cfg", &cfg.to_config().render())?;
            let wins = sim.records.iter().filter(|r| r.won).count();
            println!(
                "{} records, win rate {:.4}",
                sim.records.len(),
                wins as f64 / sim.records.len() as f64
            );
        }
        Command::Km {
            data,
            model,
            feat,
            range,
            out,
        } => {
            let records = read_log(&data)?;
            let vocab = feat.vocabulary(&records)?;
            let obs = vocab.encode_all(&records);
            let fitted = match model {
                ModelKind::Km => FittedModel::Km(km_fit(&obs)?),
                ModelKind::Rs => FittedModel::Rs(rs_fit(&obs)?),
                other => return Err(Error::Config(format!("km fits km or rs, not {other}"))),
            };
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            save_model(&out.join("model.json"), &fitted, &vocab)?;
            write(&out, "vocab.tsv", &vocab.to_text())?;
            write(
                &out,
                "landscape.csv",
                &export_landscape(&fitted, &obs[0].x, range)?,
            )?;
        }
        Command::Fitgauss { data, filter, out } => {
            let mut records = read_log(&data)?;
            if let Some(f) = &filter {
                let (field, value) = f
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("filter {f:?} is not field=value")))?;
                records.retain(|r| r.fields.iter().any(|(a, b)| a == field && b == value));
            }
            if records.is_empty() {
                return Err(Error::NoRecords);
            }
            let vocab = build_vocabulary(&records, 0, &BinSpec::new())?;
            let est = km_fit(&vocab.encode_all(&records))?;
            let (mu, sigma) = fit_gaussian_to_km(&est)?;
            let fit = serde_json::json!({
                "mu": mu,
                "sigma": sigma,
                "kl": km_gaussian_kl(&est, mu, sigma),
                "tail_mass": est.tail_mass(),
                "records": records.len(),
            });
            write(&out, "fit.json", &to_json(fit))?;
            println!("mu {mu:.4} sigma {sigma:.4}");
        }
        Command::Export {
            model_file,
            vocab,
            record,
            range,
            out,
        } => {
            let vocab = Vocabulary::read(&sibling_vocab(&model_file, &vocab))?;
            let model = load_model(&model_file, &vocab)?;
            let raw = RawRecord::parse_line(&format!("0\t0\t\t{record}"), 1)?;
            let x = vocab.encode(&raw).x;
            write(&out, "landscape.csv", &export_landscape(&model, &x, range)?)?;
        }
        Command::Experiment { spec, out } => {
            let spec = ExperimentSpec::read(&spec)?;
            let summary = run_experiment(&spec, Some(&out))?;
            print!("{}", summary.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LANDSCAPE_LOG", "error"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
