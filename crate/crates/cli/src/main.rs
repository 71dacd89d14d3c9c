use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use thiserror::Error;

use vpgnet::dsp::{self, DspError, PreprocessConfig};
use vpgnet::eeg::{self, EegError, Montage};
use vpgnet::experiment::{self, ExperimentConfig, ExperimentError};
use vpgnet::synth::{self, SynthConfig, SynthError};
use vpgnet::transform::{NormScope, Regime, ReversalConfig};

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Eeg(#[from] EegError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Parser)]
#[command(name = "vpgnet", version, about = "Visual imagery EEG decoding with perception-guided training")]
struct Cli {
    /// Worker threads for data-parallel work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single-threaded numerics and sequential folds.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic imagery/perception benchmark as `<out>/vi` and `<out>/vp`.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        channels: Option<usize>,
        /// Imagery trials per class; perception gets twice as many.
        #[arg(long)]
        trials_per_class: Option<usize>,
    },
    /// Band-pass, resample and crop every trial of a dataset.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pass band as `low:high` in Hz.
        #[arg(long, default_value = "8:13", value_parser = parse_band)]
        band: (f64, f64),
        #[arg(long, default_value_t = 250.0)]
        resample: f64,
        #[arg(long, default_value_t = 1251)]
        crop: usize,
    },
    /// Per-channel alpha power trend averaged over trials, as CSV and SVG.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_csv: PathBuf,
        #[arg(long)]
        out_svg: PathBuf,
    },
    /// Cross-validated comparison of the training regimes.
    Train {
        #[arg(long)]
        vi: PathBuf,
        #[arg(long)]
        vp: PathBuf,
        #[arg(long, value_enum, default_value_t = RegimeArg::Both)]
        regimes: RegimeArg,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ReferenceArg::Zeros)]
        reversal: ReferenceArg,
        #[arg(long, value_enum, default_value_t = ScopeArg::Channel)]
        scope: ScopeArg,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
    },
    /// Render a `channel,value` CSV as a scalp map.
    Topomap {
        #[arg(long)]
        values: PathBuf,
        /// Dataset directory, file of channel names, comma-separated names,
        /// or `standard64`.
        #[arg(long)]
        montage: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RegimeArg {
    Vi,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReferenceArg {
    Zeros,
    Ones,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScopeArg {
    Channel,
    Trial,
}

fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected low:high")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("bad low edge: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("bad high edge: {e}"))?;
    Ok((lo, hi))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VPG_LOG", "info")).init();

    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }

    match run(cli.command, cli.deterministic) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn print_config<S: serde::Serialize>(what: &str, config: &S) {
    println!("{what} config: {}", serde_json::to_string(config).unwrap_or_default());
}

fn run(command: Command, deterministic: bool) -> Result<(), CliError> {
    match command {
        Command::Synth { out, seed, channels, trials_per_class } => {
            let mut cfg = SynthConfig { seed, ..SynthConfig::default() };
            if let Some(c) = channels {
                cfg.n_channels = c;
            }
            if let Some(n) = trials_per_class {
                cfg.imagery_per_class = n;
                cfg.perception_per_class = 2 * n;
            }
            print_config("synth", &cfg);
            println!("seed: {seed}");
            let (vi, vp) = synth::generate_synthetic::<f32>(&cfg)?;
            eeg::save_dataset(&vi, out.join("vi"))?;
            eeg::save_dataset(&vp, out.join("vp"))?;
            info!("wrote {} imagery and {} perception trials to {}", vi.len(), vp.len(), out.display());
        }
        Command::Preprocess { input, out, band, resample, crop } => {
            let cfg = PreprocessConfig { band, target_fs: Some(resample), crop: Some(crop), ..PreprocessConfig::default() };
            print_config("preprocess", &cfg);
            let ds = eeg::load_dataset::<f64>(&input)?;
            let processed = dsp::preprocess_dataset(&ds, &cfg)?;
            eeg::save_dataset(&processed, &out)?;
            info!("preprocessed {} trials into {}", processed.len(), out.display());
        }
        Command::Analyze { input, out_csv, out_svg } => {
            let ds = eeg::load_dataset::<f64>(&input)?;
            if ds.is_empty() {
                return Err(CliError::Invalid("dataset has no trials".into()));
            }
            let mut mean = vec![0.0; ds.montage.len()];
            for epoch in &ds.epochs {
                let trend = dsp::alpha_tendency(epoch, dsp::ALPHA_BAND, 1.0, 0.25)?;
                for (m, s) in mean.iter_mut().zip(&trend.per_channel_slope) {
                    *m += s / ds.len() as f64;
                }
            }
            let occ: Vec<usize> = ds.montage.occipital_indices().to_vec();
            if let Some(s) = mean_of(&mean, &occ) {
                println!("occipital mean alpha slope: {s:.6e} per second");
            }
            dsp::write_values_csv(&mean, &ds.montage, &out_csv)?;
            std::fs::write(&out_svg, dsp::render_topomap_svg(&mean, &ds.montage)?)?;
        }
        Command::Train { vi, vp, regimes, folds, seed, out, reversal, scope, max_epochs, patience } => {
            let mut cfg = ExperimentConfig {
                folds,
                seed,
                regimes: match regimes {
                    RegimeArg::Vi => vec![Regime::ViOnly],
                    RegimeArg::Both => vec![Regime::ViOnly, Regime::ViPlusVp],
                },
                reversal: match reversal {
                    ReferenceArg::Zeros => ReversalConfig::zeros(),
                    ReferenceArg::Ones => ReversalConfig::ones(),
                },
                scope: match scope {
                    ScopeArg::Channel => NormScope::PerChannel,
                    ScopeArg::Trial => NormScope::PerTrial,
                },
                parallel_folds: !deterministic,
                ..ExperimentConfig::default()
            };
            if let Some(n) = max_epochs {
                cfg.training.max_epochs = n;
            }
            if let Some(n) = patience {
                cfg.training.patience = n;
            }
            print_config("train", &cfg);
            println!("seed: {seed}");
            let vi = eeg::load_dataset::<f32>(&vi)?;
            let vp = eeg::load_dataset::<f32>(&vp)?;
            let report = experiment::run_experiment(&vi, &vp, &cfg)?;
            for (name, r) in &report.regimes {
                println!("{name}: {:.4} +/- {:.4} over {} folds", r.mean, r.std, r.folds.len());
            }
            if let (Some(a), Some(b)) = (report.regime(Regime::ViOnly), report.regime(Regime::ViPlusVp)) {
                let t = experiment::paired_t_test_greater(&a.folds, &b.folds);
                println!("gap {:+.4}, one-sided paired p = {:.4}", t.mean_gap, t.p_value);
            }
            report.write_json(&out)?;
        }
        Command::Topomap { values, montage, out } => {
            let montage = resolve_montage(&montage)?;
            let v = dsp::read_values_csv(&values, &montage)?;
            std::fs::write(&out, dsp::render_topomap_svg(&v, &montage)?)?;
        }
    }
    Ok(())
}

fn mean_of(values: &[f64], idx: &[usize]) -> Option<f64> {
    (!idx.is_empty()).then(|| idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64)
}

fn resolve_montage(arg: &str) -> Result<Montage, CliError> {
    if arg.eq_ignore_ascii_case("standard64") {
        return Ok(Montage::standard_64());
    }
    let path = Path::new(arg);
    if path.join(eeg::MANIFEST_FILE).is_file() {
        let text = std::fs::read_to_string(path.join(eeg::MANIFEST_FILE))?;
        let manifest: eeg::Manifest =
            serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("bad manifest: {e}")))?;
        return Ok(Montage::with_default_occipital(manifest.channel_names)?);
    }
    let text = if path.is_file() { std::fs::read_to_string(path)? } else { arg.to_string() };
    let names: Vec<String> =
        text.split([',', '\n', '\r']).map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
    Ok(Montage::with_default_occipital(names)?)
}
