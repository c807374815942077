//! `rgap`: run gradient inversion experiments from the command line.
//!
//! Exit codes: 0 success, 2 usage, 3 unreadable or inconsistent input,
//! 4 numerical failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rgap::experiments::{
    run_batch, run_noise_sweep, run_ra_study, run_single, run_twin, AttackKind, ExperimentConfig, InputSource,
    Reconstruction, SampleLabel, WeightsSource,
};
use rgap::io::{write_csv_image, write_netpbm};
use rgap::model::{Label, NetworkSpec};
use rgap::rank::rank_report;
use rgap::rgap::RootPolicy;
use rgap::Error;

#[derive(Parser, Debug)]
#[command(name = "rgap", version, about = "Gradient inversion attacks and rank analysis for small networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Reconstruct inputs from their gradients.
    Attack {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "rgap")]
        attack: AttackKind,
    },
    /// Print the per-layer rank analysis of a network.
    Rank {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstruct from the logit the sample did not realize.
    Twin {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Attack gradients perturbed by Gaussian noise of each σ.
    SweepNoise {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "rgap")]
        attack: AttackKind,
        /// Comma-separated standard deviations.
        #[arg(long, value_delimiter = ',', required = true)]
        sigmas: Vec<f64>,
    },
    /// Attack gradients averaged over a batch and measure the mixture.
    Batch {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
        batch_size: u64,
    },
    /// Tabulate attack MSE against the largest RA-i of several networks.
    RaStudy {
        /// Network files; repeat the flag for each architecture.
        #[arg(long = "net", required = true)]
        nets: Vec<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "rgap")]
        attack: AttackKind,
        #[arg(long)]
        weights_seed: Option<u64>,
        #[arg(long)]
        synthetic_seed: Option<u64>,
    },
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long, conflicts_with = "weights")]
    weights_seed: Option<u64>,
    /// JSON weights index with its `.bin` blob.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// PGM, PPM or CSV image.
    #[arg(long, conflicts_with = "synthetic_seed")]
    input: Option<PathBuf>,
    #[arg(long)]
    synthetic_seed: Option<u64>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Fix the true label (`-1`, `1`), or hide it from the attack (`infer`).
    /// Without this flag the label is drawn by `--sample-label` and given
    /// to the attack.
    #[arg(long, allow_hyphen_values = true)]
    label: Option<LabelArg>,
    /// How the true label is drawn unless `--label` fixes it.
    #[arg(long, default_value = "random", value_parser = parse_sample_label)]
    sample_label: SampleLabel,
    #[arg(long, default_value = "smoothness")]
    root_policy: RootPolicy,
    /// Use surplus equations of identity-activated overdetermined layers.
    #[arg(long)]
    virtual_constraints: bool,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    /// Master seed for labels, noise and the DLG initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    dlg_iters: usize,
    /// Output directory; without it the report goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, requires = "out")]
    dump_images: bool,
}

#[derive(Clone, Copy, Debug)]
enum LabelArg {
    Known(Label),
    Infer,
}

impl FromStr for LabelArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "1" | "+1" => Ok(LabelArg::Known(Label::Pos)),
            "-1" => Ok(LabelArg::Known(Label::Neg)),
            "infer" => Ok(LabelArg::Infer),
            other => Err(format!("expected -1, 1 or infer, got {other:?}")),
        }
    }
}

fn parse_sample_label(s: &str) -> Result<SampleLabel, String> {
    match s {
        "random" => Ok(SampleLabel::Random),
        "misclassified" => Ok(SampleLabel::Misclassified),
        "classified" => Ok(SampleLabel::Classified),
        other => Err(format!("expected random, misclassified or classified, got {other:?}")),
    }
}

impl RunArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        (cfg.sample_label, cfg.label_known) = match self.label {
            Some(LabelArg::Known(y)) => (SampleLabel::Fixed(y), true),
            Some(LabelArg::Infer) => (self.sample_label, false),
            None => (self.sample_label, true),
        };
        cfg.root_policy = self.root_policy;
        cfg.virtual_constraints = self.virtual_constraints;
        cfg.trials = self.trials as usize;
        cfg.seed = self.seed;
        cfg.dlg.max_iters = self.dlg_iters;
    }
}

/// Print to stdout; a closed pipe (e.g. `| head`) is not an error.
fn print_stdout(text: &str) {
    if let Err(e) = writeln!(std::io::stdout().lock(), "{text}") {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            eprintln!("error: writing to stdout: {e}");
        }
    }
}

fn load_net(path: &Path) -> Result<NetworkSpec, Error> {
    NetworkSpec::load(path)
}

fn config(data: &DataArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::new(load_net(&data.net)?);
    cfg.weights = match &data.weights {
        Some(p) => WeightsSource::File(p.clone()),
        None => WeightsSource::Seed(data.weights_seed.unwrap_or(0)),
    };
    cfg.input = match &data.input {
        Some(p) => InputSource::Image(p.clone()),
        None => InputSource::Synthetic(data.synthetic_seed.unwrap_or(0)),
    };
    data.run.apply(&mut cfg);
    Ok(cfg)
}

fn emit(json: &str, recons: &[Reconstruction], run: &RunArgs) -> Result<(), Error> {
    let Some(dir) = &run.out else {
        print_stdout(&json);
        return Ok(());
    };
    let report = dir.join("report.json");
    fs::create_dir_all(dir)
        .and_then(|_| fs::write(&report, json))
        .map_err(|source| Error::Io { path: report.clone(), source })?;
    if run.dump_images {
        for r in recons {
            if matches!(r.shape.c, 1 | 3) {
                let ext = if r.shape.c == 1 { "pgm" } else { "ppm" };
                write_netpbm(&dir.join(format!("{}.{ext}", r.name)), &r.x_hat, r.shape)?;
                write_netpbm(&dir.join(format!("{}_truth.{ext}", r.name)), &r.truth, r.shape)?;
            }
            write_csv_image(&dir.join(format!("{}.csv", r.name)), &r.x_hat, r.shape)?;
        }
    }
    eprintln!("wrote {}", report.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Attack { data, attack } => {
            let mut cfg = config(&data)?;
            cfg.attack = attack;
            let r = run_single(&cfg)?;
            emit(&r.to_json(), &r.reconstructions, &data.run)
        }
        Command::Rank { net, out } => {
            let json = rank_report(&load_net(&net)?)?.to_json();
            if let Some(dir) = out {
                let path = dir.join("report.json");
                fs::create_dir_all(&dir)
                    .and_then(|_| fs::write(&path, &json))
                    .map_err(|source| Error::Io { path, source })?;
            }
            print_stdout(&json);
            Ok(())
        }
        Command::Twin { data } => {
            let r = run_twin(&config(&data)?)?;
            emit(&r.to_json(), &r.reconstructions, &data.run)
        }
        Command::SweepNoise { data, attack, sigmas } => {
            let mut cfg = config(&data)?;
            cfg.attack = attack;
            cfg.noise_sigmas = sigmas;
            let r = run_noise_sweep(&cfg)?;
            emit(&r.to_json(), &r.reconstructions, &data.run)
        }
        Command::Batch { data, batch_size } => {
            let mut cfg = config(&data)?;
            cfg.batch_size = batch_size as usize;
            let r = run_batch(&cfg)?;
            emit(&r.to_json(), &r.reconstructions, &data.run)
        }
        Command::RaStudy { nets, run, attack, weights_seed, synthetic_seed } => {
            let mut configs = Vec::with_capacity(nets.len());
            for path in &nets {
                let mut cfg = ExperimentConfig::new(load_net(path)?);
                cfg.attack = attack;
                cfg.weights = WeightsSource::Seed(weights_seed.unwrap_or(0));
                cfg.input = InputSource::Synthetic(synthetic_seed.unwrap_or(0));
                run.apply(&mut cfg);
                let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into());
                configs.push((name, cfg));
            }
            let r = run_ra_study(&configs)?;
            emit(&r.to_json(), &r.reconstructions, &run)
        }
    }
}

fn main() -> ExitCode {
    // Usage errors exit with status 2 from inside `parse`.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 4 } else { 3 })
        }
    }
}
