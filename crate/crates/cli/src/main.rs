mod manifest;
mod selftest;

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use zic_core::ablation::{run_ablation, ABLATION_ALPHAS};
use zic_core::config::{read_eval, read_train, train_to_text, KeyValues};
use zic_core::daezic::{train_with, TrainConfig};
use zic_core::eval::{evaluate, ModelSet, Scheme};
use zic_core::model_io;

use manifest::Manifest;

#[derive(Parser)]
#[command(name = "zic", version, about = "Z-interference channel transceiver simulation")]
struct Cli {
    /// Worker threads for evaluation and ablation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Baseline1,
    Baseline2,
    Dae,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write it with its training log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a BER sweep and write the results as CSV.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        scheme: SchemeArg,
        /// Directory of model files, required for `--scheme dae`.
        #[arg(long)]
        model_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write both learned constellations of a model at one interference gain.
    ExportConstellation {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate the ablation variants.
    Ablation {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// SNR of the comparison in dB.
        #[arg(long, default_value_t = 10.0)]
        snr_db: f64,
    },
    /// Run quick property checks of the library.
    Selftest,
}

/// A failed command: exit status and message.
struct Failure {
    code: u8,
    message: String,
}

fn config_failure(e: impl Display) -> Failure {
    Failure {
        code: 2,
        message: e.to_string(),
    }
}

fn failure(e: impl Display) -> Failure {
    Failure {
        code: 1,
        message: e.to_string(),
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Clone, Copy, PartialEq, PartialOrd)]
enum Verbosity {
    Quiet,
    Info,
    Debug,
}

fn verbosity() -> Verbosity {
    match std::env::var("ZIC_LOG").as_deref() {
        Ok("quiet") | Ok("0") | Ok("off") => Verbosity::Quiet,
        Ok("debug") | Ok("2") => Verbosity::Debug,
        _ => Verbosity::Info,
    }
}

fn info(msg: impl Display) {
    if verbosity() >= Verbosity::Info {
        eprintln!("{msg}");
    }
}

fn read_config(path: &Path) -> Result<(Vec<u8>, KeyValues), Failure> {
    let bytes =
        std::fs::read(path).map_err(|e| config_failure(format!("cannot read config {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes).map_err(|_| config_failure(format!("{} is not UTF-8", path.display())))?;
    let kv = KeyValues::parse(text).map_err(|e| config_failure(format!("{}: {e}", path.display())))?;
    Ok((bytes, kv))
}

fn write_file(path: &Path, bytes: &[u8]) -> CmdResult {
    std::fs::write(path, bytes).map_err(|e| failure(format!("cannot write {}: {e}", path.display())))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_train(config: &Path, out: &Path, seed: Option<u64>) -> CmdResult {
    let (bytes, kv) = read_config(config)?;
    let mut cfg = read_train(&kv).map_err(config_failure)?;
    kv.finish().map_err(config_failure)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let mut manifest = Manifest::start("train");
    manifest.config(&bytes, cfg.seed);
    manifest.input(config, &bytes);

    let debug = verbosity() >= Verbosity::Debug;
    let total = cfg.n_channels;
    let (model, log) = train_with(&cfg, &mut |e| {
        if debug || (e.channel + 1) % 50 == 0 || e.channel + 1 == total {
            info(format!(
                "channel {}/{total} alpha {:.4} loss {:.5} lr {:.3e}",
                e.channel + 1,
                e.alpha,
                e.mean_loss,
                e.learning_rate
            ));
        }
    })
    .map_err(failure)?;

    let model_bytes = model_io::to_bytes(&cfg, &model);
    write_file(out, &model_bytes)?;
    manifest.output(out, &model_bytes);

    let mut csv = String::from("channel,alpha,mean_loss,learning_rate\n");
    for e in &log {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            e.channel, e.alpha, e.mean_loss, e.learning_rate
        ));
    }
    let log_path = sibling(out, ".train.csv");
    write_file(&log_path, csv.as_bytes())?;
    manifest.output(&log_path, csv.as_bytes());
    manifest.write_for(out).map_err(failure)?;
    info(format!("wrote {}", out.display()));
    Ok(())
}

fn load_model_dir(dir: &Path, manifest: &mut Manifest) -> Result<ModelSet, Failure> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| failure(format!("cannot read model directory {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    paths.sort();
    let mut set = ModelSet::new();
    for p in paths {
        let bytes = std::fs::read(&p).map_err(|e| failure(format!("cannot read {}: {e}", p.display())))?;
        let file = model_io::from_bytes(&bytes).map_err(|e| failure(format!("{}: {e}", p.display())))?;
        manifest.input(&p, &bytes);
        set.insert(file.alpha_interval(), file.model);
    }
    Ok(set)
}

fn cmd_eval(config: &Path, scheme: SchemeArg, model_dir: Option<&Path>, out: &Path, seed: Option<u64>) -> CmdResult {
    let (bytes, kv) = read_config(config)?;
    let mut settings = read_eval(&kv).map_err(config_failure)?;
    kv.finish().map_err(config_failure)?;
    if let Some(s) = seed {
        settings.eval.seed = s;
    }
    let mut manifest = Manifest::start("eval");
    manifest.config(&bytes, settings.eval.seed);
    manifest.input(config, &bytes);
    let scheme = match scheme {
        SchemeArg::Baseline1 => Scheme::Baseline1,
        SchemeArg::Baseline2 => Scheme::Baseline2 {
            rotation_steps: settings.rotation_steps,
        },
        SchemeArg::Dae => {
            let dir = model_dir.ok_or_else(|| failure("--scheme dae needs --model-dir"))?;
            Scheme::Dae(load_model_dir(dir, &mut manifest)?)
        }
    };
    let result = evaluate(&scheme, &settings.eval).map_err(failure)?;
    let mut csv = Vec::new();
    result.write_csv(&mut csv, true).map_err(failure)?;
    write_file(out, &csv)?;
    manifest.output(out, &csv);
    manifest.write_for(out).map_err(failure)?;
    info(format!("wrote {} ({} points)", out.display(), result.records.len()));
    Ok(())
}

fn cmd_export(model: &Path, alpha: f64, out: &Path) -> CmdResult {
    let bytes = std::fs::read(model).map_err(|e| failure(format!("cannot read {}: {e}", model.display())))?;
    let file = model_io::from_bytes(&bytes).map_err(|e| failure(format!("{}: {e}", model.display())))?;
    let (lo, hi) = file.alpha_interval();
    if !(lo..=hi).contains(&alpha) {
        return Err(failure(format!(
            "alpha {alpha} is outside the model's training interval [{lo}, {hi}]"
        )));
    }
    let (c1, c2) = file.model.encode_constellation(alpha.sqrt()).map_err(failure)?;
    let mut csv = String::from("user,bits,re,im\n");
    for (user, c) in [(1, &c1), (2, &c2)] {
        let mut body = Vec::new();
        c.write_csv(&mut body).map_err(failure)?;
        let body = String::from_utf8(body).map_err(failure)?;
        for line in body.lines().skip(1) {
            csv.push_str(&format!("{user},{line}\n"));
        }
    }
    write_file(out, csv.as_bytes())?;
    let mut manifest = Manifest::start("export-constellation");
    manifest.input(model, &bytes);
    manifest.output(out, csv.as_bytes());
    manifest.write_for(out).map_err(failure)?;
    info(format!(
        "wrote {}; average power {:.4} (user 1), {:.4} (user 2)",
        out.display(),
        c1.avg_power(),
        c2.avg_power()
    ));
    Ok(())
}

fn cmd_ablation(config: &Path, out: &Path, seed: Option<u64>, snr_db: f64) -> CmdResult {
    let (bytes, kv) = read_config(config)?;
    let mut base: TrainConfig = read_train(&kv).map_err(config_failure)?;
    let mut settings = read_eval(&kv).map_err(config_failure)?;
    kv.finish().map_err(config_failure)?;
    if let Some(s) = seed {
        base.seed = s;
        settings.eval.seed = s;
    }
    info(format!("ablation base configuration:\n{}", train_to_text(&base)));
    let table = run_ablation(&base, &settings.eval, &ABLATION_ALPHAS, snr_db).map_err(failure)?;
    let mut csv = Vec::new();
    table.write_csv(&mut csv).map_err(failure)?;
    write_file(out, &csv)?;
    let mut manifest = Manifest::start("ablation");
    manifest.config(&bytes, base.seed);
    manifest.input(config, &bytes);
    manifest.output(out, &csv);
    manifest.write_for(out).map_err(failure)?;
    info(format!("wrote {}", out.display()));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Train { config, out, seed } => cmd_train(config, out, *seed),
        Command::Eval {
            config,
            scheme,
            model_dir,
            out,
            seed,
        } => cmd_eval(config, *scheme, model_dir.as_deref(), out, *seed),
        Command::ExportConstellation { model, alpha, out } => cmd_export(model, *alpha, out),
        Command::Ablation {
            config,
            out,
            seed,
            snr_db,
        } => cmd_ablation(config, out, *seed, *snr_db),
        Command::Selftest => selftest::run(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
