//! Flat `key = value` configuration files.
//!
//! One entry per line, `#` starts a comment, blank lines are ignored. Keys
//! may appear once. Every key in a file must be understood by the reader, so
//! typos are reported rather than silently ignored.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use crate::channel::{ChannelDistribution, Complex, CsiMode, EstimationConfig, ImperfectCsi};
use crate::daezic::{AblationFlags, Architecture, TrainConfig};
use crate::error::{Result, ZicError};
use crate::eval::EvalConfig;

/// Parsed entries plus a record of which keys were read.
#[derive(Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
    used: RefCell<BTreeSet<String>>,
}

fn err<T>(msg: String) -> Result<T> {
    Err(ZicError::Config(msg))
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return err(format!("line {line_no}: expected key = value, got {raw:?}"));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return err(format!("line {line_no}: empty key"));
            }
            if let Some((first, _)) = entries.insert(k.to_string(), (line_no, v.to_string())) {
                return err(format!(
                    "line {line_no}: duplicate key {k:?} (first set on line {first})"
                ));
            }
        }
        Ok(Self {
            entries,
            used: RefCell::new(BTreeSet::new()),
        })
    }

    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        let e = self.entries.get(key);
        if e.is_some() {
            self.used.borrow_mut().insert(key.to_string());
        }
        e
    }

    /// Value of `key` parsed as `T`, or `default` when absent.
    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some((line, v)) => v
                .parse()
                .or_else(|_| err(format!("line {line}: cannot parse {key} = {v:?}"))),
        }
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some((line, v)) => match v.as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => err(format!("line {line}: {key} must be true or false, got {v:?}")),
            },
        }
    }

    /// Comma-separated list of reals.
    pub fn get_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some((line, v)) => v
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .or_else(|_| err(format!("line {line}: {key} must be a comma-separated list of numbers"))),
        }
    }

    /// Fails on any key that was never read.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<String> = self
            .entries
            .iter()
            .filter(|(k, _)| !used.contains(*k))
            .map(|(k, (line, _))| format!("{k} (line {line})"))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            err(format!("unknown keys: {}", unknown.join(", ")))
        }
    }
}

fn read_channel(kv: &KeyValues) -> Result<ChannelDistribution> {
    let d = ChannelDistribution::default();
    let re = kv.get("channel_mean_re", d.mu_h.re)?;
    let im = kv.get("channel_mean_im", d.mu_h.im)?;
    let var = kv.get("channel_var", d.sigma_h2)?;
    ChannelDistribution::new(Complex::new(re, im), var).or_else(|e| err(e.to_string()))
}

fn read_csi(kv: &KeyValues) -> Result<CsiMode> {
    let mode: String = kv.get("csi", "perfect".to_string())?;
    let sigma_e2 = kv.get("sigma_e2", 0.0)?;
    let threshold = kv.get("threshold", 1.0)?;
    let n_q: String = kv.get("n_q", "none".to_string())?;
    match mode.as_str() {
        "perfect" => Ok(CsiMode::Perfect),
        "imperfect" => {
            let estimation = EstimationConfig::new(sigma_e2, threshold).or_else(|e| err(e.to_string()))?;
            let n_q = match n_q.as_str() {
                "none" => None,
                s => Some(
                    s.parse()
                        .or_else(|_| err(format!("n_q must be an integer or none, got {s:?}")))?,
                ),
            };
            Ok(CsiMode::Imperfect(ImperfectCsi { estimation, n_q }))
        }
        other => err(format!("csi must be perfect or imperfect, got {other:?}")),
    }
}

fn write_csi(out: &mut String, csi: &CsiMode) {
    match csi {
        CsiMode::Perfect => out.push_str("csi = perfect\n"),
        CsiMode::Imperfect(imp) => {
            let n_q = imp.n_q.map_or("none".to_string(), |n| n.to_string());
            let _ = write!(
                out,
                "csi = imperfect\nsigma_e2 = {}\nthreshold = {}\nn_q = {n_q}\n",
                imp.estimation.sigma_e2, imp.estimation.threshold
            );
        }
    }
}

fn write_channel(out: &mut String, ch: &ChannelDistribution) {
    let _ = write!(
        out,
        "channel_mean_re = {}\nchannel_mean_im = {}\nchannel_var = {}\n",
        ch.mu_h.re, ch.mu_h.im, ch.sigma_h2
    );
}

/// Reads the training keys of `kv`; absent keys keep their defaults.
pub fn read_train(kv: &KeyValues) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let da = Architecture::default();
    let df = AblationFlags::proposed();
    let cfg = TrainConfig {
        n_bits: kv.get("n_bits", d.n_bits)?,
        alpha_min: kv.get("alpha_min", d.alpha_min)?,
        alpha_max: kv.get("alpha_max", d.alpha_max)?,
        total_power: kv.get("total_power", d.total_power)?,
        train_snr_db: kv.get("train_snr_db", d.train_snr_db)?,
        n_channels: kv.get("n_channels", d.n_channels)?,
        epochs_per_channel: kv.get("epochs_per_channel", d.epochs_per_channel)?,
        batch: kv.get("batch", d.batch)?,
        learning_rate: kv.get("learning_rate", d.learning_rate)?,
        decay: kv.get("decay", d.decay)?,
        decay_every: kv.get("decay_every", d.decay_every)?,
        seed: kv.get("seed", d.seed)?,
        csi: read_csi(kv)?,
        channel: read_channel(kv)?,
        architecture: Architecture {
            hidden: kv.get("hidden", da.hidden)?,
            blocks: kv.get("blocks", da.blocks)?,
            subnet2_hidden: kv.get("subnet2_hidden", da.subnet2_hidden)?,
        },
        flags: AblationFlags {
            use_shortcuts: kv.get_bool("use_shortcuts", df.use_shortcuts)?,
            alpha_to_subnet1: kv.get_bool("alpha_to_subnet1", df.alpha_to_subnet1)?,
            alpha_to_subnet2: kv.get_bool("alpha_to_subnet2", df.alpha_to_subnet2)?,
            alpha_to_rx: kv.get_bool("alpha_to_rx", df.alpha_to_rx)?,
            use_subnet2: kv.get_bool("use_subnet2", df.use_subnet2)?,
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Parses a training configuration file.
pub fn parse_train(text: &str) -> Result<TrainConfig> {
    let kv = KeyValues::parse(text)?;
    let cfg = read_train(&kv)?;
    kv.finish()?;
    Ok(cfg)
}

/// Canonical text form: every key, fixed order, shortest round-trip numbers.
pub fn train_to_text(cfg: &TrainConfig) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "n_bits = {}\nalpha_min = {}\nalpha_max = {}\ntotal_power = {}\ntrain_snr_db = {}\n\
         n_channels = {}\nepochs_per_channel = {}\nbatch = {}\nlearning_rate = {}\ndecay = {}\n\
         decay_every = {}\nseed = {}\n",
        cfg.n_bits,
        cfg.alpha_min,
        cfg.alpha_max,
        cfg.total_power,
        cfg.train_snr_db,
        cfg.n_channels,
        cfg.epochs_per_channel,
        cfg.batch,
        cfg.learning_rate,
        cfg.decay,
        cfg.decay_every,
        cfg.seed
    );
    write_csi(&mut s, &cfg.csi);
    write_channel(&mut s, &cfg.channel);
    let a = cfg.architecture;
    let f = cfg.flags;
    let _ = write!(
        s,
        "hidden = {}\nblocks = {}\nsubnet2_hidden = {}\nuse_shortcuts = {}\nalpha_to_subnet1 = {}\n\
         alpha_to_subnet2 = {}\nalpha_to_rx = {}\nuse_subnet2 = {}\n",
        a.hidden,
        a.blocks,
        a.subnet2_hidden,
        f.use_shortcuts,
        f.alpha_to_subnet1,
        f.alpha_to_subnet2,
        f.alpha_to_rx,
        f.use_subnet2
    );
    s
}

/// Evaluation settings read alongside the scheme-specific rotation search size.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub eval: EvalConfig,
    pub rotation_steps: usize,
}

/// Reads the evaluation keys of `kv`; absent keys keep their defaults.
pub fn read_eval(kv: &KeyValues) -> Result<EvalSettings> {
    let d = EvalConfig::default();
    let eval = EvalConfig {
        snr_grid_db: kv.get_list("snr_grid_db", &d.snr_grid_db)?,
        alpha_grid: kv.get_list("alpha_grid", &d.alpha_grid)?,
        n_channel_draws: kv.get("n_channel_draws", d.n_channel_draws)?,
        symbols_per_draw: kv.get("symbols_per_draw", d.symbols_per_draw)?,
        min_errors: kv.get("min_errors", d.min_errors)?,
        max_bits: kv.get("max_bits", d.max_bits)?,
        seed: kv.get("seed", d.seed)?,
        csi: read_csi(kv)?,
        channel: read_channel(kv)?,
        total_power: kv.get("total_power", d.total_power)?,
        n_bits: kv.get("n_bits", d.n_bits)?,
    };
    eval.validate()?;
    Ok(EvalSettings {
        eval,
        rotation_steps: kv.get("rotation_steps", crate::eval::DEFAULT_ROTATION_STEPS)?,
    })
}

/// Parses an evaluation configuration file.
pub fn parse_eval(text: &str) -> Result<EvalSettings> {
    let kv = KeyValues::parse(text)?;
    let s = read_eval(&kv)?;
    kv.finish()?;
    Ok(s)
}
