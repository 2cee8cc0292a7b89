//! The ablation table: the proposed model and six reduced variants, each
//! trained around a few interference gains and compared by worst-case BER.

use std::io::Write;

use rayon::prelude::*;

use crate::daezic::{train, AblationFlags, TrainConfig};
use crate::error::Result;
use crate::eval::{run_point, BerRecord, EvalConfig, ModelSet, Scheme};

/// Interference gains of the table rows.
pub const ABLATION_ALPHAS: [f64; 3] = [0.5, 1.0, 1.5];

pub const VARIANT_NAMES: [&str; 7] = ["proposed", "exp1", "exp2", "exp3", "exp4", "exp5", "exp6"];

/// Worst-case BER per row (gain) and column (variant).
#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub alphas: Vec<f64>,
    pub cells: Vec<Vec<BerRecord>>,
}

impl AblationTable {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "alpha,{}", VARIANT_NAMES.join(","))?;
        for (alpha, row) in self.alphas.iter().zip(&self.cells) {
            let vals: Vec<String> = row.iter().map(|r| r.ber_worst.to_string()).collect();
            writeln!(w, "{alpha},{}", vals.join(","))?;
        }
        Ok(())
    }
}

/// Training configuration of one table cell: the base run re-centred on
/// `alpha` with the base interval width, and the variant's flags.
pub fn cell_config(base: &TrainConfig, alpha: f64, variant: usize) -> Result<TrainConfig> {
    let half = (base.alpha_max - base.alpha_min) / 2.0;
    Ok(TrainConfig {
        alpha_min: (alpha - half).max(0.0),
        alpha_max: alpha + half,
        flags: AblationFlags::experiment(variant)?,
        ..base.clone()
    })
}

/// Trains and evaluates every cell at `snr_db`. Cells are independent and run
/// in parallel on the current thread pool.
pub fn run_ablation(base: &TrainConfig, eval: &EvalConfig, alphas: &[f64], snr_db: f64) -> Result<AblationTable> {
    let jobs: Vec<(usize, usize)> = (0..alphas.len())
        .flat_map(|a| (0..VARIANT_NAMES.len()).map(move |v| (a, v)))
        .collect();
    let records = jobs
        .into_par_iter()
        .map(|(a, v)| {
            let cfg = cell_config(base, alphas[a], v)?;
            let (model, _) = train(&cfg)?;
            let set = ModelSet::single((cfg.alpha_min, cfg.alpha_max), model);
            let mut rec = run_point(&Scheme::Dae(set), eval, snr_db, alphas[a])?;
            rec.scheme = VARIANT_NAMES[v].to_string();
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    let cells = records.chunks(VARIANT_NAMES.len()).map(|c| c.to_vec()).collect();
    Ok(AblationTable {
        alphas: alphas.to_vec(),
        cells,
    })
}
