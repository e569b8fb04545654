use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::compose::Format;
use crate::error::{arg, Error, Result};

use super::dataset::Dataset;
use super::experiment::{evaluate_model, train, ExperimentConfig, ResultsRow};

/// Which grid of experiments to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixPlan {
    /// Every format at its default patch, the four D1 treatment rows and a
    /// smaller-patch D1 row.
    Full,
    /// The four D1 treatment rows only.
    Mini,
}

impl fmt::Display for MatrixPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatrixPlan::Full => "full",
            MatrixPlan::Mini => "mini",
        })
    }
}

impl FromStr for MatrixPlan {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(MatrixPlan::Full),
            "mini" => Ok(MatrixPlan::Mini),
            other => arg(format!(
                "unknown matrix plan {other:?} (expected full or mini)"
            )),
        }
    }
}

/// Default patch edge per format.
pub fn default_patch(format: Format) -> usize {
    match format {
        Format::D2 => 24,
        Format::D1 | Format::D3 | Format::D4 => 32,
    }
}

/// One training run and the style settings its parameters are evaluated
/// under. Style only touches inference inputs, so a single training serves
/// both settings.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixEntry {
    pub config: ExperimentConfig,
    pub eval_style: Vec<bool>,
}

fn entry(
    format: Format,
    patch: usize,
    seg: bool,
    seed: u64,
    epochs: Option<usize>,
    eval_style: &[bool],
) -> Result<MatrixEntry> {
    let mut config = ExperimentConfig::new(String::new(), format, patch)?;
    config.use_seg = seg;
    config.seed = seed;
    if let Some(e) = epochs {
        config.epochs = e;
    }
    Ok(MatrixEntry {
        config,
        eval_style: eval_style.to_vec(),
    })
}

/// Training runs of `plan` for every seed, in execution order.
pub fn matrix_entries(
    plan: MatrixPlan,
    seeds: &[u64],
    epochs: Option<usize>,
) -> Result<Vec<MatrixEntry>> {
    if seeds.is_empty() {
        return arg("matrix needs at least one seed");
    }
    let both = [false, true];
    let mut out = Vec::new();
    for &seed in seeds {
        let d1 = default_patch(Format::D1);
        out.push(entry(Format::D1, d1, false, seed, epochs, &both)?);
        out.push(entry(Format::D1, d1, true, seed, epochs, &both)?);
        if plan == MatrixPlan::Full {
            for format in [Format::D2, Format::D3, Format::D4] {
                out.push(entry(
                    format,
                    default_patch(format),
                    false,
                    seed,
                    epochs,
                    &[false],
                )?);
            }
            out.push(entry(Format::D1, 16, false, seed, epochs, &[false])?);
        }
    }
    Ok(out)
}

/// Row id: format, patch, treatment and seed.
pub fn row_id(cfg: &ExperimentConfig, style: bool) -> String {
    let treatment = match (cfg.use_seg, style) {
        (false, false) => "base",
        (false, true) => "style",
        (true, false) => "seg",
        (true, true) => "seg+style",
    };
    format!(
        "{}-p{}-{treatment}-s{}",
        cfg.format, cfg.model.patch, cfg.seed
    )
}

/// Trains every entry once and evaluates it under each of its style
/// settings. With `timing`, `seconds` holds training plus that evaluation.
pub fn run_matrix(
    entries: &[MatrixEntry],
    dataset: &Dataset,
    timing: bool,
) -> Result<Vec<ResultsRow>> {
    let mut rows = Vec::new();
    for e in entries {
        let start = Instant::now();
        let mut cfg = e.config.clone();
        cfg.use_style = false;
        cfg.experiment_id = row_id(&cfg, false);
        log::info!("training {}", cfg.experiment_id);
        let (params, _) = train(&cfg, dataset)?;
        let train_secs = start.elapsed().as_secs_f64();
        for &style in &e.eval_style {
            let eval_start = Instant::now();
            let mut ecfg = cfg.clone();
            ecfg.use_style = style;
            ecfg.experiment_id = row_id(&ecfg, style);
            let mut row = evaluate_model(&ecfg, &params, dataset)?;
            if timing {
                row.seconds = train_secs + eval_start.elapsed().as_secs_f64();
            }
            log::info!(
                "{}: upper {:.4} full {:.4} day {:.4} night {:.4} rain {:.4}",
                row.experiment_id,
                row.upper_bound_acc,
                row.full_acc,
                row.day_acc,
                row.night_acc,
                row.rain_acc
            );
            rows.push(row);
        }
    }
    Ok(rows)
}
