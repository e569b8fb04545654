use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compose::{Format, FormatSpec};
use crate::error::{arg, Result};
use crate::geometry::OrientationLabel;
use crate::neural::{
    batch_loss_and_grad, input_values, predict, AdamState, ModelConfig, ParameterSet, Variant,
};
use crate::rng::mix_seed;
use crate::world::ConditionKind;

use super::dataset::Dataset;
use super::sample::{
    ncc_baseline, same_moment_samples, test_samples, train_items, InputOptions, Sample,
    SampleFactory, StyleSource, TargetSource,
};

const INIT_TAG: u64 = 0x494E_4954;

fn default_lr() -> f64 {
    5e-4
}

fn default_warmup() -> usize {
    100
}

fn default_jitter() -> f64 {
    10.0
}

fn default_true() -> bool {
    true
}

/// One trainable configuration plus its treatment flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub format: Format,
    pub cell: usize,
    pub model: ModelConfig,
    pub use_style: bool,
    pub use_seg: bool,
    #[serde(default)]
    pub style_source: StyleSource,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Linear warmup length; the rate then follows a cosine decay to zero.
    #[serde(default = "default_warmup")]
    pub warmup_steps: usize,
    /// Training headings are drawn within this many degrees of a bin center.
    #[serde(default = "default_jitter")]
    pub train_heading_jitter_deg: f64,
    /// Randomly rotate the context ring (and the label) per training item.
    #[serde(default = "default_true")]
    pub context_roll: bool,
    pub seed: u64,
    #[serde(default)]
    pub max_train_locations: Option<usize>,
    #[serde(default)]
    pub max_test_locations: Option<usize>,
}

impl ExperimentConfig {
    /// Default-size model for `format` at its desk-scale cell.
    pub fn new(experiment_id: impl Into<String>, format: Format, patch: usize) -> Result<Self> {
        let spec = FormatSpec::toy(format);
        Ok(Self {
            experiment_id: experiment_id.into(),
            format,
            cell: spec.cell,
            model: ModelConfig::for_input(spec, patch)?,
            use_style: false,
            use_seg: false,
            style_source: StyleSource::Pooled,
            epochs: 20,
            batch_size: 16,
            lr: default_lr(),
            warmup_steps: default_warmup(),
            train_heading_jitter_deg: default_jitter(),
            context_roll: true,
            seed: 0,
            max_train_locations: None,
            max_test_locations: None,
        })
    }

    pub fn spec(&self) -> Result<FormatSpec> {
        FormatSpec::new(self.format, self.cell)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let [t, h, w, _] = self.spec()?.shape();
        if (self.model.frames, self.model.height, self.model.width) != (t, h, w) {
            return arg(format!(
                "model expects {}x{}x{} but {} with cell {} composes {t}x{h}x{w}",
                self.model.frames, self.model.height, self.model.width, self.format, self.cell
            ));
        }
        let want = if self.format.is_stacked() {
            Variant::Stacked3D
        } else {
            Variant::Flat2D
        };
        if self.model.variant != want {
            return arg(format!("{} needs a {want:?} model", self.format));
        }
        if self.model.n_classes != 8 {
            return arg("orientation models have 8 classes");
        }
        if self.batch_size == 0 {
            return arg("batch size must be positive");
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return arg("learning rate must be positive");
        }
        Ok(())
    }

    pub fn model_tag(&self) -> String {
        let v = match self.model.variant {
            Variant::Flat2D => "flat2d",
            Variant::Stacked3D => "stacked3d",
        };
        format!(
            "{v}-p{}-e{}-d{}",
            self.model.patch, self.model.embed_dim, self.model.depth
        )
    }

    fn options(&self) -> InputOptions {
        InputOptions {
            use_style: self.use_style,
            use_seg: self.use_seg,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Learning rate after `step` updates out of `total`.
pub fn scheduled_lr(cfg: &ExperimentConfig, step: usize, total: usize) -> f64 {
    let warm = if cfg.warmup_steps == 0 {
        1.0
    } else {
        ((step + 1) as f64 / cfg.warmup_steps as f64).min(1.0)
    };
    let progress = step as f64 / total.max(1) as f64;
    cfg.lr * warm * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Mean training loss per epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
}

/// Trains on clear-day street slices of every moment of the training split. The seg flag
/// applies the road overlay to training targets too; style never applies in
/// training.
pub fn train(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<(ParameterSet<f32>, TrainLog)> {
    cfg.validate()?;
    let factory = SampleFactory::new(dataset, cfg.spec()?, cfg.style_source, cfg.seed)?;
    train_with(cfg, dataset, &factory)
}

pub(crate) fn train_with(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    factory: &SampleFactory<'_>,
) -> Result<(ParameterSet<f32>, TrainLog)> {
    let mut params = ParameterSet::<f32>::init(&cfg.model, mix_seed(&[cfg.seed, INIT_TAG]))?;
    let mut opt = AdamState::new(&params, cfg.lr);
    let opts = InputOptions {
        use_style: false,
        use_seg: cfg.use_seg,
    };
    let per_epoch = train_items(
        &dataset.manifest,
        0,
        cfg.seed,
        cfg.train_heading_jitter_deg,
        cfg.context_roll,
        cfg.max_train_locations,
    )?
    .len();
    if per_epoch == 0 {
        return arg("no training samples");
    }
    let total = cfg.epochs * per_epoch.div_ceil(cfg.batch_size);
    let mut log = TrainLog::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let items = train_items(
            &dataset.manifest,
            epoch,
            cfg.seed,
            cfg.train_heading_jitter_deg,
            cfg.context_roll,
            cfg.max_train_locations,
        )?;
        let mut loss_sum = 0.0;
        for chunk in items.chunks(cfg.batch_size) {
            let batch = chunk
                .par_iter()
                .map(|it| {
                    let (ci, label) = factory.input(&it.sample, opts, it.roll)?;
                    Ok((input_values::<f32>(&cfg.model, &ci)?, label))
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = batch_loss_and_grad(&cfg.model, &params, &batch)?;
            opt.lr = scheduled_lr(cfg, step, total);
            opt.step(&mut params, &grads)?;
            loss_sum += loss as f64 * chunk.len() as f64;
            step += 1;
        }
        let mean = loss_sum / items.len() as f64;
        log::info!(
            "{} epoch {}/{}: loss {mean:.4}",
            cfg.experiment_id,
            epoch + 1,
            cfg.epochs
        );
        log.epoch_loss.push(mean);
    }
    Ok((params, log))
}

/// Accuracies of one evaluated configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub experiment_id: String,
    pub format: Format,
    pub model: String,
    pub style: bool,
    pub seg: bool,
    pub upper_bound_acc: f64,
    pub full_acc: f64,
    pub day_acc: f64,
    pub night_acc: f64,
    pub rain_acc: f64,
    /// Samples per accuracy column.
    pub n_test: usize,
    pub seconds: f64,
    /// User-view predictions by circular bin distance from the truth (0..=4).
    pub distance_histogram: [usize; 5],
}

/// Anything that maps a sample to a predicted bin.
pub trait Predictor: Sync {
    fn predict(
        &self,
        factory: &SampleFactory<'_>,
        sample: &Sample,
        opts: InputOptions,
    ) -> Result<OrientationLabel>;
}

/// A trained (or untrained) network.
pub struct ModelPredictor<'a> {
    pub model: &'a ModelConfig,
    pub params: &'a ParameterSet<f32>,
}

impl Predictor for ModelPredictor<'_> {
    fn predict(
        &self,
        factory: &SampleFactory<'_>,
        sample: &Sample,
        opts: InputOptions,
    ) -> Result<OrientationLabel> {
        let (ci, _) = factory.input(sample, opts, 0)?;
        predict(
            self.model,
            self.params,
            &input_values::<f32>(self.model, &ci)?,
        )
    }
}

/// Correlation matcher over the raw target and context slices.
pub struct NccPredictor;

impl Predictor for NccPredictor {
    fn predict(
        &self,
        factory: &SampleFactory<'_>,
        sample: &Sample,
        opts: InputOptions,
    ) -> Result<OrientationLabel> {
        let target = factory.treated_target(sample, opts)?;
        ncc_baseline(&target, factory.contexts(sample.location_id)?)
    }
}

/// Predictions for `samples` in order.
pub fn predict_all(
    predictor: &dyn Predictor,
    factory: &SampleFactory<'_>,
    samples: &[Sample],
    opts: InputOptions,
) -> Result<Vec<OrientationLabel>> {
    samples
        .par_iter()
        .map(|s| predictor.predict(factory, s, opts))
        .collect()
}

/// Fraction of exact bin matches; 0 for an empty set.
pub fn accuracy(samples: &[Sample], predicted: &[OrientationLabel]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let hits = samples
        .iter()
        .zip(predicted)
        .filter(|(s, p)| s.label == **p)
        .count();
    hits as f64 / samples.len() as f64
}

pub fn distance_histogram(samples: &[Sample], predicted: &[OrientationLabel]) -> [usize; 5] {
    let mut h = [0usize; 5];
    for (s, p) in samples.iter().zip(predicted) {
        h[s.label.circular_distance(*p, 8).min(4)] += 1;
    }
    h
}

/// Scores a predictor on the upper-bound street-slice set and the three
/// user-view condition sets.
pub fn evaluate(
    id: &str,
    format: Format,
    model_tag: &str,
    predictor: &dyn Predictor,
    factory: &SampleFactory<'_>,
    opts: InputOptions,
    max_test_locations: Option<usize>,
) -> Result<ResultsRow> {
    let manifest = &factory.dataset().manifest;
    let street = test_samples(
        manifest,
        TargetSource::StreetSlice,
        ConditionKind::ClearDay,
        max_test_locations,
    )?;
    let upper = accuracy(&street, &predict_all(predictor, factory, &street, opts)?);
    let mut accs = [0.0; 3];
    let mut hits = 0.0;
    let mut total = 0usize;
    let mut hist = [0usize; 5];
    for (i, cond) in ConditionKind::ALL.into_iter().enumerate() {
        let s = test_samples(manifest, TargetSource::UserView, cond, max_test_locations)?;
        let p = predict_all(predictor, factory, &s, opts)?;
        accs[i] = accuracy(&s, &p);
        hits += accs[i] * s.len() as f64;
        total += s.len();
        for (h, d) in hist.iter_mut().zip(distance_histogram(&s, &p)) {
            *h += d;
        }
    }
    Ok(ResultsRow {
        experiment_id: id.to_string(),
        format,
        model: model_tag.to_string(),
        style: opts.use_style,
        seg: opts.use_seg,
        upper_bound_acc: upper,
        full_acc: if total == 0 { 0.0 } else { hits / total as f64 },
        day_acc: accs[0],
        night_acc: accs[1],
        rain_acc: accs[2],
        n_test: street.len(),
        seconds: 0.0,
        distance_histogram: hist,
    })
}

/// Evaluates trained parameters under the config's treatment flags.
pub fn evaluate_model(
    cfg: &ExperimentConfig,
    params: &ParameterSet<f32>,
    dataset: &Dataset,
) -> Result<ResultsRow> {
    cfg.validate()?;
    let factory = SampleFactory::new(dataset, cfg.spec()?, cfg.style_source, cfg.seed)?;
    let predictor = ModelPredictor {
        model: &cfg.model,
        params,
    };
    evaluate(
        &cfg.experiment_id,
        cfg.format,
        &cfg.model_tag(),
        &predictor,
        &factory,
        cfg.options(),
        cfg.max_test_locations,
    )
}

/// Trains then evaluates. `seconds` is left at zero unless `timing` is set,
/// so that results files stay reproducible.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    timing: bool,
) -> Result<(ResultsRow, ParameterSet<f32>, TrainLog)> {
    let start = Instant::now();
    let (params, log) = train(cfg, dataset)?;
    let mut row = evaluate_model(cfg, &params, dataset)?;
    if timing {
        row.seconds = start.elapsed().as_secs_f64();
    }
    Ok((row, params, log))
}

/// NCC oracle rows: other-moment upper bound plus user views, and the
/// same-moment street-slice set in the upper-bound column.
pub fn baseline_rows(
    dataset: &Dataset,
    spec: FormatSpec,
    same_moment_locations: usize,
) -> Result<Vec<ResultsRow>> {
    let factory = SampleFactory::new(dataset, spec, StyleSource::Pooled, 0)?;
    let opts = InputOptions::default();
    let other = evaluate(
        "ncc",
        spec.format,
        "ncc",
        &NccPredictor,
        &factory,
        opts,
        None,
    )?;
    let same = same_moment_samples(&dataset.manifest, same_moment_locations);
    let same_acc = accuracy(&same, &predict_all(&NccPredictor, &factory, &same, opts)?);
    let mut same_row = other.clone();
    same_row.experiment_id = "ncc_same_moment".to_string();
    same_row.upper_bound_acc = same_acc;
    same_row.n_test = same.len();
    Ok(vec![other, same_row])
}

pub const RESULTS_HEADER: &str =
    "experiment_id,format,model,style,seg,upper_bound_acc,full_acc,day_acc,night_acc,rain_acc,n_test,seconds";

/// CSV text with rows sorted by experiment id.
pub fn results_csv(rows: &[ResultsRow]) -> Result<String> {
    if rows.is_empty() {
        return arg("no result rows to write");
    }
    let mut sorted: Vec<&ResultsRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.experiment_id.cmp(&b.experiment_id));
    let onoff = |b: bool| if b { "on" } else { "off" };
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in sorted {
        writeln!(
            out,
            "{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{},{:.1}",
            r.experiment_id,
            r.format,
            r.model,
            onoff(r.style),
            onoff(r.seg),
            r.upper_bound_acc,
            r.full_acc,
            r.day_acc,
            r.night_acc,
            r.rain_acc,
            r.n_test,
            r.seconds
        )
        .expect("writing to a String");
    }
    Ok(out)
}

pub fn write_results(rows: &[ResultsRow], path: &Path) -> Result<()> {
    let csv = results_csv(rows)?;
    fs::write(path, csv)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, acc: f64) -> ResultsRow {
        ResultsRow {
            experiment_id: id.into(),
            format: Format::D1,
            model: "m".into(),
            style: false,
            seg: true,
            upper_bound_acc: acc,
            full_acc: acc,
            day_acc: acc,
            night_acc: acc,
            rain_acc: acc,
            n_test: 8,
            seconds: 0.0,
            distance_histogram: [0; 5],
        }
    }

    #[test]
    fn csv_sorted_and_formatted() {
        let csv = results_csv(&[row("b", 0.5), row("a", 1.0)]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], RESULTS_HEADER);
        assert!(lines[1].starts_with("a,D1,m,off,on,"));
        assert_eq!(lines[1].matches("1.0000").count(), 5);
        assert!(lines[2].starts_with("b,"));
        assert_eq!(csv, results_csv(&[row("a", 1.0), row("b", 0.5)]).unwrap());
        assert!(results_csv(&[]).is_err());
    }

    #[test]
    fn config_json_round_trip_and_validation() {
        let cfg = ExperimentConfig::new("x", Format::D4, 16).unwrap();
        assert_eq!(cfg.model.variant, Variant::Stacked3D);
        cfg.validate().unwrap();
        let back: ExperimentConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let mut bad = cfg.clone();
        bad.cell = 24;
        assert!(matches!(bad.validate(), Err(crate::Error::Argument(_))));
        let mut bad = cfg;
        bad.model.variant = Variant::Flat2D;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let cfg = ExperimentConfig::new("x", Format::D1, 16).unwrap();
        assert!(scheduled_lr(&cfg, 0, 1000) < scheduled_lr(&cfg, 50, 1000));
        assert!(
            (scheduled_lr(&cfg, 99, 1000)
                - cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * 0.099).cos()))
            .abs()
                < 1e-12
        );
        assert!(scheduled_lr(&cfg, 999, 1000) < 1e-5 * cfg.lr * 10.0);
    }
}
