use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::compose::{compose, ComposedInput, FormatSpec, N_CONTEXTS};
use crate::error::{Error, Result};
use crate::geometry::{
    azimuth_to_label, slice_all, slice_panorama, CameraModel, OrientationLabel, SlicePlan,
};
use crate::imaging::{luma, resize_bilinear, ImageRgb, SegMask};
use crate::rng::{mix_seed, SeqRng};
use crate::transforms::{road_overlay, style_normalize, StyleReference};
use crate::world::{apply_condition, render_userview, Condition, ConditionKind};

use super::dataset::{Dataset, DatasetManifest, Split};

const TRAIN_TAG: u64 = 0x5452_4149;
const STYLE_TAG: u64 = 0x5354_594C;
const STREET_NOISE_TAG: u64 = 0x5354_5254;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSource {
    /// Slice of a clear-day street panorama.
    StreetSlice,
    /// Pinhole render of the scene through the user camera.
    UserView,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub location_id: usize,
    pub target_source: TargetSource,
    pub condition: ConditionKind,
    pub heading: f64,
    pub label: OrientationLabel,
    /// Moment the target is captured at.
    pub target_moment: u64,
    /// Moment the contexts come from (always the reference moment).
    pub context_moment: u64,
}

/// Which street slices seed the style reference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleSource {
    /// Statistics pooled over every training context slice.
    #[default]
    Pooled,
    /// One training slice picked by the experiment seed.
    Single,
}

/// Per-sample target treatment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct InputOptions {
    pub use_style: bool,
    pub use_seg: bool,
}

/// One test sample per bin per test location, at the manifest's street or
/// user headings depending on the source.
pub fn test_samples(
    manifest: &DatasetManifest,
    source: TargetSource,
    condition: ConditionKind,
    max_locations: Option<usize>,
) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for loc in manifest
        .split(Split::Test)
        .take(max_locations.unwrap_or(usize::MAX))
    {
        let headings = match source {
            TargetSource::StreetSlice => &loc.street_headings,
            TargetSource::UserView => &loc.user_headings,
        };
        for &heading in headings {
            out.push(Sample {
                location_id: loc.location_id,
                target_source: source,
                condition,
                heading,
                label: azimuth_to_label(heading, manifest.n_bins)?,
                target_moment: loc.other_moment(),
                context_moment: loc.reference_moment(),
            });
        }
    }
    Ok(out)
}

/// Street slices of the reference moment at exact bin centers: each target
/// coincides with one context.
pub fn same_moment_samples(manifest: &DatasetManifest, n_locations: usize) -> Vec<Sample> {
    let mut out = Vec::new();
    for loc in manifest.split(Split::Test).take(n_locations) {
        for k in 0..manifest.n_bins {
            out.push(Sample {
                location_id: loc.location_id,
                target_source: TargetSource::StreetSlice,
                condition: ConditionKind::ClearDay,
                heading: k as f64 * 360.0 / manifest.n_bins as f64,
                label: OrientationLabel(k),
                target_moment: loc.reference_moment(),
                context_moment: loc.reference_moment(),
            });
        }
    }
    out
}

/// Training item: a sample plus the cyclic shift applied to its contexts.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub sample: Sample,
    pub roll: usize,
}

/// One item per bin per moment per training location, with headings redrawn
/// inside `±jitter` of the bin center for every epoch. Order is shuffled.
pub fn train_items(
    manifest: &DatasetManifest,
    epoch: usize,
    seed: u64,
    jitter: f64,
    context_roll: bool,
    max_locations: Option<usize>,
) -> Result<Vec<TrainItem>> {
    let mut rng = SeqRng::new(mix_seed(&[seed, TRAIN_TAG, epoch as u64]));
    let mut out = Vec::new();
    for loc in manifest
        .split(Split::Train)
        .take(max_locations.unwrap_or(usize::MAX))
    {
        for &moment in &loc.moments {
            for k in 0..manifest.n_bins {
                let center = k as f64 * 360.0 / manifest.n_bins as f64;
                let heading = (center + rng.range(-jitter, jitter)).rem_euclid(360.0);
                let roll = if context_roll {
                    rng.int_inclusive(0, N_CONTEXTS - 1)
                } else {
                    0
                };
                out.push(TrainItem {
                    sample: Sample {
                        location_id: loc.location_id,
                        target_source: TargetSource::StreetSlice,
                        condition: ConditionKind::ClearDay,
                        heading,
                        label: azimuth_to_label(heading, manifest.n_bins)?,
                        target_moment: moment,
                        context_moment: loc.reference_moment(),
                    },
                    roll,
                });
            }
        }
    }
    for i in (1..out.len()).rev() {
        let j = rng.int_inclusive(0, i);
        out.swap(i, j);
    }
    Ok(out)
}

/// Builds composed inputs for one format: caches every location's context
/// slices and the style reference.
#[derive(Clone, Debug)]
pub struct SampleFactory<'a> {
    dataset: &'a Dataset,
    spec: FormatSpec,
    slice_cam: CameraModel,
    user_cam: CameraModel,
    contexts: Vec<Vec<ImageRgb>>,
    index: HashMap<usize, usize>,
    style: StyleReference,
}

impl<'a> SampleFactory<'a> {
    pub fn new(
        dataset: &'a Dataset,
        spec: FormatSpec,
        style_source: StyleSource,
        seed: u64,
    ) -> Result<Self> {
        let slice_cam = dataset.manifest.slice_camera(spec.cell)?;
        let user_cam = dataset.manifest.user_camera(spec.cell)?;
        let plan = SlicePlan::new(dataset.manifest.n_bins)?;
        let mut contexts = Vec::with_capacity(dataset.locations.len());
        let mut index = HashMap::new();
        for (i, loc) in dataset.locations.iter().enumerate() {
            let (_, pano) = loc.moment(loc.entry.reference_moment())?;
            contexts.push(slice_all(pano, &plan, &slice_cam));
            index.insert(loc.entry.location_id, i);
        }
        let train: Vec<ImageRgb> = dataset
            .locations
            .iter()
            .zip(&contexts)
            .filter(|(l, _)| l.entry.split == Split::Train)
            .flat_map(|(_, c)| c.iter().cloned())
            .collect();
        let style = match style_source {
            StyleSource::Pooled => StyleReference::build(&train)?,
            StyleSource::Single => {
                if train.is_empty() {
                    return Err(Error::Argument(
                        "no training slices for a style reference".into(),
                    ));
                }
                let pick =
                    SeqRng::new(mix_seed(&[seed, STYLE_TAG])).int_inclusive(0, train.len() - 1);
                StyleReference::build(std::slice::from_ref(&train[pick]))?
            }
        };
        Ok(Self {
            dataset,
            spec,
            slice_cam,
            user_cam,
            contexts,
            index,
            style,
        })
    }

    pub fn spec(&self) -> FormatSpec {
        self.spec
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    pub fn style_reference(&self) -> &StyleReference {
        &self.style
    }

    /// Reference-moment slices at the bin centers, in bin order.
    pub fn contexts(&self, location_id: usize) -> Result<&[ImageRgb]> {
        self.index
            .get(&location_id)
            .map(|&i| self.contexts[i].as_slice())
            .ok_or_else(|| Error::NotFound(format!("location {location_id} is not in the dataset")))
    }

    /// Raw target image and its road mask.
    pub fn target(&self, s: &Sample) -> Result<(ImageRgb, SegMask)> {
        match s.target_source {
            TargetSource::StreetSlice => Ok((self.target_image(s)?, self.street_mask(s)?)),
            TargetSource::UserView => {
                let loc = self.dataset.location(s.location_id)?;
                let (moment, _) = loc.moment(s.target_moment)?;
                let cond = Condition::of(s.condition);
                let (img, mask, _) =
                    render_userview(&loc.scene, &cond, moment, s.heading, &self.user_cam)?;
                Ok((img, mask))
            }
        }
    }

    /// Raw target image without its mask.
    pub fn target_image(&self, s: &Sample) -> Result<ImageRgb> {
        let loc = self.dataset.location(s.location_id)?;
        let (moment, pano) = loc.moment(s.target_moment)?;
        let cond = Condition::of(s.condition);
        match s.target_source {
            TargetSource::StreetSlice => {
                let img = slice_panorama(pano, s.heading, &self.slice_cam);
                if s.condition == ConditionKind::ClearDay {
                    return Ok(img);
                }
                let noise = mix_seed(&[
                    loc.entry.scene_seed,
                    s.target_moment,
                    s.heading.to_bits(),
                    STREET_NOISE_TAG,
                ]);
                Ok(apply_condition(&img, &cond, noise))
            }
            TargetSource::UserView => {
                let (img, _, _) =
                    render_userview(&loc.scene, &cond, moment, s.heading, &self.user_cam)?;
                Ok(img)
            }
        }
    }

    fn street_mask(&self, s: &Sample) -> Result<SegMask> {
        let loc = self.dataset.location(s.location_id)?;
        let (moment, _) = loc.moment(s.target_moment)?;
        let (_, mask, _) = render_userview(
            &loc.scene,
            &Condition::clear_day(),
            moment,
            s.heading,
            &self.slice_cam,
        )?;
        Ok(mask)
    }

    /// Target after the optional style and overlay steps, in that order.
    pub fn treated_target(&self, s: &Sample, opts: InputOptions) -> Result<ImageRgb> {
        if !opts.use_seg {
            let img = self.target_image(s)?;
            return Ok(if opts.use_style {
                style_normalize(&img, &self.style).image
            } else {
                img
            });
        }
        let (mut img, mask) = self.target(s)?;
        if opts.use_style {
            img = style_normalize(&img, &self.style).image;
        }
        road_overlay(&img, &mask)
    }

    /// Composed input and label; contexts are rotated by `roll` bins and the
    /// label follows.
    pub fn input(
        &self,
        s: &Sample,
        opts: InputOptions,
        roll: usize,
    ) -> Result<(ComposedInput, OrientationLabel)> {
        let target = self.treated_target(s, opts)?;
        let ctx = self.contexts(s.location_id)?;
        let n = ctx.len();
        let rolled: Vec<ImageRgb> = (0..n).map(|j| ctx[(j + roll) % n].clone()).collect();
        let label = OrientationLabel((s.label.0 + n - roll % n) % n);
        Ok((compose(self.spec, &target, &rolled)?, label))
    }
}

/// Composed input for `s` under the experiment's treatment flags.
pub fn make_sample_input(
    s: &Sample,
    cfg: &super::ExperimentConfig,
    factory: &SampleFactory<'_>,
) -> Result<(ComposedInput, OrientationLabel)> {
    let opts = InputOptions {
        use_style: cfg.use_style,
        use_seg: cfg.use_seg,
    };
    factory.input(s, opts, 0)
}

/// Pearson correlation of luma between the target and each context; the
/// best match wins, ties and undefined correlations go to the lowest index.
pub fn ncc_baseline(target: &ImageRgb, contexts: &[ImageRgb]) -> Result<OrientationLabel> {
    let t = centered_luma(target);
    let mut best = 0;
    let mut best_r = f64::NEG_INFINITY;
    for (k, c) in contexts.iter().enumerate() {
        let c = if (c.height(), c.width()) == (target.height(), target.width()) {
            c.clone()
        } else {
            resize_bilinear(c, target.height(), target.width())?
        };
        let r = match (&t, centered_luma(&c)) {
            (Some((tv, tn)), Some((cv, cn))) => {
                tv.iter().zip(&cv).map(|(a, b)| a * b).sum::<f64>() / (tn * cn)
            }
            _ => f64::NAN,
        };
        if r > best_r {
            best_r = r;
            best = k;
        }
    }
    Ok(OrientationLabel(best))
}

/// Mean-removed luma and its norm, or `None` for a constant image.
fn centered_luma(img: &ImageRgb) -> Option<(Vec<f64>, f64)> {
    let y: Vec<f64> = img
        .data()
        .chunks_exact(3)
        .map(|p| luma(p[0], p[1], p[2]))
        .collect();
    let mean = y.iter().sum::<f64>() / y.len().max(1) as f64;
    let v: Vec<f64> = y.iter().map(|a| a - mean).collect();
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    (norm > 1e-12).then_some((v, norm))
}
