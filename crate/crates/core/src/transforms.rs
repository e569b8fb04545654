//! Inference-time preprocessors: per-channel style matching toward a
//! reference photometry, and a solid-color road overlay.
//!
//! When both are used, style normalization runs first so the overlay colors
//! stay exact.

use std::fmt;
use std::str::FromStr;

use crate::error::{arg, format, Error, Result};
use crate::imaging::{channel_stats, ChannelStats, ImageRgb, SegMask};

const MIN_STD: f64 = 1e-6;

pub const ROAD_RGB: [f64; 3] = [0.0, 1.0, 0.0];
pub const DIVIDER_RGB: [f64; 3] = [1.0, 0.0, 0.0];

/// Target statistics for [`style_normalize`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StyleReference {
    pub stats: ChannelStats,
    pub source_count: usize,
}

impl StyleReference {
    /// Pools all pixels of `imgs`. A constant channel is rejected.
    pub fn build(imgs: &[ImageRgb]) -> Result<Self> {
        if imgs.is_empty() {
            return arg("style reference needs at least one image");
        }
        let stats = channel_stats(imgs)?;
        if let Some(ch) = stats.std.iter().position(|&s| s <= MIN_STD) {
            return arg(format!(
                "style reference is degenerate: channel {ch} has zero spread"
            ));
        }
        Ok(Self {
            stats,
            source_count: imgs.len(),
        })
    }
}

/// `source_count mean_r mean_g mean_b std_r std_g std_b`, full precision.
impl fmt::Display for StyleReference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [mr, mg, mb] = self.stats.mean;
        let [sr, sg, sb] = self.stats.std;
        write!(
            f,
            "{} {mr:?} {mg:?} {mb:?} {sr:?} {sg:?} {sb:?}",
            self.source_count
        )
    }
}

impl FromStr for StyleReference {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let fields: Vec<&str> = s.split_whitespace().collect();
        if fields.len() != 7 {
            return format(format!(
                "style reference line needs 7 numbers, found {}",
                fields.len()
            ));
        }
        let source_count: usize = fields[0]
            .parse()
            .map_err(|_| Error::Format(format!("bad source count '{}'", fields[0])))?;
        let mut v = [0.0f64; 6];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f
                .parse()
                .map_err(|_| Error::Format(format!("bad style statistic '{f}'")))?;
        }
        if source_count == 0 || v[3..].iter().any(|&s| s.is_nan() || s <= MIN_STD) {
            return format("style reference needs a positive source count and spreads");
        }
        Ok(Self {
            stats: ChannelStats {
                mean: [v[0], v[1], v[2]],
                std: [v[3], v[4], v[5]],
            },
            source_count,
        })
    }
}

/// Result of [`style_normalize`].
#[derive(Clone, Debug, PartialEq)]
pub struct Styled {
    pub image: ImageRgb,
    /// Input had a constant channel and was returned unchanged.
    pub degenerate: bool,
    /// Fraction of output values that hit 0 or 1.
    pub clamp_fraction: f64,
}

/// Matches each channel's global mean and standard deviation to `reference`.
pub fn style_normalize(img: &ImageRgb, reference: &StyleReference) -> Styled {
    let own = match channel_stats(std::slice::from_ref(img)) {
        Ok(s) if s.std.iter().all(|&v| v > MIN_STD) => s,
        _ => {
            return Styled {
                image: img.clone(),
                degenerate: true,
                clamp_fraction: 0.0,
            }
        }
    };
    let gain: [f64; 3] = std::array::from_fn(|ch| reference.stats.std[ch] / own.std[ch]);
    let mut clamped = 0usize;
    let image = img.map_pixels(|_, _, p| {
        std::array::from_fn(|ch| {
            let v = (p[ch] - own.mean[ch]) * gain[ch] + reference.stats.mean[ch];
            if !(0.0..=1.0).contains(&v) {
                clamped += 1;
            }
            v.clamp(0.0, 1.0)
        })
    });
    let total = img.data().len().max(1);
    Styled {
        image,
        degenerate: false,
        clamp_fraction: clamped as f64 / total as f64,
    }
}

/// Paints road pixels green and divider pixels red; everything else is kept.
pub fn road_overlay(img: &ImageRgb, mask: &SegMask) -> Result<ImageRgb> {
    if (mask.height(), mask.width()) != (img.height(), img.width()) {
        return arg(format!(
            "mask is {}x{} but image is {}x{}",
            mask.height(),
            mask.width(),
            img.height(),
            img.width()
        ));
    }
    Ok(img.map_pixels(|r, c, p| match mask.get(r, c) {
        SegMask::ROAD => ROAD_RGB,
        SegMask::DIVIDER => DIVIDER_RGB,
        _ => p,
    }))
}
