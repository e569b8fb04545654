//! Procedural street world.
//!
//! A scene is a sky gradient, a ground plane crossed by one straight road
//! (with a center divider), and a ring of colored billboards above the
//! horizon. Everything is an analytic function of viewing direction, so the
//! same scene can be rendered as an equirectangular "street-view" panorama
//! or through an arbitrary pinhole "user" camera. Moments perturb billboard
//! azimuths, global lighting and (optionally) add gray occluder boxes;
//! conditions apply day/night/rain photometry on top.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    azimuth_to_label, camera_azel_grid, CameraModel, EquirectPanorama, OrientationLabel,
};
use crate::imaging::{clamp_unit, luma, ImageRgb, SegMask};
use crate::rng::{mix_seed, SeqRng};

pub const MIN_LANDMARKS: usize = 6;
pub const MIN_LANDMARK_SEPARATION_DEG: f64 = 15.0;
pub const MIN_COLOR_DISTANCE: f64 = 0.15;
const MAX_SCENE_ATTEMPTS: usize = 1000;

/// Colored rectangle in azimuth/elevation space, standing above the horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub azimuth: f64,
    /// Elevation of the rectangle center; the rectangle is clipped at the horizon.
    pub elevation: f64,
    pub angular_width: f64,
    pub angular_height: f64,
    pub color: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_seed: u64,
    pub road_heading: f64,
    pub road_half_width_deg: f64,
    pub landmarks: Vec<Landmark>,
    pub sky_top: [f64; 3],
    pub sky_horizon: [f64; 3],
    pub ground: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConditionKind {
    ClearDay,
    ClearNight,
    RainyDay,
}

impl ConditionKind {
    pub const ALL: [ConditionKind; 3] = [Self::ClearDay, Self::ClearNight, Self::RainyDay];

    pub fn tag(self) -> &'static str {
        match self {
            Self::ClearDay => "day",
            Self::ClearNight => "night",
            Self::RainyDay => "rain",
        }
    }
}

/// Photometric weather/illumination model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub kind: ConditionKind,
    /// Multiplies every channel first.
    pub brightness: f64,
    /// Additive per-channel offset.
    pub tint: [f64; 3],
    pub noise_sigma: f64,
    /// Fraction of columns carrying a rain streak.
    pub streak_density: f64,
    /// Blend weight toward luma (rain only).
    pub desaturation: f64,
    /// Contrast factor about 0.5 (rain only).
    pub contrast: f64,
}

impl Condition {
    pub fn clear_day() -> Self {
        Self {
            kind: ConditionKind::ClearDay,
            brightness: 1.0,
            tint: [0.0; 3],
            noise_sigma: 0.0,
            streak_density: 0.0,
            desaturation: 0.0,
            contrast: 1.0,
        }
    }

    pub fn clear_night() -> Self {
        Self {
            kind: ConditionKind::ClearNight,
            brightness: 0.25,
            tint: [0.0, 0.0, 0.05],
            noise_sigma: 0.02,
            streak_density: 0.0,
            desaturation: 0.0,
            contrast: 1.0,
        }
    }

    pub fn rainy_day() -> Self {
        Self {
            kind: ConditionKind::RainyDay,
            brightness: 0.7,
            tint: [0.0; 3],
            noise_sigma: 0.0,
            streak_density: 0.08,
            desaturation: 0.5,
            contrast: 0.7,
        }
    }

    pub fn of(kind: ConditionKind) -> Self {
        match kind {
            ConditionKind::ClearDay => Self::clear_day(),
            ConditionKind::ClearNight => Self::clear_night(),
            ConditionKind::RainyDay => Self::rainy_day(),
        }
    }
}

/// Gray box standing in for a transient object (car, pedestrian).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub azimuth: f64,
    pub elevation: f64,
    pub size: f64,
    pub shade: f64,
}

/// One capture instant of a location.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moment {
    pub moment_seed: u64,
    pub position_jitter_deg: f64,
    pub lighting_scale: f64,
    pub occluders: Vec<Occluder>,
}

impl Moment {
    /// Moment without occluders.
    pub fn new(moment_seed: u64) -> Self {
        let mut rng = SeqRng::new(mix_seed(&[moment_seed, 0x4D4F_4D45]));
        Self {
            moment_seed,
            position_jitter_deg: 2.0,
            lighting_scale: rng.range(0.9, 1.1),
            occluders: Vec::new(),
        }
    }

    /// Moment with 1-3 occluder boxes near the ground.
    pub fn with_occluders(moment_seed: u64) -> Self {
        let mut m = Self::new(moment_seed);
        let mut rng = SeqRng::new(mix_seed(&[moment_seed, 0x4F43_434C]));
        let n = rng.int_inclusive(1, 3);
        m.occluders = (0..n)
            .map(|_| Occluder {
                azimuth: rng.range(0.0, 360.0),
                elevation: rng.range(-12.0, 2.0),
                size: rng.range(6.0, 14.0),
                shade: rng.range(0.35, 0.6),
            })
            .collect();
        m
    }

    /// Azimuth perturbation applied to landmark `index` at this moment.
    pub fn landmark_offset(&self, index: usize) -> f64 {
        let mut rng = SeqRng::new(mix_seed(&[self.moment_seed, 0x4A49_5454, index as u64]));
        rng.range(-self.position_jitter_deg, self.position_jitter_deg)
    }
}

fn circular_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

fn color_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max)
}

/// Expands a seed into a scene satisfying the landmark spacing and color constraints.
pub fn gen_scene(scene_seed: u64) -> Result<SceneSpec> {
    let mut rng = SeqRng::new(scene_seed);
    for _ in 0..MAX_SCENE_ATTEMPTS {
        if let Some(scene) = try_scene(scene_seed, &mut rng) {
            return Ok(scene);
        }
    }
    Err(Error::Generation(format!(
        "scene {scene_seed}: constraints unsatisfied after {MAX_SCENE_ATTEMPTS} attempts"
    )))
}

fn try_scene(scene_seed: u64, rng: &mut SeqRng) -> Option<SceneSpec> {
    let road_heading = rng.range(0.0, 360.0);
    let road_half_width_deg = rng.range(6.0, 12.0);
    let sky_top = [
        rng.range(0.25, 0.45),
        rng.range(0.45, 0.65),
        rng.range(0.75, 0.95),
    ];
    let sky_horizon = [
        rng.range(0.7, 0.85),
        rng.range(0.75, 0.9),
        rng.range(0.85, 0.97),
    ];
    let g = rng.range(0.3, 0.45);
    let ground = [g + rng.range(0.0, 0.08), g, g - rng.range(0.0, 0.08)];

    let count = rng.int_inclusive(8, 12);
    let mut landmarks: Vec<Landmark> = Vec::with_capacity(count);
    for _ in 0..count {
        let azimuth = (0..100).map(|_| rng.range(0.0, 360.0)).find(|&az| {
            landmarks
                .iter()
                .all(|l| circular_gap(l.azimuth, az) >= MIN_LANDMARK_SEPARATION_DEG)
        })?;
        let color = (0..100)
            .map(|_| {
                [
                    rng.range(0.05, 0.95),
                    rng.range(0.05, 0.95),
                    rng.range(0.05, 0.95),
                ]
            })
            .find(|&c| {
                landmarks
                    .iter()
                    .all(|l| color_distance(l.color, c) >= MIN_COLOR_DISTANCE)
                    && color_distance(c, sky_horizon) >= MIN_COLOR_DISTANCE
                    && color_distance(c, ground) >= MIN_COLOR_DISTANCE
            })?;
        landmarks.push(Landmark {
            azimuth,
            elevation: rng.range(6.0, 26.0),
            angular_width: rng.range(10.0, 22.0),
            angular_height: rng.range(10.0, 30.0),
            color,
        });
    }
    // every slice window (90 degrees wide, centered every 45) must see a landmark
    let covered = (0..8).all(|k| {
        landmarks
            .iter()
            .any(|l| circular_gap(l.azimuth, k as f64 * 45.0) <= 40.0)
    });
    if !covered || landmarks.len() < MIN_LANDMARKS {
        return None;
    }
    Some(SceneSpec {
        scene_seed,
        road_heading,
        road_half_width_deg,
        landmarks,
        sky_top,
        sky_horizon,
        ground,
    })
}

const ROAD_COLOR: [f64; 3] = [0.22, 0.22, 0.24];
const DIVIDER_COLOR: [f64; 3] = [0.92, 0.86, 0.45];

impl SceneSpec {
    /// Angular distance (degrees) of a below-horizon direction from the road's center line.
    pub fn road_offset_deg(&self, az: f64, el: f64) -> f64 {
        let (az, el) = (az.to_radians(), el.to_radians());
        let d = [el.cos() * az.sin(), -el.sin(), el.cos() * az.cos()];
        let rh = self.road_heading.to_radians();
        let normal = [rh.cos(), 0.0, -rh.sin()];
        let dot = d[0] * normal[0] + d[2] * normal[2];
        dot.abs().clamp(0.0, 1.0).asin().to_degrees()
    }

    /// Segmentation class of a world direction, ignoring transient objects.
    pub fn road_class(&self, az: f64, el: f64) -> u8 {
        if el >= 0.0 {
            return SegMask::BACKGROUND;
        }
        let off = self.road_offset_deg(az, el);
        if off < 0.1 * self.road_half_width_deg {
            SegMask::DIVIDER
        } else if off < self.road_half_width_deg {
            SegMask::ROAD
        } else {
            SegMask::BACKGROUND
        }
    }

    /// Color and segmentation class seen along world direction `(az, el)` at `moment`,
    /// before any condition photometry.
    pub fn radiance(&self, moment: &Moment, az: f64, el: f64) -> ([f64; 3], u8) {
        let mut label = self.road_class(az, el);
        let mut color = if el >= 0.0 {
            let t = (el / 90.0).clamp(0.0, 1.0).sqrt();
            std::array::from_fn(|i| {
                self.sky_horizon[i] + (self.sky_top[i] - self.sky_horizon[i]) * t
            })
        } else {
            match label {
                SegMask::DIVIDER => DIVIDER_COLOR,
                SegMask::ROAD => ROAD_COLOR,
                _ => {
                    let shade = 0.85 + 0.15 * (-el / 90.0);
                    self.ground.map(|g| g * shade)
                }
            }
        };
        if el >= 0.0 {
            for (i, l) in self.landmarks.iter().enumerate() {
                let center = l.azimuth + moment.landmark_offset(i);
                let bottom = (l.elevation - l.angular_height / 2.0).max(0.0);
                let top = l.elevation + l.angular_height / 2.0;
                if circular_gap(az, center) <= l.angular_width / 2.0 && el >= bottom && el <= top {
                    let shade = 0.85 + 0.15 * (el - bottom) / (top - bottom).max(1e-9);
                    color = l.color.map(|c| c * shade);
                }
            }
        }
        for o in &moment.occluders {
            if circular_gap(az, o.azimuth) <= o.size / 2.0
                && (el - o.elevation).abs() <= o.size / 4.0
            {
                color = [o.shade; 3];
                label = SegMask::BACKGROUND;
            }
        }
        (color.map(|c| clamp_unit(c * moment.lighting_scale)), label)
    }
}

/// Renders the scene as a `2h x h` panorama (frame heading 0) plus its road mask.
pub fn render_equirect(
    scene: &SceneSpec,
    cond: &Condition,
    moment: &Moment,
    h: usize,
) -> Result<(EquirectPanorama, SegMask)> {
    if h < 32 {
        return Err(Error::Argument(format!(
            "panorama height {h} must be at least 32"
        )));
    }
    let w = 2 * h;
    let mut mask = SegMask::background(h, w);
    let img = ImageRgb::from_fn(h, w, |r, c| {
        let az = (c as f64 / w as f64 - 0.5) * 360.0;
        let el = (0.5 - r as f64 / h as f64) * 180.0;
        let (rgb, label) = scene.radiance(moment, az, el);
        mask.set(r, c, label);
        rgb
    });
    let noise_seed = mix_seed(&[scene.scene_seed, moment.moment_seed, 0x5041_4E4F]);
    let img = apply_condition(&img, cond, noise_seed);
    Ok((EquirectPanorama::new(img, 0.0)?, mask))
}

/// Renders the analytic scene through a pinhole camera facing world azimuth `heading`.
pub fn render_userview(
    scene: &SceneSpec,
    cond: &Condition,
    moment: &Moment,
    heading: f64,
    cam: &CameraModel,
) -> Result<(ImageRgb, SegMask, OrientationLabel)> {
    cam.validate()?;
    let label = azimuth_to_label(heading, 8)?;
    let rays = camera_azel_grid(cam);
    let mut mask = SegMask::background(cam.out_h, cam.out_w);
    let img = ImageRgb::from_fn(cam.out_h, cam.out_w, |v, u| {
        let (az, el) = rays[v * cam.out_w + u];
        let (rgb, l) = scene.radiance(moment, az + heading, el);
        mask.set(v, u, l);
        rgb
    });
    let noise_seed = mix_seed(&[
        scene.scene_seed,
        moment.moment_seed,
        heading.to_bits(),
        0x5553_4552,
    ]);
    Ok((apply_condition(&img, cond, noise_seed), mask, label))
}

/// Applies condition photometry. Clear day is the identity.
pub fn apply_condition(img: &ImageRgb, cond: &Condition, noise_seed: u64) -> ImageRgb {
    match cond.kind {
        ConditionKind::ClearDay => img.clone(),
        ConditionKind::ClearNight => {
            let mut rng = SeqRng::new(noise_seed);
            img.map_pixels(|_, _, p| {
                std::array::from_fn(|ch| {
                    p[ch] * cond.brightness + cond.tint[ch] + cond.noise_sigma * rng.normal()
                })
            })
        }
        ConditionKind::RainyDay => {
            let mut rng = SeqRng::new(noise_seed);
            let h = img.height();
            // (start row, end row) per streaked column
            let streaks: Vec<Option<(usize, usize)>> = (0..img.width())
                .map(|_| {
                    let hit = rng.unit() < cond.streak_density;
                    let len = ((h as f64) * rng.range(0.2, 0.5)).ceil() as usize;
                    let start = rng.int_inclusive(0, h.saturating_sub(len));
                    hit.then_some((start, (start + len).min(h)))
                })
                .collect();
            img.map_pixels(|r, c, p| {
                let y = luma(p[0], p[1], p[2]) * cond.brightness;
                std::array::from_fn(|ch| {
                    let v = p[ch] * cond.brightness + cond.tint[ch];
                    let v = v + (y - v) * cond.desaturation;
                    let v = 0.5 + (v - 0.5) * cond.contrast;
                    match streaks[c] {
                        Some((s, e)) if r >= s && r < e => v + (0.85 - v) * 0.35,
                        _ => v,
                    }
                })
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{slice_all, slice_panorama, SlicePlan};
    use crate::imaging::encode_ppm;

    #[test]
    fn scene_is_deterministic_and_constrained() {
        for seed in 0..50u64 {
            let a = gen_scene(seed).unwrap();
            assert_eq!(a, gen_scene(seed).unwrap());
            assert!(a.landmarks.len() >= MIN_LANDMARKS);
            for (i, l) in a.landmarks.iter().enumerate() {
                assert!((0.0..=40.0).contains(&l.elevation));
                for m in &a.landmarks[i + 1..] {
                    assert!(circular_gap(l.azimuth, m.azimuth) >= MIN_LANDMARK_SEPARATION_DEG);
                    assert!(color_distance(l.color, m.color) >= MIN_COLOR_DISTANCE);
                }
            }
        }
    }

    #[test]
    fn different_seeds_differ() {
        let az = |s: u64| {
            let mut v: Vec<f64> = gen_scene(s)
                .unwrap()
                .landmarks
                .iter()
                .map(|l| l.azimuth)
                .collect();
            v.sort_by(f64::total_cmp);
            v
        };
        assert_ne!(az(1), az(2));
    }

    #[test]
    fn render_is_byte_deterministic() {
        let scene = gen_scene(11).unwrap();
        let m = Moment::new(3);
        for cond in ConditionKind::ALL.map(Condition::of) {
            let (a, ma) = render_equirect(&scene, &cond, &m, 32).unwrap();
            let (b, mb) = render_equirect(&scene, &cond, &m, 32).unwrap();
            assert_eq!(encode_ppm(a.image()), encode_ppm(b.image()));
            assert_eq!(ma, mb);
        }
    }

    #[test]
    fn condition_mean_ordering() {
        for seed in 0..20u64 {
            let scene = gen_scene(seed).unwrap();
            let m = Moment::new(seed + 100);
            let mean = |k| {
                render_equirect(&scene, &Condition::of(k), &m, 32)
                    .unwrap()
                    .0
                    .image()
                    .mean_intensity()
            };
            let (day, night, rain) = (
                mean(ConditionKind::ClearDay),
                mean(ConditionKind::ClearNight),
                mean(ConditionKind::RainyDay),
            );
            assert!(
                night < rain && rain < day,
                "seed {seed}: {night} {rain} {day}"
            );
        }
    }

    #[test]
    fn night_on_white() {
        let white = ImageRgb::filled(16, 16, [1.0; 3]);
        let out = apply_condition(&white, &Condition::clear_night(), 9);
        let stats = crate::imaging::channel_stats(std::slice::from_ref(&out)).unwrap();
        assert!((stats.mean[0] - 0.25).abs() < 0.01);
        assert!((stats.mean[1] - 0.25).abs() < 0.01);
        assert!((stats.mean[2] - 0.30).abs() < 0.01);
        assert!(stats.std[0] > 0.01 && stats.std[0] < 0.03);
        assert_eq!(out, apply_condition(&white, &Condition::clear_night(), 9));
        assert_ne!(out, apply_condition(&white, &Condition::clear_night(), 10));
    }

    #[test]
    fn clear_day_is_identity() {
        let img = ImageRgb::from_fn(5, 5, |r, c| [r as f64 / 5.0, c as f64 / 5.0, 0.5]);
        assert_eq!(apply_condition(&img, &Condition::clear_day(), 1), img);
    }

    #[test]
    fn mask_lies_in_road_band() {
        let scene = gen_scene(5).unwrap();
        let (_, mask) =
            render_equirect(&scene, &Condition::clear_day(), &Moment::new(1), 64).unwrap();
        let (h, w) = (64usize, 128usize);
        assert!(mask.count(SegMask::ROAD) > 0 && mask.count(SegMask::DIVIDER) > 0);
        for r in 0..h {
            for c in 0..w {
                let l = mask.get(r, c);
                if l != SegMask::BACKGROUND {
                    let az = (c as f64 / w as f64 - 0.5) * 360.0;
                    let el = (0.5 - r as f64 / h as f64) * 180.0;
                    assert!(el < 0.0);
                    assert!(scene.road_offset_deg(az, el) < scene.road_half_width_deg);
                }
            }
        }
    }

    #[test]
    fn context_slices_are_pairwise_distinct() {
        let cam = CameraModel::new(90.0, 32, 32).unwrap();
        for seed in 0..30u64 {
            let scene = gen_scene(seed).unwrap();
            let (pano, _) =
                render_equirect(&scene, &Condition::clear_day(), &Moment::new(0), 128).unwrap();
            let slices = slice_all(&pano, &SlicePlan::default(), &cam);
            for i in 0..8 {
                for j in i + 1..8 {
                    assert!(
                        slices[i].max_abs_diff(&slices[j]) > 0.1,
                        "seed {seed} slices {i},{j}"
                    );
                }
            }
        }
    }

    #[test]
    fn userview_forward_column_matches_scene() {
        let scene = gen_scene(8).unwrap();
        let m = Moment::new(2);
        let cam = CameraModel::new(60.0, 17, 17).unwrap();
        let (img, _, label) =
            render_userview(&scene, &Condition::clear_day(), &m, 0.0, &cam).unwrap();
        assert_eq!(label, OrientationLabel(0));
        for v in 0..17 {
            let (_, el) = crate::geometry::dir_to_azel(crate::geometry::pixel_ray(&cam, 8, v));
            assert_eq!(img.pixel(v, 8), scene.radiance(&m, 0.0, el).0);
        }
        let (_, _, label) =
            render_userview(&scene, &Condition::clear_day(), &m, 50.0, &cam).unwrap();
        assert_eq!(label, OrientationLabel(1));
    }

    #[test]
    fn userview_agrees_with_panorama_slice() {
        let cam = CameraModel::new(90.0, 32, 32).unwrap();
        for seed in 0..10u64 {
            let scene = gen_scene(seed).unwrap();
            let m = Moment::new(seed);
            let (pano, _) = render_equirect(&scene, &Condition::clear_day(), &m, 128).unwrap();
            for heading in [0.0, 45.0, 137.0, 300.0] {
                let (uv, _, _) =
                    render_userview(&scene, &Condition::clear_day(), &m, heading, &cam).unwrap();
                let sl = slice_panorama(&pano, heading, &cam);
                let mad = uv.mean_abs_diff(&sl);
                assert!(mad < 0.05, "seed {seed} heading {heading}: {mad}");
            }
        }
    }

    #[test]
    fn landmark_at_east_centers_in_slice() {
        // a scene with one saturated landmark at azimuth 90
        let mut scene = gen_scene(3).unwrap();
        for l in &mut scene.landmarks {
            l.color = [0.3, 0.3, 0.3];
        }
        scene.landmarks[0] = Landmark {
            azimuth: 90.0,
            elevation: 10.0,
            angular_width: 12.0,
            angular_height: 16.0,
            color: [1.0, 0.0, 1.0],
        };
        let m = Moment {
            position_jitter_deg: 0.0,
            lighting_scale: 1.0,
            ..Moment::new(0)
        };
        let (pano, _) = render_equirect(&scene, &Condition::clear_day(), &m, 128).unwrap();
        let cam = CameraModel::new(90.0, 33, 33).unwrap();
        let s = slice_panorama(&pano, 90.0, &cam);
        // horizontal centroid of magenta pixels
        let (mut sum, mut n) = (0.0, 0.0);
        for r in 0..33 {
            for c in 0..33 {
                let p = s.pixel(r, c);
                if p[0] > 0.8 && p[1] < 0.2 && p[2] > 0.8 {
                    sum += c as f64;
                    n += 1.0;
                }
            }
        }
        assert!(n > 0.0);
        assert!((sum / n - 16.0).abs() <= 0.5, "centroid {}", sum / n);
    }

    #[test]
    fn occluders_only_when_requested() {
        assert!(Moment::new(4).occluders.is_empty());
        let m = Moment::with_occluders(4);
        assert!(!m.occluders.is_empty() && m.occluders.len() <= 3);
    }
}
