//! Equirectangular <-> rectilinear projection and orientation bins.
//!
//! Conventions: camera space is `+z` forward, `+x` right, `+y` down. Azimuth
//! is `atan2(x, z)` in degrees (clockwise seen from above), elevation is
//! `-asin(y)`. A panorama of width `W` places world azimuth `frame_heading`
//! at column index `W/2`; column coordinates are pixel indices (column `c` is
//! sampled at continuous `x = c`) and wrap around, rows are clamped.

use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};
use crate::imaging::{lerp, ImageRgb};

/// Full 360 x 180 degree panorama, `width == 2 * height`.
#[derive(Clone, Debug, PartialEq)]
pub struct EquirectPanorama {
    image: ImageRgb,
    frame_heading: f64,
}

impl EquirectPanorama {
    pub fn new(image: ImageRgb, frame_heading: f64) -> Result<Self> {
        if image.height() == 0 || image.width() != 2 * image.height() {
            return arg(format!(
                "equirectangular panorama must be 2:1, got {}x{}",
                image.width(),
                image.height()
            ));
        }
        if !frame_heading.is_finite() {
            return arg("frame heading must be finite");
        }
        Ok(Self {
            image,
            frame_heading,
        })
    }

    pub fn image(&self) -> &ImageRgb {
        &self.image
    }

    pub fn into_image(self) -> ImageRgb {
        self.image
    }

    pub fn frame_heading(&self) -> f64 {
        self.frame_heading
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    /// Angle spanned by one column, in degrees.
    pub fn degrees_per_column(&self) -> f64 {
        360.0 / self.width() as f64
    }

    /// Bilinear sample at continuous `(x, y)` with azimuth wrap and row clamp.
    pub fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let w = self.width();
        let h = self.height();
        let xw = x.rem_euclid(w as f64);
        let mut x0 = xw.floor() as usize;
        let mut fx = xw - x0 as f64;
        if x0 >= w {
            x0 = 0;
            fx = 0.0;
        }
        let x1 = (x0 + 1) % w;
        let yc = y.clamp(0.0, (h - 1) as f64);
        let y0 = yc.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = yc - y0 as f64;
        let img = &self.image;
        let (p00, p01, p10, p11) = (
            img.pixel(y0, x0),
            img.pixel(y0, x1),
            img.pixel(y1, x0),
            img.pixel(y1, x1),
        );
        std::array::from_fn(|ch| lerp(lerp(p00[ch], p01[ch], fx), lerp(p10[ch], p11[ch], fx), fy))
    }
}

/// Pinhole camera: horizontal field of view and output raster.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub hfov: f64,
    pub out_w: usize,
    pub out_h: usize,
}

impl CameraModel {
    pub fn new(hfov: f64, out_w: usize, out_h: usize) -> Result<Self> {
        let cam = Self { hfov, out_w, out_h };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hfov > 0.0 && self.hfov < 180.0) {
            return arg(format!("hfov {} must lie in (0, 180)", self.hfov));
        }
        if self.out_w == 0 || self.out_h == 0 {
            return arg("camera raster must be at least 1x1");
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        (self.out_w as f64 / 2.0) / (self.hfov.to_radians() / 2.0).tan()
    }
}

/// Unit ray through the center of pixel `(u, v)`.
pub fn pixel_ray(cam: &CameraModel, u: usize, v: usize) -> [f64; 3] {
    let f = cam.focal();
    let x = (u as f64 + 0.5 - cam.out_w as f64 / 2.0) / f;
    let y = (v as f64 + 0.5 - cam.out_h as f64 / 2.0) / f;
    let n = (x * x + y * y + 1.0).sqrt();
    [x / n, y / n, 1.0 / n]
}

/// Azimuth and elevation (degrees) of a camera-space direction.
pub fn dir_to_azel(d: [f64; 3]) -> (f64, f64) {
    let az = d[0].atan2(d[2]).to_degrees();
    let el = -d[1].clamp(-1.0, 1.0).asin().to_degrees();
    (az, el)
}

/// Maps a world azimuth/elevation to continuous panorama coordinates.
pub fn azel_to_equirect(
    az: f64,
    el: f64,
    width: usize,
    height: usize,
    frame_heading: f64,
) -> (f64, f64) {
    let w = width as f64;
    let x = (((az - frame_heading) / 360.0 + 0.5) * w).rem_euclid(w);
    // rem_euclid may round up to exactly w
    let x = if x >= w { 0.0 } else { x };
    let y = ((0.5 - el / 180.0) * height as f64).clamp(0.0, (height - 1) as f64);
    (x, y)
}

pub fn dir_to_equirect(d: [f64; 3], pano: &EquirectPanorama) -> (f64, f64) {
    let (az, el) = dir_to_azel(d);
    azel_to_equirect(az, el, pano.width(), pano.height(), pano.frame_heading)
}

/// Renders the perspective view of `pano` looking at world azimuth `yaw`.
pub fn slice_panorama(pano: &EquirectPanorama, yaw: f64, cam: &CameraModel) -> ImageRgb {
    let rays = camera_azel_grid(cam);
    ImageRgb::from_fn(cam.out_h, cam.out_w, |v, u| {
        let (az, el) = rays[v * cam.out_w + u];
        let (x, y) = azel_to_equirect(
            az + yaw,
            el,
            pano.width(),
            pano.height(),
            pano.frame_heading,
        );
        pano.sample(x, y)
    })
}

/// Camera-relative azimuth/elevation of every pixel ray, row-major.
pub(crate) fn camera_azel_grid(cam: &CameraModel) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(cam.out_w * cam.out_h);
    for v in 0..cam.out_h {
        for u in 0..cam.out_w {
            out.push(dir_to_azel(pixel_ray(cam, u, v)));
        }
    }
    out
}

/// Evenly spaced slice yaws `k * 360 / n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlicePlan {
    pub n_slices: usize,
}

impl Default for SlicePlan {
    fn default() -> Self {
        Self { n_slices: 8 }
    }
}

impl SlicePlan {
    pub fn new(n_slices: usize) -> Result<Self> {
        if n_slices < 2 {
            return arg(format!(
                "slice plan needs at least 2 slices, got {n_slices}"
            ));
        }
        Ok(Self { n_slices })
    }

    pub fn yaw_centers(&self) -> Vec<f64> {
        (0..self.n_slices)
            .map(|k| k as f64 * 360.0 / self.n_slices as f64)
            .collect()
    }
}

/// One slice per yaw center, in yaw order.
pub fn slice_all(pano: &EquirectPanorama, plan: &SlicePlan, cam: &CameraModel) -> Vec<ImageRgb> {
    plan.yaw_centers()
        .into_iter()
        .map(|yaw| slice_panorama(pano, yaw, cam))
        .collect()
}

/// Orientation bin; bin `k` is centered on azimuth `k * 360 / n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OrientationLabel(pub usize);

impl OrientationLabel {
    pub fn bin(self) -> usize {
        self.0
    }

    /// Shortest distance between bins on a ring of `n`.
    pub fn circular_distance(self, other: OrientationLabel, n: usize) -> usize {
        let d = self.0.abs_diff(other.0) % n;
        d.min(n - d)
    }
}

/// Bin containing `theta`; bins are half-open `[center - 180/n, center + 180/n)`.
pub fn azimuth_to_label(theta: f64, n: usize) -> Result<OrientationLabel> {
    if !theta.is_finite() {
        return arg(format!("azimuth {theta} is not finite"));
    }
    if n < 2 {
        return arg(format!("need at least 2 bins, got {n}"));
    }
    let width = 360.0 / n as f64;
    let shifted = (theta.rem_euclid(360.0) + width / 2.0).rem_euclid(360.0);
    let bin = (shifted / width).floor() as usize;
    Ok(OrientationLabel(bin.min(n - 1)))
}

/// Shifts panorama content so that `slice(rotate(p, d), yaw) == slice(p, yaw + d)`.
pub fn rotate_equirect(pano: &EquirectPanorama, delta: f64) -> EquirectPanorama {
    let w = pano.width();
    let shift = delta / 360.0 * w as f64;
    let rounded = shift.round();
    let img = &pano.image;
    let image = if (shift - rounded).abs() < 1e-9 {
        let s = (rounded as i64).rem_euclid(w as i64) as usize;
        ImageRgb::from_fn(img.height(), w, |r, c| img.pixel(r, (c + s) % w))
    } else {
        ImageRgb::from_fn(img.height(), w, |r, c| {
            pano.sample(c as f64 + shift, r as f64)
        })
    };
    EquirectPanorama {
        image,
        frame_heading: pano.frame_heading,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient_pano(h: usize) -> EquirectPanorama {
        let img = ImageRgb::from_fn(h, 2 * h, |r, c| {
            let a = c as f64 / (2 * h) as f64;
            let b = r as f64 / h as f64;
            [a, b, ((c * 7 + r * 3) % 11) as f64 / 10.0]
        });
        EquirectPanorama::new(img, 0.0).unwrap()
    }

    #[test]
    fn center_pixel_ray_is_forward() {
        let cam = CameraModel::new(70.0, 9, 7).unwrap();
        let d = pixel_ray(&cam, 4, 3);
        assert!(d[0].abs() < 1e-15 && d[1].abs() < 1e-15 && (d[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn right_edge_ray_near_45_degrees() {
        let cam = CameraModel::new(90.0, 64, 64).unwrap();
        let d = pixel_ray(&cam, 63, 31);
        let (az, _) = dir_to_azel(d);
        // f = 32, last pixel center sits 31.5 px right of the axis
        let expected = (31.5f64 / 32.0).atan().to_degrees();
        assert!((az - expected).abs() < 1e-9);
        assert!(az < 45.0 && az > 44.0);
    }

    #[test]
    fn mirrored_rays_are_symmetric() {
        let cam = CameraModel::new(80.0, 10, 6).unwrap();
        for u in 0..10 {
            for v in 0..6 {
                let a = pixel_ray(&cam, u, v);
                let b = pixel_ray(&cam, 9 - u, v);
                assert_eq!(a[0], -b[0]);
                assert_eq!(a[1], b[1]);
                assert_eq!(a[2], b[2]);
            }
        }
    }

    #[test]
    fn equirect_mapping_anchors() {
        let pano = gradient_pano(16);
        let (x, y) = dir_to_equirect([0.0, 0.0, 1.0], &pano);
        assert_eq!((x, y), (16.0, 8.0));
        let (_, y) = dir_to_equirect([0.0, -1.0, 0.0], &pano);
        assert_eq!(y, 0.0);
        let (x, _) = dir_to_equirect([1.0, 0.0, 0.0], &pano);
        assert!((x - 24.0).abs() < 1e-12);
    }

    #[test]
    fn panorama_must_be_two_to_one() {
        assert!(EquirectPanorama::new(ImageRgb::zeros(4, 7), 0.0).is_err());
    }

    #[test]
    fn camera_rejects_bad_fov() {
        assert!(CameraModel::new(180.0, 4, 4).is_err());
        assert!(CameraModel::new(0.0, 4, 4).is_err());
        assert!(CameraModel::new(60.0, 0, 4).is_err());
    }

    #[test]
    fn constant_panorama_slices_are_constant() {
        let pano = EquirectPanorama::new(ImageRgb::filled(8, 16, [0.2, 0.4, 0.6]), 0.0).unwrap();
        let cam = CameraModel::new(90.0, 5, 5).unwrap();
        let slices = slice_all(&pano, &SlicePlan::default(), &cam);
        assert_eq!(slices.len(), 8);
        for s in &slices {
            assert!(s.data().chunks(3).all(|p| p == [0.2, 0.4, 0.6]));
            assert_eq!(s, &slices[0]);
        }
    }

    #[test]
    fn bright_pixel_at_east_lands_in_slice_center() {
        // azimuth 90 -> column 3W/4, elevation 0 -> row H/2
        let h = 32;
        let mut img = ImageRgb::zeros(h, 2 * h);
        img.set_pixel(h / 2, 3 * h / 2, [1.0, 1.0, 1.0]);
        let pano = EquirectPanorama::new(img, 0.0).unwrap();
        let cam = CameraModel::new(60.0, 33, 33).unwrap();
        let s = slice_panorama(&pano, 90.0, &cam);
        let mut best = (0, 0, -1.0);
        for r in 0..33 {
            for c in 0..33 {
                let v = s.pixel(r, c)[0];
                if v > best.2 {
                    best = (r, c, v);
                }
            }
        }
        assert_eq!((best.0, best.1), (16, 16));
    }

    #[test]
    fn label_examples() {
        assert_eq!(azimuth_to_label(0.0, 8).unwrap(), OrientationLabel(0));
        assert_eq!(azimuth_to_label(50.0, 8).unwrap(), OrientationLabel(1));
        assert_eq!(azimuth_to_label(337.5, 8).unwrap(), OrientationLabel(0));
        assert_eq!(azimuth_to_label(22.5, 8).unwrap(), OrientationLabel(1));
        assert_eq!(azimuth_to_label(-22.5, 8).unwrap(), OrientationLabel(0));
        assert_eq!(azimuth_to_label(-1e-300, 8).unwrap(), OrientationLabel(0));
        assert!(azimuth_to_label(f64::NAN, 8).is_err());
        assert!(azimuth_to_label(f64::INFINITY, 8).is_err());
    }

    #[test]
    fn rotate_full_turn_and_zero() {
        let p = gradient_pano(8);
        assert_eq!(rotate_equirect(&p, 0.0), p);
        assert_eq!(rotate_equirect(&p, 360.0), p);
        assert_eq!(rotate_equirect(&p, -720.0), p);
    }

    #[test]
    fn rotate_composes_for_integer_columns() {
        let p = gradient_pano(8); // 22.5 degrees per column
        let a = 45.0;
        let b = -112.5;
        assert_eq!(
            rotate_equirect(&rotate_equirect(&p, a), b),
            rotate_equirect(&p, a + b)
        );
    }

    #[test]
    fn slice_all_is_cyclic_under_45_degree_rotation() {
        let p = gradient_pano(16); // 11.25 deg per column, 45 deg = 4 columns
        let cam = CameraModel::new(90.0, 12, 12).unwrap();
        let plan = SlicePlan::default();
        let base = slice_all(&p, &plan, &cam);
        let rot = slice_all(&rotate_equirect(&p, 45.0), &plan, &cam);
        for k in 0..8 {
            assert!(rot[k].max_abs_diff(&base[(k + 1) % 8]) < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn label_shifts_with_rotation(theta in -1000.0f64..1000.0, k in -20i64..20) {
            let base = azimuth_to_label(theta, 8).unwrap().bin() as i64;
            let shifted = azimuth_to_label(theta + k as f64 * 45.0, 8).unwrap().bin() as i64;
            prop_assert_eq!(shifted, (base + k).rem_euclid(8));
        }

        #[test]
        fn bins_partition_circle(theta in 0.0f64..360.0, n in 2usize..16) {
            let bin = azimuth_to_label(theta, n).unwrap().bin();
            let width = 360.0 / n as f64;
            let count = (0..n)
                .filter(|&k| {
                    let lo = k as f64 * width - width / 2.0;
                    let t = if theta >= lo + 360.0 { theta - 360.0 } else { theta };
                    t >= lo && t < lo + width
                })
                .count();
            prop_assert_eq!(count, 1);
            let center = bin as f64 * width;
            let dist = ((theta - center + 540.0).rem_euclid(360.0) - 180.0).abs();
            prop_assert!(dist <= width / 2.0 + 1e-9);
        }
    }
}
