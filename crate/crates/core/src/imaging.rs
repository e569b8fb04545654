//! Image primitives shared by the rest of the crate.
//!
//! Intensities live in `[0, 1]` as `f64` everywhere inside the pipeline; 8-bit
//! quantization happens only at the file boundary (binary PPM / PGM).

use crate::error::{arg, format, Error, Result};

/// Row-major `H x W x 3` image with channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRgb {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageRgb {
    /// Black image.
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    /// Image filled with one color.
    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let rgb = rgb.map(clamp_unit);
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Wraps raw row-major RGB data, rejecting wrong lengths and values outside `[0, 1]`.
    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return arg(format!(
                "image data length {} does not match {}x{}x3",
                data.len(),
                height,
                width
            ));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return arg(format!(
                "channel value {} at index {i} outside [0, 1]",
                data[i]
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image by evaluating `f(row, col)`; results are clamped to `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for r in 0..height {
            for c in 0..width {
                data.extend_from_slice(&f(r, c).map(clamp_unit));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Writes one pixel, clamping to `[0, 1]`.
    #[inline]
    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb.map(clamp_unit));
    }

    /// Applies `f` to every pixel, clamping the result.
    pub fn map_pixels(&self, mut f: impl FnMut(usize, usize, [f64; 3]) -> [f64; 3]) -> Self {
        Self::from_fn(self.height, self.width, |r, c| f(r, c, self.pixel(r, c)))
    }

    /// Mean over all channels of all pixels.
    pub fn mean_intensity(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Grayscale values `0.299 R + 0.587 G + 0.114 B`, row-major.
    pub fn luma(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| luma(p[0], p[1], p[2]))
            .collect()
    }

    /// Largest absolute channel difference against another image of equal size.
    pub fn max_abs_diff(&self, other: &ImageRgb) -> f64 {
        assert_eq!(
            (self.height, self.width),
            (other.height, other.width),
            "image sizes differ"
        );
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Mean absolute channel difference against another image of equal size.
    pub fn mean_abs_diff(&self, other: &ImageRgb) -> f64 {
        assert_eq!((self.height, self.width), (other.height, other.width));
        if self.data.is_empty() {
            return 0.0;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.data.len() as f64
    }

    /// Rectangular crop; the rectangle must lie inside the image.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return arg(format!(
                "crop {height}x{width} at ({top},{left}) exceeds {}x{}",
                self.height, self.width
            ));
        }
        let mut data = Vec::with_capacity(height * width * 3);
        for r in top..top + height {
            let start = (r * self.width + left) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Rounds every channel to the nearest 8-bit level.
    pub fn quantized(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|&v| f64::from(quantize(v)) / 255.0)
                .collect(),
        }
    }
}

#[inline]
pub(crate) fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[inline]
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Round-half-up to `[0, 255]`.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Per-pixel class labels: 0 background, 1 road, 2 divider.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl SegMask {
    pub const BACKGROUND: u8 = 0;
    pub const ROAD: u8 = 1;
    pub const DIVIDER: u8 = 2;

    pub fn background(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return arg(format!(
                "mask length {} does not match {height}x{width}",
                labels.len()
            ));
        }
        if let Some(v) = labels.iter().find(|&&v| v > Self::DIVIDER) {
            return arg(format!("mask label {v} not in {{0,1,2}}"));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, label: u8) {
        debug_assert!(label <= Self::DIVIDER);
        self.labels[row * self.width + col] = label;
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Binary P5 PGM with levels {0, 128, 255} for background, road, divider.
    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.labels.iter().map(|&l| match l {
            Self::ROAD => 128u8,
            Self::DIVIDER => 255,
            _ => 0,
        }));
        out
    }

    pub fn decode_pgm(bytes: &[u8]) -> Result<Self> {
        let (header, offset) = parse_pnm_header(bytes, b"P5")?;
        let n = header.width * header.height;
        let payload = payload(bytes, offset, n)?;
        let labels = payload
            .iter()
            .enumerate()
            .map(|(i, &b)| match b {
                0 => Ok(Self::BACKGROUND),
                128 => Ok(Self::ROAD),
                255 => Ok(Self::DIVIDER),
                other => format(format!(
                    "mask level {other} at byte offset {} not in {{0,128,255}}",
                    offset + i
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            height: header.height,
            width: header.width,
            labels,
        })
    }
}

/// Per-channel mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// Pools every pixel of every image into one per-channel mean/std.
pub fn channel_stats(imgs: &[ImageRgb]) -> Result<ChannelStats> {
    let n: usize = imgs.iter().map(|im| im.height * im.width).sum();
    if imgs.is_empty() || n == 0 {
        return arg("channel_stats needs at least one non-empty image");
    }
    let mut sum = [0.0f64; 3];
    for im in imgs {
        for p in im.data.chunks_exact(3) {
            for ch in 0..3 {
                sum[ch] += p[ch];
            }
        }
    }
    let mean = sum.map(|s| s / n as f64);
    let mut sq = [0.0f64; 3];
    for im in imgs {
        for p in im.data.chunks_exact(3) {
            for ch in 0..3 {
                let d = p[ch] - mean[ch];
                sq[ch] += d * d;
            }
        }
    }
    Ok(ChannelStats {
        mean,
        std: sq.map(|s| (s / n as f64).sqrt()),
    })
}

/// Binary P6, maxval 255, round-half-up quantization.
pub fn encode_ppm(img: &ImageRgb) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.reserve(img.data.len());
    out.extend(img.data.iter().map(|&v| quantize(v)));
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<ImageRgb> {
    let (header, offset) = parse_pnm_header(bytes, b"P6")?;
    let n = header.width * header.height * 3;
    let payload = payload(bytes, offset, n)?;
    Ok(ImageRgb {
        height: header.height,
        width: header.width,
        data: payload.iter().map(|&b| f64::from(b) / 255.0).collect(),
    })
}

pub fn read_ppm(path: impl AsRef<std::path::Path>) -> Result<ImageRgb> {
    decode_ppm(&std::fs::read(path)?)
}

pub fn write_ppm(path: impl AsRef<std::path::Path>, img: &ImageRgb) -> Result<()> {
    std::fs::write(path, encode_ppm(img)).map_err(Error::from)
}

struct PnmHeader {
    width: usize,
    height: usize,
}

fn payload(bytes: &[u8], offset: usize, n: usize) -> Result<&[u8]> {
    match bytes.get(offset..offset + n) {
        Some(p) => Ok(p),
        None => format(format!(
            "truncated payload at byte offset {}: expected {n} bytes, found {}",
            bytes.len(),
            bytes.len().saturating_sub(offset)
        )),
    }
}

fn parse_pnm_header(bytes: &[u8], magic: &[u8; 2]) -> Result<(PnmHeader, usize)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return format(format!(
            "bad magic at byte offset 0: expected {}",
            String::from_utf8_lossy(magic)
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments between tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return format(format!(
                "expected header integer #{i} at byte offset {start}"
            ));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or_default();
        *field = text.parse().map_err(|_| {
            Error::Format(format!("header integer overflow at byte offset {start}"))
        })?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return format(format!(
            "unsupported maxval {maxval} (only 255) before byte offset {pos}"
        ));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return format(format!(
                "missing whitespace after header at byte offset {pos}"
            ))
        }
    }
    Ok((PnmHeader { width, height }, pos))
}

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn resize_bilinear(img: &ImageRgb, out_h: usize, out_w: usize) -> Result<ImageRgb> {
    if out_h == 0 || out_w == 0 {
        return arg(format!("output size {out_h}x{out_w} must be at least 1x1"));
    }
    if img.height == 0 || img.width == 0 {
        return arg("cannot resize an empty image");
    }
    if out_h == img.height && out_w == img.width {
        return Ok(img.clone());
    }
    let sy = img.height as f64 / out_h as f64;
    let sx = img.width as f64 / out_w as f64;
    let cols: Vec<(usize, usize, f64)> = (0..out_w)
        .map(|j| axis_taps((j as f64 + 0.5) * sx - 0.5, img.width))
        .collect();
    let mut data = Vec::with_capacity(out_h * out_w * 3);
    for i in 0..out_h {
        let (y0, y1, fy) = axis_taps((i as f64 + 0.5) * sy - 0.5, img.height);
        for &(x0, x1, fx) in &cols {
            let p00 = img.pixel(y0, x0);
            let p01 = img.pixel(y0, x1);
            let p10 = img.pixel(y1, x0);
            let p11 = img.pixel(y1, x1);
            for ch in 0..3 {
                let top = lerp(p00[ch], p01[ch], fx);
                let bot = lerp(p10[ch], p11[ch], fx);
                data.push(lerp(top, bot, fy));
            }
        }
    }
    Ok(ImageRgb {
        height: out_h,
        width: out_w,
        data,
    })
}

fn axis_taps(src: f64, len: usize) -> (usize, usize, f64) {
    let s = src.clamp(0.0, (len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, s - i0 as f64)
}

/// `a + (b - a) t`, kept inside `[min(a,b), max(a,b)]` so interpolation never
/// escapes the input range by rounding.
#[inline]
pub(crate) fn lerp(a: f64, b: f64, t: f64) -> f64 {
    let v = a + (b - a) * t;
    if a <= b {
        v.clamp(a, b)
    } else {
        v.clamp(b, a)
    }
}

/// Copies `src` into a clone of `dst` with its top-left corner at `(top, left)`.
pub fn blit(dst: &ImageRgb, src: &ImageRgb, top: usize, left: usize) -> Result<ImageRgb> {
    let mut out = dst.clone();
    blit_in_place(&mut out, src, top, left)?;
    Ok(out)
}

pub(crate) fn blit_in_place(
    dst: &mut ImageRgb,
    src: &ImageRgb,
    top: usize,
    left: usize,
) -> Result<()> {
    if top + src.height > dst.height || left + src.width > dst.width {
        return arg(format!(
            "blit of {}x{} at ({top},{left}) exceeds destination {}x{}",
            src.height, src.width, dst.height, dst.width
        ));
    }
    let row_len = src.width * 3;
    for r in 0..src.height {
        let d = ((top + r) * dst.width + left) * 3;
        dst.data[d..d + row_len].copy_from_slice(&src.data[r * row_len..(r + 1) * row_len]);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn checker(h: usize, w: usize) -> ImageRgb {
        ImageRgb::from_fn(h, w, |r, c| {
            let v = ((r + c) % 2) as f64;
            [v, v, v]
        })
    }

    #[test]
    fn decode_single_red_pixel() {
        let mut bytes = b"P6\n1 1\n255\n".to_vec();
        bytes.extend([255, 0, 0]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img, ImageRgb::from_vec(1, 1, vec![1.0, 0.0, 0.0]).unwrap());
    }

    #[test]
    fn decode_rejects_p5_magic() {
        let err = decode_ppm(b"P5\n1 1\n255\n\0").unwrap_err();
        assert!(
            matches!(err, Error::Format(ref m) if m.contains("offset 0")),
            "{err}"
        );
    }

    #[test]
    fn decode_rejects_truncated_payload() {
        let err = decode_ppm(b"P6\n2 1\n255\n\x01\x02\x03").unwrap_err();
        assert!(
            matches!(err, Error::Format(ref m) if m.contains("truncated")),
            "{err}"
        );
    }

    #[test]
    fn decode_skips_comments() {
        let mut bytes = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        bytes.extend([0, 51, 255]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.pixel(0, 0), [0.0, 0.2, 1.0]);
    }

    #[test]
    fn decode_rejects_other_maxval() {
        assert!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").is_err());
    }

    #[test]
    fn encode_black_image() {
        let bytes = encode_ppm(&ImageRgb::zeros(2, 2));
        let mut expected = b"P6\n2 2\n255\n".to_vec();
        expected.extend([0u8; 12]);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn encode_rounds_half_up() {
        let bytes = encode_ppm(&ImageRgb::filled(1, 1, [0.5, 0.5, 0.5]));
        assert_eq!(&bytes[bytes.len() - 3..], &[128, 128, 128]);
    }

    #[test]
    fn resize_identity_and_average() {
        let img = checker(5, 7);
        assert_eq!(resize_bilinear(&img, 5, 7).unwrap(), img);

        let small = ImageRgb::from_vec(
            2,
            2,
            vec![0.0, 0.1, 0.2, 0.4, 0.5, 0.6, 0.8, 0.9, 1.0, 0.2, 0.2, 0.2],
        )
        .unwrap();
        let out = resize_bilinear(&small, 1, 1).unwrap();
        let expect = [0.35, 0.425, 0.5];
        for (ch, e) in expect.iter().enumerate() {
            assert!((out.pixel(0, 0)[ch] - e).abs() < 1e-15);
        }
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = ImageRgb::filled(6, 9, [0.3, 0.7, 0.1]);
        let out = resize_bilinear(&img, 13, 4).unwrap();
        assert!(out.data().chunks(3).all(|p| p == [0.3, 0.7, 0.1]));
    }

    #[test]
    fn resize_rejects_zero() {
        assert!(matches!(
            resize_bilinear(&checker(2, 2), 0, 3),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn blit_full_and_outside() {
        let dst = ImageRgb::filled(4, 4, [0.2, 0.2, 0.2]);
        let src = checker(4, 4);
        assert_eq!(blit(&dst, &src, 0, 0).unwrap(), src);

        let patch = ImageRgb::filled(2, 2, [1.0, 0.0, 0.0]);
        let out = blit(&dst, &patch, 1, 1).unwrap();
        assert_eq!(out.pixel(0, 0), [0.2, 0.2, 0.2]);
        assert_eq!(out.pixel(3, 3), [0.2, 0.2, 0.2]);
        assert_eq!(out.pixel(2, 2), [1.0, 0.0, 0.0]);
        assert!(matches!(blit(&dst, &patch, 3, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn disjoint_blits_commute() {
        let dst = ImageRgb::zeros(6, 6);
        let a = ImageRgb::filled(2, 3, [1.0, 0.5, 0.0]);
        let b = ImageRgb::filled(3, 2, [0.0, 0.5, 1.0]);
        let ab = blit(&blit(&dst, &a, 0, 0).unwrap(), &b, 3, 4).unwrap();
        let ba = blit(&blit(&dst, &b, 3, 4).unwrap(), &a, 0, 0).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn stats_of_constant_and_two_point() {
        let s = channel_stats(&[ImageRgb::filled(3, 3, [0.25, 0.5, 0.75])]).unwrap();
        assert_eq!(s.mean, [0.25, 0.5, 0.75]);
        assert_eq!(s.std, [0.0, 0.0, 0.0]);

        let s = channel_stats(&[checker(4, 4)]).unwrap();
        assert_eq!(s.mean, [0.5; 3]);
        assert_eq!(s.std, [0.5; 3]);

        assert!(matches!(channel_stats(&[]), Err(Error::Argument(_))));
    }

    #[test]
    fn stats_permutation_invariant() {
        let a = checker(3, 5);
        let b = ImageRgb::filled(2, 2, [0.1, 0.9, 0.4]);
        let s1 = channel_stats(&[a.clone(), b.clone()]).unwrap();
        let s2 = channel_stats(&[b, a]).unwrap();
        for ch in 0..3 {
            assert!((s1.mean[ch] - s2.mean[ch]).abs() < 1e-15);
            assert!((s1.std[ch] - s2.std[ch]).abs() < 1e-15);
        }
    }

    #[test]
    fn pgm_levels_round_trip() {
        let mask = SegMask::from_vec(1, 3, vec![0, 1, 2]).unwrap();
        let bytes = mask.encode_pgm();
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 128, 255]);
        assert_eq!(SegMask::decode_pgm(&bytes).unwrap(), mask);
        assert!(SegMask::from_vec(1, 1, vec![3]).is_err());
    }

    fn arb_image() -> impl Strategy<Value = ImageRgb> {
        (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
            proptest::collection::vec(0.0f64..=1.0, h * w * 3)
                .prop_map(move |d| ImageRgb::from_vec(h, w, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn ppm_round_trip_is_quantization(img in arb_image()) {
            let once = decode_ppm(&encode_ppm(&img)).unwrap();
            prop_assert_eq!(&once, &img.quantized());
            let twice = decode_ppm(&encode_ppm(&once)).unwrap();
            prop_assert_eq!(twice, once);
        }

        #[test]
        fn resize_preserves_range(img in arb_image(), oh in 1usize..9, ow in 1usize..9) {
            let out = resize_bilinear(&img, oh, ow).unwrap();
            let lo = img.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = img.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for &v in out.data() {
                prop_assert!(v >= lo && v <= hi);
            }
        }
    }
}
