//! Target + context input formats.
//!
//! | format | layout                                             | tensor          |
//! |--------|----------------------------------------------------|-----------------|
//! | D1     | 3x3 grid, target in the center cell                | 1 x 3c x 3c x 3 |
//! | D2     | 4x4 grid, rows 0/2 contexts, rows 1/3 target copies | 1 x 4c x 4c x 3 |
//! | D3     | frames `[target, c0 .. c7]`                        | 9 x c x c x 3   |
//! | D4     | frames `[target, c0, target, c1, .., target, c7]` | 16 x c x c x 3  |
//!
//! D1 cells, row-major: `c0 c1 c2 / c3 T c4 / c5 c6 c7`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{arg, format, Error, Result};
use crate::imaging::{blit_in_place, resize_bilinear, ImageRgb};

pub const N_CONTEXTS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    D1,
    D2,
    D3,
    D4,
}

impl Format {
    pub const ALL: [Format; 4] = [Format::D1, Format::D2, Format::D3, Format::D4];

    /// Frame count T.
    pub fn frames(self) -> usize {
        match self {
            Format::D1 | Format::D2 => 1,
            Format::D3 => 9,
            Format::D4 => 16,
        }
    }

    /// Cells per side of the single frame for grid formats, 1 for stacked ones.
    pub fn grid(self) -> usize {
        match self {
            Format::D1 => 3,
            Format::D2 => 4,
            Format::D3 | Format::D4 => 1,
        }
    }

    pub fn is_stacked(self) -> bool {
        matches!(self, Format::D3 | Format::D4)
    }

    /// Cell size of the full-scale configuration.
    pub fn paper_cell(self) -> usize {
        match self {
            Format::D1 => 128,
            Format::D2 => 96,
            Format::D3 | Format::D4 => 224,
        }
    }

    /// Cell size of the desk-scale configuration.
    pub fn toy_cell(self) -> usize {
        match self {
            Format::D1 => 32,
            Format::D2 => 24,
            Format::D3 | Format::D4 => 32,
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Format::D1 => "D1",
            Format::D2 => "D2",
            Format::D3 => "D3",
            Format::D4 => "D4",
        };
        f.write_str(s)
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "d1" => Ok(Format::D1),
            "d2" => Ok(Format::D2),
            "d3" => Ok(Format::D3),
            "d4" => Ok(Format::D4),
            other => arg(format!("unknown input format '{other}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FormatSpec {
    pub format: Format,
    pub cell: usize,
}

impl FormatSpec {
    pub fn new(format: Format, cell: usize) -> Result<Self> {
        if cell == 0 {
            return arg("cell size must be positive");
        }
        Ok(Self { format, cell })
    }

    pub fn paper(format: Format) -> Self {
        Self {
            format,
            cell: format.paper_cell(),
        }
    }

    pub fn toy(format: Format) -> Self {
        Self {
            format,
            cell: format.toy_cell(),
        }
    }

    pub fn frame_side(&self) -> usize {
        self.cell * self.format.grid()
    }

    /// `[T, H, W, 3]`.
    pub fn shape(&self) -> [usize; 4] {
        let side = self.frame_side();
        [self.format.frames(), side, side, 3]
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Target,
    Context(usize),
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Target => f.write_str("target"),
            Role::Context(k) => write!(f, "context_{k}"),
        }
    }
}

/// Where one constituent image lands: frame index and cell row/column inside it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub role: Role,
    pub frame: usize,
    pub row: usize,
    pub col: usize,
}

/// Cell/frame to role mapping, ordered by frame then row-major cell.
pub fn layout_table(format: Format) -> Vec<Placement> {
    let at = |role, frame, row, col| Placement {
        role,
        frame,
        row,
        col,
    };
    match format {
        Format::D1 => {
            let mut next = 0;
            let mut out = Vec::with_capacity(9);
            for row in 0..3 {
                for col in 0..3 {
                    let role = if (row, col) == (1, 1) {
                        Role::Target
                    } else {
                        next += 1;
                        Role::Context(next - 1)
                    };
                    out.push(at(role, 0, row, col));
                }
            }
            out
        }
        Format::D2 => (0..4)
            .flat_map(|row| {
                (0..4).map(move |col| {
                    let role = if row % 2 == 0 {
                        Role::Context(row / 2 * 4 + col)
                    } else {
                        Role::Target
                    };
                    at(role, 0, row, col)
                })
            })
            .collect(),
        Format::D3 => std::iter::once(Role::Target)
            .chain((0..N_CONTEXTS).map(Role::Context))
            .enumerate()
            .map(|(frame, role)| at(role, frame, 0, 0))
            .collect(),
        Format::D4 => (0..2 * N_CONTEXTS)
            .map(|frame| {
                let role = if frame % 2 == 0 {
                    Role::Target
                } else {
                    Role::Context(frame / 2)
                };
                at(role, frame, 0, 0)
            })
            .collect(),
    }
}

/// Model-ready `T x H x W x 3` tensor with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct ComposedInput {
    spec: FormatSpec,
    tensor: Vec<f64>,
    provenance: Vec<Placement>,
}

impl ComposedInput {
    pub fn spec(&self) -> FormatSpec {
        self.spec
    }

    pub fn shape(&self) -> [usize; 4] {
        self.spec.shape()
    }

    pub fn tensor(&self) -> &[f64] {
        &self.tensor
    }

    pub fn provenance(&self) -> &[Placement] {
        &self.provenance
    }

    /// Frame `t` as an image.
    pub fn frame(&self, t: usize) -> ImageRgb {
        let [_, h, w, _] = self.shape();
        let n = h * w * 3;
        ImageRgb::from_vec(h, w, self.tensor[t * n..(t + 1) * n].to_vec())
            .expect("composed frames hold unit-range values")
    }

    /// Builds an input from a raw tensor; provenance is the canonical layout.
    pub fn from_tensor(spec: FormatSpec, tensor: Vec<f64>) -> Result<Self> {
        if tensor.len() != spec.len() {
            return format(format!(
                "tensor holds {} values, {} {} needs {}",
                tensor.len(),
                spec.format,
                spec.cell,
                spec.len()
            ));
        }
        if tensor.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return format("tensor values must lie in [0, 1]");
        }
        Ok(Self {
            spec,
            tensor,
            provenance: layout_table(spec.format),
        })
    }

    /// Replaces the provenance record, e.g. to model a corrupted cache entry.
    pub fn with_provenance(mut self, provenance: Vec<Placement>) -> Self {
        self.provenance = provenance;
        self
    }

    /// Little-endian `f32` payload, `T`-major then row-major.
    pub fn to_f32_bytes(&self) -> Vec<u8> {
        self.tensor
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect()
    }

    /// `FORMAT cell T H W`.
    pub fn header_line(&self) -> String {
        let [t, h, w, _] = self.shape();
        format!("{} {} {t} {h} {w}", self.spec.format, self.spec.cell)
    }

    /// Writes the payload to `path` and the header line to `path` + `.hdr`.
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_f32_bytes())?;
        std::fs::write(header_path(path), format!("{}\n", self.header_line()))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let header = std::fs::read_to_string(header_path(path))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 {
            return format(format!(
                "header '{}' must be 'FORMAT cell T H W'",
                header.trim()
            ));
        }
        let format_tag: Format = fields[0].parse()?;
        let nums = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<usize>()
                    .map_err(|_| Error::Format(format!("bad header field '{f}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = FormatSpec::new(format_tag, nums[0])?;
        let [t, h, w, _] = spec.shape();
        if [t, h, w] != [nums[1], nums[2], nums[3]] {
            return format(format!(
                "header dims {}x{}x{} disagree with {format_tag} cell {}",
                nums[1], nums[2], nums[3], nums[0]
            ));
        }
        let bytes = std::fs::read(path)?;
        if bytes.len() != spec.len() * 4 {
            return format(format!(
                "payload has {} bytes, expected {}",
                bytes.len(),
                spec.len() * 4
            ));
        }
        let tensor = bytes
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        Self::from_tensor(spec, tensor)
    }
}

fn header_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".hdr");
    s.into()
}

fn to_cell(img: &ImageRgb, cell: usize, what: &str) -> Result<ImageRgb> {
    if img.height() == 0 || img.width() == 0 {
        return arg(format!("{what} is empty"));
    }
    if img.height() != img.width() {
        return arg(format!(
            "{what} must be square, got {}x{}",
            img.height(),
            img.width()
        ));
    }
    resize_bilinear(img, cell, cell)
}

/// Places the target and eight contexts (resized to the cell size) per `spec`'s layout.
pub fn compose(
    spec: FormatSpec,
    target: &ImageRgb,
    contexts: &[ImageRgb],
) -> Result<ComposedInput> {
    if contexts.len() != N_CONTEXTS {
        return arg(format!(
            "expected {N_CONTEXTS} context images, got {}",
            contexts.len()
        ));
    }
    let cell = spec.cell;
    let target = to_cell(target, cell, "target")?;
    let contexts = contexts
        .iter()
        .enumerate()
        .map(|(k, c)| to_cell(c, cell, &format!("context {k}")))
        .collect::<Result<Vec<_>>>()?;

    let [t, side, _, _] = spec.shape();
    let mut frames = vec![ImageRgb::zeros(side, side); t];
    let provenance = layout_table(spec.format);
    for p in &provenance {
        let src = match p.role {
            Role::Target => &target,
            Role::Context(k) => &contexts[k],
        };
        blit_in_place(&mut frames[p.frame], src, p.row * cell, p.col * cell)?;
    }
    let tensor = frames.into_iter().flat_map(ImageRgb::into_data).collect();
    Ok(ComposedInput {
        spec,
        tensor,
        provenance,
    })
}

/// Reads the target and contexts back out of their cells (no resampling).
pub fn decompose(ci: &ComposedInput) -> Result<(ImageRgb, Vec<ImageRgb>)> {
    let spec = ci.spec;
    let expected = layout_table(spec.format);
    if ci.provenance.len() != expected.len() {
        return format(format!(
            "provenance has {} entries, {} needs {}",
            ci.provenance.len(),
            spec.format,
            expected.len()
        ));
    }
    let mut seen = vec![false; expected.len()];
    for p in &ci.provenance {
        match expected
            .iter()
            .position(|e| (e.frame, e.row, e.col) == (p.frame, p.row, p.col))
        {
            Some(i) if !seen[i] && expected[i].role == p.role => seen[i] = true,
            _ => {
                return format(format!(
                    "provenance entry {} at frame {} cell ({},{}) does not match the {} layout",
                    p.role, p.frame, p.row, p.col, spec.format
                ))
            }
        }
    }

    let cell = spec.cell;
    let mut target: Option<ImageRgb> = None;
    let mut contexts: Vec<Option<ImageRgb>> = vec![None; N_CONTEXTS];
    for p in &ci.provenance {
        let img = ci
            .frame(p.frame)
            .crop(p.row * cell, p.col * cell, cell, cell)?;
        match p.role {
            Role::Target => match &target {
                Some(t) if *t != img => {
                    return format(format!(
                        "target copies disagree (frame {} cell ({},{}))",
                        p.frame, p.row, p.col
                    ))
                }
                Some(_) => {}
                None => target = Some(img),
            },
            Role::Context(k) => contexts[k] = Some(img),
        }
    }
    let target = target.ok_or_else(|| Error::Format("no target cell".into()))?;
    let contexts = contexts
        .into_iter()
        .enumerate()
        .map(|(k, c)| c.ok_or_else(|| Error::Format(format!("context {k} missing"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((target, contexts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tagged(cell: usize, k: usize) -> ImageRgb {
        ImageRgb::from_fn(cell, cell, |r, c| {
            [
                k as f64 / 10.0,
                r as f64 / cell as f64,
                c as f64 / cell as f64,
            ]
        })
    }

    fn inputs(cell: usize) -> (ImageRgb, Vec<ImageRgb>) {
        (tagged(cell, 9), (0..8).map(|k| tagged(cell, k)).collect())
    }

    #[test]
    fn layout_counts() {
        let d1 = layout_table(Format::D1);
        assert_eq!(d1.len(), 9);
        assert_eq!(d1.iter().filter(|p| p.role == Role::Target).count(), 1);
        assert_eq!(d1[4].role, Role::Target);
        let d2 = layout_table(Format::D2);
        assert_eq!(d2.len(), 16);
        assert_eq!(d2.iter().filter(|p| p.role == Role::Target).count(), 8);
        let d3 = layout_table(Format::D3);
        assert_eq!(d3.len(), 9);
        assert_eq!(d3[0].role, Role::Target);
        let d4 = layout_table(Format::D4);
        assert_eq!(d4.len(), 16);
        for (i, p) in d4.iter().enumerate() {
            let expect = if i % 2 == 0 {
                Role::Target
            } else {
                Role::Context(i / 2)
            };
            assert_eq!(p.role, expect);
        }
        assert_eq!(layout_table(Format::D2), layout_table(Format::D2));
    }

    #[test]
    fn context_order_is_angular() {
        for f in Format::ALL {
            let ctx: Vec<usize> = layout_table(f)
                .iter()
                .filter_map(|p| match p.role {
                    Role::Context(k) => Some(k),
                    Role::Target => None,
                })
                .collect();
            assert_eq!(ctx, (0..8).collect::<Vec<_>>(), "{f}");
        }
    }

    #[test]
    fn d1_center_pixel_is_target() {
        let spec = FormatSpec::paper(Format::D1);
        let (t, c) = inputs(128);
        let ci = compose(spec, &t, &c).unwrap();
        assert_eq!(ci.shape(), [1, 384, 384, 3]);
        let frame = ci.frame(0);
        assert_eq!(frame.pixel(192, 192), t.pixel(64, 64));
        // c3 sits left of the target, c4 right
        assert_eq!(frame.pixel(128, 0), c[3].pixel(0, 0));
        assert_eq!(frame.pixel(128, 256), c[4].pixel(0, 0));
    }

    #[test]
    fn d4_even_frames_are_target() {
        let spec = FormatSpec::paper(Format::D4);
        let (t, c) = inputs(100);
        let ci = compose(spec, &t, &c).unwrap();
        assert_eq!(ci.shape(), [16, 224, 224, 3]);
        let resized = resize_bilinear(&t, 224, 224).unwrap();
        for f in (0..16).step_by(2) {
            assert_eq!(ci.frame(f), resized);
        }
    }

    #[test]
    fn black_inputs_give_zero_tensor() {
        let black = ImageRgb::zeros(10, 10);
        for f in Format::ALL {
            let ci = compose(FormatSpec::toy(f), &black, &vec![black.clone(); 8]).unwrap();
            assert!(ci.tensor().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn decompose_inverts_compose() {
        for f in Format::ALL {
            let spec = FormatSpec::toy(f);
            let (t, c) = inputs(17);
            let ci = compose(spec, &t, &c).unwrap();
            let (t2, c2) = decompose(&ci).unwrap();
            assert_eq!(t2, resize_bilinear(&t, spec.cell, spec.cell).unwrap());
            for k in 0..8 {
                assert_eq!(c2[k], resize_bilinear(&c[k], spec.cell, spec.cell).unwrap());
            }
        }
    }

    #[test]
    fn d3_frame_zero_is_target() {
        let spec = FormatSpec::new(Format::D3, 8).unwrap();
        let (t, c) = inputs(8);
        let ci = compose(spec, &t, &c).unwrap();
        assert_eq!(ci.frame(0), t);
        assert_eq!(ci.frame(1), c[0]);
    }

    #[test]
    fn bad_inputs_rejected() {
        let spec = FormatSpec::toy(Format::D1);
        let (t, c) = inputs(8);
        assert!(matches!(
            compose(spec, &t, &c[..7]),
            Err(Error::Argument(_))
        ));
        let wide = ImageRgb::zeros(8, 9);
        assert!(matches!(compose(spec, &wide, &c), Err(Error::Argument(_))));
    }

    #[test]
    fn decompose_detects_bad_provenance_and_copies() {
        let spec = FormatSpec::new(Format::D2, 4).unwrap();
        let (t, c) = inputs(4);
        let ci = compose(spec, &t, &c).unwrap();
        let mut prov = ci.provenance().to_vec();
        prov[0].role = Role::Context(5);
        assert!(matches!(
            decompose(&ci.clone().with_provenance(prov)),
            Err(Error::Format(_))
        ));
        let mut prov = ci.provenance().to_vec();
        prov.pop();
        assert!(matches!(
            decompose(&ci.clone().with_provenance(prov)),
            Err(Error::Format(_))
        ));

        let mut tensor = ci.tensor().to_vec();
        // perturb one pixel of the last target copy (row 3, col 3)
        let idx = ((3 * 4) * 16 + 3 * 4) * 3;
        tensor[idx] = 1.0 - tensor[idx];
        let tampered = ComposedInput::from_tensor(spec, tensor).unwrap();
        assert!(matches!(decompose(&tampered), Err(Error::Format(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("input.bin");
        let spec = FormatSpec::new(Format::D2, 6).unwrap();
        let (t, c) = inputs(6);
        let ci = compose(spec, &t, &c).unwrap();
        ci.write(&path).unwrap();
        let header = std::fs::read_to_string(dir.path().join("input.bin.hdr")).unwrap();
        assert_eq!(header, "D2 6 1 24 24\n");
        let back = ComposedInput::read(&path).unwrap();
        assert_eq!(back.shape(), ci.shape());
        for (a, b) in back.tensor().iter().zip(ci.tensor()) {
            assert_eq!(*a, f64::from(*b as f32));
        }
        std::fs::write(&path, &ci.to_f32_bytes()[4..]).unwrap();
        assert!(matches!(ComposedInput::read(&path), Err(Error::Format(_))));
    }
}
