use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compose::{ComposedInput, FormatSpec};
use crate::error::{arg, Result};
use crate::geometry::OrientationLabel;
use crate::rng::SeqRng;

use super::tape::{NodeId, Tape};
use super::tensor::{Real, Tensor};

const INIT_SIGMA: f64 = 0.02;
/// Query and key projections start equal, drawn with this deviation.
const QK_INIT_SIGMA: f64 = 0.1;
/// Pixels in `[0, 1]` enter the patch embedding as `(v - 0.5) * 0.2`, then
/// each patch vector has the mean patch of its input subtracted.
const PIXEL_CENTER: f64 = 0.5;
const PIXEL_GAIN: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Flat2D,
    Stacked3D,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub n_classes: usize,
}

impl ModelConfig {
    /// Default-width model sized for a composed input.
    pub fn for_input(spec: FormatSpec, patch: usize) -> Result<Self> {
        let [frames, height, width, _] = spec.shape();
        let variant = if spec.format.is_stacked() {
            Variant::Stacked3D
        } else {
            Variant::Flat2D
        };
        let cfg = Self {
            variant,
            frames,
            height,
            width,
            patch,
            embed_dim: 64,
            depth: 4,
            heads: 4,
            mlp_ratio: 4,
            n_classes: 8,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let Self {
            frames,
            height,
            width,
            patch,
            embed_dim,
            depth,
            heads,
            mlp_ratio,
            n_classes,
            ..
        } = *self;
        if patch == 0 || height == 0 || width == 0 || height % patch != 0 || width % patch != 0 {
            return arg(format!(
                "input {height}x{width} is not divisible into {patch}x{patch} patches"
            ));
        }
        if frames == 0 || (self.variant == Variant::Flat2D && frames != 1) {
            return arg(format!("{:?} cannot take {frames} frames", self.variant));
        }
        if embed_dim == 0 || heads == 0 || embed_dim % heads != 0 {
            return arg(format!("{heads} heads do not divide width {embed_dim}"));
        }
        if depth == 0 || mlp_ratio == 0 || n_classes < 2 {
            return arg("depth, mlp ratio and class count must be positive (at least two classes)");
        }
        Ok(())
    }

    pub fn patches_per_frame(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    /// Patch tokens over all frames, without the class token.
    pub fn n_patch_tokens(&self) -> usize {
        self.frames * self.patches_per_frame()
    }

    pub fn n_tokens(&self) -> usize {
        self.n_patch_tokens() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * 3
    }

    pub fn input_len(&self) -> usize {
        self.frames * self.height * self.width * 3
    }

    pub fn mlp_dim(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }

    /// Canonical parameter order with shapes. Saved files follow this order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.embed_dim;
        let m = self.mlp_dim();
        let mut out = vec![
            ("patch_w".to_string(), vec![self.patch_dim(), d]),
            ("patch_b".to_string(), vec![d]),
            ("cls".to_string(), vec![d]),
            ("pos".to_string(), vec![self.n_tokens(), d]),
        ];
        if self.variant == Variant::Stacked3D {
            out.push(("frame_embed".to_string(), vec![self.frames, d]));
        }
        for b in 0..self.depth {
            let block: [(&str, Vec<usize>); 16] = [
                ("ln1_g", vec![d]),
                ("ln1_b", vec![d]),
                ("wq", vec![d, d]),
                ("bq", vec![d]),
                ("wk", vec![d, d]),
                ("bk", vec![d]),
                ("wv", vec![d, d]),
                ("bv", vec![d]),
                ("wo", vec![d, d]),
                ("bo", vec![d]),
                ("ln2_g", vec![d]),
                ("ln2_b", vec![d]),
                ("w1", vec![d, m]),
                ("b1", vec![m]),
                ("w2", vec![m, d]),
                ("b2", vec![d]),
            ];
            out.extend(block.into_iter().map(|(n, s)| (format!("block{b}.{n}"), s)));
        }
        out.push(("lnf_g".to_string(), vec![d]));
        out.push(("lnf_b".to_string(), vec![d]));
        out.push(("head_w".to_string(), vec![d, self.n_classes]));
        out.push(("head_b".to_string(), vec![self.n_classes]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Checks that a composed input fits this model.
    pub fn check_input(&self, input: &ComposedInput) -> Result<()> {
        let shape = input.shape();
        if shape != [self.frames, self.height, self.width, 3] {
            return arg(format!(
                "input of shape {shape:?} does not fit a model expecting [{}, {}, {}, 3]",
                self.frames, self.height, self.width
            ));
        }
        Ok(())
    }
}

/// Named tensors in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParameterSet<T> {
    /// Seeded initialization: truncated normals for projections and embeddings,
    /// zero biases and head, unit norm scales. Each block's key projection
    /// starts as a copy of its query projection, and the value and output
    /// projections start at identity plus noise.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let mut rng = SeqRng::new(seed);
        let mut names = Vec::new();
        let mut tensors: Vec<Tensor<T>> = Vec::new();
        for (name, shape) in cfg.param_shapes() {
            let leaf = name.rsplit('.').next().unwrap_or(&name);
            let n: usize = shape.iter().product();
            let mut normal = |sigma: f64| -> Vec<T> {
                (0..n)
                    .map(|_| T::lit(rng.truncated_normal(sigma)))
                    .collect()
            };
            let data: Vec<T> = match leaf {
                _ if leaf.starts_with("head") => vec![T::zero(); n],
                _ if leaf.starts_with("ln") && leaf.ends_with("_g") => vec![T::one(); n],
                "wq" => normal(QK_INIT_SIGMA),
                "wk" => {
                    let wq = name.replace(".wk", ".wq");
                    let i = names.iter().position(|m| *m == wq).expect("wq precedes wk");
                    tensors[i].data().to_vec()
                }
                "wv" | "wo" => {
                    let mut w = normal(INIT_SIGMA);
                    for i in 0..d {
                        w[i * d + i] = w[i * d + i] + T::one();
                    }
                    w
                }
                _ if leaf.starts_with('w')
                    || matches!(leaf, "patch_w" | "cls" | "pos" | "frame_embed") =>
                {
                    normal(INIT_SIGMA)
                }
                _ => vec![T::zero(); n],
            };
            names.push(name);
            tensors.push(Tensor::from_vec(&shape, data));
        }
        Ok(Self { names, tensors })
    }

    /// Wraps tensors that must already follow `cfg`'s canonical shapes.
    pub fn from_tensors(cfg: &ModelConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        let shapes = cfg.param_shapes();
        if shapes.len() != tensors.len() {
            return arg(format!(
                "expected {} tensors, got {}",
                shapes.len(),
                tensors.len()
            ));
        }
        for ((name, shape), t) in shapes.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return arg(format!(
                    "{name}: expected shape {shape:?}, got {:?}",
                    t.shape()
                ));
            }
        }
        Ok(Self {
            names: shapes.into_iter().map(|(n, _)| n).collect(),
            tensors,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.tensors[i])
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParameterSet<U> {
        ParameterSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// All values flattened in canonical order.
    pub fn flat(&self) -> Vec<T> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }
}

/// Rearranges a `T x H x W x 3` tensor into one row per patch, frame-major
/// then row-major over patches; each row is the patch's pixels row-major with
/// interleaved channels.
pub fn patchify<T: Real>(cfg: &ModelConfig, input: &[T]) -> Tensor<T> {
    let p = cfg.patch;
    let (h, w) = (cfg.height, cfg.width);
    let (ph, pw) = (h / p, w / p);
    let mut out = Vec::with_capacity(input.len());
    for t in 0..cfg.frames {
        let frame = &input[t * h * w * 3..(t + 1) * h * w * 3];
        for pr in 0..ph {
            for pc in 0..pw {
                for y in 0..p {
                    let start = ((pr * p + y) * w + pc * p) * 3;
                    out.extend_from_slice(&frame[start..start + p * 3]);
                }
            }
        }
    }
    Tensor::from_vec(&[cfg.n_patch_tokens(), cfg.patch_dim()], out)
}

/// Scales pixels and subtracts the mean patch from every patch row.
fn center_patches<T: Real>(patches: &mut Tensor<T>) {
    let (n, d) = (patches.rows(), patches.cols());
    let (center, gain) = (T::lit(PIXEL_CENTER), T::lit(PIXEL_GAIN));
    let inv_n = T::lit(1.0 / n as f64);
    let data = patches.data_mut();
    for v in data.iter_mut() {
        *v = (*v - center) * gain;
    }
    let mut mean = vec![T::zero(); d];
    for row in data.chunks_exact(d) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m = *m + v;
        }
    }
    for m in &mut mean {
        *m = *m * inv_n;
    }
    for row in data.chunks_exact_mut(d) {
        for (v, &m) in row.iter_mut().zip(&mean) {
            *v = *v - m;
        }
    }
}

/// Records the forward pass on `tape` and returns the logits node.
fn build<T: Real>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    params: &ParameterSet<T>,
    input: &[T],
) -> Result<NodeId> {
    if input.len() != cfg.input_len() {
        return arg(format!(
            "input holds {} values, model expects {} ({}x{}x{}x3)",
            input.len(),
            cfg.input_len(),
            cfg.frames,
            cfg.height,
            cfg.width
        ));
    }
    if params.count() != cfg.param_count() || params.tensors.len() != cfg.param_shapes().len() {
        return arg("parameter set does not match model config");
    }
    let ids: Vec<NodeId> = params
        .tensors
        .iter()
        .map(|t| tape.param(t.clone()))
        .collect();
    let mut it = ids.into_iter();
    let mut next = || it.next().expect("parameter order checked above");

    let mut patches = patchify(cfg, input);
    center_patches(&mut patches);
    let patches = tape.constant(patches);
    let (pw, pb, cls, pos) = (next(), next(), next(), next());
    let mut x = tape.linear(patches, pw, pb);
    if cfg.variant == Variant::Stacked3D {
        let fe = next();
        x = tape.add_grouped(x, fe, cfg.patches_per_frame());
    }
    x = tape.prepend_row(cls, x);
    x = tape.add(x, pos);

    for _ in 0..cfg.depth {
        let (g1, b1) = (next(), next());
        let (wq, bq, wk, bk, wv, bv, wo, bo) = (
            next(),
            next(),
            next(),
            next(),
            next(),
            next(),
            next(),
            next(),
        );
        let (g2, b2) = (next(), next());
        let (w1, c1, w2, c2) = (next(), next(), next(), next());

        let h = tape.layer_norm(x, g1, b1);
        let q = tape.linear(h, wq, bq);
        let k = tape.linear(h, wk, bk);
        let v = tape.linear(h, wv, bv);
        let a = tape.attention(q, k, v, cfg.heads);
        let o = tape.linear(a, wo, bo);
        x = tape.add(x, o);

        let h = tape.layer_norm(x, g2, b2);
        let m = tape.linear(h, w1, c1);
        let m = tape.gelu(m);
        let m = tape.linear(m, w2, c2);
        x = tape.add(x, m);
    }
    let (gf, bf, hw, hb) = (next(), next(), next(), next());
    let c = tape.select_row(x, 0);
    let c = tape.layer_norm(c, gf, bf);
    Ok(tape.linear(c, hw, hb))
}

/// Logits for one input tensor.
pub fn forward<T: Real>(
    cfg: &ModelConfig,
    params: &ParameterSet<T>,
    input: &[T],
) -> Result<Vec<T>> {
    let mut tape = Tape::new();
    let logits = build(&mut tape, cfg, params, input)?;
    Ok(tape.value(logits).data().to_vec())
}

/// Forward pass plus loss, keeping the tape for [`Tape::backward`].
/// Returns `(tape, loss, logits)`.
pub fn forward_train<T: Real>(
    cfg: &ModelConfig,
    params: &ParameterSet<T>,
    input: &[T],
    label: OrientationLabel,
) -> Result<(Tape<T>, T, Vec<T>)> {
    if label.0 >= cfg.n_classes {
        return arg(format!(
            "label {} outside {} classes",
            label.0, cfg.n_classes
        ));
    }
    let mut tape = Tape::new();
    let logits = build(&mut tape, cfg, params, input)?;
    let logit_values = tape.value(logits).data().to_vec();
    let loss = tape.cross_entropy(logits, label.0);
    let loss_value = tape.value(loss).data()[0];
    Ok((tape, loss_value, logit_values))
}

/// Loss and parameter gradients for one sample.
pub fn loss_and_grad<T: Real>(
    cfg: &ModelConfig,
    params: &ParameterSet<T>,
    input: &[T],
    label: OrientationLabel,
) -> Result<(T, Vec<Tensor<T>>)> {
    let (tape, loss, _) = forward_train(cfg, params, input, label)?;
    Ok((loss, tape.backward()?))
}

/// Samples per gradient accumulator in [`batch_loss_and_grad`].
const GRAD_CHUNK: usize = 4;

/// Mean loss and mean gradient over a batch. Fixed-size chunks of samples may
/// run in parallel; each chunk accumulates its samples in order and the chunk
/// sums are added in ascending order, so the result does not depend on
/// scheduling.
pub fn batch_loss_and_grad<T: Real>(
    cfg: &ModelConfig,
    params: &ParameterSet<T>,
    batch: &[(Vec<T>, OrientationLabel)],
) -> Result<(T, Vec<Tensor<T>>)> {
    if batch.is_empty() {
        return arg("empty batch");
    }
    let per_chunk: Vec<(T, Vec<Tensor<T>>)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grads: Vec<Tensor<T>> = params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect();
            let mut loss = T::zero();
            for (x, y) in chunk {
                let (tape, l, _) = forward_train(cfg, params, x, *y)?;
                tape.backward_into(&mut grads)?;
                loss = loss + l;
            }
            Ok((loss, grads))
        })
        .collect::<Result<_>>()?;
    let mut it = per_chunk.into_iter();
    let (mut loss, mut grads) = it.next().expect("non-empty batch");
    for (l, g) in it {
        loss = loss + l;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            acc.add_assign(gi);
        }
    }
    let inv = T::lit(1.0 / batch.len() as f64);
    for g in &mut grads {
        g.scale(inv);
    }
    Ok((loss * inv, grads))
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax<T: Real>(logits: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

pub fn predict<T: Real>(
    cfg: &ModelConfig,
    params: &ParameterSet<T>,
    input: &[T],
) -> Result<OrientationLabel> {
    Ok(OrientationLabel(argmax(&forward(cfg, params, input)?)))
}

/// Converts a composed input to the model's scalar type after a shape check.
pub fn input_values<T: Real>(cfg: &ModelConfig, input: &ComposedInput) -> Result<Vec<T>> {
    cfg.check_input(input)?;
    Ok(input.tensor().iter().map(|&v| T::lit(v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compose::Format;

    fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            frames: if variant == Variant::Flat2D { 1 } else { 3 },
            height: 16,
            width: 16,
            patch: 8,
            embed_dim: 16,
            depth: 1,
            heads: 2,
            mlp_ratio: 4,
            n_classes: 8,
        }
    }

    fn input(cfg: &ModelConfig, seed: u64) -> Vec<f64> {
        let mut rng = SeqRng::new(seed);
        (0..cfg.input_len()).map(|_| rng.unit()).collect()
    }

    #[test]
    fn token_counts_follow_patch_grid() {
        let spec = FormatSpec::new(Format::D1, 32).unwrap();
        let cfg = ModelConfig::for_input(spec, 16).unwrap();
        assert_eq!(cfg.n_patch_tokens(), 36);
        assert_eq!(cfg.n_tokens(), 37);
        let d4 = ModelConfig::for_input(FormatSpec::new(Format::D4, 32).unwrap(), 16).unwrap();
        assert_eq!(d4.variant, Variant::Stacked3D);
        assert_eq!(d4.n_patch_tokens(), 16 * 4);
        assert!(d4.param_count() > cfg.param_count());
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny(Variant::Flat2D);
        cfg.patch = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny(Variant::Flat2D);
        cfg.frames = 2;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny(Variant::Flat2D);
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        for variant in [Variant::Flat2D, Variant::Stacked3D] {
            let cfg = tiny(variant);
            let params = ParameterSet::<f64>::init(&cfg, 3).unwrap();
            let logits = forward(&cfg, &params, &input(&cfg, 9)).unwrap();
            assert_eq!(logits, vec![0.0; 8]);
            assert_eq!(params.count(), cfg.param_count());
        }
    }

    #[test]
    fn wrong_input_length_is_argument_error() {
        let cfg = tiny(Variant::Flat2D);
        let params = ParameterSet::<f64>::init(&cfg, 3).unwrap();
        let err = forward(&cfg, &params, &[0.5; 10]).unwrap_err();
        assert!(matches!(err, crate::Error::Argument(_)));
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny(Variant::Stacked3D);
        let mut params = ParameterSet::<f32>::init(&cfg, 11).unwrap();
        let mut rng = SeqRng::new(5);
        for v in params.get_mut("head_w").unwrap().data_mut() {
            *v = rng.normal() as f32;
        }
        let x: Vec<f32> = input(&cfg, 4).iter().map(|&v| v as f32).collect();
        let a = forward(&cfg, &params, &x).unwrap();
        let b = forward(&cfg, &params, &x).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert!(a.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn doubled_loss_doubles_gradients() {
        let cfg = tiny(Variant::Flat2D);
        let mut params = ParameterSet::<f64>::init(&cfg, 2).unwrap();
        let mut rng = SeqRng::new(8);
        for v in params.get_mut("head_w").unwrap().data_mut() {
            *v = rng.normal() * 0.5;
        }
        let x = input(&cfg, 1);
        let (tape, _, _) = forward_train(&cfg, &params, &x, OrientationLabel(3)).unwrap();
        let g1 = tape.backward().unwrap();
        let (mut tape, _, _) = forward_train(&cfg, &params, &x, OrientationLabel(3)).unwrap();
        let loss = tape.loss().unwrap();
        tape.scale(loss, 2.0);
        let g2 = tape.backward().unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            for (&p, &q) in a.data().iter().zip(b.data()) {
                assert_eq!(2.0 * p, q);
            }
        }
    }

    #[test]
    fn initial_loss_is_ln8() {
        let cfg = tiny(Variant::Flat2D);
        let params = ParameterSet::<f64>::init(&cfg, 2).unwrap();
        let (_, loss, _) =
            forward_train(&cfg, &params, &input(&cfg, 1), OrientationLabel(6)).unwrap();
        assert!((loss - 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn batch_loss_is_order_invariant() {
        let cfg = tiny(Variant::Flat2D);
        let mut params = ParameterSet::<f64>::init(&cfg, 2).unwrap();
        let mut rng = SeqRng::new(8);
        for v in params.get_mut("head_w").unwrap().data_mut() {
            *v = rng.normal() * 0.5;
        }
        let batch: Vec<(Vec<f64>, OrientationLabel)> = (0..4)
            .map(|i| (input(&cfg, 20 + i), OrientationLabel(i as usize * 2)))
            .collect();
        let (l1, _) = batch_loss_and_grad(&cfg, &params, &batch).unwrap();
        let rev: Vec<_> = batch.iter().rev().cloned().collect();
        let (l2, _) = batch_loss_and_grad(&cfg, &params, &rev).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        let (l3, _) = batch_loss_and_grad(&cfg, &params, &batch).unwrap();
        assert_eq!(l1.to_bits(), l3.to_bits());
    }

    #[test]
    fn argmax_tie_break_and_shift() {
        assert_eq!(argmax(&[0.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]), 1);
        assert_eq!(argmax(&[0.0f64; 8]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        let l = [0.3, -1.0, 2.2, 2.1];
        let shifted: Vec<f64> = l.iter().map(|v| 3.0 * v + 100.0).collect();
        assert_eq!(argmax(&l), argmax(&shifted));
    }

    #[test]
    fn patchify_orders_frames_then_rows() {
        let cfg = ModelConfig {
            frames: 2,
            height: 4,
            width: 4,
            patch: 2,
            variant: Variant::Stacked3D,
            ..tiny(Variant::Stacked3D)
        };
        let x: Vec<f64> = (0..cfg.input_len()).map(|v| v as f64).collect();
        let p = patchify(&cfg, &x);
        assert_eq!(p.shape(), &[8, 12]);
        // patch (0,1) of frame 0 starts at pixel (0,2)
        assert_eq!(p.data()[12], 6.0);
        // second row of that patch starts at pixel (1,2)
        assert_eq!(p.data()[12 + 6], 18.0);
        // first patch of frame 1
        assert_eq!(p.data()[4 * 12], 48.0);
    }
}
