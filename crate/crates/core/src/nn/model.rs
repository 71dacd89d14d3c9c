use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Activation, LayerSpec};
use super::{NnError, Shape, Tensor4};
use crate::Scalar;

/// Layer sequence plus the per-sample input shape `(maps, spatial, time)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input: [usize; 3],
    pub n_classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Shape after every stage for an arbitrary input shape.
    pub fn shape_trace(&self, input: Shape) -> Result<Vec<Shape>, NnError> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut current = input;
        for (i, layer) in self.layers.iter().enumerate() {
            current = layer.output_shape(current, i + 1)?;
            shapes.push(current);
        }
        Ok(shapes)
    }

    pub fn input_shape(&self, batch: usize) -> Shape {
        Shape::Maps([batch, self.input[0], self.input[1], self.input[2]])
    }

    pub fn validate(&self) -> Result<(), NnError> {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate(i + 1)?;
            if matches!(layer, LayerSpec::Softmax { .. }) && i + 1 != self.layers.len() {
                return Err(NnError::InvalidLayer { stage: i + 1, reason: "softmax must be the final stage".into() });
            }
        }
        match self.layers.last() {
            Some(LayerSpec::Softmax { classes, .. }) if *classes == self.n_classes => {}
            _ => {
                return Err(NnError::InvalidLayer {
                    stage: self.layers.len(),
                    reason: format!("final stage must be a softmax over {} classes", self.n_classes),
                })
            }
        }
        self.shape_trace(self.input_shape(1)).map(|_| ())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }
}

/// Ordered list of parameter (or gradient) tensors: weight then bias for
/// every parameterised layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn zeros_like(other: &ParamSet<T>) -> Self {
        ParamSet { tensors: other.tensors.iter().map(|t| vec![T::zero(); t.len()]).collect() }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shapes(&self) -> Vec<usize> {
        self.tensors.iter().map(Vec::len).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.tensors.iter().flatten()
    }

    pub fn get(&self, flat: usize) -> T {
        let (t, i) = self.locate(flat);
        self.tensors[t][i]
    }

    pub fn set(&mut self, flat: usize, value: T) {
        let (t, i) = self.locate(flat);
        self.tensors[t][i] = value;
    }

    fn locate(&self, mut flat: usize) -> (usize, usize) {
        for (t, v) in self.tensors.iter().enumerate() {
            if flat < v.len() {
                return (t, flat);
            }
            flat -= v.len();
        }
        panic!("parameter index out of range");
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet { tensors: self.tensors.iter().map(|t| t.iter().map(|v| U::lit(v.as_f64())).collect()).collect() }
    }
}

/// How per-sample losses are combined over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

enum Aux<T> {
    None,
    Mask(Vec<T>),
    Argmax(Vec<u32>),
}

struct Trace<T> {
    /// `acts[i]` is the input of layer `i`; the last entry holds probabilities.
    acts: Vec<Tensor4<T>>,
    aux: Vec<Aux<T>>,
    log_probs: Vec<T>,
}

/// A network instance: its spec and learned parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    spec: ModelSpec,
    params: ParamSet<T>,
    slots: Vec<Option<usize>>,
}

fn slots_for(spec: &ModelSpec) -> Vec<Option<usize>> {
    let mut next = 0;
    spec.layers
        .iter()
        .map(|l| {
            l.param_shapes().map(|_| {
                let s = next;
                next += 2;
                s
            })
        })
        .collect()
}

impl<T: Scalar> Model<T> {
    /// Fan-in-scaled uniform weights in `±1/sqrt(fan_in)`, zero biases.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self, NnError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::new();
        for layer in &spec.layers {
            if let Some((w_shape, n_bias)) = layer.param_shapes() {
                let bound = 1.0 / (layer.fan_in() as f64).sqrt();
                let n: usize = w_shape.iter().product();
                tensors.push((0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect());
                tensors.push(vec![T::zero(); n_bias]);
            }
        }
        let slots = slots_for(&spec);
        Ok(Model { spec, params: ParamSet { tensors }, slots })
    }

    /// Rebuilds a model from stored parameters.
    pub fn from_params(spec: ModelSpec, params: ParamSet<T>) -> Result<Self, NnError> {
        spec.validate()?;
        let expected: Vec<usize> = spec
            .layers
            .iter()
            .filter_map(LayerSpec::param_shapes)
            .flat_map(|(w, b)| [w.iter().product(), b])
            .collect();
        if params.shapes() != expected {
            return Err(NnError::ParamShapeMismatch);
        }
        let slots = slots_for(&spec);
        Ok(Model { spec, params, slots })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn shape_trace(&self, input: Shape) -> Result<Vec<Shape>, NnError> {
        self.spec.shape_trace(input)
    }

    /// Class probabilities, shaped `(batch, classes)`.
    ///
    /// `train_mode` enables inverted dropout with masks drawn from `rng_seed`.
    pub fn forward(&self, batch: &Tensor4<T>, train_mode: bool, rng_seed: u64) -> Result<Array2<T>, NnError> {
        let trace = self.run(batch, None, train_mode, rng_seed)?;
        let probs = trace.acts.last().expect("non-empty trace");
        Ok(Array2::from_shape_vec((batch.batch(), self.spec.n_classes), probs.data().to_vec()).expect("softmax shape"))
    }

    /// Cross-entropy of `labels` under the current parameters.
    pub fn loss(
        &self,
        batch: &Tensor4<T>,
        labels: &[usize],
        train_mode: bool,
        rng_seed: u64,
        reduction: Reduction,
    ) -> Result<T, NnError> {
        let trace = self.run(batch, Some(labels), train_mode, rng_seed)?;
        Ok(reduce(&trace.log_probs, reduction))
    }

    /// Loss and the gradient of every parameter.
    pub fn loss_and_gradients(
        &self,
        batch: &Tensor4<T>,
        labels: &[usize],
        train_mode: bool,
        rng_seed: u64,
        reduction: Reduction,
    ) -> Result<(T, ParamSet<T>), NnError> {
        let trace = self.run(batch, Some(labels), train_mode, rng_seed)?;
        let loss = reduce(&trace.log_probs, reduction);
        let grads = self.backward(&trace, labels, reduction);
        Ok((loss, grads))
    }

    /// Stage errors come first, so a wrong time length surfaces where the
    /// layer arithmetic breaks (usually Flatten); any other deviation from
    /// the declared input is then rejected at stage 0.
    fn check_input(&self, batch: &Tensor4<T>, labels: Option<&[usize]>) -> Result<Vec<Shape>, NnError> {
        let [b, c, h, w] = batch.shape();
        let shapes = self.spec.shape_trace(Shape::Maps(batch.shape()))?;
        if [c, h, w] != self.spec.input {
            return Err(NnError::ShapeMismatch {
                stage: 0,
                expected: self.spec.input_shape(b).to_string(),
                found: Shape::Maps(batch.shape()).to_string(),
            });
        }
        if let Some(labels) = labels {
            if labels.len() != b {
                return Err(NnError::LabelCount { labels: labels.len(), batch: b });
            }
            if let Some(&label) = labels.iter().find(|&&l| l >= self.spec.n_classes) {
                return Err(NnError::LabelOutOfRange { label, n_classes: self.spec.n_classes });
            }
        }
        Ok(shapes)
    }

    fn run(&self, batch: &Tensor4<T>, labels: Option<&[usize]>, train_mode: bool, rng_seed: u64) -> Result<Trace<T>, NnError> {
        let shapes = self.check_input(batch, labels)?;
        let mut acts = Vec::with_capacity(self.spec.layers.len() + 1);
        let mut aux = Vec::with_capacity(self.spec.layers.len());
        let mut log_probs = Vec::new();
        acts.push(batch.clone());

        for (i, (layer, shape)) in self.spec.layers.iter().zip(&shapes).enumerate() {
            let x = acts.last().expect("input pushed");
            let out_shape = shape.storage();
            let (y, a) = match *layer {
                LayerSpec::Conv { kernel, stride, activation, .. } => {
                    let (w, b) = self.layer_params(i);
                    (conv_forward(x, w, b, kernel, stride, activation, out_shape), Aux::None)
                }
                LayerSpec::MaxPool { kernel, stride } => {
                    let (y, idx) = pool_forward(x, kernel, stride, out_shape);
                    (y, Aux::Argmax(idx))
                }
                LayerSpec::Dropout { rate } => {
                    if train_mode && rate > 0.0 {
                        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1)));
                        let keep = T::lit(1.0 / (1.0 - rate));
                        let mask: Vec<T> =
                            (0..x.data().len()).map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep }).collect();
                        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
                        (Tensor4::from_vec(out_shape, data), Aux::Mask(mask))
                    } else {
                        (x.clone(), Aux::None)
                    }
                }
                LayerSpec::Flatten { .. } => (x.clone().reshape(out_shape), Aux::None),
                LayerSpec::Dense { activation, .. } => {
                    let (w, b) = self.layer_params(i);
                    (dense_forward(x, w, b, activation, out_shape), Aux::None)
                }
                LayerSpec::Softmax { .. } => {
                    let (w, b) = self.layer_params(i);
                    let logits = dense_forward(x, w, b, Activation::Identity, out_shape);
                    let (probs, lp) = softmax_rows(&logits, labels);
                    log_probs = lp;
                    (probs, Aux::None)
                }
            };
            acts.push(y);
            aux.push(a);
        }
        Ok(Trace { acts, aux, log_probs })
    }

    fn layer_params(&self, layer: usize) -> (&[T], &[T]) {
        let s = self.slots[layer].expect("parameterised layer");
        (&self.params.tensors[s], &self.params.tensors[s + 1])
    }

    fn backward(&self, trace: &Trace<T>, labels: &[usize], reduction: Reduction) -> ParamSet<T> {
        let mut grads = ParamSet::zeros_like(&self.params);
        let n_layers = self.spec.layers.len();
        let batch = trace.acts[0].batch();
        let scale = match reduction {
            Reduction::Mean => T::one() / T::lit(batch as f64),
            Reduction::Sum => T::one(),
        };

        // Gradient with respect to the output of the current layer.
        let mut g: Tensor4<T> = Tensor4::zeros([0, 0, 0, 0]);
        for i in (0..n_layers).rev() {
            let x = &trace.acts[i];
            let y = &trace.acts[i + 1];
            let need_dx = i > 0;
            g = match self.spec.layers[i] {
                LayerSpec::Softmax { .. } => {
                    let classes = self.spec.n_classes;
                    let mut dlogits = y.clone();
                    for (b, &label) in labels.iter().enumerate() {
                        let row = &mut dlogits.data_mut()[b * classes..(b + 1) * classes];
                        row[label] -= T::one();
                        row.iter_mut().for_each(|v| *v *= scale);
                    }
                    let s = self.slots[i].expect("softmax has params");
                    let (gw, gb) = two_mut(&mut grads.tensors, s);
                    dense_backward(x, &self.params.tensors[s], &dlogits, gw, gb, need_dx)
                }
                LayerSpec::Dense { activation, .. } => {
                    let gy = activation_grad(&g, y, activation);
                    let s = self.slots[i].expect("dense has params");
                    let (gw, gb) = two_mut(&mut grads.tensors, s);
                    dense_backward(x, &self.params.tensors[s], &gy, gw, gb, need_dx)
                }
                LayerSpec::Conv { kernel, stride, activation, .. } => {
                    let gy = activation_grad(&g, y, activation);
                    let s = self.slots[i].expect("conv has params");
                    let (gw, gb) = two_mut(&mut grads.tensors, s);
                    conv_backward(x, &self.params.tensors[s], &gy, kernel, stride, gw, gb, need_dx)
                }
                LayerSpec::MaxPool { .. } => {
                    let Aux::Argmax(idx) = &trace.aux[i] else { unreachable!("pool stores argmax") };
                    pool_backward(x.shape(), &g, idx)
                }
                LayerSpec::Dropout { .. } => match &trace.aux[i] {
                    Aux::Mask(mask) => {
                        let data = g.data().iter().zip(mask).map(|(&v, &m)| v * m).collect();
                        Tensor4::from_vec(x.shape(), data)
                    }
                    _ => g,
                },
                LayerSpec::Flatten { .. } => g.reshape(x.shape()),
            };
        }
        grads
    }
}

/// Valid cross-correlation without activation; `weights` is
/// `(out_maps, in_maps, kh, kw)` row-major.
pub fn conv_valid_forward<T: Scalar>(
    input: &Tensor4<T>,
    weights: &[T],
    bias: &[T],
    out_maps: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
) -> Result<Tensor4<T>, NnError> {
    let [b, c, h, w] = input.shape();
    let layer = LayerSpec::Conv { in_maps: c, out_maps, kernel, stride, activation: Activation::Identity };
    layer.validate(1)?;
    let out = layer.output_shape(Shape::Maps([b, c, h, w]), 1)?;
    if weights.len() != layer.param_count() - out_maps || bias.len() != out_maps {
        return Err(NnError::ParamShapeMismatch);
    }
    Ok(conv_forward(input, weights, bias, kernel, stride, Activation::Identity, out.storage()))
}

/// Max pooling; also returns, per output, the flat within-sample index of
/// the winning input.
pub fn maxpool_forward<T: Scalar>(
    input: &Tensor4<T>,
    kernel: (usize, usize),
    stride: (usize, usize),
) -> Result<(Tensor4<T>, Vec<u32>), NnError> {
    let layer = LayerSpec::pool(kernel, stride);
    layer.validate(1)?;
    let out = layer.output_shape(Shape::Maps(input.shape()), 1)?;
    Ok(pool_forward(input, kernel, stride, out.storage()))
}

/// Routes `grad_out` back to the argmax positions.
pub fn maxpool_backward<T: Scalar>(input_shape: [usize; 4], grad_out: &Tensor4<T>, argmax: &[u32]) -> Tensor4<T> {
    pool_backward(input_shape, grad_out, argmax)
}

fn reduce<T: Scalar>(log_probs: &[T], reduction: Reduction) -> T {
    let total: T = log_probs.iter().map(|&lp| -lp).sum();
    match reduction {
        Reduction::Mean => total / T::lit(log_probs.len() as f64),
        Reduction::Sum => total,
    }
}

fn two_mut<T>(v: &mut [Vec<T>], s: usize) -> (&mut [T], &mut [T]) {
    let (a, b) = v.split_at_mut(s + 1);
    (&mut a[s], &mut b[0])
}

#[inline]
fn activate<T: Scalar>(v: T, act: Activation) -> T {
    match act {
        Activation::Elu => {
            if v > T::zero() {
                v
            } else {
                v.exp_m1()
            }
        }
        Activation::Identity => v,
    }
}

/// `g * f'(x)` using the stored output `y = f(x)`.
fn activation_grad<T: Scalar>(g: &Tensor4<T>, y: &Tensor4<T>, act: Activation) -> Tensor4<T> {
    match act {
        Activation::Identity => g.clone(),
        Activation::Elu => {
            let data = g
                .data()
                .iter()
                .zip(y.data())
                .map(|(&gv, &yv)| if yv > T::zero() { gv } else { gv * (yv + T::one()) })
                .collect();
            Tensor4::from_vec(g.shape(), data)
        }
    }
}

/// Upper bound on im2col buffer entries; samples are batched into one GEMM
/// until this is reached.
const COL_BUDGET: usize = 1 << 21;

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    maps: usize,
    h: usize,
    w: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(in_shape: [usize; 4], out_shape: [usize; 4], kernel: (usize, usize), stride: (usize, usize)) -> Self {
        ConvGeom { maps: in_shape[1], h: in_shape[2], w: in_shape[3], kernel, stride, ho: out_shape[2], wo: out_shape[3] }
    }

    fn rows(&self) -> usize {
        self.maps * self.kernel.0 * self.kernel.1
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    fn chunk(&self, batch: usize) -> usize {
        (COL_BUDGET / (self.rows() * self.cols())).clamp(1, batch.max(1))
    }

    /// Unfolds one sample into columns `off..off + cols` of a row-major
    /// matrix with row stride `ld`.
    fn im2col<T: Scalar>(&self, x: &[T], col: &mut [T], ld: usize, off: usize) {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (w, wo) = (self.w, self.wo);
        for ci in 0..self.maps {
            for dy in 0..kh {
                for dx in 0..kw {
                    let row = &mut col[((ci * kh + dy) * kw + dx) * ld + off..][..self.cols()];
                    for oy in 0..self.ho {
                        let src = &x[(ci * self.h + oy * sh + dy) * w..][..w];
                        let dst = &mut row[oy * wo..(oy + 1) * wo];
                        if sw == 1 {
                            dst.copy_from_slice(&src[dx..dx + wo]);
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d = src[ox * sw + dx];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im_add<T: Scalar>(&self, col: &[T], ld: usize, off: usize, dx_out: &mut [T]) {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (w, wo) = (self.w, self.wo);
        for ci in 0..self.maps {
            for dy in 0..kh {
                for dxk in 0..kw {
                    let row = &col[((ci * kh + dy) * kw + dxk) * ld + off..][..self.cols()];
                    for oy in 0..self.ho {
                        let dst = &mut dx_out[(ci * self.h + oy * sh + dy) * w..][..w];
                        let src = &row[oy * wo..(oy + 1) * wo];
                        if sw == 1 {
                            for (d, &v) in dst[dxk..dxk + wo].iter_mut().zip(src) {
                                *d += v;
                            }
                        } else {
                            for (ox, &v) in src.iter().enumerate() {
                                dst[ox * sw + dxk] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Valid cross-correlation over `(spatial, time)`, fully connected across maps.
fn conv_forward<T: Scalar>(
    x: &Tensor4<T>,
    w: &[T],
    b: &[T],
    kernel: (usize, usize),
    stride: (usize, usize),
    act: Activation,
    out_shape: [usize; 4],
) -> Tensor4<T> {
    let geom = ConvGeom::new(x.shape(), out_shape, kernel, stride);
    let batch = x.batch();
    let co = out_shape[1];
    let (k, n) = (geom.rows(), geom.cols());
    let chunk = geom.chunk(batch);
    let mut y = Tensor4::zeros(out_shape);
    let mut col = vec![T::zero(); k * n * chunk];
    let mut out = vec![T::zero(); co * n * chunk];
    for s0 in (0..batch).step_by(chunk) {
        let cs = chunk.min(batch - s0);
        let ld = cs * n;
        for j in 0..cs {
            geom.im2col(x.sample(s0 + j), &mut col, ld, j * n);
        }
        T::gemm(co, k, ld, T::one(), w, (k as isize, 1), &col, (ld as isize, 1), T::zero(), &mut out, (ld as isize, 1));
        for j in 0..cs {
            let ys = y.sample_mut(s0 + j);
            for (o, dst) in ys.chunks_mut(n).enumerate() {
                let src = &out[o * ld + j * n..][..n];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = activate(v + b[o], act);
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    x: &Tensor4<T>,
    w: &[T],
    gy: &Tensor4<T>,
    kernel: (usize, usize),
    stride: (usize, usize),
    gw: &mut [T],
    gb: &mut [T],
    need_dx: bool,
) -> Tensor4<T> {
    let geom = ConvGeom::new(x.shape(), gy.shape(), kernel, stride);
    let batch = x.batch();
    let co = gy.shape()[1];
    let (k, n) = (geom.rows(), geom.cols());
    let chunk = geom.chunk(batch);
    let mut col = vec![T::zero(); k * n * chunk];
    let mut g = vec![T::zero(); co * n * chunk];
    let mut dcol = if need_dx { vec![T::zero(); k * n * chunk] } else { Vec::new() };
    let mut dx = if need_dx { Tensor4::zeros(x.shape()) } else { Tensor4::zeros([0, 0, 0, 0]) };
    for s0 in (0..batch).step_by(chunk) {
        let cs = chunk.min(batch - s0);
        let ld = cs * n;
        for j in 0..cs {
            geom.im2col(x.sample(s0 + j), &mut col, ld, j * n);
            for (o, src) in gy.sample(s0 + j).chunks(n).enumerate() {
                g[o * ld + j * n..][..n].copy_from_slice(src);
                gb[o] += src.iter().copied().sum::<T>();
            }
        }
        T::gemm(co, ld, k, T::one(), &g, (ld as isize, 1), &col, (1, ld as isize), T::one(), gw, (k as isize, 1));
        if need_dx {
            T::gemm(k, co, ld, T::one(), w, (1, k as isize), &g, (ld as isize, 1), T::zero(), &mut dcol, (ld as isize, 1));
            for j in 0..cs {
                geom.col2im_add(&dcol, ld, j * n, dx.sample_mut(s0 + j));
            }
        }
    }
    dx
}

fn pool_forward<T: Scalar>(x: &Tensor4<T>, kernel: (usize, usize), stride: (usize, usize), out_shape: [usize; 4]) -> (Tensor4<T>, Vec<u32>) {
    let [batch, c, h, w] = x.shape();
    let [_, _, ho, wo] = out_shape;
    let mut y = Tensor4::zeros(out_shape);
    let mut idx = vec![0u32; y.data().len()];
    let per_in = c * h * w;
    let per_out = c * ho * wo;
    for s in 0..batch {
        let xs = x.sample(s);
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = T::neg_infinity();
                    let mut arg = 0usize;
                    for dy in 0..kernel.0 {
                        let base = (ci * h + oy * stride.0 + dy) * w + ox * stride.1;
                        for (dx, &v) in xs[base..base + kernel.1].iter().enumerate() {
                            // Strict comparison keeps the first index on ties.
                            if v > best || (dx == 0 && dy == 0) {
                                best = v;
                                arg = base + dx;
                            }
                        }
                    }
                    let o = s * per_out + (ci * ho + oy) * wo + ox;
                    y.data_mut()[o] = best;
                    idx[o] = arg as u32;
                }
            }
        }
        debug_assert!(per_in > 0);
    }
    (y, idx)
}

fn pool_backward<T: Scalar>(in_shape: [usize; 4], g: &Tensor4<T>, idx: &[u32]) -> Tensor4<T> {
    let mut dx = Tensor4::zeros(in_shape);
    let per_in = in_shape[1] * in_shape[2] * in_shape[3];
    let per_out = g.sample_len();
    for (o, &gv) in g.data().iter().enumerate() {
        let s = o / per_out;
        dx.data_mut()[s * per_in + idx[o] as usize] += gv;
    }
    dx
}

fn dense_forward<T: Scalar>(x: &Tensor4<T>, w: &[T], b: &[T], act: Activation, out_shape: [usize; 4]) -> Tensor4<T> {
    let batch = x.batch();
    let n_in = x.sample_len();
    let n_out = out_shape[1];
    let mut y = Tensor4::zeros(out_shape);
    for row in y.data_mut().chunks_mut(n_out) {
        row.copy_from_slice(b);
    }
    T::gemm(batch, n_in, n_out, T::one(), x.data(), (n_in as isize, 1), w, (1, n_in as isize), T::one(), y.data_mut(), (n_out as isize, 1));
    if act != Activation::Identity {
        y.data_mut().iter_mut().for_each(|v| *v = activate(*v, act));
    }
    y
}

fn dense_backward<T: Scalar>(x: &Tensor4<T>, w: &[T], gy: &Tensor4<T>, gw: &mut [T], gb: &mut [T], need_dx: bool) -> Tensor4<T> {
    let batch = x.batch();
    let n_in = x.sample_len();
    let n_out = gy.sample_len();
    T::gemm(n_out, batch, n_in, T::one(), gy.data(), (1, n_out as isize), x.data(), (n_in as isize, 1), T::one(), gw, (n_in as isize, 1));
    for row in gy.data().chunks(n_out) {
        for (b, &v) in gb.iter_mut().zip(row) {
            *b += v;
        }
    }
    if !need_dx {
        return Tensor4::zeros([0, 0, 0, 0]);
    }
    let mut dx = Tensor4::zeros(x.shape());
    T::gemm(batch, n_out, n_in, T::one(), gy.data(), (n_out as isize, 1), w, (n_in as isize, 1), T::zero(), dx.data_mut(), (n_in as isize, 1));
    dx
}

/// Row-wise softmax; also returns `log p[label]` per row when labels are given.
fn softmax_rows<T: Scalar>(logits: &Tensor4<T>, labels: Option<&[usize]>) -> (Tensor4<T>, Vec<T>) {
    let classes = logits.sample_len();
    let mut probs = logits.clone();
    let mut log_probs = Vec::new();
    for (b, row) in probs.data_mut().chunks_mut(classes).enumerate() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        if let Some(labels) = labels {
            let logit = logits.sample(b)[labels[b]];
            log_probs.push(logit - max - sum.ln());
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    (probs, log_probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::LayerSpec;

    fn identity_conv_model() -> Model<f64> {
        let spec = ModelSpec {
            input: [1, 2, 3],
            n_classes: 2,
            layers: vec![
                LayerSpec::Conv { in_maps: 1, out_maps: 1, kernel: (1, 1), stride: (1, 1), activation: Activation::Identity },
                LayerSpec::Flatten { features: 6 },
                LayerSpec::Softmax { in_features: 6, classes: 2 },
            ],
        };
        let mut m = Model::new(spec, 0).unwrap();
        m.params_mut().tensors[0] = vec![1.0];
        m.params_mut().tensors[1] = vec![0.0];
        m
    }

    #[test]
    fn unit_kernel_conv_is_identity() {
        let x = Tensor4::from_vec([1, 1, 2, 3], vec![1.0, -2.0, 3.0, 4.5, 0.0, -1.0]);
        let m = identity_conv_model();
        let y = conv_forward(&x, &m.params().tensors[0], &[0.0], (1, 1), (1, 1), Activation::Identity, [1, 1, 2, 3]);
        assert_eq!(y, x);
    }

    #[test]
    fn conv_matches_direct_sum() {
        // Two input maps, strided kernel.
        let x = Tensor4::from_vec([1, 2, 3, 7], (0..42).map(|i| (i as f64 * 0.37).sin()).collect());
        let w: Vec<f64> = (0..2 * 2 * 2 * 3).map(|i| (i as f64 * 0.11).cos()).collect();
        let b = [0.5, -0.25];
        let y = conv_forward(&x, &w, &b, (2, 3), (1, 2), Activation::Identity, [1, 2, 2, 3]);
        for o in 0..2 {
            for oy in 0..2 {
                for ox in 0..3 {
                    let mut acc = b[o];
                    for ci in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..3 {
                                acc += w[((o * 2 + ci) * 2 + dy) * 3 + dx] * x.data()[(ci * 3 + oy + dy) * 7 + ox * 2 + dx];
                            }
                        }
                    }
                    assert!((y.data()[(o * 2 + oy) * 3 + ox] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pooling_takes_max_and_first_index_on_ties() {
        let x = Tensor4::from_vec([1, 1, 1, 6], vec![1.0, 3.0, 3.0, 2.0, 2.0, 0.0]);
        let (y, idx) = pool_forward(&x, (1, 3), (1, 3), [1, 1, 1, 2]);
        assert_eq!(y.data(), &[3.0, 2.0]);
        assert_eq!(idx, vec![1, 3]);
        let c = Tensor4::from_vec([1, 1, 1, 6], vec![4.0f64; 6]);
        assert_eq!(pool_forward(&c, (1, 2), (1, 2), [1, 1, 1, 3]).0.data(), &[4.0, 4.0, 4.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = Tensor4::from_vec([2, 3, 1, 1], vec![1000.0, 0.0, -1000.0, 0.1, 0.2, 0.3]);
        let (p, lp) = softmax_rows(&logits, Some(&[0, 2]));
        for row in p.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(lp[0].abs() < 1e-12);
    }

    #[test]
    fn label_checks() {
        let m = identity_conv_model();
        let x = Tensor4::zeros([1, 1, 2, 3]);
        assert_eq!(m.loss(&x, &[2], false, 0, Reduction::Mean), Err(NnError::LabelOutOfRange { label: 2, n_classes: 2 }));
        assert_eq!(m.loss(&x, &[0, 1], false, 0, Reduction::Mean), Err(NnError::LabelCount { labels: 2, batch: 1 }));
        let wrong = Tensor4::zeros([1, 1, 2, 4]);
        assert!(matches!(m.forward(&wrong, false, 0), Err(NnError::ShapeMismatch { stage: 2, .. })));
        let extra_map = Tensor4::zeros([1, 2, 2, 3]);
        assert!(matches!(m.forward(&extra_map, false, 0), Err(NnError::ShapeMismatch { stage: 1, .. })));
    }

    #[test]
    fn from_params_checks_shapes() {
        let m = identity_conv_model();
        let mut p = m.params().clone();
        assert!(Model::from_params(m.spec().clone(), p.clone()).is_ok());
        p.tensors[2].pop();
        assert_eq!(Model::from_params(m.spec().clone(), p), Err(NnError::ParamShapeMismatch));
    }

    #[test]
    fn softmax_must_be_last() {
        let spec = ModelSpec {
            input: [1, 1, 4],
            n_classes: 2,
            layers: vec![
                LayerSpec::Flatten { features: 4 },
                LayerSpec::Softmax { in_features: 4, classes: 2 },
                LayerSpec::Dense { in_features: 2, units: 2, activation: Activation::Identity },
            ],
        };
        assert!(matches!(Model::<f32>::new(spec, 0), Err(NnError::InvalidLayer { stage: 2, .. })));
    }
}
