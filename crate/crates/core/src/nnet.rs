//! `Enc(x) = NN(PE(x))`: a ReLU multi-layer perceptron with hand-written
//! backpropagation, the class embedding matrix `T`, and the checkpoint format.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::encoders::{EncoderSpec, PositionEncoding};
use crate::error::{Error, Result};
use crate::geometry::SphericalPoint;
use crate::training::{LossConfig, TrainConfig};

/// Network shape: `h` hidden ReLU layers of `k` units, embedding size `d`, `c` classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub h: usize,
    pub k: usize,
    pub d: usize,
    pub c: usize,
}

impl Arch {
    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.d == 0 || self.c == 0 {
            return Err(Error::InvalidConfig(format!(
                "network dims must be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Fully connected layer computing `weight * x + bias`, with `weight` shaped `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Hidden layers followed by a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<DenseLayer>,
}

impl MlpParams {
    /// Checks that layer shapes chain and returns the parameters.
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeMismatch("network needs an output layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i}: bias length {} != {} rows",
                    l.bias.len(),
                    l.out_dim()
                )));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {} outputs {} but layer {} takes {}",
                    i,
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        let params = Self {
            layers: layers
                .into_iter()
                .map(|l| DenseLayer {
                    weight: l.weight.as_standard_layout().into_owned(),
                    bias: l.bias,
                })
                .collect(),
        };
        if !params.is_finite() {
            return Err(Error::InvalidConfig("non-finite network parameter".into()));
        }
        Ok(params)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.out_dim(), l.in_dim()))
                .collect(),
        }
    }
}

/// Class embedding matrix `T` (`d x c`); column `y` scores class `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbeddings(Array2<f64>);

impl ClassEmbeddings {
    pub fn new(t: Array2<f64>) -> Result<Self> {
        if t.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("non-finite class embedding".into()));
        }
        Ok(Self(t.as_standard_layout().into_owned()))
    }

    pub fn zeros(d: usize, c: usize) -> Self {
        Self(Array2::zeros((d, c)))
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn matrix_mut(&mut self) -> &mut Array2<f64> {
        &mut self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.0.ncols()
    }

    pub fn column(&self, y: usize) -> ArrayView1<'_, f64> {
        self.0.column(y)
    }
}

/// Mutable views over every parameter tensor, in a fixed order
/// (layer weights and biases front to back, then `T`).
pub fn param_slices_mut<'a>(
    params: &'a mut MlpParams,
    classes: &'a mut ClassEmbeddings,
) -> Vec<&'a mut [f64]> {
    let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * params.layers.len() + 1);
    for l in params.layers.iter_mut() {
        out.push(l.weight.as_slice_mut().expect("standard layout"));
        out.push(l.bias.as_slice_mut().expect("contiguous"));
    }
    out.push(classes.0.as_slice_mut().expect("standard layout"));
    out
}

/// Read-only counterpart of [`param_slices_mut`].
pub fn param_slices<'a>(params: &'a MlpParams, classes: &'a ClassEmbeddings) -> Vec<&'a [f64]> {
    let mut out: Vec<&[f64]> = Vec::with_capacity(2 * params.layers.len() + 1);
    for l in params.layers.iter() {
        out.push(l.weight.as_slice().expect("standard layout"));
        out.push(l.bias.as_slice().expect("contiguous"));
    }
    out.push(classes.0.as_slice().expect("standard layout"));
    out
}

/// Glorot-uniform weights, zero biases, `T ~ N(0, 0.01^2)`.
pub fn init_params<R: Rng + ?Sized>(
    input_dim: usize,
    h: usize,
    k: usize,
    d: usize,
    c: usize,
    rng: &mut R,
) -> Result<(MlpParams, ClassEmbeddings)> {
    if input_dim == 0 {
        return Err(Error::InvalidConfig("input dim must be >= 1".into()));
    }
    Arch { h, k, d, c }.validate()?;
    let mut dims = vec![input_dim];
    dims.extend(std::iter::repeat_n(k, h));
    dims.push(d);

    let layers = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(rng));
            DenseLayer {
                weight,
                bias: Array1::zeros(fan_out),
            }
        })
        .collect();

    let normal = Normal::new(0.0, 0.01).expect("valid std");
    let t = Array2::from_shape_simple_fn((d, c), || normal.sample(rng));
    Ok((MlpParams { layers }, ClassEmbeddings(t)))
}

fn relu_inplace(z: &mut Array2<f64>) {
    z.mapv_inplace(|v| v.max(0.0));
}

fn affine(input: ArrayView2<'_, f64>, layer: &DenseLayer) -> Array2<f64> {
    let mut z = input.dot(&layer.weight.t());
    z += &layer.bias;
    z
}

/// Embeds every row of `inputs` (`n x input_dim`), returning `n x d`.
pub fn forward_batch(params: &MlpParams, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if inputs.ncols() != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "input has {} columns, network expects {}",
            inputs.ncols(),
            params.input_dim()
        )));
    }
    let last = params.layers.len() - 1;
    let mut act = affine(inputs, &params.layers[0]);
    if last > 0 {
        relu_inplace(&mut act);
    }
    for (i, layer) in params.layers.iter().enumerate().skip(1) {
        act = affine(act.view(), layer);
        if i < last {
            relu_inplace(&mut act);
        }
    }
    Ok(act)
}

/// Embedding of a single position encoding.
pub fn forward(params: &MlpParams, pe: &[f64]) -> Result<Vec<f64>> {
    let input = ArrayView2::from_shape((1, pe.len()), pe)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok(forward_batch(params, input)?.into_raw_vec_and_offset().0)
}

/// Raw logits `embedding . T[:, y]` for every class.
pub fn class_scores(embedding: &[f64], classes: &ClassEmbeddings) -> Result<Vec<f64>> {
    if embedding.len() != classes.dim() {
        return Err(Error::ShapeMismatch(format!(
            "embedding has length {}, class matrix has {} rows",
            embedding.len(),
            classes.dim()
        )));
    }
    Ok(ArrayView1::from(embedding).dot(&classes.0).to_vec())
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// A mini-batch of encoded positives and their negatives.
///
/// `negatives` holds `n_neg` rows per positive, positive-major: rows
/// `b * n_neg .. (b + 1) * n_neg` belong to positive `b`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub positives: Array2<f64>,
    pub classes: Vec<usize>,
    pub negatives: Array2<f64>,
}

impl Batch {
    pub fn new(positives: Array2<f64>, classes: Vec<usize>, negatives: Array2<f64>) -> Result<Self> {
        let b = Self {
            positives,
            classes,
            negatives,
        };
        b.validate()?;
        Ok(b)
    }

    /// Builds a batch from per-example encodings.
    pub fn from_encodings(
        positives: &[PositionEncoding],
        classes: &[usize],
        negatives: &[Vec<PositionEncoding>],
    ) -> Result<Self> {
        let width = positives.first().map_or(0, |p| p.len());
        let pos = stack(positives.iter(), positives.len(), width)?;
        let n_neg = negatives.first().map_or(0, |n| n.len());
        if negatives.iter().any(|n| n.len() != n_neg) {
            return Err(Error::ShapeMismatch("ragged negative sets".into()));
        }
        let neg = stack(negatives.iter().flatten(), n_neg * negatives.len(), width)?;
        if !negatives.is_empty() && negatives.len() != positives.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} negative sets for {} positives",
                negatives.len(),
                positives.len()
            )));
        }
        Self::new(pos, classes.to_vec(), neg)
    }

    fn validate(&self) -> Result<()> {
        let b = self.positives.nrows();
        if b == 0 {
            return Err(Error::EmptyInput);
        }
        if self.classes.len() != b {
            return Err(Error::ShapeMismatch(format!(
                "{} classes for {} positives",
                self.classes.len(),
                b
            )));
        }
        if !self.negatives.nrows().is_multiple_of(b) {
            return Err(Error::ShapeMismatch(format!(
                "{} negative rows is not a multiple of {} positives",
                self.negatives.nrows(),
                b
            )));
        }
        if self.negatives.nrows() > 0 && self.negatives.ncols() != self.positives.ncols() {
            return Err(Error::ShapeMismatch("negative encodings have a different width".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positives.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn negatives_per_positive(&self) -> usize {
        self.negatives.nrows() / self.positives.nrows()
    }
}

fn stack<'a>(
    rows: impl Iterator<Item = &'a PositionEncoding>,
    n: usize,
    width: usize,
) -> Result<Array2<f64>> {
    let mut data = Vec::with_capacity(n * width);
    for r in rows {
        if r.len() != width {
            return Err(Error::ShapeMismatch(format!(
                "encoding of length {} in a batch of width {width}",
                r.len()
            )));
        }
        data.extend_from_slice(r.values());
    }
    Array2::from_shape_vec((n, width), data).map_err(|e| Error::ShapeMismatch(e.to_string()))
}

/// Multiplicity of the positive-sample terms for one example.
///
/// The objective sums all three term groups once per negative sample, so the
/// positive terms repeat `n_neg` times; with no negatives they count once.
pub fn positive_multiplicity(n_neg: usize) -> f64 {
    n_neg.max(1) as f64
}

struct Trace {
    /// Input of every layer: the stacked encodings, then each hidden ReLU output.
    activations: Vec<Array2<f64>>,
    embeddings: Array2<f64>,
    logits: Array2<f64>,
}

fn check_shapes(params: &MlpParams, classes: &ClassEmbeddings, batch: &Batch) -> Result<()> {
    batch.validate()?;
    if params.output_dim() != classes.dim() {
        return Err(Error::ShapeMismatch(format!(
            "network outputs {} but class matrix has {} rows",
            params.output_dim(),
            classes.dim()
        )));
    }
    if batch.positives.ncols() != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "batch width {} != network input {}",
            batch.positives.ncols(),
            params.input_dim()
        )));
    }
    let c = classes.num_classes();
    if let Some(&bad) = batch.classes.iter().find(|&&y| y >= c) {
        return Err(Error::ClassIdOutOfRange {
            class_id: bad,
            num_classes: c,
            row: None,
        });
    }
    Ok(())
}

fn run_forward(params: &MlpParams, classes: &ClassEmbeddings, batch: &Batch) -> Trace {
    let b = batch.len();
    let n_rows = b + batch.negatives.nrows();
    let mut inputs = Array2::zeros((n_rows, batch.positives.ncols()));
    inputs.slice_mut(s![..b, ..]).assign(&batch.positives);
    if batch.negatives.nrows() > 0 {
        inputs.slice_mut(s![b.., ..]).assign(&batch.negatives);
    }

    let last = params.layers.len() - 1;
    let mut activations = Vec::with_capacity(last + 1);
    activations.push(inputs);
    for layer in &params.layers[..last] {
        let mut z = affine(activations[activations.len() - 1].view(), layer);
        relu_inplace(&mut z);
        activations.push(z);
    }
    let embeddings = affine(activations[last].view(), &params.layers[last]);
    let logits = embeddings.dot(&classes.0);
    Trace {
        activations,
        embeddings,
        logits,
    }
}

/// Batch-mean contributions of the three term groups of the negated log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    /// `beta * -log sigma(z_y)` at each positive, repeated per negative sample.
    pub positive: f64,
    /// `-log(1 - sigma(z_i))` for every other class at each positive.
    pub other_classes: f64,
    /// `-log(1 - sigma(z_i))` for every class at each negative sample.
    pub negatives: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.positive + self.other_classes + self.negatives
    }
}

/// Loss terms of the batch and, optionally, their gradient with respect to the logits.
fn loss_and_logit_grad(
    logits: &Array2<f64>,
    batch: &Batch,
    beta: f64,
    want_grad: bool,
) -> (LossTerms, Option<Array2<f64>>) {
    let b = batch.len();
    let mult = positive_multiplicity(batch.negatives_per_positive());
    let scale = 1.0 / b as f64;
    let mut grad = want_grad.then(|| Array2::zeros(logits.raw_dim()));
    let (mut positive, mut other, mut negative) = (0.0, 0.0, 0.0);

    for (row, &y) in batch.classes.iter().enumerate() {
        for (i, &zi) in logits.row(row).iter().enumerate() {
            if i == y {
                positive += beta * softplus(-zi);
            } else {
                other += softplus(zi);
            }
            if let Some(g) = grad.as_mut() {
                g[[row, i]] = if i == y {
                    mult * beta * (sigmoid(zi) - 1.0) * scale
                } else {
                    mult * sigmoid(zi) * scale
                };
            }
        }
    }
    for row in b..logits.nrows() {
        for (i, &zi) in logits.row(row).iter().enumerate() {
            negative += softplus(zi);
            if let Some(g) = grad.as_mut() {
                g[[row, i]] = sigmoid(zi) * scale;
            }
        }
    }
    let terms = LossTerms {
        positive: mult * positive * scale,
        other_classes: mult * other * scale,
        negatives: negative * scale,
    };
    (terms, grad)
}

/// The three term groups of the batch-mean negated log-likelihood.
pub fn loss_terms(
    params: &MlpParams,
    classes: &ClassEmbeddings,
    batch: &Batch,
    loss_cfg: &LossConfig,
) -> Result<LossTerms> {
    check_shapes(params, classes, batch)?;
    let trace = run_forward(params, classes, batch);
    let (terms, _) = loss_and_logit_grad(&trace.logits, batch, loss_cfg.beta, false);
    if !terms.total().is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok(terms)
}

/// Batch-mean negated log-likelihood without gradients.
pub fn loss_value(
    params: &MlpParams,
    classes: &ClassEmbeddings,
    batch: &Batch,
    loss_cfg: &LossConfig,
) -> Result<f64> {
    Ok(loss_terms(params, classes, batch, loss_cfg)?.total())
}

/// Analytic gradients of the batch-mean negated log-likelihood.
pub fn gradients(
    params: &MlpParams,
    classes: &ClassEmbeddings,
    batch: &Batch,
    loss_cfg: &LossConfig,
) -> Result<(MlpParams, ClassEmbeddings, f64)> {
    check_shapes(params, classes, batch)?;
    let trace = run_forward(params, classes, batch);
    let (terms, grad_logits) = loss_and_logit_grad(&trace.logits, batch, loss_cfg.beta, true);
    let loss = terms.total();
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let grad_logits = grad_logits.expect("requested");

    let grad_t = trace.embeddings.t().dot(&grad_logits);
    let mut upstream = grad_logits.dot(&classes.0.t());

    let mut grads = params.zeros_like();
    for i in (0..params.layers.len()).rev() {
        grads.layers[i].weight = upstream.t().dot(&trace.activations[i]);
        grads.layers[i].bias = upstream.sum_axis(Axis(0));
        if i > 0 {
            let mut down = upstream.dot(&params.layers[i].weight);
            ndarray::Zip::from(&mut down)
                .and(&trace.activations[i])
                .for_each(|g, &a| {
                    // ReLU gradient is zero wherever the activation was clamped
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
            upstream = down;
        }
    }
    for l in grads.layers.iter_mut() {
        if !l.weight.is_standard_layout() {
            l.weight = l.weight.as_standard_layout().into_owned();
        }
    }
    let grad_t = grad_t.as_standard_layout().into_owned();
    Ok((grads, ClassEmbeddings(grad_t), loss))
}

const FD_SUBSET: usize = 256;

/// Compares analytic gradients with central finite differences.
///
/// Every coordinate is checked when the model has at most `2000` parameters;
/// otherwise a seeded subset of `256` coordinates. Returns the largest error,
/// relative where `max(|analytic|, |numeric|) >= 1e-8` and absolute below that.
pub fn finite_diff_check(
    params: &MlpParams,
    classes: &ClassEmbeddings,
    batch: &Batch,
    loss_cfg: &LossConfig,
    eps: f64,
) -> Result<f64> {
    finite_diff_check_with(params, classes, batch, loss_cfg, eps, 2000, 0)
}

pub fn finite_diff_check_with(
    params: &MlpParams,
    classes: &ClassEmbeddings,
    batch: &Batch,
    loss_cfg: &LossConfig,
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidConfig(format!("eps must be positive, got {eps}")));
    }
    let (g_params, g_classes, _) = gradients(params, classes, batch, loss_cfg)?;
    let analytic: Vec<f64> = param_slices(&g_params, &g_classes)
        .into_iter()
        .flatten()
        .copied()
        .collect();
    let total = analytic.len();

    let coords: Vec<usize> = if total <= max_coords {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = index::sample(&mut rng, total, FD_SUBSET.min(total)).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut work_params = params.clone();
    let mut work_classes = classes.clone();
    let mut worst: f64 = 0.0;
    for &coord in &coords {
        let original = read_coord(&work_params, &work_classes, coord);
        write_coord(&mut work_params, &mut work_classes, coord, original + eps);
        let plus = loss_value(&work_params, &work_classes, batch, loss_cfg)?;
        write_coord(&mut work_params, &mut work_classes, coord, original - eps);
        let minus = loss_value(&work_params, &work_classes, batch, loss_cfg)?;
        write_coord(&mut work_params, &mut work_classes, coord, original);

        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[coord];
        let scale = a.abs().max(numeric.abs());
        let err = if scale < 1e-8 {
            (a - numeric).abs()
        } else {
            (a - numeric).abs() / scale
        };
        worst = worst.max(err);
    }
    Ok(worst)
}

fn locate(slices: &[usize], mut coord: usize) -> (usize, usize) {
    for (i, &len) in slices.iter().enumerate() {
        if coord < len {
            return (i, coord);
        }
        coord -= len;
    }
    panic!("parameter coordinate out of range");
}

fn read_coord(params: &MlpParams, classes: &ClassEmbeddings, coord: usize) -> f64 {
    let slices = param_slices(params, classes);
    let lens: Vec<usize> = slices.iter().map(|s| s.len()).collect();
    let (t, i) = locate(&lens, coord);
    slices[t][i]
}

fn write_coord(params: &mut MlpParams, classes: &mut ClassEmbeddings, coord: usize, value: f64) {
    let mut slices = param_slices_mut(params, classes);
    let lens: Vec<usize> = slices.iter().map(|s| s.len()).collect();
    let (t, i) = locate(&lens, coord);
    slices[t][i] = value;
}

/// A position encoder together with its network and class embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationModel {
    pub encoder: EncoderSpec,
    pub params: MlpParams,
    pub classes: ClassEmbeddings,
}

impl LocationModel {
    pub fn new(encoder: EncoderSpec, params: MlpParams, classes: ClassEmbeddings) -> Result<Self> {
        if encoder.output_dim() != params.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "encoder emits {} features, network takes {}",
                encoder.output_dim(),
                params.input_dim()
            )));
        }
        if params.output_dim() != classes.dim() {
            return Err(Error::ShapeMismatch(format!(
                "network emits {} dims, class matrix has {} rows",
                params.output_dim(),
                classes.dim()
            )));
        }
        Ok(Self {
            encoder,
            params,
            classes,
        })
    }

    pub fn arch(&self) -> Arch {
        Arch {
            h: self.params.hidden_layers(),
            k: if self.params.hidden_layers() > 0 {
                self.params.layers[0].out_dim()
            } else {
                self.params.output_dim()
            },
            d: self.params.output_dim(),
            c: self.classes.num_classes(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.num_classes()
    }

    /// Encodes `points` into an `n x input_dim` matrix.
    pub fn encode_points(&self, points: &[SphericalPoint]) -> Array2<f64> {
        encode_matrix(&self.encoder, points)
    }

    /// `Enc(x)` for every point, `n x d`.
    pub fn embed(&self, points: &[SphericalPoint]) -> Array2<f64> {
        forward_batch(&self.params, self.encode_points(points).view())
            .expect("encoder width checked at construction")
    }

    /// Raw class logits for every point, `n x c`.
    pub fn logits(&self, points: &[SphericalPoint]) -> Array2<f64> {
        self.embed(points).dot(&self.classes.0)
    }
}

/// Encodes `points` row by row.
pub fn encode_matrix(spec: &EncoderSpec, points: &[SphericalPoint]) -> Array2<f64> {
    let width = spec.output_dim();
    let mut data = Vec::with_capacity(points.len() * width);
    for p in points {
        crate::encoders::encode_into(spec, p, &mut data);
    }
    Array2::from_shape_vec((points.len(), width), data).expect("encoder emits output_dim values")
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// On-disk model. Layer weights are row-major (`out x in`), `T` is column-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub encoder: EncoderSpec,
    pub arch: Arch,
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
    #[serde(rename = "T")]
    pub t: Vec<f64>,
    pub seed: u64,
    pub format_version: u32,
    #[serde(default)]
    pub loss_history: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_config: Option<LossConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
}

impl Checkpoint {
    pub fn from_model(model: &LocationModel, seed: u64) -> Self {
        let layers = model
            .params
            .layers
            .iter()
            .map(|l| (l.weight.iter().copied().collect(), l.bias.to_vec()))
            .collect();
        // column-major: transpose iterates columns of T contiguously
        let t = model.classes.0.t().iter().copied().collect();
        Self {
            encoder: model.encoder.clone(),
            arch: model.arch(),
            layers,
            t,
            seed,
            format_version: CHECKPOINT_FORMAT_VERSION,
            loss_history: Vec::new(),
            loss_config: None,
            train_config: None,
        }
    }

    pub fn to_model(&self) -> Result<LocationModel> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported checkpoint format_version {}",
                self.format_version
            )));
        }
        let Arch { h, k, d, c } = self.arch;
        if self.layers.len() != h + 1 {
            return Err(Error::ShapeMismatch(format!(
                "arch declares {} layers, checkpoint has {}",
                h + 1,
                self.layers.len()
            )));
        }
        let mut dims = vec![self.encoder.output_dim()];
        dims.extend(std::iter::repeat_n(k, h));
        dims.push(d);
        let layers = self
            .layers
            .iter()
            .zip(dims.windows(2))
            .map(|((w, b), io)| {
                let weight = Array2::from_shape_vec((io[1], io[0]), w.clone())
                    .map_err(|e| Error::ShapeMismatch(format!("layer weights: {e}")))?;
                Ok(DenseLayer {
                    weight,
                    bias: Array1::from(b.clone()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let params = MlpParams::new(layers)?;
        let t = Array2::from_shape_vec((c, d), self.t.clone())
            .map_err(|e| Error::ShapeMismatch(format!("class matrix: {e}")))?
            .reversed_axes();
        let classes = ClassEmbeddings::new(t)?;
        LocationModel::new(self.encoder.clone(), params, classes)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::Variant;
    use crate::geometry::make_point;
    use ndarray::array;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn cfg(beta: f64) -> LossConfig {
        LossConfig {
            beta,
            negatives_per_positive: 1,
        }
    }

    #[test]
    fn init_shapes_chain() {
        let (p, t) = init_params(3, 1, 4, 4, 2, &mut rng(0)).unwrap();
        assert_eq!(p.layers().len(), 2);
        assert_eq!(p.layers()[0].weight.dim(), (4, 3));
        assert_eq!(p.layers()[0].bias.len(), 4);
        assert_eq!(p.layers()[1].weight.dim(), (4, 4));
        assert_eq!(p.layers()[1].bias.len(), 4);
        assert_eq!(t.matrix().dim(), (4, 2));
        assert!(p.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_params(5, 2, 7, 3, 4, &mut rng(11)).unwrap();
        let b = init_params(5, 2, 7, 3, 4, &mut rng(11)).unwrap();
        assert_eq!(a, b);
        let limit = (6.0f64 / 12.0).sqrt();
        assert!(a.0.layers()[0].weight.iter().all(|w| w.abs() <= limit));
        assert!(init_params(0, 1, 1, 1, 1, &mut rng(0)).is_err());
        assert!(init_params(1, 1, 1, 1, 0, &mut rng(0)).is_err());
    }

    #[test]
    fn forward_zero_weights() {
        let (mut p, _) = init_params(3, 1, 4, 2, 1, &mut rng(0)).unwrap();
        for l in p.layers_mut() {
            l.weight.fill(0.0);
        }
        assert_eq!(forward(&p, &[0.3, -1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn forward_single_linear_layer() {
        let p = MlpParams::new(vec![DenseLayer {
            weight: array![[1.0, 2.0], [-1.0, 0.5], [0.0, 3.0]],
            bias: array![0.5, 0.0, -1.0],
        }])
        .unwrap();
        // no ReLU on the output layer
        assert_eq!(forward(&p, &[2.0, -1.0]).unwrap(), vec![0.5, -2.5, -4.0]);
        assert!(matches!(forward(&p, &[1.0]), Err(Error::ShapeMismatch(_))));
    }

    fn forward_oracle(p: &MlpParams, x: &[f64]) -> Vec<f64> {
        let mut act = x.to_vec();
        let n = p.layers().len();
        for (li, l) in p.layers().iter().enumerate() {
            let mut next = vec![0.0; l.out_dim()];
            for (r, out) in next.iter_mut().enumerate() {
                let mut acc = l.bias[r];
                for (c, a) in act.iter().enumerate() {
                    acc += l.weight[[r, c]] * a;
                }
                *out = if li + 1 < n { acc.max(0.0) } else { acc };
            }
            act = next;
        }
        act
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        let mut r = rng(3);
        let (mut p, _) = init_params(6, 2, 5, 4, 3, &mut r).unwrap();
        for l in p.layers_mut() {
            l.bias.mapv_inplace(|_| r.random_range(-0.5..0.5));
        }
        let x: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
        let ours = forward(&p, &x).unwrap();
        for (a, b) in ours.iter().zip(forward_oracle(&p, &x)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn output_layer_is_positively_homogeneous() {
        let (mut p, _) = init_params(4, 1, 6, 3, 2, &mut rng(5)).unwrap();
        let x = [0.1, -0.4, 0.9, 0.3];
        let base = forward(&p, &x).unwrap();
        let out = p.layers_mut().last_mut().unwrap();
        out.weight.mapv_inplace(|w| w * 2.0);
        let scaled = forward(&p, &x).unwrap();
        for (a, b) in base.iter().zip(scaled) {
            assert_eq!(2.0 * a, b);
        }
    }

    #[test]
    fn class_score_examples() {
        let t = ClassEmbeddings::zeros(3, 4);
        let s = class_scores(&[1.0, 2.0, 3.0], &t).unwrap();
        assert_eq!(s, vec![0.0; 4]);
        assert!(s.iter().all(|&z| sigmoid(z) == 0.5));

        let e = [1.0, -2.0, 0.5];
        let t = ClassEmbeddings::new(Array2::from_shape_vec((3, 1), e.to_vec()).unwrap()).unwrap();
        assert_eq!(class_scores(&e, &t).unwrap(), vec![5.25]);

        let t = ClassEmbeddings::new(array![[1.0, 0.0], [2.0, -1.0], [0.5, 3.0]]).unwrap();
        let s = class_scores(&e, &t).unwrap();
        // hand multiply
        assert_eq!(s, vec![1.0 - 4.0 + 0.25, 0.0 + 2.0 + 1.5]);
        assert!(class_scores(&[1.0], &t).is_err());
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1e4), 1e4);
        assert!(softplus(-1e4) >= 0.0 && softplus(-1e4) < 1e-300);
        assert!(softplus(800.0).is_finite());
    }

    fn zero_model(input: usize, d: usize, c: usize) -> (MlpParams, ClassEmbeddings) {
        let p = MlpParams::new(vec![DenseLayer::zeros(d, input)]).unwrap();
        (p, ClassEmbeddings::zeros(d, c))
    }

    #[test]
    fn zero_params_one_positive_no_negatives() {
        let (p, t) = zero_model(3, 2, 2);
        let batch = Batch::new(Array2::ones((1, 3)), vec![0], Array2::zeros((0, 3))).unwrap();
        let (_, _, loss) = gradients(&p, &t, &batch, &cfg(1.0)).unwrap();
        assert!((loss - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    fn random_setup(seed: u64, h: usize, k: usize, d: usize, c: usize, b: usize, n_neg: usize) -> (MlpParams, ClassEmbeddings, Batch) {
        let mut r = rng(seed);
        let spec = EncoderSpec::new(Variant::SphereC, 2, 0.3).unwrap();
        let (mut p, mut t) = init_params(spec.output_dim(), h, k, d, c, &mut r).unwrap();
        for l in p.layers_mut() {
            l.bias.mapv_inplace(|_| r.random_range(-0.3..0.3));
        }
        t.matrix_mut().mapv_inplace(|_| r.random_range(-1.0..1.0));
        let pts = crate::geometry::sample_uniform_sphere(&mut r, b * (1 + n_neg));
        let pos = encode_matrix(&spec, &pts[..b]);
        let neg = encode_matrix(&spec, &pts[b..]);
        let classes = (0..b).map(|_| r.random_range(0..c)).collect();
        (p, t, Batch::new(pos, classes, neg).unwrap())
    }

    #[test]
    fn gradient_matches_finite_differences_tiny_net() {
        let (p, t, batch) = random_setup(1, 1, 3, 3, 2, 4, 1);
        let err = finite_diff_check(&p, &t, &batch, &cfg(2.0), 1e-5).unwrap();
        assert!(err < 1e-5, "max rel err {err}");
    }

    #[test]
    fn finite_difference_error_shrinks_with_eps() {
        let (p, t, batch) = random_setup(2, 1, 4, 3, 3, 5, 2);
        let coarse = finite_diff_check(&p, &t, &batch, &cfg(1.5), 1e-3).unwrap();
        let fine = finite_diff_check(&p, &t, &batch, &cfg(1.5), 1e-5).unwrap();
        assert!(fine < coarse, "eps=1e-5 err {fine} vs eps=1e-3 err {coarse}");
    }

    #[test]
    fn finite_difference_absolute_fallback_at_zero_gradient() {
        // zero network and zero T: the only nonzero gradients are in T, and
        // those vanish too when the embedding is zero
        let (p, t) = zero_model(3, 2, 2);
        let batch = Batch::new(Array2::ones((1, 3)), vec![0], Array2::ones((1, 3))).unwrap();
        let (g, gt, _) = gradients(&p, &t, &batch, &cfg(1.0)).unwrap();
        assert!(param_slices(&g, &gt).into_iter().flatten().all(|&x| x == 0.0));
        let err = finite_diff_check(&p, &t, &batch, &cfg(1.0), 1e-5).unwrap();
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn finite_difference_subsamples_large_models() {
        let (p, t, batch) = random_setup(4, 1, 64, 32, 3, 3, 1);
        let err = finite_diff_check(&p, &t, &batch, &cfg(1.0), 1e-5).unwrap();
        assert!(err < 1e-4, "err {err}");
        assert!(finite_diff_check(&p, &t, &batch, &cfg(1.0), 0.0).is_err());
    }

    #[test]
    fn doubling_beta_doubles_positive_class_gradient() {
        let (p, t, mut batch) = random_setup(5, 1, 4, 3, 2, 1, 0);
        batch.negatives = Array2::zeros((0, batch.positives.ncols()));
        let y = batch.classes[0];
        let grad_t_col = |beta: f64| {
            let (_, gt, _) = gradients(&p, &t, &batch, &cfg(beta)).unwrap();
            gt.column(y).to_owned()
        };
        let g1 = grad_t_col(1.0);
        let g2 = grad_t_col(2.0);
        // with no negatives and c=2 the column-y gradient is the positive term alone
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert!((2.0 * a - b).abs() < 1e-14 * a.abs().max(1.0));
        }
    }

    #[test]
    fn gradients_are_bitwise_deterministic() {
        let (p, t, batch) = random_setup(6, 2, 8, 5, 4, 6, 2);
        let a = gradients(&p, &t, &batch, &cfg(4.0)).unwrap();
        let b = gradients(&p, &t, &batch, &cfg(4.0)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2.to_bits(), b.2.to_bits());
    }

    #[test]
    fn loss_is_finite_for_large_logits() {
        let (p, mut t, batch) = random_setup(7, 1, 4, 3, 2, 3, 1);
        t.matrix_mut().mapv_inplace(|v| v * 1e3);
        let loss = loss_value(&p, &t, &batch, &cfg(1.0)).unwrap();
        assert!(loss.is_finite());
    }

    #[test]
    fn shape_errors() {
        let (p, t, batch) = random_setup(8, 1, 4, 3, 2, 3, 1);
        let wrong_t = ClassEmbeddings::zeros(5, 2);
        assert!(matches!(gradients(&p, &wrong_t, &batch, &cfg(1.0)), Err(Error::ShapeMismatch(_))));
        let mut bad = batch.clone();
        bad.classes[0] = 9;
        assert!(matches!(gradients(&p, &t, &bad, &cfg(1.0)), Err(Error::ClassIdOutOfRange { .. })));
        assert!(Batch::new(Array2::zeros((2, 3)), vec![0], Array2::zeros((0, 3))).is_err());
        assert!(Batch::new(Array2::zeros((2, 3)), vec![0, 1], Array2::zeros((3, 3))).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_layout() {
        let spec = EncoderSpec::new(Variant::SphereC, 1, 1.0).unwrap();
        let (p, _) = init_params(3, 1, 2, 2, 3, &mut rng(9)).unwrap();
        let t = ClassEmbeddings::new(array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let model = LocationModel::new(spec, p, t).unwrap();
        let ck = Checkpoint::from_model(&model, 9);
        assert_eq!(ck.t, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(ck.layers[0].0.len(), 6);
        assert_eq!(ck.arch, Arch { h: 1, k: 2, d: 2, c: 3 });
        let json = ck.to_json().unwrap();
        let back = Checkpoint::from_json(&json).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_model().unwrap(), model);

        let mut bad = ck.clone();
        bad.format_version = 2;
        assert!(bad.to_model().is_err());
        let mut bad = ck;
        bad.t.pop();
        assert!(bad.to_model().is_err());
    }

    #[test]
    fn model_embeds_points() {
        let spec = EncoderSpec::new(Variant::Grid, 2, 0.1).unwrap();
        let (p, t) = init_params(spec.output_dim(), 1, 5, 4, 2, &mut rng(10)).unwrap();
        let model = LocationModel::new(spec.clone(), p.clone(), t).unwrap();
        let pt = make_point(0.4, -0.2).unwrap();
        let e = model.embed(&[pt]);
        let direct = forward(&p, spec.encode(&pt).values()).unwrap();
        assert_eq!(e.row(0).to_vec(), direct);
        assert_eq!(model.logits(&[pt, pt]).dim(), (2, 2));
    }
}
