//! Small dense networks with batch normalization, hand-written backward
//! passes and an Adam optimizer.
//!
//! Parameters are exposed as one flat vector (layer order, weights before
//! biases, scale before shift) so that optimizers and gradient checks can
//! treat every network uniformly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const NORM_MOMENTUM: f64 = 0.99;
pub const NORM_EPS: f64 = 1e-5;

/// Row-major batch of vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Affine {
    /// Uniform in `+-sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn apply_row(&self, x: &[f64], out: &mut [f64]) {
        for (o, (w, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.bias))
        {
            *o = b + w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub width: usize,
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            scale: vec![1.0; width],
            shift: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            momentum: NORM_MOMENTUM,
            eps: NORM_EPS,
        }
    }

    fn apply_row_infer(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..self.width {
            let inv = 1.0 / (self.running_var[j] + self.eps).sqrt();
            out[j] = self.scale[j] * (x[j] - self.running_mean[j]) * inv + self.shift[j];
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Affine(Affine),
    BatchNorm(BatchNorm),
    Relu { width: usize },
}

impl Layer {
    fn in_width(&self) -> usize {
        match self {
            Layer::Affine(a) => a.inputs,
            Layer::BatchNorm(n) => n.width,
            Layer::Relu { width } => *width,
        }
    }

    fn out_width(&self) -> usize {
        match self {
            Layer::Affine(a) => a.outputs,
            Layer::BatchNorm(n) => n.width,
            Layer::Relu { width } => *width,
        }
    }

    fn param_count(&self) -> usize {
        match self {
            Layer::Affine(a) => a.weights.len() + a.bias.len(),
            Layer::BatchNorm(n) => 2 * n.width,
            Layer::Relu { .. } => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-layer record of a training-mode forward pass.
#[derive(Clone, Debug)]
enum LayerCache {
    Affine {
        input: Matrix,
    },
    BatchNorm {
        normalized: Matrix,
        inv_std: Vec<f64>,
    },
    Relu {
        mask: Vec<bool>,
    },
}

#[derive(Clone, Debug)]
pub struct ForwardCache {
    version: u64,
    batch: usize,
    layers: Vec<LayerCache>,
    /// Inputs to each ReLU, kept for callers that need to avoid kinks.
    pre_activations: Vec<Matrix>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre_activations
    }

    /// Normalized (pre scale/shift) values of each batch-norm layer.
    pub fn normalized(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().filter_map(|l| match l {
            LayerCache::BatchNorm { normalized, .. } => Some(normalized),
            _ => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuralNet {
    layers: Vec<Layer>,
    /// Bumped whenever parameters change; stale caches are rejected.
    version: u64,
}

impl NeuralNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::DimensionMismatch("network has no layers".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_width() != pair[1].in_width() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_width(),
                    i + 1,
                    pair[1].in_width()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            let ok = match l {
                Layer::Affine(a) => {
                    a.inputs > 0
                        && a.weights.len() == a.inputs * a.outputs
                        && a.bias.len() == a.outputs
                }
                Layer::BatchNorm(n) => {
                    n.width > 0
                        && [&n.scale, &n.shift, &n.running_mean, &n.running_var]
                            .iter()
                            .all(|v| v.len() == n.width)
                        && n.running_var.iter().all(|&v| v > 0.0)
                        && n.eps > 0.0
                        && (0.0..1.0).contains(&n.momentum)
                }
                Layer::Relu { width } => *width > 0,
            };
            if !ok {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i} has inconsistent parameters"
                )));
            }
        }
        Ok(Self { layers, version: 0 })
    }

    /// `input -> [affine -> relu -> batchnorm] per hidden width -> affine -> output`.
    pub fn mlp<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        let mut width = input;
        for &h in hidden {
            layers.push(Layer::Affine(Affine::init(width, h, rng)));
            layers.push(Layer::Relu { width: h });
            layers.push(Layer::BatchNorm(BatchNorm::new(h)));
            width = h;
        }
        layers.push(Layer::Affine(Affine::init(width, output, rng)));
        Self::new(layers)
    }

    /// Two hidden layers of 32 and 16 units.
    pub fn standard<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Result<Self> {
        Self::mlp(input, &[32, 16], output, rng)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable layer access; invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.version += 1;
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_width()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_width()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            match l {
                Layer::Affine(a) => {
                    out.extend_from_slice(&a.weights);
                    out.extend_from_slice(&a.bias);
                }
                Layer::BatchNorm(n) => {
                    out.extend_from_slice(&n.scale);
                    out.extend_from_slice(&n.shift);
                }
                Layer::Relu { .. } => {}
            }
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut rest = params;
        let mut take = |dst: &mut Vec<f64>| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for l in &mut self.layers {
            match l {
                Layer::Affine(a) => {
                    take(&mut a.weights);
                    take(&mut a.bias);
                }
                Layer::BatchNorm(n) => {
                    take(&mut n.scale);
                    take(&mut n.shift);
                }
                Layer::Relu { .. } => {}
            }
        }
        self.version += 1;
        Ok(())
    }

    fn check_input(&self, inputs: &Matrix) -> Result<()> {
        if inputs.cols != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input width {} but network expects {}",
                inputs.cols,
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Inference with running statistics. Pure; any batch size.
    pub fn infer(&self, inputs: &Matrix) -> Result<Matrix> {
        self.check_input(inputs)?;
        let mut out = Matrix::zeros(inputs.rows, self.output_dim());
        let mut a = Vec::new();
        let mut b = Vec::new();
        for i in 0..inputs.rows {
            self.infer_into(inputs.row(i), &mut a, &mut b);
            out.row_mut(i).copy_from_slice(&a);
        }
        Ok(out)
    }

    /// Single-sample inference.
    pub fn infer_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input width {} but network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut a = Vec::new();
        let mut b = Vec::new();
        self.infer_into(x, &mut a, &mut b);
        Ok(a)
    }

    /// Leaves the output in `cur`; `scratch` is reused between layers.
    fn infer_into(&self, x: &[f64], cur: &mut Vec<f64>, scratch: &mut Vec<f64>) {
        cur.clear();
        cur.extend_from_slice(x);
        for l in &self.layers {
            scratch.clear();
            scratch.resize(l.out_width(), 0.0);
            match l {
                Layer::Affine(a) => a.apply_row(cur, scratch),
                Layer::BatchNorm(n) => n.apply_row_infer(cur, scratch),
                Layer::Relu { .. } => {
                    for (o, &v) in scratch.iter_mut().zip(cur.iter()) {
                        *o = v.max(0.0);
                    }
                }
            }
            std::mem::swap(cur, scratch);
        }
    }

    /// Mode-dispatching forward pass. Training mode returns a cache and
    /// updates running statistics.
    pub fn forward(
        &mut self,
        inputs: &Matrix,
        mode: Mode,
    ) -> Result<(Matrix, Option<ForwardCache>)> {
        match mode {
            Mode::Infer => Ok((self.infer(inputs)?, None)),
            Mode::Train => {
                let (out, cache) = self.forward_train(inputs)?;
                Ok((out, Some(cache)))
            }
        }
    }

    /// Training-mode forward: batch statistics, running-statistic update.
    pub fn forward_train(&mut self, inputs: &Matrix) -> Result<(Matrix, ForwardCache)> {
        let (out, cache, stats) = self.train_pass(inputs)?;
        for (layer, (mean, var)) in self
            .layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::BatchNorm(n) => Some(n),
                _ => None,
            })
            .zip(stats)
        {
            let b = inputs.rows as f64;
            for j in 0..layer.width {
                let unbiased = var[j] * b / (b - 1.0);
                layer.running_mean[j] =
                    layer.momentum * layer.running_mean[j] + (1.0 - layer.momentum) * mean[j];
                layer.running_var[j] =
                    layer.momentum * layer.running_var[j] + (1.0 - layer.momentum) * unbiased;
            }
        }
        Ok((out, cache))
    }

    /// Training-mode outputs without touching running statistics.
    pub fn forward_batch_stats(&self, inputs: &Matrix) -> Result<(Matrix, ForwardCache)> {
        let (out, cache, _) = self.train_pass(inputs)?;
        Ok((out, cache))
    }

    #[allow(clippy::type_complexity)]
    fn train_pass(
        &self,
        inputs: &Matrix,
    ) -> Result<(Matrix, ForwardCache, Vec<(Vec<f64>, Vec<f64>)>)> {
        self.check_input(inputs)?;
        if inputs.rows < 2 {
            return Err(Error::DimensionMismatch(
                "training-mode forward needs a batch of at least 2".into(),
            ));
        }
        let batch = inputs.rows;
        let mut x = inputs.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::new();
        let mut stats = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Affine(a) => {
                    let mut y = Matrix::zeros(batch, a.outputs);
                    for i in 0..batch {
                        a.apply_row(x.row(i), y.row_mut(i));
                    }
                    caches.push(LayerCache::Affine { input: x });
                    x = y;
                }
                Layer::Relu { .. } => {
                    let mask: Vec<bool> = x.data.iter().map(|&v| v > 0.0).collect();
                    pre.push(x.clone());
                    for (v, &m) in x.data.iter_mut().zip(&mask) {
                        if !m {
                            *v = 0.0;
                        }
                    }
                    caches.push(LayerCache::Relu { mask });
                }
                Layer::BatchNorm(n) => {
                    let w = n.width;
                    let mut mean = vec![0.0; w];
                    let mut var = vec![0.0; w];
                    for i in 0..batch {
                        for (m, v) in mean.iter_mut().zip(x.row(i)) {
                            *m += v;
                        }
                    }
                    mean.iter_mut().for_each(|m| *m /= batch as f64);
                    for i in 0..batch {
                        for j in 0..w {
                            let d = x.row(i)[j] - mean[j];
                            var[j] += d * d;
                        }
                    }
                    var.iter_mut().for_each(|v| *v /= batch as f64);
                    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + n.eps).sqrt()).collect();
                    let mut normalized = Matrix::zeros(batch, w);
                    let mut y = Matrix::zeros(batch, w);
                    for i in 0..batch {
                        for j in 0..w {
                            let h = (x.row(i)[j] - mean[j]) * inv_std[j];
                            normalized.row_mut(i)[j] = h;
                            y.row_mut(i)[j] = n.scale[j] * h + n.shift[j];
                        }
                    }
                    caches.push(LayerCache::BatchNorm {
                        normalized,
                        inv_std,
                    });
                    stats.push((mean, var));
                    x = y;
                }
            }
        }
        Ok((
            x,
            ForwardCache {
                version: self.version,
                batch,
                layers: caches,
                pre_activations: pre,
            },
            stats,
        ))
    }

    /// Exact gradient of `sum(output_gradient .* outputs)` with respect to
    /// every parameter of the cached forward pass, flat in [`Self::params`]
    /// order. Gradients flow through the batch statistics.
    pub fn backward(&self, cache: &ForwardCache, output_gradient: &Matrix) -> Result<Vec<f64>> {
        if cache.version != self.version || cache.layers.len() != self.layers.len() {
            return Err(Error::DimensionMismatch(
                "stale or foreign forward cache".into(),
            ));
        }
        if output_gradient.rows != cache.batch || output_gradient.cols != self.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "output gradient is {}x{}, expected {}x{}",
                output_gradient.rows,
                output_gradient.cols,
                cache.batch,
                self.output_dim()
            )));
        }
        let batch = cache.batch;
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len()];
        let mut dy = output_gradient.clone();
        for (idx, (layer, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            match (layer, lc) {
                (Layer::Affine(a), LayerCache::Affine { input }) => {
                    let mut dw = vec![0.0; a.weights.len()];
                    let mut db = vec![0.0; a.outputs];
                    let mut dx = Matrix::zeros(batch, a.inputs);
                    for i in 0..batch {
                        let g = dy.row(i);
                        let xi = input.row(i);
                        let dxi = dx.row_mut(i);
                        for o in 0..a.outputs {
                            let go = g[o];
                            if go == 0.0 {
                                continue;
                            }
                            db[o] += go;
                            let wrow = &a.weights[o * a.inputs..(o + 1) * a.inputs];
                            let dwrow = &mut dw[o * a.inputs..(o + 1) * a.inputs];
                            for k in 0..a.inputs {
                                dwrow[k] += go * xi[k];
                                dxi[k] += go * wrow[k];
                            }
                        }
                    }
                    dw.extend(db);
                    grads[idx] = dw;
                    dy = dx;
                }
                (Layer::Relu { .. }, LayerCache::Relu { mask }) => {
                    for (g, &m) in dy.data.iter_mut().zip(mask) {
                        if !m {
                            *g = 0.0;
                        }
                    }
                }
                (
                    Layer::BatchNorm(n),
                    LayerCache::BatchNorm {
                        normalized,
                        inv_std,
                    },
                ) => {
                    let w = n.width;
                    let mut dscale = vec![0.0; w];
                    let mut dshift = vec![0.0; w];
                    for i in 0..batch {
                        for j in 0..w {
                            let g = dy.row(i)[j];
                            dshift[j] += g;
                            dscale[j] += g * normalized.row(i)[j];
                        }
                    }
                    let b = batch as f64;
                    let mut dx = Matrix::zeros(batch, w);
                    for i in 0..batch {
                        for j in 0..w {
                            let g = dy.row(i)[j];
                            dx.row_mut(i)[j] = n.scale[j] * inv_std[j] / b
                                * (b * g - dshift[j] - normalized.row(i)[j] * dscale[j]);
                        }
                    }
                    dscale.extend(dshift);
                    grads[idx] = dscale;
                    dy = dx;
                }
                _ => {
                    return Err(Error::DimensionMismatch(
                        "cache does not match network layers".into(),
                    ))
                }
            }
        }
        Ok(grads.concat())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            input_dim: self.input_dim(),
            output_dim: self.output_dim(),
            layers: self.layers.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::InvalidCheckpoint(format!(
                "unsupported format_version {}",
                ck.format_version
            )));
        }
        let net = Self::new(ck.layers).map_err(|e| Error::InvalidCheckpoint(e.to_string()))?;
        if net.input_dim() != ck.input_dim || net.output_dim() != ck.output_dim {
            return Err(Error::InvalidCheckpoint(
                "declared dimensions do not match layers".into(),
            ));
        }
        Ok(net)
    }
}

/// JSON checkpoint: layer list with row-major parameters and running
/// statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: Vec<Layer>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    /// One bias-corrected descent step on `params`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    /// Applies one step directly to a network's parameters.
    pub fn step_net(&mut self, net: &mut NeuralNet, grads: &[f64]) -> Result<()> {
        let mut p = net.params();
        self.update(&mut p, grads)?;
        net.set_params(&p)
    }
}
