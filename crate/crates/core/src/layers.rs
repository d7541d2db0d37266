//! 1D network layers and the two residual block types.
//!
//! Every layer implements [`Module`]. Forward passes take `&self`; the only
//! state that changes during training, batch-norm running statistics, is
//! reported through [`ForwardCtx`] and committed with [`Module::apply_stats`].

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autograd::{Graph, Var};
use crate::tensor::{contract, ConvGeometry, Result, Tensor, TensorError};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// A named trainable tensor.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Arc<Tensor>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value: Arc::new(value),
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Mutable access; clones only if a graph still holds the tensor.
    pub fn make_mut(&mut self) -> &mut Tensor {
        Arc::make_mut(&mut self.value)
    }
}

/// Batch statistics observed by one batch-norm layer during a training pass.
#[derive(Debug, Clone)]
pub struct StatUpdate {
    pub layer: String,
    pub mean: Vec<f64>,
    /// Unbiased variance of the batch.
    pub var: Vec<f64>,
}

/// Per-pass state threaded through every forward call.
pub struct ForwardCtx<'g> {
    pub graph: &'g Graph,
    pub training: bool,
    track_grads: bool,
    rng: ChaCha8Rng,
    bindings: Vec<(String, Var<'g>)>,
    overrides: Vec<(String, Var<'g>)>,
    stats: Vec<StatUpdate>,
}

impl<'g> ForwardCtx<'g> {
    /// Inference: running statistics, no dropout, no gradient tracking.
    pub fn inference(graph: &'g Graph) -> Self {
        Self {
            graph,
            training: false,
            track_grads: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            bindings: Vec::new(),
            overrides: Vec::new(),
            stats: Vec::new(),
        }
    }

    /// Training: batch statistics, dropout drawn from `rng`, parameters tracked.
    pub fn training(graph: &'g Graph, rng: ChaCha8Rng) -> Self {
        Self {
            graph,
            training: true,
            track_grads: true,
            rng,
            bindings: Vec::new(),
            overrides: Vec::new(),
            stats: Vec::new(),
        }
    }

    /// Inference-mode semantics with parameters tracked for gradients.
    pub fn inference_with_grads(graph: &'g Graph) -> Self {
        Self {
            track_grads: true,
            ..Self::inference(graph)
        }
    }

    /// Makes every later `bind` of the parameter `name` return `v` instead.
    /// Used to differentiate a module with respect to its own parameters.
    pub fn override_param(&mut self, name: impl Into<String>, v: Var<'g>) {
        self.overrides.push((name.into(), v));
    }

    pub fn bind(&mut self, p: &Param) -> Var<'g> {
        if let Some((_, v)) = self.overrides.iter().find(|(n, _)| *n == p.name) {
            return *v;
        }
        if self.track_grads {
            let v = self.graph.param_shared(p.value.clone());
            self.bindings.push((p.name.clone(), v));
            v
        } else {
            self.graph.constant((*p.value).clone())
        }
    }

    /// Gradient of the named parameter after `graph.backward`.
    pub fn grad(&self, name: &str) -> Option<Tensor> {
        let mut acc: Option<Tensor> = None;
        for (n, v) in &self.bindings {
            if n == name {
                let g = v.grad();
                match &mut acc {
                    Some(a) => a.add_assign(&g),
                    None => acc = Some(g),
                }
            }
        }
        acc
    }

    pub fn take_stats(&mut self) -> Vec<StatUpdate> {
        std::mem::take(&mut self.stats)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn into_rng(self) -> ChaCha8Rng {
        self.rng
    }
}

/// One row of a cost table, counted for a single input sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostRow {
    pub layer: String,
    pub params: u64,
    pub macs: u64,
    pub flops: u64,
}

impl CostRow {
    fn elementwise(layer: impl Into<String>, channels: usize, length: usize) -> Self {
        Self {
            layer: layer.into(),
            params: 0,
            macs: 0,
            flops: (channels * length) as u64,
        }
    }
}

/// Shape of a single sample flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleShape {
    Seq { channels: usize, length: usize },
    Flat(usize),
}

pub trait Module {
    fn forward<'g>(&self, ctx: &mut ForwardCtx<'g>, x: Var<'g>) -> Result<Var<'g>>;
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;
    fn norms(&self) -> Vec<&BatchNorm1d> {
        Vec::new()
    }
    fn norms_mut(&mut self) -> Vec<&mut BatchNorm1d> {
        Vec::new()
    }
    /// Cost rows and output shape for one sample of shape `input`.
    fn cost(&self, input: SampleShape) -> Result<(Vec<CostRow>, SampleShape)>;

    fn apply_stats(&mut self, updates: &[StatUpdate]) {
        for bn in self.norms_mut() {
            let name = bn.name.clone();
            for u in updates.iter().filter(|u| u.layer == name) {
                bn.update_running(&u.mean, &u.var);
            }
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

fn seq_shape(op: &'static str, s: SampleShape) -> Result<(usize, usize)> {
    match s {
        SampleShape::Seq { channels, length } => Ok((channels, length)),
        SampleShape::Flat(_) => Err(contract(op, "expected a [C, L] sample")),
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(contract(
                "Conv1d::new",
                format!("channels {in_channels}->{out_channels} not divisible by groups {groups}"),
            ));
        }
        if kernel_size == 0 || stride == 0 {
            return Err(contract("Conv1d::new", "kernel and stride must be positive"));
        }
        let fan_in = in_channels / groups * kernel_size;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Tensor::uniform(&[out_channels, in_channels / groups, kernel_size], bound, rng);
        let bias = bias.then(|| Param::new(format!("{name}.bias"), Tensor::uniform(&[out_channels], bound, rng)));
        Ok(Self {
            name: name.to_string(),
            in_channels,
            out_channels,
            kernel_size,
            stride,
            padding,
            groups,
            weight: Param::new(format!("{name}.weight"), weight),
            bias,
        })
    }

    /// One filter per channel, channels never mixed.
    pub fn depthwise<R: Rng + ?Sized>(name: &str, channels: usize, kernel_size: usize, stride: usize, rng: &mut R) -> Result<Self> {
        Self::new(name, channels, channels, kernel_size, stride, kernel_size / 2, channels, false, rng)
    }

    /// Kernel-1 channel mixing.
    pub fn pointwise<R: Rng + ?Sized>(name: &str, in_channels: usize, out_channels: usize, stride: usize, rng: &mut R) -> Result<Self> {
        Self::new(name, in_channels, out_channels, 1, stride, 0, 1, false, rng)
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.out_channels == self.in_channels
    }

    pub fn out_length(&self, length: usize) -> usize {
        (length + 2 * self.padding - self.kernel_size) / self.stride + 1
    }
}

impl Module for Conv1d {
    fn forward<'g>(&self, ctx: &mut ForwardCtx<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let xs = x.shape();
        if xs.len() != 3 || xs[1] != self.in_channels {
            return Err(TensorError::Dimension {
                op: "conv1d",
                lhs: xs,
                rhs: self.weight.value.shape().to_vec(),
            });
        }
        let w = ctx.bind(&self.weight);
        let b = self.bias.as_ref().map(|b| ctx.bind(b));
        x.conv1d(w, b, self.stride, self.padding, self.groups)
    }

    fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }

    fn cost(&self, input: SampleShape) -> Result<(Vec<CostRow>, SampleShape)> {
        let (c, l) = seq_shape("conv1d", input)?;
        if c != self.in_channels {
            return Err(contract("conv1d cost", format!("{c} channels into {}", self.in_channels)));
        }
        ConvGeometry::infer(&[1, c, l], self.weight.value.shape(), self.stride, self.padding, self.groups)?;
        let lout = self.out_length(l);
        let macs = (lout * self.out_channels * (self.in_channels / self.groups) * self.kernel_size) as u64;
        Ok((
            vec![CostRow {
                layer: self.name.clone(),
                params: self.param_count() as u64,
                macs,
                flops: 2 * macs,
            }],
            SampleShape::Seq {
                channels: self.out_channels,
                length: lout,
            },
        ))
    }
}

/// Depthwise convolution followed by a pointwise convolution.
pub fn depthwise_pointwise_forward<'g>(
    depthwise: &Conv1d,
    pointwise: &Conv1d,
    ctx: &mut ForwardCtx<'g>,
    x: Var<'g>,
) -> Result<Var<'g>> {
    if !depthwise.is_depthwise() {
        return Err(contract("depthwise_pointwise", format!("{} is not depthwise", depthwise.name)));
    }
    if pointwise.kernel_size != 1 {
        return Err(contract("depthwise_pointwise", format!("{} is not pointwise", pointwise.name)));
    }
    let h = depthwise.forward(ctx, x)?;
    pointwise.forward(ctx, h)
}

#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub name: String,
    pub num_channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl BatchNorm1d {
    pub fn new(name: &str, num_channels: usize) -> Self {
        Self {
            name: name.to_string(),
            num_channels,
            gamma: Param::new(format!("{name}.gamma"), Tensor::full(&[num_channels], 1.0)),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[num_channels])),
            running_mean: vec![0.0; num_channels],
            running_var: vec![1.0; num_channels],
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
        }
    }

    /// `running ← (1 − momentum)·running + momentum·batch`.
    pub fn update_running(&mut self, mean: &[f64], var: &[f64]) {
        let m = self.momentum;
        for (r, b) in self.running_mean.iter_mut().zip(mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in self.running_var.iter_mut().zip(var) {
            *r = ((1.0 - m) * *r + m * b).max(0.0);
        }
    }
}

impl Module for BatchNorm1d {
    fn forward<'g>(&self, ctx: &mut ForwardCtx<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let gamma = ctx.bind(&self.gamma);
        let beta = ctx.bind(&self.beta);
        if ctx.training {
            let (y, mean, var) = x.batch_norm_train(gamma, beta, self.epsilon)?;
            let s = x.shape();
            let n = (s[0] * s[2]) as f64;
            let unbiased = var.iter().map(|v| v * n / (n - 1.0)).collect();
            ctx.stats.push(StatUpdate {
                layer: self.name.clone(),
                mean,
                var: unbiased,
            });
            Ok(y)
        } else {
            x.batch_norm_eval(gamma, beta, &self.running_mean, &self.running_var, self.epsilon)
        }
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn norms(&self) -> Vec<&BatchNorm1d> {
        vec![self]
    }

    fn norms_mut(&mut self) -> Vec<&mut BatchNorm1d> {
        vec![self]
    }

    fn cost(&self, input: SampleShape) -> Result<(Vec<CostRow>, SampleShape)> {
        let (c, l) = seq_shape("batch_norm", input)?;
        let mut row = CostRow::elementwise(self.name.clone(), c, l);
        row.params = 2 * c as u64;
        Ok((vec![row], input))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Relu,
    Elu,
}

#[derive(Debug, Clone)]
pub struct Activation {
    pub name: String,
    pub kind: ActivationKind,
}

impl Activation {
    pub fn new(name: &str, kind: ActivationKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
        }
    }

    pub fn apply<'g>(kind: ActivationKind, x: Var<'g>) -> Var<'g> {
        match kind {
            ActivationKind::Relu => x.relu(),
            ActivationKind::Elu => x.elu(),
        }
    }
}

impl Module for Activation {
    fn forward<'g>(&self, _ctx: &mut ForwardCtx<'g>, x: Var<'g>) -> Result<Var<'g>> {
        Ok(Self::apply(self.kind, x))
    }

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    fn cost(&self, input: SampleShape) -> Result<(Vec<CostRow>, SampleShape)> {
        let n = match input {
            SampleShape::Seq { channels, length } => channels * length,
            SampleShape::Flat(n) => n,
        };
        Ok((vec![CostRow::elementwise(self.name.clone(), n, 1)], input))
    }
}

#[derive(Debug, Clone)]
pub struct MaxPool1d {
    pub name: String,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Module for MaxPool1d {
    fn forward<'g>(&self, _ctx: &mut ForwardCtx<'g>, x: Var<'g>) -> Result<Var<'g>> {
        x.maxpool1d(self.kernel, self.stride, self.padding)
    }

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    fn cost(&self, input: SampleShape) -> Result<(Vec<CostRow>, SampleShape)> {
        let (c, l) = seq_shape("maxpool1d", input)?;
        if self.kernel > l + 2 * self.padding {
            return Err(contract("maxpool1d", "window larger than padded input"));
        }
        let lout = (l + 2 * self.padding - self.kernel) / self.stride + 1;
        Ok((
            vec![CostRow::elementwise(self.name.clone(), c, l)],
            SampleShape::Seq {
                channels: c,
                length: lout,
            },
        ))
    }
}

#[derive(Debug, Clone)]
pub struct GlobalAvgPool {
    pub name: String,
}

impl Module for GlobalAvgPool {
    fn forward<'g>(&self, _ctx: &mut ForwardCtx<'g>, x: Var<'g>) -> Result<Var<'g>> {
        x.global_avg_pool()
    }

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    fn cost(&self, input: SampleShape) -> Result<(Vec<CostRow>, SampleShape)> {
        let (c, l) = seq_shape("global_avg_pool", input)?;
        Ok((vec![CostRow::elementwise(self.name.clone(), c, l)], SampleShape::Flat(c)))
    }
}

/// `[B, C, L] → [B, C·L]`; no arithmetic, so it contributes no cost row.
#[derive(Debug, Clone)]
pub struct Flatten;

impl Module for Flatten {
    fn forward<'g>(&self, _ctx: &mut ForwardCtx<'g>, x: Var<'g>) -> Result<Var<'g>> {
        x.flatten()
    }

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    fn cost(&self, input: SampleShape) -> Result<(Vec<CostRow>, SampleShape)> {
        let (c, l) = seq_shape("flatten", input)?;
        Ok((Vec::new(), SampleShape::Flat(c * l)))
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
    /// `[in, out]`, so the forward pass is `x · W + b`.
    pub weight: Param,
    pub bias: Param,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(name: &str, in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        Self {
            name: name.to_string(),
            in_features,
            out_features,
            weight: Param::new(
                format!("{name}.weight"),
                Tensor::uniform(&[in_features, out_features], bound, rng),
            ),
            bias: Param::new(format!("{name}.bias"), Tensor::uniform(&[out_features], bound, rng)),
        }
    }
}

/// `x · W + b` for `x: [B, in]`.
pub fn dense_forward<'g>(w: Var<'g>, b: Var<'g>, x: Var<'g>) -> Result<Var<'g>> {
    x.matmul(w)?.add_row_bias(b)
}

impl Module for Dense {
    fn forward<'g>(&self, ctx: &mut ForwardCtx<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let w = ctx.bind(&self.weight);
        let b = ctx.bind(&self.bias);
        dense_forward(w, b, x)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn cost(&self, input: SampleShape) -> Result<(Vec<CostRow>, SampleShape)> {
        let n = match input {
            SampleShape::Flat(n) => n,
            SampleShape::Seq { .. } => return Err(contract("dense", "expected a flat sample")),
        };
        if n != self.in_features {
            return Err(contract("dense cost", format!("{n} features into {}", self.in_features)));
        }
        let macs = (self.in_features * self.out_features) as u64;
        Ok((
            vec![CostRow {
                layer: self.name.clone(),
                params: self.param_count() as u64,
                macs,
                flops: 2 * macs,
            }],
            SampleShape::Flat(self.out_features),
        ))
    }
}

/// Inverted dropout: scales kept units by `1/(1−p)` in training, identity at inference.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub p: f64,
}

pub fn dropout<'g>(ctx: &mut ForwardCtx<'g>, x: Var<'g>, p: f64) -> Result<Var<'g>> {
    if !(0.0..1.0).contains(&p) {
        return Err(contract("dropout", format!("p = {p} outside [0, 1)")));
    }
    if !ctx.training || p == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - p);
    let shape = x.shape();
    let n: usize = shape.iter().product();
    let rng = ctx.rng();
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect();
    x.mask(&Tensor::new(shape, mask)?)
}

impl Module for Dropout {
    fn forward<'g>(&self, ctx: &mut ForwardCtx<'g>, x: Var<'g>) -> Result<Var<'g>> {
        dropout(ctx, x, self.p)
    }

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    fn cost(&self, input: SampleShape) -> Result<(Vec<CostRow>, SampleShape)> {
        Ok((Vec::new(), input))
    }
}

/// Pointwise convolution plus batch norm on the skip path.
#[derive(Debug, Clone)]
pub struct Projection {
    pub conv: Conv1d,
    pub norm: BatchNorm1d,
}

impl Projection {
    fn new<R: Rng + ?Sized>(name: &str, cin: usize, cout: usize, stride: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            conv: Conv1d::pointwise(&format!("{name}.conv"), cin, cout, stride, rng)?,
            norm: BatchNorm1d::new(&format!("{name}.bn"), cout),
        })
    }

    fn forward<'g>(&self, ctx: &mut ForwardCtx<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let h = self.conv.forward(ctx, x)?;
        self.norm.forward(ctx, h)
    }
}

fn residual_sum<'g>(name: &str, branch: Var<'g>, skip: Var<'g>) -> Result<Var<'g>> {
    branch.add(skip).map_err(|e| {
        contract(
            "residual",
            format!("{name}: branch {:?} and shortcut {:?} disagree ({e})", branch.shape(), skip.shape()),
        )
    })
}

fn needs_projection(cin: usize, cout: usize, stride: usize) -> bool {
    stride > 1 || cin != cout
}

/// Depthwise-separable residual unit with ELU:
/// `ELU(BN(PW(ELU(BN(DW(x))))) + shortcut(x))`.
#[derive(Debug, Clone)]
pub struct MobileResNetBlock {
    pub name: String,
    pub depthwise: Conv1d,
    pub norm1: BatchNorm1d,
    pub pointwise: Conv1d,
    pub norm2: BatchNorm1d,
    pub shortcut: Option<Projection>,
}

pub const DEPTHWISE_KERNEL: usize = 3;

impl MobileResNetBlock {
    pub fn new<R: Rng + ?Sized>(name: &str, cin: usize, cout: usize, stride: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            depthwise: Conv1d::depthwise(&format!("{name}.dw"), cin, DEPTHWISE_KERNEL, stride, rng)?,
            norm1: BatchNorm1d::new(&format!("{name}.bn1"), cin),
            pointwise: Conv1d::pointwise(&format!("{name}.pw"), cin, cout, 1, rng)?,
            norm2: BatchNorm1d::new(&format!("{name}.bn2"), cout),
            shortcut: needs_projection(cin, cout, stride)
                .then(|| Projection::new(&format!("{name}.shortcut"), cin, cout, stride, rng))
                .transpose()?,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.pointwise.out_channels
    }
}

impl Module for MobileResNetBlock {
    fn forward<'g>(&self, ctx: &mut ForwardCtx<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let h = self.depthwise.forward(ctx, x)?;
        let h = self.norm1.forward(ctx, h)?.elu();
        let h = self.pointwise.forward(ctx, h)?;
        let h = self.norm2.forward(ctx, h)?;
        let skip = match &self.shortcut {
            Some(p) => p.forward(ctx, x)?,
            None => x,
        };
        Ok(residual_sum(&self.name, h, skip)?.elu())
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = self.depthwise.params();
        v.extend(self.norm1.params());
        v.extend(self.pointwise.params());
        v.extend(self.norm2.params());
        if let Some(p) = &self.shortcut {
            v.extend(p.conv.params());
            v.extend(p.norm.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.depthwise.params_mut();
        v.extend(self.norm1.params_mut());
        v.extend(self.pointwise.params_mut());
        v.extend(self.norm2.params_mut());
        if let Some(p) = &mut self.shortcut {
            v.extend(p.conv.params_mut());
            v.extend(p.norm.params_mut());
        }
        v
    }

    fn norms(&self) -> Vec<&BatchNorm1d> {
        let mut v = vec![&self.norm1, &self.norm2];
        v.extend(self.shortcut.as_ref().map(|p| &p.norm));
        v
    }

    fn norms_mut(&mut self) -> Vec<&mut BatchNorm1d> {
        let mut v = vec![&mut self.norm1, &mut self.norm2];
        v.extend(self.shortcut.as_mut().map(|p| &mut p.norm));
        v
    }

    fn cost(&self, input: SampleShape) -> Result<(Vec<CostRow>, SampleShape)> {
        block_cost(
            &self.name,
            input,
            &[&self.depthwise, &self.norm1],
            &[&self.pointwise, &self.norm2],
            self.shortcut.as_ref(),
        )
    }
}

/// Classic two-convolution residual unit with ReLU:
/// `ReLU(BN(conv(ReLU(BN(conv(x))))) + shortcut(x))`.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub name: String,
    pub conv1: Conv1d,
    pub norm1: BatchNorm1d,
    pub conv2: Conv1d,
    pub norm2: BatchNorm1d,
    pub shortcut: Option<Projection>,
}

impl ResidualBlock {
    pub fn new<R: Rng + ?Sized>(name: &str, cin: usize, cout: usize, stride: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            conv1: Conv1d::new(&format!("{name}.conv1"), cin, cout, 3, stride, 1, 1, false, rng)?,
            norm1: BatchNorm1d::new(&format!("{name}.bn1"), cout),
            conv2: Conv1d::new(&format!("{name}.conv2"), cout, cout, 3, 1, 1, 1, false, rng)?,
            norm2: BatchNorm1d::new(&format!("{name}.bn2"), cout),
            shortcut: needs_projection(cin, cout, stride)
                .then(|| Projection::new(&format!("{name}.shortcut"), cin, cout, stride, rng))
                .transpose()?,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.out_channels
    }
}

impl Module for ResidualBlock {
    fn forward<'g>(&self, ctx: &mut ForwardCtx<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let h = self.conv1.forward(ctx, x)?;
        let h = self.norm1.forward(ctx, h)?.relu();
        let h = self.conv2.forward(ctx, h)?;
        let h = self.norm2.forward(ctx, h)?;
        let skip = match &self.shortcut {
            Some(p) => p.forward(ctx, x)?,
            None => x,
        };
        Ok(residual_sum(&self.name, h, skip)?.relu())
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = self.conv1.params();
        v.extend(self.norm1.params());
        v.extend(self.conv2.params());
        v.extend(self.norm2.params());
        if let Some(p) = &self.shortcut {
            v.extend(p.conv.params());
            v.extend(p.norm.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.conv1.params_mut();
        v.extend(self.norm1.params_mut());
        v.extend(self.conv2.params_mut());
        v.extend(self.norm2.params_mut());
        if let Some(p) = &mut self.shortcut {
            v.extend(p.conv.params_mut());
            v.extend(p.norm.params_mut());
        }
        v
    }

    fn norms(&self) -> Vec<&BatchNorm1d> {
        let mut v = vec![&self.norm1, &self.norm2];
        v.extend(self.shortcut.as_ref().map(|p| &p.norm));
        v
    }

    fn norms_mut(&mut self) -> Vec<&mut BatchNorm1d> {
        let mut v = vec![&mut self.norm1, &mut self.norm2];
        v.extend(self.shortcut.as_mut().map(|p| &mut p.norm));
        v
    }

    fn cost(&self, input: SampleShape) -> Result<(Vec<CostRow>, SampleShape)> {
        block_cost(
            &self.name,
            input,
            &[&self.conv1, &self.norm1],
            &[&self.conv2, &self.norm2],
            self.shortcut.as_ref(),
        )
    }
}

/// Rows for `act(second(act(first(x))) + shortcut(x))`.
fn block_cost(
    name: &str,
    input: SampleShape,
    first: &[&dyn Module],
    second: &[&dyn Module],
    shortcut: Option<&Projection>,
) -> Result<(Vec<CostRow>, SampleShape)> {
    let mut rows = Vec::new();
    let mut shape = input;
    for m in first {
        let (r, s) = m.cost(shape)?;
        rows.extend(r);
        shape = s;
    }
    let (c, l) = seq_shape("block", shape)?;
    rows.push(CostRow::elementwise(format!("{name}.act1"), c, l));
    for m in second {
        let (r, s) = m.cost(shape)?;
        rows.extend(r);
        shape = s;
    }
    if let Some(p) = shortcut {
        let (r, s) = p.conv.cost(input)?;
        rows.extend(r);
        let (r, s) = p.norm.cost(s)?;
        rows.extend(r);
        if s != shape {
            return Err(contract("block cost", format!("{name}: shortcut {s:?} vs branch {shape:?}")));
        }
    } else if input != shape {
        return Err(contract("block cost", format!("{name}: identity shortcut {input:?} vs branch {shape:?}")));
    }
    let (c, l) = seq_shape("block", shape)?;
    rows.push(CostRow::elementwise(format!("{name}.add"), c, l));
    rows.push(CostRow::elementwise(format!("{name}.act2"), c, l));
    Ok((rows, shape))
}

/// Runs a standalone layer or block in inference mode on a constant input.
pub fn infer(module: &dyn Module, x: &Tensor) -> Result<Tensor> {
    let g = Graph::new();
    let mut ctx = ForwardCtx::inference(&g);
    let xv = g.constant(x.clone());
    Ok(module.forward(&mut ctx, xv)?.value().as_ref().clone())
}
