//! Network assembly and cost accounting.
//!
//! All three architectures consume `[batch, 6, 200]` windows (rotated gyro then
//! rotated accel) and regress an `m`-dimensional velocity.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autograd::{Graph, Var};
use crate::layers::{
    Activation, ActivationKind, BatchNorm1d, Conv1d, CostRow, Dense, Dropout, Flatten, ForwardCtx,
    GlobalAvgPool, MaxPool1d, MobileResNetBlock, Module, Param, ResidualBlock, SampleShape,
};
use crate::tensor::{contract, Result, Tensor, TensorError};

pub const INPUT_CHANNELS: usize = 6;
pub const INPUT_LENGTH: usize = 200;
pub const HEAD_DROPOUT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    ImuNet,
    ResNet18,
    MobileNet,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::ImuNet, Arch::ResNet18, Arch::MobileNet];

    pub fn name(self) -> &'static str {
        match self {
            Arch::ImuNet => "imunet",
            Arch::ResNet18 => "resnet18",
            Arch::MobileNet => "mobilenet",
        }
    }

    pub fn build(self, output_dim: usize, seed: u64) -> Result<Model> {
        match self {
            Arch::ImuNet => build_imunet(output_dim, seed),
            Arch::ResNet18 => build_resnet18_1d(output_dim, seed),
            Arch::MobileNet => build_mobilenet_1d(output_dim, seed),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| contract("Arch::from_str", format!("unknown architecture {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv1d),
    Norm(BatchNorm1d),
    Act(Activation),
    MaxPool(MaxPool1d),
    Mobile(MobileResNetBlock),
    Residual(ResidualBlock),
    GlobalAvgPool(GlobalAvgPool),
    Flatten(Flatten),
    Dense(Dense),
    Dropout(Dropout),
}

impl Layer {
    pub fn module(&self) -> &dyn Module {
        match self {
            Layer::Conv(l) => l,
            Layer::Norm(l) => l,
            Layer::Act(l) => l,
            Layer::MaxPool(l) => l,
            Layer::Mobile(l) => l,
            Layer::Residual(l) => l,
            Layer::GlobalAvgPool(l) => l,
            Layer::Flatten(l) => l,
            Layer::Dense(l) => l,
            Layer::Dropout(l) => l,
        }
    }

    pub fn module_mut(&mut self) -> &mut dyn Module {
        match self {
            Layer::Conv(l) => l,
            Layer::Norm(l) => l,
            Layer::Act(l) => l,
            Layer::MaxPool(l) => l,
            Layer::Mobile(l) => l,
            Layer::Residual(l) => l,
            Layer::GlobalAvgPool(l) => l,
            Layer::Flatten(l) => l,
            Layer::Dense(l) => l,
            Layer::Dropout(l) => l,
        }
    }
}

/// A sequential network with a fixed `[6, 200]` input.
#[derive(Debug, Clone)]
pub struct Model {
    pub arch: Arch,
    pub output_dim: usize,
    pub layers: Vec<Layer>,
}

impl Model {
    pub fn name(&self) -> &'static str {
        self.arch.name()
    }

    /// Inference-mode forward pass on `[batch, 6, 200]`.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let g = Graph::new();
        let mut ctx = ForwardCtx::inference(&g);
        let xv = g.constant(x.clone());
        Ok(self.forward(&mut ctx, xv)?.value().as_ref().clone())
    }

    pub fn cost_report(&self) -> Result<CostReport> {
        let (rows, out) = self.cost(SampleShape::Seq {
            channels: INPUT_CHANNELS,
            length: INPUT_LENGTH,
        })?;
        if out != SampleShape::Flat(self.output_dim) {
            return Err(contract("cost_report", format!("{} ends in {out:?}", self.name())));
        }
        Ok(CostReport::new(self.name(), rows))
    }

    /// Length of the sequence axis after each layer, starting from the input.
    pub fn length_schedule(&self) -> Result<Vec<usize>> {
        let mut shape = SampleShape::Seq {
            channels: INPUT_CHANNELS,
            length: INPUT_LENGTH,
        };
        let mut out = vec![INPUT_LENGTH];
        for layer in &self.layers {
            let (_, s) = layer.module().cost(shape)?;
            if let (SampleShape::Seq { length: a, .. }, SampleShape::Seq { length: b, .. }) = (shape, s) {
                if a != b {
                    out.push(b);
                }
            }
            shape = s;
        }
        Ok(out)
    }
}

impl Module for Model {
    fn forward<'g>(&self, ctx: &mut ForwardCtx<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let s = x.shape();
        if s.len() != 3 || s[1] != INPUT_CHANNELS || s[2] != INPUT_LENGTH {
            return Err(TensorError::Dimension {
                op: "model input",
                lhs: s,
                rhs: vec![0, INPUT_CHANNELS, INPUT_LENGTH],
            });
        }
        let mut h = x;
        for layer in &self.layers {
            h = layer.module().forward(ctx, h)?;
        }
        Ok(h)
    }

    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.module().params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.module_mut().params_mut()).collect()
    }

    fn norms(&self) -> Vec<&BatchNorm1d> {
        self.layers.iter().flat_map(|l| l.module().norms()).collect()
    }

    fn norms_mut(&mut self) -> Vec<&mut BatchNorm1d> {
        self.layers.iter_mut().flat_map(|l| l.module_mut().norms_mut()).collect()
    }

    fn cost(&self, input: SampleShape) -> Result<(Vec<CostRow>, SampleShape)> {
        let mut rows = Vec::new();
        let mut shape = input;
        for layer in &self.layers {
            let (r, s) = layer.module().cost(shape)?;
            rows.extend(r);
            shape = s;
        }
        Ok((rows, shape))
    }
}

fn check_output_dim(m: usize) -> Result<()> {
    if m == 2 || m == 3 {
        Ok(())
    } else {
        Err(contract("build", format!("output dimension must be 2 or 3, got {m}")))
    }
}

fn act(name: &str, kind: ActivationKind) -> Layer {
    Layer::Act(Activation::new(name, kind))
}

/// Conv 7/2 + BN + activation + maxpool 3/2: `200 → 100 → 50`.
fn stem(layers: &mut Vec<Layer>, out_channels: usize, kind: ActivationKind, rng: &mut ChaCha8Rng) -> Result<()> {
    layers.push(Layer::Conv(Conv1d::new("stem.conv", INPUT_CHANNELS, out_channels, 7, 2, 3, 1, false, rng)?));
    layers.push(Layer::Norm(BatchNorm1d::new("stem.bn", out_channels)));
    layers.push(act("stem.act", kind));
    layers.push(Layer::MaxPool(MaxPool1d {
        name: "stem.pool".into(),
        kernel: 3,
        stride: 2,
        padding: 1,
    }));
    Ok(())
}

const GROUP_CHANNELS: [usize; 4] = [64, 128, 256, 512];

/// IMUNet: ResNet18-1D skeleton with depthwise-separable residual blocks and ELU.
///
/// | stage | layers                                   | output      |
/// |-------|------------------------------------------|-------------|
/// | 1     | input                                    | 6 × 200     |
/// | 2     | conv 7/2 (64) + BN + ELU + maxpool 3/2   | 64 × 50     |
/// | 3–6   | 2 blocks each at 64/128/256/512          | 512 × 7     |
/// | 7     | pointwise conv (128) + BN + ELU          | 128 × 7     |
/// | 8     | flatten, dense 896→512, ELU, dropout, dense 512→m | m  |
pub fn build_imunet(output_dim: usize, seed: u64) -> Result<Model> {
    check_output_dim(output_dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    stem(&mut layers, 64, ActivationKind::Elu, &mut rng)?;
    let mut cin = 64;
    for (gi, &cout) in GROUP_CHANNELS.iter().enumerate() {
        for bi in 0..2 {
            let stride = if gi > 0 && bi == 0 { 2 } else { 1 };
            let name = format!("group{}.block{}", gi + 1, bi);
            layers.push(Layer::Mobile(MobileResNetBlock::new(&name, cin, cout, stride, &mut rng)?));
            cin = cout;
        }
    }
    layers.push(Layer::Conv(Conv1d::pointwise("head.conv", 512, 128, 1, &mut rng)?));
    layers.push(Layer::Norm(BatchNorm1d::new("head.bn", 128)));
    layers.push(act("head.act", ActivationKind::Elu));
    layers.push(Layer::Flatten(Flatten));
    layers.push(Layer::Dense(Dense::new("head.fc1", 128 * 7, 512, &mut rng)));
    layers.push(act("head.fc1.act", ActivationKind::Elu));
    layers.push(Layer::Dropout(Dropout { p: HEAD_DROPOUT }));
    layers.push(Layer::Dense(Dense::new("head.fc2", 512, output_dim, &mut rng)));
    Ok(Model {
        arch: Arch::ImuNet,
        output_dim,
        layers,
    })
}

/// ResNet18-1D baseline: dense 3-tap residual blocks with ReLU, global average
/// pooling and a 512→512→m head.
pub fn build_resnet18_1d(output_dim: usize, seed: u64) -> Result<Model> {
    check_output_dim(output_dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    stem(&mut layers, 64, ActivationKind::Relu, &mut rng)?;
    let mut cin = 64;
    for (gi, &cout) in GROUP_CHANNELS.iter().enumerate() {
        for bi in 0..2 {
            let stride = if gi > 0 && bi == 0 { 2 } else { 1 };
            let name = format!("group{}.block{}", gi + 1, bi);
            layers.push(Layer::Residual(ResidualBlock::new(&name, cin, cout, stride, &mut rng)?));
            cin = cout;
        }
    }
    layers.push(Layer::GlobalAvgPool(GlobalAvgPool { name: "head.pool".into() }));
    layers.push(Layer::Dense(Dense::new("head.fc1", 512, 512, &mut rng)));
    layers.push(act("head.fc1.act", ActivationKind::Relu));
    layers.push(Layer::Dropout(Dropout { p: HEAD_DROPOUT }));
    layers.push(Layer::Dense(Dense::new("head.fc2", 512, output_dim, &mut rng)));
    Ok(Model {
        arch: Arch::ResNet18,
        output_dim,
        layers,
    })
}

/// `(out_channels, stride)` of the 13 depthwise-separable units of MobileNet-v1.
pub const MOBILENET_UNITS: [(usize, usize); 13] = [
    (64, 1),
    (128, 2),
    (128, 1),
    (256, 2),
    (256, 1),
    (512, 2),
    (512, 1),
    (512, 1),
    (512, 1),
    (512, 1),
    (512, 1),
    (1024, 2),
    (1024, 1),
];

/// MobileNet-1D baseline: conv 3/2 (32) then 13 depthwise-separable units with
/// ReLU, global average pooling and a dense layer to `m`.
pub fn build_mobilenet_1d(output_dim: usize, seed: u64) -> Result<Model> {
    check_output_dim(output_dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = vec![
        Layer::Conv(Conv1d::new("stem.conv", INPUT_CHANNELS, 32, 3, 2, 1, 1, false, &mut rng)?),
        Layer::Norm(BatchNorm1d::new("stem.bn", 32)),
        act("stem.act", ActivationKind::Relu),
    ];
    let mut cin = 32;
    for (i, &(cout, stride)) in MOBILENET_UNITS.iter().enumerate() {
        let name = format!("unit{i}");
        layers.push(Layer::Conv(Conv1d::depthwise(&format!("{name}.dw"), cin, 3, stride, &mut rng)?));
        layers.push(Layer::Norm(BatchNorm1d::new(&format!("{name}.bn1"), cin)));
        layers.push(act(&format!("{name}.act1"), ActivationKind::Relu));
        layers.push(Layer::Conv(Conv1d::pointwise(&format!("{name}.pw"), cin, cout, 1, &mut rng)?));
        layers.push(Layer::Norm(BatchNorm1d::new(&format!("{name}.bn2"), cout)));
        layers.push(act(&format!("{name}.act2"), ActivationKind::Relu));
        cin = cout;
    }
    layers.push(Layer::GlobalAvgPool(GlobalAvgPool { name: "head.pool".into() }));
    layers.push(Layer::Dense(Dense::new("head.fc", cin, output_dim, &mut rng)));
    Ok(Model {
        arch: Arch::MobileNet,
        output_dim,
        layers,
    })
}

/// Parameter and FLOP totals with a per-layer breakdown, per input sample.
#[derive(Debug, Clone, Serialize)]
pub struct CostReport {
    pub model: String,
    pub total_params: u64,
    pub total_macs: u64,
    /// `2 × MACs` for convolutions and dense layers plus one FLOP per element
    /// for normalization, activation, pooling and residual additions.
    pub total_flops: u64,
    pub rows: Vec<CostRow>,
}

/// Runs `count_costs` over a built model.
pub fn count_costs(model: &Model) -> Result<CostReport> {
    model.cost_report()
}

impl CostReport {
    pub fn new(model: &str, rows: Vec<CostRow>) -> Self {
        Self {
            model: model.to_string(),
            total_params: rows.iter().map(|r| r.params).sum(),
            total_macs: rows.iter().map(|r| r.macs).sum(),
            total_flops: rows.iter().map(|r| r.flops).sum(),
            rows,
        }
    }

    /// `layer,params,macs,flops` rows with a header and a trailing `total` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,params,macs,flops\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.layer, r.params, r.macs, r.flops);
        }
        let _ = writeln!(s, "total,{},{},{}", self.total_params, self.total_macs, self.total_flops);
        s
    }

    pub fn to_table(&self) -> String {
        let w = self
            .rows
            .iter()
            .map(|r| r.layer.len())
            .max()
            .unwrap_or(5)
            .max("total".len());
        let mut s = String::new();
        let _ = writeln!(s, "model: {}", self.model);
        let _ = writeln!(s, "{:<w$}  {:>12}  {:>14}  {:>14}", "layer", "params", "macs", "flops");
        for r in &self.rows {
            let _ = writeln!(s, "{:<w$}  {:>12}  {:>14}  {:>14}", r.layer, r.params, r.macs, r.flops);
        }
        let _ = writeln!(
            s,
            "{:<w$}  {:>12}  {:>14}  {:>14}",
            "total", self.total_params, self.total_macs, self.total_flops
        );
        s
    }
}
