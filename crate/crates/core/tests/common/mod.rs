#![allow(dead_code)]

use imunet::gradcheck;
use imunet::layers::{
    Activation, ActivationKind, BatchNorm1d, Conv1d, Dense, Dropout, Flatten, ForwardCtx, GlobalAvgPool, MaxPool1d,
    MobileResNetBlock, Module, ResidualBlock,
};
use imunet::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-6;

/// Direct-loop grouped cross-correlation, written independently of the library.
pub fn naive_conv1d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize, groups: usize) -> Tensor {
    let (bn, cin, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, cin_g, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let cout_g = cout / groups;
    let lout = (l + 2 * pad - k) / stride + 1;
    let mut y = vec![0.0; bn * cout * lout];
    for bi in 0..bn {
        for co in 0..cout {
            let g = co / cout_g;
            for t in 0..lout {
                let mut acc = b.map_or(0.0, |b| b.data()[co]);
                for ci in 0..cin_g {
                    let c = g * cin_g + ci;
                    for kk in 0..k {
                        let pos = (t * stride + kk) as isize - pad as isize;
                        if pos >= 0 && (pos as usize) < l {
                            acc += w.data()[(co * cin_g + ci) * k + kk] * x.data()[(bi * cin + c) * l + pos as usize];
                        }
                    }
                }
                y[(bi * cout + co) * lout + t] = acc;
            }
        }
    }
    Tensor::new(vec![bn, cout, lout], y).unwrap()
}

#[derive(Debug, Clone, Copy)]
pub struct ConvCase {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub length: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub bias: bool,
}

/// Random configuration covering dense, grouped and depthwise convolutions.
pub fn random_conv_case(rng: &mut impl Rng) -> ConvCase {
    let kind = rng.gen_range(0..3);
    let (groups, cin_g, cout_g) = match kind {
        0 => (1, rng.gen_range(1..6), rng.gen_range(1..6)),
        1 => (rng.gen_range(2..4), rng.gen_range(1..4), rng.gen_range(1..4)),
        _ => (rng.gen_range(1..7), 1, 1),
    };
    let kernel: usize = rng.gen_range(1..8);
    let pad = rng.gen_range(0..=kernel / 2 + 1);
    let length = rng.gen_range(kernel.saturating_sub(2 * pad).max(1)..kernel + 20);
    ConvCase {
        batch: rng.gen_range(1..4),
        cin: groups * cin_g,
        cout: groups * cout_g,
        length,
        kernel,
        stride: rng.gen_range(1..4),
        pad,
        groups,
        bias: rng.gen_bool(0.5),
    }
}

/// `Σ y ⊙ R` for a fixed random `R`, so every output element matters.
pub fn projected<'g>(g: &'g Graph, y: Var<'g>, seed: u64) -> imunet::tensor::Result<Var<'g>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9a0);
    let r = Tensor::uniform(&y.shape(), 1.0, &mut rng);
    Ok(y.mul(g.constant(r))?.sum())
}

/// Checks a module's gradient with respect to its input and every parameter.
/// Parameters start from the module's values perturbed by `seed`.
pub fn check_module(module: &dyn Module, x: Tensor, training: bool, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = module.params().iter().map(|p| p.name.clone()).collect();
    let mut inputs = vec![x];
    for p in module.params() {
        let noise = Tensor::uniform(p.value.shape(), 0.3, &mut rng);
        inputs.push(p.value.zip_map(&noise, "perturb", |a, b| a + b).unwrap());
    }
    let report = gradcheck::check(
        |g, vars| {
            let mut ctx = if training {
                ForwardCtx::training(g, ChaCha8Rng::seed_from_u64(seed ^ 0xd0))
            } else {
                ForwardCtx::inference(g)
            };
            for (n, v) in names.iter().zip(&vars[1..]) {
                ctx.override_param(n.clone(), *v);
            }
            let y = module.forward(&mut ctx, vars[0])?;
            projected(g, y, seed)
        },
        &inputs,
        FD_STEP,
    )
    .unwrap();
    report.max_rel_error()
}

fn input(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

/// Every layer type and both block types; returns `(case, max relative error)`.
pub fn gradient_suite(seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: &str, err: f64| out.push((name.to_string(), err));

    let conv = Conv1d::new("conv", 3, 4, 3, 1, 1, 1, true, &mut rng).unwrap();
    push("conv1d", check_module(&conv, input(&[2, 3, 9], &mut rng), true, seed));
    let conv = Conv1d::new("conv_s2", 2, 3, 5, 2, 2, 1, false, &mut rng).unwrap();
    push("conv1d strided", check_module(&conv, input(&[2, 2, 11], &mut rng), true, seed));
    let conv = Conv1d::new("conv_g", 4, 6, 3, 1, 1, 2, true, &mut rng).unwrap();
    push("conv1d grouped", check_module(&conv, input(&[2, 4, 8], &mut rng), true, seed));
    let conv = Conv1d::depthwise("dw", 3, 3, 2, &mut rng).unwrap();
    push("conv1d depthwise", check_module(&conv, input(&[2, 3, 9], &mut rng), true, seed));
    let conv = Conv1d::pointwise("pw", 3, 5, 1, &mut rng).unwrap();
    push("conv1d pointwise", check_module(&conv, input(&[2, 3, 6], &mut rng), true, seed));

    let bn = BatchNorm1d::new("bn", 3);
    push("batchnorm train", check_module(&bn, input(&[3, 3, 4], &mut rng), true, seed));
    let mut bn = BatchNorm1d::new("bn_eval", 3);
    bn.running_mean = vec![0.1, -0.2, 0.3];
    bn.running_var = vec![0.5, 1.5, 2.0];
    push("batchnorm eval", check_module(&bn, input(&[2, 3, 4], &mut rng), false, seed));

    push(
        "elu",
        check_module(&Activation::new("elu", ActivationKind::Elu), input(&[2, 3, 5], &mut rng), true, seed),
    );
    push(
        "relu",
        check_module(&Activation::new("relu", ActivationKind::Relu), input(&[2, 3, 5], &mut rng), true, seed),
    );
    let pool = MaxPool1d {
        name: "pool".into(),
        kernel: 3,
        stride: 2,
        padding: 1,
    };
    push("maxpool1d", check_module(&pool, input(&[2, 3, 9], &mut rng), true, seed));
    let gap = GlobalAvgPool { name: "gap".into() };
    push("global avg pool", check_module(&gap, input(&[2, 3, 5], &mut rng), true, seed));
    push("flatten", check_module(&Flatten, input(&[2, 3, 4], &mut rng), true, seed));
    let dense = Dense::new("dense", 6, 4, &mut rng);
    push("dense", check_module(&dense, input(&[3, 6], &mut rng), true, seed));
    push("dropout", check_module(&Dropout { p: 0.5 }, input(&[3, 8], &mut rng), true, seed));

    let target = input(&[3, 2], &mut rng);
    let err = gradcheck::check(|_, v| v[0].mse(&target), &[input(&[3, 2], &mut rng)], FD_STEP)
        .unwrap()
        .max_rel_error();
    push("mse loss", err);

    let block = MobileResNetBlock::new("mb", 4, 4, 1, &mut rng).unwrap();
    push("mobile block identity", check_module(&block, input(&[2, 4, 8], &mut rng), true, seed));
    let block = MobileResNetBlock::new("mb2", 3, 5, 2, &mut rng).unwrap();
    push("mobile block projection", check_module(&block, input(&[2, 3, 8], &mut rng), true, seed));
    push("mobile block inference", check_module(&block, input(&[2, 3, 8], &mut rng), false, seed));
    let block = ResidualBlock::new("rb", 3, 3, 1, &mut rng).unwrap();
    push("residual block identity", check_module(&block, input(&[2, 3, 8], &mut rng), true, seed));
    let block = ResidualBlock::new("rb2", 3, 4, 2, &mut rng).unwrap();
    push("residual block projection", check_module(&block, input(&[2, 3, 8], &mut rng), true, seed));
    out
}

/// Windows of noise-free constant-velocity motion: a line after its start ramp.
pub fn constant_velocity_windows(n: usize) -> Vec<imunet::data::Window> {
    use imunet::data::*;
    let dur = (n as f64 + 4.0).max(4.0);
    let seq = synth_generate(&Profile::line(), dur, 200.0, &NoiseSpec::none(), 0, 2).unwrap();
    make_windows(&seq, WINDOW, WINDOW, true)
        .unwrap()
        .into_iter()
        .skip(2)
        .take(n)
        .collect()
}

/// `p0 + Σ_{j<k} v_j·(t_{j+1} − t_j)` for every k, evaluated term by term.
pub fn riemann_oracle(t: &[f64], v: &[f64], p0: f64) -> Vec<f64> {
    let mut out = vec![p0];
    let mut s = 0.0;
    for j in 0..t.len() - 1 {
        s += v[j] * (t[j + 1] - t[j]);
        out.push(p0 + s);
    }
    out
}

/// Discrete double sum for a 1D acceleration: velocity by Riemann sum, then position.
pub fn double_sum_oracle(t: &[f64], a: &[f64], v0: f64, p0: f64) -> Vec<f64> {
    let v: Vec<f64> = riemann_oracle(t, a, v0);
    riemann_oracle(t, &v, p0)
}

/// Plain RMSE over matched points.
pub fn direct_rmse(a: &[[f64; 3]], b: &[[f64; 3]], dim: usize) -> f64 {
    let ss: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| (0..dim).map(|d| (p[d] - q[d]).powi(2)).sum::<f64>())
        .sum();
    (ss / a.len() as f64).sqrt()
}

/// Relative error computed from scratch on shared timestamps: split at
/// multiples of `interval` from the first time (a trailing remainder joins the
/// last span), shift each span so the estimate matches at its first point,
/// and average the per-span RMSEs.
pub fn rte_oracle(t: &[f64], est: &[[f64; 3]], gt: &[[f64; 3]], dim: usize, interval: f64) -> f64 {
    let spans = ((t[t.len() - 1] - t[0]) / interval).floor() as usize;
    assert!(spans >= 1);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); spans];
    for (i, &ti) in t.iter().enumerate() {
        let k = (((ti - t[0]) / interval).floor() as usize).min(spans - 1);
        groups[k].push(i);
    }
    let groups: Vec<_> = groups.into_iter().filter(|g| !g.is_empty()).collect();
    let mut total = 0.0;
    for g in &groups {
        let a = g[0];
        let shifted: Vec<[f64; 3]> = g
            .iter()
            .map(|&i| {
                let mut p = est[i];
                for d in 0..dim {
                    p[d] += gt[a][d] - est[a][d];
                }
                p
            })
            .collect();
        let truth: Vec<[f64; 3]> = g.iter().map(|&i| gt[i]).collect();
        total += direct_rmse(&shifted, &truth, dim);
    }
    total / groups.len() as f64
}

pub fn planar(t: &[f64], f: impl Fn(f64) -> [f64; 2]) -> imunet::nav::Trajectory {
    let positions = t.iter().map(|&x| {
        let p = f(x);
        [p[0], p[1], 0.0]
    });
    imunet::nav::Trajectory::new(t.to_vec(), positions.collect(), 2).unwrap()
}

/// Runs the `imunet` binary with quiet logging.
pub fn imunet(args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_imunet"))
        .args(args)
        .env("IMUNET_LOG", "warn")
        .output()
        .expect("failed to launch imunet")
}

pub fn path_arg(p: &std::path::Path) -> &str {
    p.to_str().expect("temporary paths are UTF-8")
}

/// Largest `|Δ|` between the library convolution and the direct loops over
/// `cases` random configurations.
pub fn conv_oracle_max_diff(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let c = random_conv_case(&mut rng);
        let x = Tensor::uniform(&[c.batch, c.cin, c.length], 1.0, &mut rng);
        let w = Tensor::uniform(&[c.cout, c.cin / c.groups, c.kernel], 1.0, &mut rng);
        let b = c.bias.then(|| Tensor::uniform(&[c.cout], 1.0, &mut rng));
        let g = Graph::new();
        let y = g
            .constant(x.clone())
            .conv1d(g.constant(w.clone()), b.clone().map(|b| g.constant(b)), c.stride, c.pad, c.groups)
            .unwrap();
        let expect = naive_conv1d(&x, &w, b.as_ref(), c.stride, c.pad, c.groups);
        assert_eq!(y.shape(), expect.shape(), "{c:?}");
        worst = worst.max(y.value().max_abs_diff(&expect));
    }
    worst
}
