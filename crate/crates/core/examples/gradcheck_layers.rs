// Builds a small graph by hand, backpropagates through it, and compares the
// analytic gradients of a MobileResNet block with central finite differences.
//
//     cargo run --example gradcheck_layers

use imunet::gradcheck;
use imunet::layers::{ForwardCtx, MobileResNetBlock, Module};
use imunet::{Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run() -> anyhow::Result<f64> {
    // f(x, w) = Σ elu(x · w)
    let g = Graph::new();
    let x = g.param(Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, -0.3, 0.1, 0.8])?);
    let w = g.param(Tensor::new(vec![3, 2], vec![0.2, -0.4, 1.0, 0.3, -0.7, 0.5])?);
    let y = x.matmul(w)?.elu().sum();
    g.backward(y)?;
    println!("f = {:.6}", y.value().item());
    println!("df/dw = {:?}", w.grad().data());

    // the same check the test suite runs on every layer
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let block = MobileResNetBlock::new("block", 4, 8, 2, &mut rng)?;
    let input = Tensor::uniform(&[2, 4, 16], 1.0, &mut rng);
    let names: Vec<String> = block.params().iter().map(|p| p.name.clone()).collect();
    let mut inputs = vec![input];
    inputs.extend(block.params().iter().map(|p| p.value.as_ref().clone()));
    let report = gradcheck::check(
        |g, vars| {
            let mut ctx = ForwardCtx::training(g, ChaCha8Rng::seed_from_u64(1));
            for (n, v) in names.iter().zip(&vars[1..]) {
                ctx.override_param(n.clone(), *v);
            }
            Ok(block.forward(&mut ctx, vars[0])?.elu().sum())
        },
        &inputs,
        1e-5,
    )?;
    let err = report.max_rel_error();
    println!("MobileResNet block (stride 2, projection): {} tensors, max relative error {err:.2e}", inputs.len());
    Ok(err)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()?;
    Ok(())
}
