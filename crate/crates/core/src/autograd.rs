//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Nodes are
//! appended in evaluation order, so parents always carry smaller ids than
//! their children and the tape is acyclic by construction. [`Graph::backward`]
//! walks the tape in reverse and accumulates `∂loss/∂node` into every node that
//! requires gradients.

use std::cell::RefCell;
use std::sync::Arc;

use crate::tensor::{
    channel_affine, channel_stats, contract, conv1d_backward, conv1d_forward, dim_err,
    maxpool1d_forward, ConvGeometry, Result, Tensor,
};

type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Arc<Tensor>,
    grad: Option<Tensor>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, value: Tensor, requires_grad: bool, parents: Vec<usize>, backward: Option<BackwardFn>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Arc::new(value),
            grad: None,
            requires_grad,
            parents,
            backward: if requires_grad { backward } else { None },
        });
        Var { graph: self, id }
    }

    /// A leaf that never receives gradients.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, false, Vec::new(), None)
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, true, Vec::new(), None)
    }

    /// Shares an existing tensor without copying it.
    pub fn param_shared(&self, value: Arc<Tensor>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            grad: None,
            requires_grad: true,
            parents: Vec::new(),
            backward: None,
        });
        Var { graph: self, id }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zero_grad(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
    }

    /// Accumulates `∂loss/∂node` into every node reachable from `loss` that
    /// requires gradients. Calling twice without [`Graph::zero_grad`] adds.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        let root = &nodes[loss.id];
        if root.value.shape() != [1] {
            return Err(contract(
                "backward",
                format!("loss must have shape [1], got {:?}", root.value.shape()),
            ));
        }
        if !root.requires_grad {
            return Ok(());
        }
        let mut pass: Vec<Option<Tensor>> = (0..=loss.id).map(|_| None).collect();
        pass[loss.id] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.id).rev() {
            let Some(g) = pass[id].take() else { continue };
            let node = &nodes[id];
            if let Some(bw) = &node.backward {
                let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
                let grads = bw(&g, &needs);
                debug_assert_eq!(grads.len(), node.parents.len());
                for (&p, pg) in node.parents.iter().zip(grads) {
                    if let Some(pg) = pg {
                        debug_assert_eq!(pg.shape(), nodes[p].value.shape());
                        match &mut pass[p] {
                            Some(acc) => acc.add_assign(&pg),
                            slot => *slot = Some(pg),
                        }
                    }
                }
            }
            pass[id] = Some(g);
        }
        for (id, g) in pass.into_iter().enumerate() {
            if let Some(g) = g {
                let node = &mut nodes[id];
                if node.requires_grad {
                    match &mut node.grad {
                        Some(acc) => acc.add_assign(&g),
                        slot => *slot = Some(g),
                    }
                }
            }
        }
        Ok(())
    }

    fn value(&self, id: usize) -> Arc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(self.id)
    }

    /// Accumulated gradient; zeros when nothing has flowed into this node.
    pub fn grad(&self) -> Tensor {
        let nodes = self.graph.nodes.borrow();
        let n = &nodes[self.id];
        n.grad.clone().unwrap_or_else(|| Tensor::zeros(n.value.shape()))
    }

    fn derive(&self, value: Tensor, parents: &[Var<'g>], backward: BackwardFn) -> Var<'g> {
        let rg = parents.iter().any(|p| p.requires_grad());
        self.graph
            .push(value, rg, parents.iter().map(|p| p.id).collect(), Some(backward))
    }

    fn same_graph(&self, other: &Var<'g>) {
        assert!(
            std::ptr::eq(self.graph, other.graph),
            "vars belong to different graphs"
        );
    }

    pub fn add(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&other);
        let y = self.value().zip_map(&other.value(), "add", |a, b| a + b)?;
        Ok(self.derive(y, &[*self, other], Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())])))
    }

    pub fn sub(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&other);
        let y = self.value().zip_map(&other.value(), "sub", |a, b| a - b)?;
        Ok(self.derive(
            y,
            &[*self, other],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.map(|v| -v))]),
        ))
    }

    pub fn mul(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&other);
        let (a, b) = (self.value(), other.value());
        let y = a.zip_map(&b, "mul", |a, b| a * b)?;
        Ok(self.derive(
            y,
            &[*self, other],
            Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| g.zip_map(&b, "mul", |g, b| g * b).unwrap()),
                    needs[1].then(|| g.zip_map(&a, "mul", |g, a| g * a).unwrap()),
                ]
            }),
        ))
    }

    pub fn scale(&self, s: f64) -> Var<'g> {
        let y = self.value().map(|v| v * s);
        self.derive(y, &[*self], Box::new(move |g, _| vec![Some(g.map(|v| v * s))]))
    }

    pub fn exp(&self) -> Var<'g> {
        let y = Arc::new(self.value().map(f64::exp));
        let yc = y.clone();
        self.derive(
            (*y).clone(),
            &[*self],
            Box::new(move |g, _| vec![Some(g.zip_map(&yc, "exp", |g, y| g * y).unwrap())]),
        )
    }

    /// Elementwise `max(x, 0)`; the subgradient at 0 is taken as 0.
    pub fn relu(&self) -> Var<'g> {
        let x = self.value();
        let y = x.map(|v| v.max(0.0));
        self.derive(
            y,
            &[*self],
            Box::new(move |g, _| {
                vec![Some(g.zip_map(&x, "relu", |g, x| if x > 0.0 { g } else { 0.0 }).unwrap())]
            }),
        )
    }

    /// Exponential linear unit: `x` for `x ≥ 0`, `exp(x) − 1` otherwise.
    pub fn elu(&self) -> Var<'g> {
        let x = self.value();
        let y = x.map(elu_scalar);
        self.derive(
            y,
            &[*self],
            Box::new(move |g, _| {
                vec![Some(
                    g.zip_map(&x, "elu", |g, x| if x >= 0.0 { g } else { g * x.exp() })
                        .unwrap(),
                )]
            }),
        )
    }

    pub fn sum(&self) -> Var<'g> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.derive(
            Tensor::scalar(x.sum()),
            &[*self],
            Box::new(move |g, _| vec![Some(Tensor::full(&shape, g.item()))]),
        )
    }

    pub fn mean(&self) -> Var<'g> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn matmul(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&other);
        let (a, b) = (self.value(), other.value());
        let y = a.matmul(&b)?;
        Ok(self.derive(
            y,
            &[*self, other],
            Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| mm_nt(g, &b)),
                    needs[1].then(|| mm_tn(&a, g)),
                ]
            }),
        ))
    }

    /// `[B, N] + [N]`, broadcasting the bias over rows.
    pub fn add_row_bias(&self, bias: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&bias);
        let (x, b) = (self.value(), bias.value());
        let (xs, bs) = (x.shape(), b.shape());
        if xs.len() != 2 || bs.len() != 1 || xs[1] != bs[0] {
            return Err(dim_err("add_row_bias", xs, bs));
        }
        let n = bs[0];
        let mut y = x.as_ref().clone();
        for row in y.data_mut().chunks_mut(n) {
            for (v, bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
        Ok(self.derive(
            y,
            &[*self, bias],
            Box::new(move |g, needs| {
                let db = needs[1].then(|| {
                    let mut d = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (dv, gv) in d.iter_mut().zip(row) {
                            *dv += gv;
                        }
                    }
                    Tensor::from_vec(d)
                });
                vec![Some(g.clone()), db]
            }),
        ))
    }

    /// Grouped 1D cross-correlation; `weight` is `[C_out, C_in/groups, K]`.
    pub fn conv1d(
        &self,
        weight: Var<'g>,
        bias: Option<Var<'g>>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var<'g>> {
        self.same_graph(&weight);
        let (x, w) = (self.value(), weight.value());
        let geo = ConvGeometry::infer(x.shape(), w.shape(), stride, padding, groups)?;
        let bt = match &bias {
            Some(b) => {
                let bt = b.value();
                if bt.shape() != [geo.out_channels] {
                    return Err(dim_err("conv1d bias", bt.shape(), &[geo.out_channels]));
                }
                Some(bt)
            }
            None => None,
        };
        let y = conv1d_forward(&x, &w, bt.as_deref(), &geo);
        let mut parents = vec![*self, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        Ok(self.derive(
            y,
            &parents,
            Box::new(move |g, needs| {
                let (dx, dw, db) = conv1d_backward(&x, &w, g, &geo, needs[0]);
                let mut out = vec![dx, needs[1].then_some(dw)];
                if has_bias {
                    out.push(needs[2].then_some(db));
                }
                out
            }),
        ))
    }

    /// Training-mode batch normalization over `(batch, length)` per channel.
    /// Returns the output together with the batch mean and biased variance.
    pub fn batch_norm_train(
        &self,
        gamma: Var<'g>,
        beta: Var<'g>,
        eps: f64,
    ) -> Result<(Var<'g>, Vec<f64>, Vec<f64>)> {
        let x = self.value();
        let c = check_bn_shapes(&x, &gamma.value(), &beta.value())?;
        let (b, l) = (x.shape()[0], x.shape()[2]);
        if b * l < 2 {
            return Err(contract(
                "batch_norm",
                "training mode needs at least two values per channel",
            ));
        }
        let (mean, var) = channel_stats(&x);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gv = gamma.value();
        let (xh, y) = normalize(&x, &mean, &inv_std, gv.data(), beta.value().data());
        let node = self.derive(
            y,
            &[*self, gamma, beta],
            Box::new(move |g, needs| {
                let n = (b * l) as f64;
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for bi in 0..b {
                    for ch in 0..c {
                        let off = (bi * c + ch) * l;
                        for i in off..off + l {
                            dbeta[ch] += g.data()[i];
                            dgamma[ch] += g.data()[i] * xh.data()[i];
                        }
                    }
                }
                let dx = needs[0].then(|| {
                    let mut dx = vec![0.0; g.len()];
                    for bi in 0..b {
                        for ch in 0..c {
                            let k = gv.data()[ch] * inv_std[ch] / n;
                            let off = (bi * c + ch) * l;
                            for i in off..off + l {
                                dx[i] = k * (n * g.data()[i] - dbeta[ch] - xh.data()[i] * dgamma[ch]);
                            }
                        }
                    }
                    Tensor::new(g.shape().to_vec(), dx).unwrap()
                });
                vec![
                    dx,
                    needs[1].then(|| Tensor::from_vec(dgamma)),
                    needs[2].then(|| Tensor::from_vec(dbeta)),
                ]
            }),
        );
        Ok((node, mean, var))
    }

    /// Inference-mode batch normalization with fixed statistics.
    pub fn batch_norm_eval(
        &self,
        gamma: Var<'g>,
        beta: Var<'g>,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var<'g>> {
        let x = self.value();
        let c = check_bn_shapes(&x, &gamma.value(), &beta.value())?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(dim_err("batch_norm stats", &[running_mean.len()], &[c]));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gv = gamma.value();
        let (xhat, y) = normalize(&x, running_mean, &inv_std, gv.data(), beta.value().data());
        let (b, l) = (x.shape()[0], x.shape()[2]);
        Ok(self.derive(
            y,
            &[*self, gamma, beta],
            Box::new(move |g, needs| {
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for bi in 0..b {
                    for ch in 0..c {
                        let off = (bi * c + ch) * l;
                        for i in off..off + l {
                            dbeta[ch] += g.data()[i];
                            dgamma[ch] += g.data()[i] * xhat.data()[i];
                        }
                    }
                }
                let scale: Vec<f64> = gv.data().iter().zip(&inv_std).map(|(g, s)| g * s).collect();
                vec![
                    needs[0].then(|| channel_affine(g, &scale, &vec![0.0; c])),
                    needs[1].then(|| Tensor::from_vec(dgamma)),
                    needs[2].then(|| Tensor::from_vec(dbeta)),
                ]
            }),
        ))
    }

    /// Max pooling over the last axis of `[B, C, L]` with `-inf` padding.
    pub fn maxpool1d(&self, kernel: usize, stride: usize, padding: usize) -> Result<Var<'g>> {
        let x = self.value();
        let (y, arg) = maxpool1d_forward(&x, kernel, stride, padding)?;
        let xs = x.shape().to_vec();
        Ok(self.derive(
            y,
            &[*self],
            Box::new(move |g, _| {
                let mut dx = Tensor::zeros(&xs);
                for (&src, &gv) in arg.iter().zip(g.data()) {
                    dx.data_mut()[src] += gv;
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// `[B, C, L] → [B, C]` mean over length.
    pub fn global_avg_pool(&self) -> Result<Var<'g>> {
        let x = self.value();
        if x.shape().len() != 3 {
            return Err(contract("global_avg_pool", format!("expected [B, C, L], got {:?}", x.shape())));
        }
        let (b, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let data = x.data().chunks(l).map(|r| r.iter().sum::<f64>() / l as f64).collect();
        let y = Tensor::new(vec![b, c], data)?;
        Ok(self.derive(
            y,
            &[*self],
            Box::new(move |g, _| {
                let mut dx = Vec::with_capacity(b * c * l);
                for &gv in g.data() {
                    dx.extend(std::iter::repeat(gv / l as f64).take(l));
                }
                vec![Some(Tensor::new(vec![b, c, l], dx).unwrap())]
            }),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g>> {
        let x = self.value();
        let y = x.reshape(shape)?;
        let xs = x.shape().to_vec();
        Ok(self.derive(
            y,
            &[*self],
            Box::new(move |g, _| vec![Some(g.reshape(&xs).unwrap())]),
        ))
    }

    /// `[B, C, L] → [B, C·L]`.
    pub fn flatten(&self) -> Result<Var<'g>> {
        let s = self.shape();
        if s.is_empty() {
            return Err(contract("flatten", "scalar input"));
        }
        self.reshape(&[s[0], s[1..].iter().product()])
    }

    /// Multiplies by a fixed mask (used for dropout).
    pub fn mask(&self, mask: &Tensor) -> Result<Var<'g>> {
        let y = self.value().zip_map(mask, "mask", |a, m| a * m)?;
        let m = mask.clone();
        Ok(self.derive(
            y,
            &[*self],
            Box::new(move |g, _| vec![Some(g.zip_map(&m, "mask", |g, m| g * m).unwrap())]),
        ))
    }

    /// Mean of squared differences against a fixed target.
    pub fn mse(&self, target: &Tensor) -> Result<Var<'g>> {
        let p = self.value();
        if p.shape() != target.shape() {
            return Err(dim_err("mse_loss", p.shape(), target.shape()));
        }
        let n = p.len() as f64;
        let diff = p.zip_map(target, "mse_loss", |a, b| a - b)?;
        let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / n;
        Ok(self.derive(
            Tensor::scalar(loss),
            &[*self],
            Box::new(move |g, _| {
                let k = 2.0 * g.item() / n;
                vec![Some(diff.map(|d| k * d))]
            }),
        ))
    }
}

pub fn elu_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

/// Returns `(x̂, γ·x̂ + β)` with `x̂ = (x − mean)·inv_std` per channel.
fn normalize(x: &Tensor, mean: &[f64], inv_std: &[f64], gamma: &[f64], beta: &[f64]) -> (Tensor, Tensor) {
    let s = x.shape();
    let (c, l) = (s[1], s[2]);
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for (row, ((xr, hr), yr)) in x
        .data()
        .chunks(l)
        .zip(xhat.chunks_mut(l))
        .zip(y.chunks_mut(l))
        .enumerate()
    {
        let ch = row % c;
        let (mu, is, g, b) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
        for ((&xv, h), yv) in xr.iter().zip(hr.iter_mut()).zip(yr.iter_mut()) {
            *h = (xv - mu) * is;
            *yv = *h * g + b;
        }
    }
    (
        Tensor::new(s.to_vec(), xhat).unwrap(),
        Tensor::new(s.to_vec(), y).unwrap(),
    )
}

fn check_bn_shapes(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<usize> {
    if x.shape().len() != 3 {
        return Err(contract("batch_norm", format!("expected [B, C, L], got {:?}", x.shape())));
    }
    let c = x.shape()[1];
    if gamma.shape() != [c] {
        return Err(dim_err("batch_norm gamma", gamma.shape(), &[c]));
    }
    if beta.shape() != [c] {
        return Err(dim_err("batch_norm beta", beta.shape(), &[c]));
    }
    Ok(c)
}

/// `g · bᵀ`
fn mm_nt(g: &Tensor, b: &Tensor) -> Tensor {
    let (m, n) = (g.shape()[0], g.shape()[1]);
    let k = b.shape()[0];
    let mut out = vec![0.0; m * k];
    crate::tensor::gemm(m, n, k, g.data(), n as isize, 1, b.data(), 1, n as isize, 0.0, &mut out, k as isize, 1);
    Tensor::new(vec![m, k], out).unwrap()
}

/// `aᵀ · g`
fn mm_tn(a: &Tensor, g: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = g.shape()[1];
    let mut out = vec![0.0; k * n];
    crate::tensor::gemm(k, m, n, a.data(), 1, k as isize, g.data(), n as isize, 1, 0.0, &mut out, n as isize, 1);
    Tensor::new(vec![k, n], out).unwrap()
}
