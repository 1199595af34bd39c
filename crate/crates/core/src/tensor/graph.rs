use super::ops;
use super::{Result, Tensor, TensorError};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Upsample { input: Var, factor: usize },
    Add(Var, Var),
    Mul(Var, Var),
    AvgPool(Var),
    Linear { input: Var, weight: Var, bias: Var },
    CrossEntropy { logits: Var, target: usize },
    Bce { logits: Var, targets: Tensor },
    Sum(Var),
    WeightedSum(Vec<(Var, f64)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Eagerly evaluated computation tape.
///
/// Every op computes its value immediately and records its inputs. Node
/// indices are topologically ordered by construction, so the backward pass is
/// a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zero when `v` was not reached.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let mut out = ops::conv2d(self.value(input), self.value(kernel), stride, pad)?;
        if let Some(b) = bias {
            out = ops::add_channel_bias(&out, self.value(b))?;
        }
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        Ok(self.push(
            out,
            Op::Conv {
                input,
                kernel,
                bias,
                stride,
                pad,
            },
            &inputs,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::activate(self.value(x), ops::Activation::Relu);
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = ops::activate(self.value(x), ops::Activation::Sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let out = ops::softmax_last(self.value(x));
        self.push(out, Op::Softmax(x), &[x])
    }

    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        let out = ops::upsample_nearest(self.value(input), factor)?;
        Ok(self.push(out, Op::Upsample { input, factor }, &[input]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = ops::global_avg_pool(self.value(x))?;
        Ok(self.push(out, Op::AvgPool(x), &[x]))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = ops::linear(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(
            out,
            Op::Linear {
                input,
                weight,
                bias,
            },
            &[input, weight, bias],
        ))
    }

    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let out = ops::cross_entropy(self.value(logits), target)?;
        Ok(self.push(out, Op::CrossEntropy { logits, target }, &[logits]))
    }

    pub fn binary_cross_entropy(&mut self, logits: Var, targets: Tensor) -> Result<Var> {
        let out = ops::binary_cross_entropy(self.value(logits), &targets)?;
        Ok(self.push(out, Op::Bce { logits, targets }, &[logits]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    /// `Σ c_i · x_i` over same-shaped inputs.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let Some(&(first, _)) = terms.first() else {
            return Err(TensorError::Graph("weighted sum of nothing".into()));
        };
        let mut out = Tensor::zeros(self.value(first).shape());
        for &(v, c) in terms {
            let x = self.value(v);
            x.expect_same_shape(&out)?;
            for (o, xv) in out.data_mut().iter_mut().zip(x.data()) {
                *o += c * xv;
            }
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        Ok(self.push(out, Op::WeightedSum(terms.to_vec()), &inputs))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.weighted_sum(&[(x, c)])
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::Graph(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let contributions = self.local_gradients(node, &g)?;
            for (v, t) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot => *slot = Some(t),
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn local_gradients(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv {
                input,
                kernel,
                bias,
                stride,
                pad,
            } => {
                let need_input = self.nodes[input.0].requires_grad;
                let (gx, gk) = ops::conv2d_grads(val(*input), val(*kernel), g, *stride, *pad, need_input)?;
                let mut out = vec![(*kernel, gk)];
                out.extend(gx.map(|gx| (*input, gx)));
                if let Some(b) = bias {
                    out.push((*b, ops::channel_sums(g)?));
                }
                out
            }
            Op::Relu(x) => {
                let gx = val(*x).zip_map(g, |v, gv| if v > 0.0 { gv } else { 0.0 })?;
                vec![(*x, gx)]
            }
            Op::Sigmoid(x) => {
                let gx = node.value.zip_map(g, |y, gv| gv * y * (1.0 - y))?;
                vec![(*x, gx)]
            }
            Op::Softmax(x) => {
                let n = *node.value.shape().last().unwrap();
                let mut gx = g.clone();
                for (gr, yr) in gx
                    .data_mut()
                    .chunks_exact_mut(n)
                    .zip(node.value.data().chunks_exact(n))
                {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for (gv, y) in gr.iter_mut().zip(yr) {
                        *gv = y * (*gv - dot);
                    }
                }
                vec![(*x, gx)]
            }
            Op::Upsample { input, factor } => {
                vec![(*input, ops::upsample_nearest_backward(g, *factor)?)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Mul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if wants(*a) {
                    out.push((*a, g.zip_map(val(*b), |gv, y| gv * y)?));
                }
                if wants(*b) {
                    out.push((*b, g.zip_map(val(*a), |gv, x| gv * x)?));
                }
                out
            }
            Op::AvgPool(x) => {
                let (c, h, w) = val(*x).dims3()?;
                let n = (h * w) as f64;
                let mut gx = Vec::with_capacity(c * h * w);
                for &gc in g.data() {
                    gx.extend(std::iter::repeat_n(gc / n, h * w));
                }
                vec![(*x, Tensor::new(vec![c, h, w], gx)?)]
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = val(*input);
                let wt = val(*weight);
                let c = x.len();
                let mut out = Vec::with_capacity(3);
                if wants(*input) {
                    let mut gx = vec![0.0; c];
                    for (row, gv) in wt.data().chunks_exact(c).zip(g.data()) {
                        for (acc, wv) in gx.iter_mut().zip(row) {
                            *acc += gv * wv;
                        }
                    }
                    out.push((*input, Tensor::new(x.shape().to_vec(), gx)?));
                }
                if wants(*weight) {
                    let mut gw = Vec::with_capacity(wt.len());
                    for gv in g.data() {
                        gw.extend(x.data().iter().map(|xv| gv * xv));
                    }
                    out.push((*weight, Tensor::new(wt.shape().to_vec(), gw)?));
                }
                out.push((*bias, g.clone()));
                out
            }
            Op::CrossEntropy { logits, target } => {
                let gv = g.item();
                let mut p = ops::softmax_last(val(*logits));
                p.data_mut()[*target] -= 1.0;
                for v in p.data_mut() {
                    *v *= gv;
                }
                vec![(*logits, p)]
            }
            Op::Bce { logits, targets } => {
                let z = val(*logits);
                let scale = g.item() / z.len() as f64;
                let gz = z.zip_map(targets, |zv, t| scale * (ops::sigmoid_scalar(zv) - t))?;
                vec![(*logits, gz)]
            }
            Op::Sum(x) => vec![(*x, Tensor::full(val(*x).shape(), g.item()))],
            Op::WeightedSum(terms) => terms
                .iter()
                .map(|&(v, c)| (v, g.map(|gv| c * gv)))
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, -2.0, 3.0]));
        let l = g.sum(x);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(x).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_half_square_is_identity() {
        let mut g = Graph::new();
        let xv = Tensor::from_vec(vec![0.5, -1.5, 2.0]);
        let x = g.param(xv.clone());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let l = g.scale(s, 0.5).unwrap();
        assert_eq!(g.backward(l).unwrap().wrt(x), xv);
    }

    #[test]
    fn unreached_params_get_zero() {
        let mut g = Graph::new();
        let a = g.param(Tensor::from_vec(vec![1.0]));
        let b = g.param(Tensor::zeros(&[2, 2]));
        let l = g.sum(a);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(b), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let a = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        let r = g.relu(a);
        assert!(matches!(g.backward(r), Err(TensorError::Graph(_))));
    }

    #[test]
    fn constants_do_not_require_grad() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::from_vec(vec![1.0]));
        let s = g.sigmoid(c);
        assert!(!g.requires_grad(s));
    }
}
