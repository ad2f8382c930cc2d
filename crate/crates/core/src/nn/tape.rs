use super::kernels::{self, ConvGeom, ConvGrads, PoolGeom};
use super::{sigmoid_scalar, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernels: Var,
        bias: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    Dense {
        input: Var,
        weights: Var,
        bias: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    GlobalAvgPool {
        input: Var,
        spatial: usize,
    },
    Reshape(Var),
    Concat(Vec<Var>),
    Bce {
        predictions: Var,
        targets: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
    /// Accumulated gradient; only leaves keep one between backward passes.
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, so every node's inputs precede it and
/// a reverse sweep over the node list is a valid reverse topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a copy of `tensor` as an input; it receives gradients iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        self.push(
            tensor.shape().to_vec(),
            tensor.values().to_vec(),
            tensor.requires_grad(),
            Op::Leaf,
        )
    }

    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, values)?;
        Ok(self.leaf(&t))
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.node(v).grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.node(v).requires_grad)
    }

    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(input), self.shape(kernels), self.shape(bias), stride, padding)?;
        let (out, cols) = kernels::conv2d_forward(
            &geom,
            self.value(input),
            self.value(kernels),
            self.value(bias),
        );
        let rg = self.any_grad(&[input, kernels, bias]);
        Ok(self.push(
            geom.output_shape().to_vec(),
            out,
            rg,
            Op::Conv2d {
                input,
                kernels,
                bias,
                geom,
                cols,
            },
        ))
    }

    pub fn maxpool2d(&mut self, input: Var, window: usize) -> Result<Var> {
        let geom = PoolGeom::new(self.shape(input), window)?;
        let (out, argmax) = kernels::maxpool_forward(&geom, self.value(input));
        let rg = self.any_grad(&[input]);
        Ok(self.push(geom.output_shape().to_vec(), out, rg, Op::MaxPool2d { input, argmax }))
    }

    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let (m, n) = kernels::dense_dims(self.shape(input), self.shape(weights), self.shape(bias))?;
        let out = kernels::dense_forward(m, n, self.value(input), self.value(weights), self.value(bias));
        let rg = self.any_grad(&[input, weights, bias]);
        Ok(self.push(vec![m], out, rg, Op::Dense { input, weights, bias }))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = self.value(input).iter().map(|&x| x.max(0.0)).collect();
        let shape = self.shape(input).to_vec();
        let rg = self.any_grad(&[input]);
        self.push(shape, out, rg, Op::Relu(input))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let out = self.value(input).iter().map(|&x| sigmoid_scalar(x)).collect();
        let shape = self.shape(input).to_vec();
        let rg = self.any_grad(&[input]);
        self.push(shape, out, rg, Op::Sigmoid(input))
    }

    /// Mean over the spatial dims of a `[C, H, W]` value, giving `[C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let &[c, h, w] = self.shape(input) else {
            return Err(Error::Shape(format!(
                "global average pool expects [C, H, W], got {:?}",
                self.shape(input)
            )));
        };
        let spatial = h * w;
        let out = self
            .value(input)
            .chunks_exact(spatial)
            .map(|plane| plane.iter().sum::<f64>() / spatial as f64)
            .collect();
        let rg = self.any_grad(&[input]);
        Ok(self.push(vec![c], out, rg, Op::GlobalAvgPool { input, spatial }))
    }

    pub fn flatten(&mut self, input: Var) -> Var {
        let value = self.value(input).to_vec();
        let rg = self.any_grad(&[input]);
        self.push(vec![value.len()], value, rg, Op::Reshape(input))
    }

    /// Concatenates the flattened values of `inputs` into one 1-D value.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::Shape("concat of zero values".into()));
        }
        let value: Vec<f64> = inputs.iter().flat_map(|&v| self.value(v).iter().copied()).collect();
        let rg = self.any_grad(inputs);
        Ok(self.push(vec![value.len()], value, rg, Op::Concat(inputs.to_vec())))
    }

    /// Mean binary cross-entropy of a value of probabilities against 0/1
    /// targets, as a `[1]` scalar.
    pub fn bce_loss(&mut self, predictions: Var, targets: &[f64]) -> Result<Var> {
        let p = self.value(predictions);
        kernels::check_bce(p.len(), targets)?;
        let loss = p
            .iter()
            .zip(targets)
            .map(|(&p, &y)| kernels::bce_single(p, y))
            .sum::<f64>()
            / p.len() as f64;
        let rg = self.any_grad(&[predictions]);
        Ok(self.push(
            vec![1],
            vec![loss],
            rg,
            Op::Bce {
                predictions,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`, adding d(loss)/d(leaf) into
    /// every reachable leaf that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.node(loss).value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.node(loss).shape
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = Vec::new();
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => leaf_grads.push((i, g)),
                Op::Conv2d {
                    input,
                    kernels,
                    bias,
                    geom,
                    cols,
                } => {
                    let mut dx = self.buffer_if(&mut adj, *input);
                    let mut dk = self.buffer_if(&mut adj, *kernels);
                    let mut db = self.buffer_if(&mut adj, *bias);
                    kernels::conv2d_backward(
                        geom,
                        cols,
                        &self.nodes[kernels.0].value,
                        &g,
                        ConvGrads {
                            input: dx.as_deref_mut(),
                            kernels: dk.as_deref_mut(),
                            bias: db.as_deref_mut(),
                        },
                    );
                    restore(&mut adj, *input, dx);
                    restore(&mut adj, *kernels, dk);
                    restore(&mut adj, *bias, db);
                }
                Op::MaxPool2d { input, argmax } => {
                    if let Some(mut dx) = self.buffer_if(&mut adj, *input) {
                        for (&src, &d) in argmax.iter().zip(&g) {
                            dx[src] += d;
                        }
                        restore(&mut adj, *input, Some(dx));
                    }
                }
                Op::Dense { input, weights, bias } => {
                    let n = self.nodes[input.0].value.len();
                    if let Some(mut dx) = self.buffer_if(&mut adj, *input) {
                        let w = &self.nodes[weights.0].value;
                        for (row, &gi) in w.chunks_exact(n).zip(&g) {
                            for (d, &wij) in dx.iter_mut().zip(row) {
                                *d += gi * wij;
                            }
                        }
                        restore(&mut adj, *input, Some(dx));
                    }
                    if let Some(mut dw) = self.buffer_if(&mut adj, *weights) {
                        let x = &self.nodes[input.0].value;
                        for (row, &gi) in dw.chunks_exact_mut(n).zip(&g) {
                            for (d, &xj) in row.iter_mut().zip(x) {
                                *d += gi * xj;
                            }
                        }
                        restore(&mut adj, *weights, Some(dw));
                    }
                    if let Some(mut db) = self.buffer_if(&mut adj, *bias) {
                        for (d, &gi) in db.iter_mut().zip(&g) {
                            *d += gi;
                        }
                        restore(&mut adj, *bias, Some(db));
                    }
                }
                Op::Relu(input) => {
                    if let Some(mut dx) = self.buffer_if(&mut adj, *input) {
                        for ((d, &x), &gi) in dx.iter_mut().zip(&self.nodes[input.0].value).zip(&g) {
                            if x > 0.0 {
                                *d += gi;
                            }
                        }
                        restore(&mut adj, *input, Some(dx));
                    }
                }
                Op::Sigmoid(input) => {
                    if let Some(mut dx) = self.buffer_if(&mut adj, *input) {
                        for ((d, &s), &gi) in dx.iter_mut().zip(&node.value).zip(&g) {
                            *d += gi * s * (1.0 - s);
                        }
                        restore(&mut adj, *input, Some(dx));
                    }
                }
                Op::GlobalAvgPool { input, spatial } => {
                    if let Some(mut dx) = self.buffer_if(&mut adj, *input) {
                        let scale = 1.0 / *spatial as f64;
                        for (plane, &gi) in dx.chunks_exact_mut(*spatial).zip(&g) {
                            for d in plane {
                                *d += gi * scale;
                            }
                        }
                        restore(&mut adj, *input, Some(dx));
                    }
                }
                Op::Reshape(input) => {
                    if let Some(mut dx) = self.buffer_if(&mut adj, *input) {
                        for (d, &gi) in dx.iter_mut().zip(&g) {
                            *d += gi;
                        }
                        restore(&mut adj, *input, Some(dx));
                    }
                }
                Op::Concat(inputs) => {
                    let mut offset = 0;
                    for &input in inputs {
                        let len = self.nodes[input.0].value.len();
                        if let Some(mut dx) = self.buffer_if(&mut adj, input) {
                            for (d, &gi) in dx.iter_mut().zip(&g[offset..offset + len]) {
                                *d += gi;
                            }
                            restore(&mut adj, input, Some(dx));
                        }
                        offset += len;
                    }
                }
                Op::Bce { predictions, targets } => {
                    if let Some(mut dx) = self.buffer_if(&mut adj, *predictions) {
                        let scale = g[0] / targets.len() as f64;
                        for ((d, &p), &y) in dx.iter_mut().zip(&self.nodes[predictions.0].value).zip(targets) {
                            *d += scale * kernels::bce_single_grad(p, y);
                        }
                        restore(&mut adj, *predictions, Some(dx));
                    }
                }
            }
        }

        for (i, g) in leaf_grads {
            let grad = self.nodes[i].grad.get_or_insert_with(|| vec![0.0; g.len()]);
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Takes the adjoint buffer of `v` out of `adj` (zero-initialised on first
    /// touch), or `None` when `v` does not need a gradient.
    fn buffer_if(&self, adj: &mut [Option<Vec<f64>>], v: Var) -> Option<Vec<f64>> {
        let node = self.node(v);
        if !node.requires_grad {
            return None;
        }
        Some(adj[v.0].take().unwrap_or_else(|| vec![0.0; node.value.len()]))
    }
}

fn restore(adj: &mut [Option<Vec<f64>>], v: Var, buf: Option<Vec<f64>>) {
    if buf.is_some() {
        adj[v.0] = buf;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(shape: &[usize], values: &[f64]) -> Tensor {
        Tensor::param(shape.to_vec(), values.to_vec()).unwrap()
    }

    #[test]
    fn identity_loss_has_unit_grad() {
        let mut tape = Tape::new();
        let w = tape.leaf(&param(&[1], &[3.5]));
        tape.backward(w).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[1.0]);
    }

    #[test]
    fn zero_input_kills_gradient() {
        let mut tape = Tape::new();
        let w = tape.leaf(&param(&[1, 1], &[0.7]));
        let b = tape.constant(vec![1], vec![0.0]).unwrap();
        let x = tape.constant(vec![1], vec![0.0]).unwrap();
        let z = tape.dense(x, w, b).unwrap();
        let loss = tape.sigmoid(z);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let w = tape.leaf(&param(&[2], &[1.0, 2.0]));
        let r = tape.relu(w);
        assert!(matches!(tape.backward(r), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_twice_doubles_grads() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![1, 4, 4], (0..16).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let k = tape.leaf(&param(&[2, 1, 3, 3], &[0.1, -0.2, 0.3, 0.05, 0.4, -0.1, 0.2, 0.0, -0.3, 0.25, 0.1, -0.05, 0.3, -0.2, 0.15, 0.1, 0.2, -0.1]));
        let b = tape.leaf(&param(&[2], &[0.01, -0.02]));
        let c = tape.conv2d(x, k, b, 1, 1).unwrap();
        let r = tape.relu(c);
        let p = tape.maxpool2d(r, 2).unwrap();
        let f = tape.flatten(p);
        let w = tape.leaf(&param(&[1, 8], &[0.3, -0.1, 0.2, 0.5, -0.4, 0.1, 0.05, -0.2]));
        let wb = tape.leaf(&param(&[1], &[0.0]));
        let z = tape.dense(f, w, wb).unwrap();
        let s = tape.sigmoid(z);
        let loss = tape.bce_loss(s, &[1.0]).unwrap();

        tape.backward(loss).unwrap();
        let once: Vec<Vec<f64>> = [k, b, w, wb].iter().map(|&v| tape.grad(v).unwrap().to_vec()).collect();
        tape.backward(loss).unwrap();
        for (v, g1) in [k, b, w, wb].iter().zip(&once) {
            let g2 = tape.grad(*v).unwrap();
            for (a, b) in g1.iter().zip(g2) {
                assert_eq!(2.0 * a, *b);
            }
        }
        tape.zero_grad();
        assert!(tape.grad(k).is_none());
    }

    #[test]
    fn constants_receive_no_grad() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![2], vec![1.0, 2.0]).unwrap();
        let w = tape.leaf(&param(&[1, 2], &[0.5, 0.5]));
        let b = tape.leaf(&param(&[1], &[0.0]));
        let z = tape.dense(x, w, b).unwrap();
        let s = tape.sigmoid(z);
        let loss = tape.bce_loss(s, &[0.0]).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).is_none());
        assert!(tape.grad(w).is_some());
    }

    #[test]
    fn concat_and_avg_pool_route_grads() {
        let mut tape = Tape::new();
        let a = tape.leaf(&param(&[2, 1, 2], &[1.0, 3.0, 5.0, 7.0]));
        let b = tape.leaf(&param(&[1], &[2.0]));
        let ga = tape.global_avg_pool(a).unwrap();
        assert_eq!(tape.value(ga), &[2.0, 6.0]);
        let cat = tape.concat(&[ga, b]).unwrap();
        assert_eq!(tape.value(cat), &[2.0, 6.0, 2.0]);
        let w = tape.constant(vec![1, 3], vec![1.0, 10.0, 100.0]).unwrap();
        let z0 = tape.constant(vec![1], vec![0.0]).unwrap();
        let out = tape.dense(cat, w, z0).unwrap();
        tape.backward(out).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[0.5, 0.5, 5.0, 5.0]);
        assert_eq!(tape.grad(b).unwrap(), &[100.0]);
    }
}
