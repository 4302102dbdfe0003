//! Tape-based reverse-mode automatic differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is a topological
//! order by construction. [`Graph::backward`] consumes the graph, which makes
//! a second backward pass over the same tape impossible.

use super::kernels::{self, ConvGeometry};
use super::{NumericsError, ParamId, ParamStore, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Affine { x: Var, w: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Var },
    Silu(Var),
    Mean(Var),
    SumOfSquares(Var),
    ConcatChannels(Var, Var),
    AvgPool2(Var),
    Upsample2(Var),
    ChannelBias { x: Var, e: Var },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Single-use computation graph for one training step.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-parameter gradients produced by [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    /// Global L2 norm over every gradient.
    pub fn global_norm(&self) -> f32 {
        let sq: f64 = self
            .iter()
            .flat_map(|(_, g)| g.data())
            .map(|&v| (v as f64) * (v as f64))
            .sum();
        sq.sqrt() as f32
    }

    /// Rescales all gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f32) -> f32 {
        let norm = self.global_norm();
        if norm > max_norm && norm.is_finite() {
            let s = max_norm / norm;
            for g in self.grads.iter_mut().flatten() {
                g.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
        norm
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    /// Trainable leaf holding a copy of parameter `id`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f32, f32) -> f32,
        op: Op,
    ) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(t, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f32) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| x * k).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("shape preserved");
        self.push(t, Op::Scale(a, k))
    }

    /// Batched affine map: `x: [B, in]`, `w: [out, in]`, `b: [out]` → `[B, out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(mismatch("affine", xs, ws));
        }
        if bs != [ws[0]] {
            return Err(mismatch("affine", ws, bs));
        }
        let (batch, inputs, outputs) = (xs[0], xs[1], ws[0]);
        let mut y = vec![0.0; batch * outputs];
        kernels::affine_forward(
            self.value(x).data(),
            batch,
            inputs,
            self.value(w).data(),
            self.value(b).data(),
            &mut y,
        );
        let t = Tensor::new(vec![batch, outputs], y)?;
        Ok(self.push(t, Op::Affine { x, w, b }))
    }

    fn conv_geometry(&self, x: Var, w: Var, b: Var) -> Result<ConvGeometry, NumericsError> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != ws[3] || ws[2] % 2 == 0 {
            return Err(mismatch("conv2d", xs, ws));
        }
        if bs != [ws[0]] {
            return Err(mismatch("conv2d", ws, bs));
        }
        Ok(ConvGeometry {
            in_channels: xs[0],
            out_channels: ws[0],
            batch: xs[1],
            height: xs[2],
            width: xs[3],
            kernel: ws[2],
        })
    }

    /// Stride-1 "same" convolution: `x: [Cin, B, H, W]`, `w: [Cout, Cin, k, k]`,
    /// `b: [Cout]` → `[Cout, B, H, W]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
        let g = self.conv_geometry(x, w, b)?;
        let mut out = vec![0.0; g.output_len()];
        kernels::conv2d_forward(
            &g,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &mut out,
        );
        let t = Tensor::new(vec![g.out_channels, g.batch, g.height, g.width], out)?;
        Ok(self.push(t, Op::Conv2d { x, w, b }))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        kernels::silu_inplace(t.data_mut());
        self.push(t, Op::Silu(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let s: f64 = ta.data().iter().map(|&v| v as f64).sum();
        let t = Tensor::scalar((s / ta.numel() as f64) as f32);
        self.push(t, Op::Mean(a))
    }

    pub fn sum_of_squares(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().map(|&v| (v as f64) * (v as f64)).sum();
        self.push(Tensor::scalar(s as f32), Op::SumOfSquares(a))
    }

    /// Joins `[C1, ...]` and `[C2, ...]` along the leading channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() || sa.is_empty() || sa[1..] != sb[1..] {
            return Err(mismatch("concat_channels", sa, sb));
        }
        let mut shape = sa.to_vec();
        shape[0] += sb[0];
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::ConcatChannels(a, b)))
    }

    fn planes(&self, name: &'static str, a: Var) -> Result<(usize, usize, usize), NumericsError> {
        let s = self.shape(a);
        if s.len() != 4 {
            return Err(mismatch(name, s, &[0, 0, 0, 0]));
        }
        Ok((s[0] * s[1], s[2], s[3]))
    }

    /// 2×2 mean pooling of `[C, B, H, W]` with even `H` and `W`.
    pub fn avg_pool2(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (planes, h, w) = self.planes("avg_pool2", a)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(NumericsError::InvalidShape {
                shape: self.shape(a).to_vec(),
                reason: "avg_pool2 needs even height and width",
            });
        }
        let s = self.shape(a);
        let shape = vec![s[0], s[1], h / 2, w / 2];
        let out = kernels::avg_pool2_forward(self.value(a).data(), planes, h, w);
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::AvgPool2(a)))
    }

    pub fn upsample2(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (planes, h, w) = self.planes("upsample2", a)?;
        let s = self.shape(a);
        let shape = vec![s[0], s[1], h * 2, w * 2];
        let out = kernels::upsample2_forward(self.value(a).data(), planes, h, w);
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Upsample2(a)))
    }

    /// Broadcast-adds `e: [B, C]` over the pixels of `x: [C, B, H, W]`.
    pub fn channel_bias(&mut self, x: Var, e: Var) -> Result<Var, NumericsError> {
        let (xs, es) = (self.shape(x), self.shape(e));
        if xs.len() != 4 || es != [xs[1], xs[0]] {
            return Err(mismatch("channel_bias", xs, es));
        }
        let (c, b, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        let mut t = self.value(x).clone();
        kernels::add_channel_bias(t.data_mut(), c, b, hw, self.value(e).data());
        Ok(self.push(t, Op::ChannelBias { x, e }))
    }

    /// Reverse pass from a scalar `loss`, returning the gradient of every
    /// parameter leaf on the tape.
    pub fn backward(self, loss: Var, store: &ParamStore) -> Result<Gradients, NumericsError> {
        let loss_shape = self.shape(loss).to_vec();
        if self.value(loss).numel() != 1 {
            return Err(NumericsError::NonScalarLoss { shape: loss_shape });
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<f32>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients {
            grads: vec![None; store.len()],
        };

        fn acc<'a>(grads: &'a mut [Option<Vec<f32>>], nodes: &[Node], v: Var) -> &'a mut [f32] {
            grads[v.0]
                .get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()])
                .as_mut_slice()
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            match node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let slot = &mut out.grads[id.0];
                    match slot {
                        Some(t) => t.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(Tensor::new(node.value.shape().to_vec(), g)?),
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, &nodes, a).iter_mut().zip(&g).for_each(|(d, s)| *d += s);
                    acc(&mut grads, &nodes, b).iter_mut().zip(&g).for_each(|(d, s)| *d += s);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, &nodes, a).iter_mut().zip(&g).for_each(|(d, s)| *d += s);
                    acc(&mut grads, &nodes, b).iter_mut().zip(&g).for_each(|(d, s)| *d -= s);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    let ga: Vec<f32> = g.iter().zip(vb).map(|(s, y)| s * y).collect();
                    let gb: Vec<f32> = g.iter().zip(va).map(|(s, x)| s * x).collect();
                    acc(&mut grads, &nodes, a)
                        .iter_mut()
                        .zip(&ga)
                        .for_each(|(d, s)| *d += s);
                    acc(&mut grads, &nodes, b)
                        .iter_mut()
                        .zip(&gb)
                        .for_each(|(d, s)| *d += s);
                }
                Op::Scale(a, k) => {
                    acc(&mut grads, &nodes, a)
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(d, s)| *d += s * k);
                }
                Op::Affine { x, w, b } => {
                    let xs = nodes[x.0].value.shape();
                    let (batch, inputs) = (xs[0], xs[1]);
                    let outputs = nodes[w.0].value.shape()[0];
                    let mut gw = vec![0.0; outputs * inputs];
                    let mut gb = vec![0.0; outputs];
                    let mut gx = vec![0.0; batch * inputs];
                    kernels::affine_backward(
                        nodes[x.0].value.data(),
                        batch,
                        inputs,
                        nodes[w.0].value.data(),
                        &g,
                        Some(&mut gx),
                        &mut gw,
                        &mut gb,
                    );
                    for (v, d) in [(x, gx), (w, gw), (b, gb)] {
                        acc(&mut grads, &nodes, v).iter_mut().zip(&d).for_each(|(p, q)| *p += q);
                    }
                }
                Op::Conv2d { x, w, b } => {
                    let xs = nodes[x.0].value.shape();
                    let ws = nodes[w.0].value.shape();
                    let geom = ConvGeometry {
                        in_channels: xs[0],
                        out_channels: ws[0],
                        batch: xs[1],
                        height: xs[2],
                        width: xs[3],
                        kernel: ws[2],
                    };
                    let needs_input = !matches!(nodes[x.0].op, Op::Input);
                    let mut gw = vec![0.0; geom.weight_len()];
                    let mut gb = vec![0.0; geom.out_channels];
                    let mut gx = if needs_input {
                        vec![0.0; geom.input_len()]
                    } else {
                        Vec::new()
                    };
                    kernels::conv2d_backward(
                        &geom,
                        nodes[x.0].value.data(),
                        nodes[w.0].value.data(),
                        &g,
                        needs_input.then_some(gx.as_mut_slice()),
                        &mut gw,
                        &mut gb,
                    );
                    if needs_input {
                        acc(&mut grads, &nodes, x)
                            .iter_mut()
                            .zip(&gx)
                            .for_each(|(p, q)| *p += q);
                    }
                    acc(&mut grads, &nodes, w)
                        .iter_mut()
                        .zip(&gw)
                        .for_each(|(p, q)| *p += q);
                    acc(&mut grads, &nodes, b)
                        .iter_mut()
                        .zip(&gb)
                        .for_each(|(p, q)| *p += q);
                }
                Op::Silu(a) => {
                    let va = nodes[a.0].value.data();
                    let d: Vec<f32> = g.iter().zip(va).map(|(s, &x)| s * kernels::silu_grad(x)).collect();
                    acc(&mut grads, &nodes, a).iter_mut().zip(&d).for_each(|(p, q)| *p += q);
                }
                Op::Mean(a) => {
                    let n = nodes[a.0].value.numel();
                    let s = g[0] / n as f32;
                    acc(&mut grads, &nodes, a).iter_mut().for_each(|p| *p += s);
                }
                Op::SumOfSquares(a) => {
                    let va = nodes[a.0].value.data();
                    let s = g[0];
                    let d: Vec<f32> = va.iter().map(|&x| 2.0 * x * s).collect();
                    acc(&mut grads, &nodes, a).iter_mut().zip(&d).for_each(|(p, q)| *p += q);
                }
                Op::ConcatChannels(a, b) => {
                    let na = nodes[a.0].value.numel();
                    acc(&mut grads, &nodes, a)
                        .iter_mut()
                        .zip(&g[..na])
                        .for_each(|(p, q)| *p += q);
                    acc(&mut grads, &nodes, b)
                        .iter_mut()
                        .zip(&g[na..])
                        .for_each(|(p, q)| *p += q);
                }
                Op::AvgPool2(a) => {
                    let s = nodes[a.0].value.shape();
                    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
                    kernels::avg_pool2_backward(&g, planes, h, w, acc(&mut grads, &nodes, a));
                }
                Op::Upsample2(a) => {
                    let s = nodes[a.0].value.shape();
                    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
                    kernels::upsample2_backward(&g, planes, h, w, acc(&mut grads, &nodes, a));
                }
                Op::ChannelBias { x, e } => {
                    let s = nodes[x.0].value.shape();
                    let (c, b, hw) = (s[0], s[1], s[2] * s[3]);
                    let mut ge = vec![0.0f32; b * c];
                    for ci in 0..c {
                        for bi in 0..b {
                            let plane = &g[(ci * b + bi) * hw..][..hw];
                            ge[bi * c + ci] = plane.iter().map(|&v| v as f64).sum::<f64>() as f32;
                        }
                    }
                    acc(&mut grads, &nodes, x).iter_mut().zip(&g).for_each(|(p, q)| *p += q);
                    acc(&mut grads, &nodes, e)
                        .iter_mut()
                        .zip(&ge)
                        .for_each(|(p, q)| *p += q);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[(&str, Tensor)]) -> (ParamStore, Vec<ParamId>) {
        let mut store = ParamStore::new();
        let ids = values.iter().map(|(n, t)| store.insert(n, t.clone())).collect();
        (store, ids)
    }

    #[test]
    fn silu_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(0.0));
        let y = g.silu(x);
        assert_eq!(g.value(y).item(), Some(0.0));
    }

    #[test]
    fn sum_of_squares_value_and_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let y = g.sum_of_squares(x);
        assert_eq!(g.value(y).item(), Some(14.0));

        let (store, ids) = store_with(&[("x", Tensor::vector(vec![1.0, 2.0]))]);
        let mut g = Graph::new();
        let x = g.param(&store, ids[0]);
        let y = g.sum_of_squares(x);
        let grads = g.backward(y, &store).unwrap();
        assert_eq!(grads.get(ids[0]).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn mean_gradient_is_uniform() {
        let (store, ids) = store_with(&[("x", Tensor::vector(vec![1.0, 5.0, -3.0, 2.0]))]);
        let mut g = Graph::new();
        let x = g.param(&store, ids[0]);
        let y = g.mean(x);
        let grads = g.backward(y, &store).unwrap();
        assert_eq!(grads.get(ids[0]).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn conv_of_ones_center_and_corner() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[1, 1, 3, 3], 1.0));
        let w = g.input(Tensor::full(&[1, 1, 3, 3], 1.0));
        let b = g.input(Tensor::zeros(&[1]));
        let y = g.conv2d(x, w, b).unwrap();
        let v = g.value(y).data();
        assert_eq!(v[4], 9.0);
        assert_eq!(v[0], 4.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let (store, ids) = store_with(&[("x", Tensor::vector(vec![1.0, 2.0]))]);
        let mut g = Graph::new();
        let x = g.param(&store, ids[0]);
        let y = g.silu(x);
        assert!(matches!(
            g.backward(y, &store),
            Err(NumericsError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[2]));
        let b = g.input(Tensor::zeros(&[3]));
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(
            err.contains("add") && err.contains("[2]") && err.contains("[3]"),
            "{err}"
        );
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = Σ (x + x)²  ⇒ ∂/∂x = 8x
        let (store, ids) = store_with(&[("x", Tensor::vector(vec![1.0, -0.5]))]);
        let mut g = Graph::new();
        let x = g.param(&store, ids[0]);
        let y = g.add(x, x).unwrap();
        let l = g.sum_of_squares(y);
        let grads = g.backward(l, &store).unwrap();
        assert_eq!(grads.get(ids[0]).unwrap().data(), &[8.0, -4.0]);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let (store, ids) = store_with(&[("x", Tensor::vector(vec![3.0, 4.0]))]);
        let mut g = Graph::new();
        let x = g.param(&store, ids[0]);
        let l = g.sum_of_squares(x);
        let mut grads = g.backward(l, &store).unwrap();
        let before = grads.clip_global_norm(1.0);
        assert!((before - 10.0).abs() < 1e-5);
        assert!((grads.global_norm() - 1.0).abs() < 1e-5);
    }
}
