use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::activations::ActivationSpec;
use crate::error::{Error, Result};
use crate::quant::ResolvedNoise;
use crate::rng::RngStream;
use crate::tensor::Tensor;

use super::kernels::{self, ConvGeom};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Named input or parameter. Parameters keep their value across passes.
    Leaf { name: String, requires_grad: bool },
    Identity(NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    /// `[m, k] x [k, n]`.
    MatMul(NodeId, NodeId),
    /// Same-shape sum, or a 1-D right operand broadcast along axis 1.
    Add(NodeId, NodeId),
    /// Same-shape elementwise product.
    Mul(NodeId, NodeId),
    /// `[n, c, h, w]` input, `[o, c, k, k]` weight, stride 1.
    Conv2d {
        input: NodeId,
        weight: NodeId,
        padding: usize,
    },
    Flatten(NodeId),
    MaxPool2(NodeId),
    /// Mean cross-entropy of `[n, k]` logits against `[n]` class indices.
    SoftmaxCrossEntropy { logits: NodeId, labels: NodeId },
    Activation { input: NodeId, spec: ActivationSpec },
    /// Quantized-noise pipeline with straight-through backward.
    Analog {
        input: NodeId,
        noise: ResolvedNoise,
        site: u64,
    },
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Identity(_) => "identity",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Conv2d { .. } => "conv2d",
            Op::Flatten(_) => "flatten",
            Op::MaxPool2(_) => "maxpool2",
            Op::SoftmaxCrossEntropy { .. } => "softmax-cross-entropy",
            Op::Activation { .. } => "activation",
            Op::Analog { .. } => "analog",
        }
    }

    pub fn inputs(&self) -> Vec<NodeId> {
        match *self {
            Op::Leaf { .. } => vec![],
            Op::Identity(a)
            | Op::Scale(a, _)
            | Op::Sum(a)
            | Op::Flatten(a)
            | Op::MaxPool2(a)
            | Op::Activation { input: a, .. }
            | Op::Analog { input: a, .. } => vec![a],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::Conv2d { input, weight, .. } => vec![input, weight],
            Op::SoftmaxCrossEntropy { logits, labels } => vec![logits, labels],
        }
    }

    /// Nodes whose backward pass is the identity (masked by clamp bounds for
    /// analog nodes).
    pub fn is_straight_through(&self) -> bool {
        matches!(self, Op::Identity(_) | Op::Analog { .. })
    }
}

#[derive(Debug, Clone, Default)]
enum Cache {
    #[default]
    None,
    Argmax(Vec<usize>),
    Probs(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct Node {
    pub op: Op,
    pub value: Option<Tensor>,
    pub grad: Option<Tensor>,
    cache: Cache,
}

/// Append-only computation graph. Every op references earlier nodes only, so
/// the graph is acyclic by construction and node order is a topological
/// order.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    names: BTreeMap<String, NodeId>,
    noise_key: u64,
    noise_off: bool,
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

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter()
    }

    /// Key mixed with each analog node's site id to seed its noise.
    pub fn noise_key(&self) -> u64 {
        self.noise_key
    }

    /// Disables the Gaussian stage of every analog node; clamp and rounding
    /// still apply.
    pub fn set_noise_enabled(&mut self, enabled: bool) {
        self.noise_off = !enabled;
    }

    pub fn set_noise_key(&mut self, key: u64) {
        self.noise_key = key;
    }

    fn push(&mut self, op: Op) -> NodeId {
        for input in op.inputs() {
            assert!(input < self.nodes.len(), "node {input} does not exist yet");
        }
        self.nodes.push(Node {
            op,
            value: None,
            grad: None,
            cache: Cache::None,
        });
        self.nodes.len() - 1
    }

    fn leaf(&mut self, name: &str, value: Option<Tensor>, requires_grad: bool) -> NodeId {
        assert!(
            !self.names.contains_key(name),
            "duplicate node name `{name}`"
        );
        let id = self.push(Op::Leaf {
            name: name.to_string(),
            requires_grad,
        });
        self.nodes[id].value = value;
        self.names.insert(name.to_string(), id);
        id
    }

    /// Leaf that must be bound on every forward pass.
    pub fn input(&mut self, name: &str) -> NodeId {
        self.leaf(name, None, false)
    }

    /// Bound input whose gradient is still reported by `backward`.
    pub fn differentiable_input(&mut self, name: &str) -> NodeId {
        self.leaf(name, None, true)
    }

    /// Trainable leaf holding its own value.
    pub fn param(&mut self, name: &str, value: Tensor) -> NodeId {
        self.leaf(name, Some(value), true)
    }

    /// Leaf holding a constant value.
    pub fn constant(&mut self, name: &str, value: Tensor) -> NodeId {
        self.leaf(name, Some(value), false)
    }

    /// Names a non-leaf node so `forward` reports its value.
    pub fn name(&mut self, id: NodeId, name: &str) {
        assert!(
            !self.names.contains_key(name),
            "duplicate node name `{name}`"
        );
        self.names.insert(name.to_string(), id);
    }

    pub fn id(&self, name: &str) -> Result<NodeId> {
        self.names
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn identity(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Identity(a))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(Op::Scale(a, c))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, padding: usize) -> NodeId {
        self.push(Op::Conv2d {
            input,
            weight,
            padding,
        })
    }

    pub fn flatten(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Flatten(a))
    }

    pub fn max_pool2(&mut self, a: NodeId) -> NodeId {
        self.push(Op::MaxPool2(a))
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: NodeId) -> NodeId {
        self.push(Op::SoftmaxCrossEntropy { logits, labels })
    }

    pub fn activation(&mut self, input: NodeId, spec: ActivationSpec) -> NodeId {
        self.push(Op::Activation { input, spec })
    }

    pub fn analog(&mut self, input: NodeId, noise: ResolvedNoise, site: u64) -> NodeId {
        self.push(Op::Analog { input, noise, site })
    }

    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id].value.as_ref()
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id].grad.as_ref()
    }

    /// Mutable access to a leaf's stored value (parameter updates).
    pub fn leaf_value_mut(&mut self, id: NodeId) -> Option<&mut Tensor> {
        match self.nodes[id].op {
            Op::Leaf { .. } => self.nodes[id].value.as_mut(),
            _ => None,
        }
    }

    pub fn set_leaf(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.id(name)?;
        if !matches!(self.nodes[id].op, Op::Leaf { .. }) {
            return Err(Error::Config(format!("`{name}` is not a leaf")));
        }
        self.nodes[id].value = Some(value);
        Ok(())
    }

    fn label(&self, id: NodeId) -> String {
        if let Some((name, _)) = self.names.iter().find(|(_, &v)| v == id) {
            return format!("{name} (#{id} {})", self.nodes[id].op.kind());
        }
        format!("#{id} {}", self.nodes[id].op.kind())
    }

    fn mismatch(&self, id: NodeId, detail: String) -> Error {
        Error::ShapeMismatch {
            node: self.label(id),
            detail,
        }
    }

    /// Binds `bindings`, evaluates every node and returns the values of all
    /// named non-leaf nodes.
    pub fn forward(&mut self, bindings: BTreeMap<String, Tensor>) -> Result<BTreeMap<String, Tensor>> {
        for (name, value) in bindings {
            self.set_leaf(&name, value)?;
        }
        self.evaluate()?;
        Ok(self
            .names
            .iter()
            .filter(|(_, &id)| !matches!(self.nodes[id].op, Op::Leaf { .. }))
            .filter_map(|(name, &id)| Some((name.clone(), self.nodes[id].value.clone()?)))
            .collect())
    }

    /// Evaluates every node using the current leaf values.
    pub fn evaluate(&mut self) -> Result<()> {
        for node in &mut self.nodes {
            node.grad = None;
            if !matches!(node.op, Op::Leaf { .. }) {
                node.value = None;
            }
        }
        for id in 0..self.nodes.len() {
            let (value, cache) = self.eval_node(id)?;
            if let Some(value) = value {
                self.nodes[id].value = Some(value);
                self.nodes[id].cache = cache;
            }
        }
        Ok(())
    }

    fn val(&self, id: NodeId) -> &Tensor {
        self.nodes[id].value.as_ref().expect("inputs evaluated first")
    }

    fn eval_node(&self, id: NodeId) -> Result<(Option<Tensor>, Cache)> {
        let op = &self.nodes[id].op;
        let out = match *op {
            Op::Leaf { ref name, .. } => {
                if self.nodes[id].value.is_none() {
                    return Err(Error::UnboundLeaf(name.clone()));
                }
                return Ok((None, Cache::None));
            }
            Op::Identity(a) => self.val(a).clone(),
            Op::Scale(a, c) => self.val(a).map(|v| v * c),
            Op::Sum(a) => Tensor::scalar(self.val(a).data().iter().sum()),
            Op::MatMul(a, b) => {
                let (x, w) = (self.val(a), self.val(b));
                let (m, k, k2, n) = match (x.shape(), w.shape()) {
                    (&[m, k], &[k2, n]) => (m, k, k2, n),
                    (xs, ws) => {
                        return Err(self.mismatch(id, format!("matmul needs two matrices, got {xs:?} x {ws:?}")))
                    }
                };
                if k != k2 {
                    return Err(self.mismatch(id, format!("inner dimensions differ: [{m}, {k}] x [{k2}, {n}]")));
                }
                let mut out = vec![0.0; m * n];
                kernels::matmul(x.data(), w.data(), &mut out, m, k, n);
                Tensor::new(vec![m, n], out)?
            }
            Op::Add(a, b) => {
                let (x, y) = (self.val(a), self.val(b));
                if x.shape() == y.shape() {
                    let mut out = x.clone();
                    out.add_assign(y);
                    out
                } else {
                    let (outer, chans, inner) = self.broadcast_dims(id, x, y)?;
                    let mut out = x.clone();
                    let bias = y.data();
                    for (chunk, i) in out.data_mut().chunks_mut(inner).zip(0..outer * chans) {
                        let bv = bias[i % chans];
                        for v in chunk {
                            *v += bv;
                        }
                    }
                    out
                }
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.val(a), self.val(b));
                if x.shape() != y.shape() {
                    return Err(self.mismatch(id, format!("{:?} * {:?}", x.shape(), y.shape())));
                }
                let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
                Tensor::new(x.shape().to_vec(), data)?
            }
            Op::Conv2d {
                input,
                weight,
                padding,
            } => {
                let (x, w) = (self.val(input), self.val(weight));
                let (n, geom, out_ch) = self.conv_geom(id, x, w, padding)?;
                let (r, p) = (geom.patch(), geom.positions());
                let mut cols = vec![0.0; r * p];
                let mut out = vec![0.0; n * out_ch * p];
                let sample = geom.channels * geom.height * geom.width;
                for s in 0..n {
                    kernels::im2col(&x.data()[s * sample..(s + 1) * sample], &geom, &mut cols);
                    kernels::matmul(
                        w.data(),
                        &cols,
                        &mut out[s * out_ch * p..(s + 1) * out_ch * p],
                        out_ch,
                        r,
                        p,
                    );
                }
                Tensor::new(vec![n, out_ch, geom.out_h(), geom.out_w()], out)?
            }
            Op::Flatten(a) => {
                let x = self.val(a);
                if x.rank() < 2 {
                    return Err(self.mismatch(id, format!("flatten needs a batch axis, got {:?}", x.shape())));
                }
                let n = x.shape()[0];
                x.clone().reshape(vec![n, x.numel() / n])?
            }
            Op::MaxPool2(a) => {
                let x = self.val(a);
                let &[n, c, h, w] = x.shape() else {
                    return Err(self.mismatch(id, format!("max-pool needs [n, c, h, w], got {:?}", x.shape())));
                };
                if h < 2 || w < 2 {
                    return Err(self.mismatch(id, format!("max-pool window exceeds {h}x{w}")));
                }
                let (oh, ow) = (h / 2, w / 2);
                let mut out = Vec::with_capacity(n * c * oh * ow);
                let mut arg = Vec::with_capacity(n * c * oh * ow);
                let data = x.data();
                for plane in 0..n * c {
                    let base = plane * h * w;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let i0 = base + 2 * oy * w + 2 * ox;
                            let mut best = i0;
                            for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                                if data[cand] > data[best] {
                                    best = cand;
                                }
                            }
                            out.push(data[best]);
                            arg.push(best);
                        }
                    }
                }
                return Ok((Some(Tensor::new(vec![n, c, oh, ow], out)?), Cache::Argmax(arg)));
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let (z, y) = (self.val(logits), self.val(labels));
                let &[n, k] = z.shape() else {
                    return Err(self.mismatch(id, format!("logits must be [n, k], got {:?}", z.shape())));
                };
                if y.numel() != n {
                    return Err(self.mismatch(id, format!("{} labels for {n} rows", y.numel())));
                }
                let mut probs = vec![0.0; n * k];
                let mut loss = 0.0;
                for (row, (&label, pr)) in y.data().iter().zip(probs.chunks_mut(k)).enumerate() {
                    let class = label as usize;
                    if label < 0.0 || libm::trunc(label) != label || class >= k {
                        return Err(self.mismatch(id, format!("label {label} is not a class index below {k}")));
                    }
                    let zr = &z.data()[row * k..(row + 1) * k];
                    let max = zr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for (p, &v) in pr.iter_mut().zip(zr) {
                        *p = libm::exp(v - max);
                        total += *p;
                    }
                    for p in pr.iter_mut() {
                        *p /= total;
                    }
                    loss += libm::log(total) + max - zr[class];
                }
                return Ok((Some(Tensor::scalar(loss / n as f64)), Cache::Probs(probs)));
            }
            Op::Activation { input, ref spec } => {
                if spec.kind.is_glu() {
                    return Err(self.mismatch(id, format!("`{}` is gated, not elementwise", spec.kind.name())));
                }
                self.val(input).map(|v| spec.value(v))
            }
            Op::Analog {
                input,
                ref noise,
                site,
            } => {
                let mut out = self.val(input).clone();
                let mut g = RngStream::new(self.noise_key, site).generator();
                if self.noise_off && noise.sigma > 0.0 {
                    let quiet = ResolvedNoise {
                        sigma: 0.0,
                        ..noise.clone()
                    };
                    quiet.apply_in_place(out.data_mut(), &mut g);
                } else {
                    noise.apply_in_place(out.data_mut(), &mut g);
                }
                out
            }
        };
        Ok((Some(out), Cache::None))
    }

    fn broadcast_dims(&self, id: NodeId, x: &Tensor, y: &Tensor) -> Result<(usize, usize, usize)> {
        if y.rank() != 1 || x.rank() < 2 || x.shape()[1] != y.numel() {
            return Err(self.mismatch(
                id,
                format!("cannot add {:?} to {:?}", y.shape(), x.shape()),
            ));
        }
        let outer = x.shape()[0];
        let chans = x.shape()[1];
        let inner = x.shape()[2..].iter().product();
        Ok((outer, chans, inner))
    }

    fn conv_geom(&self, id: NodeId, x: &Tensor, w: &Tensor, padding: usize) -> Result<(usize, ConvGeom, usize)> {
        let (&[n, c, h, wd], &[o, c2, k, k2]) = (x.shape(), w.shape()) else {
            return Err(self.mismatch(
                id,
                format!("conv2d needs [n, c, h, w] and [o, c, k, k], got {:?} and {:?}", x.shape(), w.shape()),
            ));
        };
        if c != c2 || k != k2 {
            return Err(self.mismatch(
                id,
                format!("input has {c} channels, kernel {:?}", w.shape()),
            ));
        }
        if h + 2 * padding < k || wd + 2 * padding < k {
            return Err(self.mismatch(id, format!("kernel {k} larger than padded {h}x{wd}")));
        }
        Ok((
            n,
            ConvGeom {
                channels: c,
                height: h,
                width: wd,
                kernel: k,
                padding,
            },
            o,
        ))
    }

    /// Reverse pass from a scalar `loss`. Returns `d loss / d leaf` for every
    /// leaf that requires a gradient.
    pub fn backward(&mut self, loss: NodeId) -> Result<BTreeMap<String, Tensor>> {
        self.backward_from(loss, 1.0)
    }

    /// As [`Graph::backward`] with the seed gradient `d loss / d loss = seed`.
    pub fn backward_from(&mut self, loss: NodeId, seed: f64) -> Result<BTreeMap<String, Tensor>> {
        let Some(lv) = self.nodes[loss].value.as_ref() else {
            return Err(Error::NotEvaluated(self.label(loss)));
        };
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let loss_shape = lv.shape().to_vec();
        let needs = self.needs_grad(loss);
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss].grad = Some(Tensor::full(&loss_shape, seed));

        for id in (0..=loss).rev() {
            if !needs[id] {
                continue;
            }
            let Some(g) = self.nodes[id].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(id, &g, &needs)?;
            self.nodes[id].grad = Some(g);
            for (input, contribution) in contributions {
                match self.nodes[input].grad.as_mut() {
                    Some(existing) => existing.add_assign(&contribution),
                    None => self.nodes[input].grad = Some(contribution),
                }
            }
        }

        let mut out = BTreeMap::new();
        for node in &self.nodes[..=loss] {
            if let Op::Leaf {
                ref name,
                requires_grad: true,
            } = node.op
            {
                let grad = match (&node.grad, &node.value) {
                    (Some(g), _) => g.clone(),
                    (None, Some(v)) => Tensor::zeros(v.shape()),
                    (None, None) => continue,
                };
                out.insert(name.clone(), grad);
            }
        }
        Ok(out)
    }

    fn needs_grad(&self, upto: NodeId) -> Vec<bool> {
        let mut needs = vec![false; upto + 1];
        for id in 0..=upto {
            needs[id] = match self.nodes[id].op {
                Op::Leaf { requires_grad, .. } => requires_grad,
                ref op => op.inputs().iter().any(|&i| needs[i]),
            };
        }
        needs
    }

    fn local_grads(&self, id: NodeId, g: &Tensor, needs: &[bool]) -> Result<Vec<(NodeId, Tensor)>> {
        let mut out = Vec::with_capacity(2);
        match self.nodes[id].op {
            Op::Leaf { .. } => {}
            Op::Identity(a) => out.push((a, g.clone())),
            Op::Scale(a, c) => out.push((a, g.map(|v| v * c))),
            Op::Sum(a) => {
                let gv = g.data()[0];
                out.push((a, Tensor::full(self.val(a).shape(), gv)));
            }
            Op::MatMul(a, b) => {
                let (x, w) = (self.val(a), self.val(b));
                let (m, k, n) = (x.shape()[0], x.shape()[1], w.shape()[1]);
                if needs[a] {
                    let mut dx = vec![0.0; m * k];
                    kernels::matmul_a_bt_acc(g.data(), w.data(), &mut dx, m, k, n);
                    out.push((a, Tensor::new(vec![m, k], dx)?));
                }
                if needs[b] {
                    let mut dw = vec![0.0; k * n];
                    kernels::matmul_at_b_acc(x.data(), g.data(), &mut dw, m, k, n);
                    out.push((b, Tensor::new(vec![k, n], dw)?));
                }
            }
            Op::Add(a, b) => {
                let (x, y) = (self.val(a), self.val(b));
                if needs[a] {
                    out.push((a, g.clone()));
                }
                if needs[b] {
                    if x.shape() == y.shape() {
                        out.push((b, g.clone()));
                    } else {
                        let (_, chans, inner) = self.broadcast_dims(id, x, y)?;
                        let mut db = vec![0.0; chans];
                        for (i, chunk) in g.data().chunks(inner).enumerate() {
                            db[i % chans] += chunk.iter().sum::<f64>();
                        }
                        out.push((b, Tensor::new(y.shape().to_vec(), db)?));
                    }
                }
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.val(a), self.val(b));
                let prod = |t: &Tensor| {
                    let data = g.data().iter().zip(t.data()).map(|(p, q)| p * q).collect();
                    Tensor::new(g.shape().to_vec(), data)
                };
                if needs[a] {
                    out.push((a, prod(y)?));
                }
                if needs[b] {
                    out.push((b, prod(x)?));
                }
            }
            Op::Conv2d {
                input,
                weight,
                padding,
            } => {
                let (x, w) = (self.val(input), self.val(weight));
                let (n, geom, out_ch) = self.conv_geom(id, x, w, padding)?;
                let (r, p) = (geom.patch(), geom.positions());
                let sample = geom.channels * geom.height * geom.width;
                let mut cols = vec![0.0; r * p];
                let mut dcols = vec![0.0; r * p];
                let mut dw = needs[weight].then(|| vec![0.0; out_ch * r]);
                let mut dx = needs[input].then(|| vec![0.0; x.numel()]);
                for s in 0..n {
                    let gs = &g.data()[s * out_ch * p..(s + 1) * out_ch * p];
                    if let Some(dw) = dw.as_mut() {
                        kernels::im2col(&x.data()[s * sample..(s + 1) * sample], &geom, &mut cols);
                        kernels::matmul_a_bt_acc(gs, &cols, dw, out_ch, r, p);
                    }
                    if let Some(dx) = dx.as_mut() {
                        dcols.fill(0.0);
                        kernels::matmul_at_b_acc(w.data(), gs, &mut dcols, out_ch, r, p);
                        kernels::col2im_acc(&dcols, &geom, &mut dx[s * sample..(s + 1) * sample]);
                    }
                }
                if let Some(dx) = dx {
                    out.push((input, Tensor::new(x.shape().to_vec(), dx)?));
                }
                if let Some(dw) = dw {
                    out.push((weight, Tensor::new(w.shape().to_vec(), dw)?));
                }
            }
            Op::Flatten(a) => {
                out.push((a, g.clone().reshape(self.val(a).shape().to_vec())?));
            }
            Op::MaxPool2(a) => {
                let Cache::Argmax(ref arg) = self.nodes[id].cache else {
                    return Err(Error::NotEvaluated(self.label(id)));
                };
                let mut dx = Tensor::zeros(self.val(a).shape());
                let d = dx.data_mut();
                for (&src, &gv) in arg.iter().zip(g.data()) {
                    d[src] += gv;
                }
                out.push((a, dx));
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let Cache::Probs(ref probs) = self.nodes[id].cache else {
                    return Err(Error::NotEvaluated(self.label(id)));
                };
                if needs[logits] {
                    let z = self.val(logits);
                    let (n, k) = (z.shape()[0], z.shape()[1]);
                    let scale = g.data()[0] / n as f64;
                    let mut dz: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (row, &label) in self.val(labels).data().iter().enumerate() {
                        dz[row * k + label as usize] -= scale;
                    }
                    out.push((logits, Tensor::new(vec![n, k], dz)?));
                }
            }
            Op::Activation { input, ref spec } => {
                let x = self.val(input);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xv, &gv)| gv * spec.derivative(xv))
                    .collect();
                out.push((input, Tensor::new(x.shape().to_vec(), data)?));
            }
            Op::Analog {
                input, ref noise, ..
            } => {
                if noise.has_clamp() {
                    let x = self.val(input);
                    let (lo, hi) = (noise.clamp_lo, noise.clamp_hi);
                    let data = x
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&xv, &gv)| if xv >= lo && xv <= hi { gv } else { 0.0 })
                        .collect();
                    out.push((input, Tensor::new(x.shape().to_vec(), data)?));
                } else {
                    out.push((input, g.clone()));
                }
            }
        }
        Ok(out.into_iter().filter(|(i, _)| needs[*i]).collect())
    }
}
