//! Child-sum tree-LSTM cell, softmax head and exact reverse-mode gradients.
//!
//! For a node with input `x` and children states `(h_k, c_k)`:
//!
//! ```text
//! h~  = Σ_k h_k
//! i   = σ(W_i x + U_i h~ + b_i)
//! f_k = σ(W_f x + U_f h_k + b_f)        (one forget gate per child)
//! o   = σ(W_o x + U_o h~ + b_o)
//! u   = tanh(W_u x + U_u h~ + b_u)
//! c   = i ⊙ u + Σ_k f_k ⊙ c_k
//! h   = o ⊙ tanh(c)
//! ```
//!
//! The root's `h` feeds `softmax(W_y h + b_y)` over the six relation labels.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::label::NUM_LABELS;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-finite value in {what} at node {node}")]
    NonFinite { what: &'static str, node: usize },
    #[error("input width {found} does not match model input size {expected}")]
    InputWidth { expected: usize, found: usize },
    #[error("malformed encoded tree: {0}")]
    BadTree(String),
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

/// Model input for one relation instance: node vectors in post-order, each
/// node's children given as indices of earlier nodes. The last node is the
/// root.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTree {
    inputs: Vec<Array1<f64>>,
    children: Vec<Vec<usize>>,
}

impl EncodedTree {
    pub fn new(
        inputs: Vec<Array1<f64>>,
        children: Vec<Vec<usize>>,
    ) -> Result<EncodedTree, ModelError> {
        if inputs.is_empty() || inputs.len() != children.len() {
            return Err(ModelError::BadTree(format!(
                "{} inputs for {} child lists",
                inputs.len(),
                children.len()
            )));
        }
        let mut has_parent = vec![false; inputs.len()];
        for (k, kids) in children.iter().enumerate() {
            for &c in kids {
                if c >= k {
                    return Err(ModelError::BadTree(format!(
                        "node {k} lists child {c} that is not earlier in post-order"
                    )));
                }
                if std::mem::replace(&mut has_parent[c], true) {
                    return Err(ModelError::BadTree(format!("node {c} has two parents")));
                }
            }
        }
        if let Some(orphan) = has_parent[..inputs.len() - 1].iter().position(|p| !p) {
            return Err(ModelError::BadTree(format!(
                "node {orphan} is not connected to the root"
            )));
        }
        Ok(EncodedTree { inputs, children })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input(&self, k: usize) -> &Array1<f64> {
        &self.inputs[k]
    }

    pub fn children(&self, k: usize) -> &[usize] {
        &self.children[k]
    }

    pub fn root(&self) -> usize {
        self.inputs.len() - 1
    }
}

/// Every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeLstmParams {
    pub w_i: Array2<f64>,
    pub w_f: Array2<f64>,
    pub w_o: Array2<f64>,
    pub w_u: Array2<f64>,
    pub u_i: Array2<f64>,
    pub u_f: Array2<f64>,
    pub u_o: Array2<f64>,
    pub u_u: Array2<f64>,
    pub b_i: Array1<f64>,
    pub b_f: Array1<f64>,
    pub b_o: Array1<f64>,
    pub b_u: Array1<f64>,
    pub w_y: Array2<f64>,
    pub b_y: Array1<f64>,
}

pub const NUM_TENSORS: usize = 14;

pub const TENSOR_NAMES: [&str; NUM_TENSORS] = [
    "W_i", "W_f", "W_o", "W_u", "U_i", "U_f", "U_o", "U_u", "b_i", "b_f", "b_o", "b_u", "W_y",
    "b_y",
];

impl TreeLstmParams {
    pub fn zeros(input: usize, hidden: usize) -> TreeLstmParams {
        let w = || Array2::zeros((hidden, input));
        let u = || Array2::zeros((hidden, hidden));
        let b = || Array1::zeros(hidden);
        TreeLstmParams {
            w_i: w(),
            w_f: w(),
            w_o: w(),
            w_u: w(),
            u_i: u(),
            u_f: u(),
            u_o: u(),
            u_u: u(),
            b_i: b(),
            b_f: b(),
            b_o: b(),
            b_u: b(),
            w_y: Array2::zeros((NUM_LABELS, hidden)),
            b_y: Array1::zeros(NUM_LABELS),
        }
    }

    /// Glorot-uniform weights, zero biases except the forget bias (1.0).
    pub fn init(input: usize, hidden: usize, seed: u64) -> TreeLstmParams {
        assert!(input > 0 && hidden > 0, "model sizes must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = TreeLstmParams::zeros(input, hidden);
        let mut fill = |m: &mut Array2<f64>| {
            let (rows, cols) = m.dim();
            let r = (6.0 / (rows + cols) as f64).sqrt();
            m.mapv_inplace(|_| rng.random_range(-r..r));
        };
        fill(&mut p.w_i);
        fill(&mut p.w_f);
        fill(&mut p.w_o);
        fill(&mut p.w_u);
        fill(&mut p.u_i);
        fill(&mut p.u_f);
        fill(&mut p.u_o);
        fill(&mut p.u_u);
        fill(&mut p.w_y);
        p.b_f.fill(1.0);
        p
    }

    pub fn input_size(&self) -> usize {
        self.w_i.ncols()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_i.nrows()
    }

    pub fn shapes(input: usize, hidden: usize) -> [Vec<usize>; NUM_TENSORS] {
        let w = vec![hidden, input];
        let u = vec![hidden, hidden];
        let b = vec![hidden];
        [
            w.clone(),
            w.clone(),
            w.clone(),
            w,
            u.clone(),
            u.clone(),
            u.clone(),
            u,
            b.clone(),
            b.clone(),
            b.clone(),
            b,
            vec![NUM_LABELS, hidden],
            vec![NUM_LABELS],
        ]
    }

    /// Flat views in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [&[f64]; NUM_TENSORS] {
        fn s(a: Option<&[f64]>) -> &[f64] {
            a.expect("parameters are in standard layout")
        }
        [
            s(self.w_i.as_slice()),
            s(self.w_f.as_slice()),
            s(self.w_o.as_slice()),
            s(self.w_u.as_slice()),
            s(self.u_i.as_slice()),
            s(self.u_f.as_slice()),
            s(self.u_o.as_slice()),
            s(self.u_u.as_slice()),
            s(self.b_i.as_slice()),
            s(self.b_f.as_slice()),
            s(self.b_o.as_slice()),
            s(self.b_u.as_slice()),
            s(self.w_y.as_slice()),
            s(self.b_y.as_slice()),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; NUM_TENSORS] {
        fn s(a: Option<&mut [f64]>) -> &mut [f64] {
            a.expect("parameters are in standard layout")
        }
        [
            s(self.w_i.as_slice_mut()),
            s(self.w_f.as_slice_mut()),
            s(self.w_o.as_slice_mut()),
            s(self.w_u.as_slice_mut()),
            s(self.u_i.as_slice_mut()),
            s(self.u_f.as_slice_mut()),
            s(self.u_o.as_slice_mut()),
            s(self.u_u.as_slice_mut()),
            s(self.b_i.as_slice_mut()),
            s(self.b_f.as_slice_mut()),
            s(self.b_o.as_slice_mut()),
            s(self.b_u.as_slice_mut()),
            s(self.w_y.as_slice_mut()),
            s(self.b_y.as_slice_mut()),
        ]
    }

    /// Rebuild from flat tensors in [`TENSOR_NAMES`] order.
    pub fn from_tensors(
        input: usize,
        hidden: usize,
        tensors: Vec<Vec<f64>>,
    ) -> Result<TreeLstmParams, ModelError> {
        let shapes = TreeLstmParams::shapes(input, hidden);
        if tensors.len() != NUM_TENSORS {
            return Err(ModelError::Shape {
                name: "<tensor count>".into(),
                expected: vec![NUM_TENSORS],
                found: vec![tensors.len()],
            });
        }
        let mut p = TreeLstmParams::zeros(input, hidden);
        for (k, (dst, src)) in p.tensors_mut().into_iter().zip(tensors).enumerate() {
            if dst.len() != src.len() {
                return Err(ModelError::Shape {
                    name: TENSOR_NAMES[k].into(),
                    expected: shapes[k].clone(),
                    found: vec![src.len()],
                });
            }
            dst.copy_from_slice(&src);
        }
        Ok(p)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Gradient accumulator mirroring [`TreeLstmParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub TreeLstmParams);

impl ParamGrads {
    pub fn zeros_like(params: &TreeLstmParams) -> ParamGrads {
        ParamGrads(TreeLstmParams::zeros(
            params.input_size(),
            params.hidden_size(),
        ))
    }

    pub fn reset(&mut self) {
        for t in self.0.tensors_mut() {
            t.fill(0.0);
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.0.tensors_mut().into_iter().zip(other.0.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.0.tensors_mut() {
            for x in t.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }
}

impl std::ops::Deref for ParamGrads {
    type Target = TreeLstmParams;
    fn deref(&self) -> &TreeLstmParams {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub h: Array1<f64>,
    pub c: Array1<f64>,
}

/// Forward activations of one node, kept for the backward pass.
#[derive(Debug, Clone)]
struct NodeCache {
    x: Array1<f64>,
    children: Vec<usize>,
    h_sum: Array1<f64>,
    i: Array1<f64>,
    o: Array1<f64>,
    u: Array1<f64>,
    f: Vec<Array1<f64>>,
    tanh_c: Array1<f64>,
    state: NodeState,
}

/// Cached forward pass over one tree.
#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<NodeCache>,
}

impl Tape {
    pub fn root_state(&self) -> &NodeState {
        &self.nodes.last().expect("tape is never empty").state
    }

    pub fn state(&self, k: usize) -> &NodeState {
        &self.nodes[k].state
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn check(v: &Array1<f64>, what: &'static str, node: usize) -> Result<(), ModelError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite { what, node })
    }
}

fn cell(
    params: &TreeLstmParams,
    x: Array1<f64>,
    children: &[&NodeState],
    node: usize,
) -> Result<NodeCache, ModelError> {
    if x.len() != params.input_size() {
        return Err(ModelError::InputWidth {
            expected: params.input_size(),
            found: x.len(),
        });
    }
    let hidden = params.hidden_size();
    let mut h_sum = Array1::zeros(hidden);
    for ch in children {
        h_sum += &ch.h;
    }
    let i = (params.w_i.dot(&x) + params.u_i.dot(&h_sum) + &params.b_i).mapv(sigmoid);
    let o = (params.w_o.dot(&x) + params.u_o.dot(&h_sum) + &params.b_o).mapv(sigmoid);
    let u = (params.w_u.dot(&x) + params.u_u.dot(&h_sum) + &params.b_u).mapv(f64::tanh);
    let wf_x = params.w_f.dot(&x) + &params.b_f;
    let mut c = &i * &u;
    let mut f = Vec::with_capacity(children.len());
    for ch in children {
        let fk = (&wf_x + &params.u_f.dot(&ch.h)).mapv(sigmoid);
        c += &(&fk * &ch.c);
        f.push(fk);
    }
    check(&c, "memory cell", node)?;
    let tanh_c = c.mapv(f64::tanh);
    let h = &o * &tanh_c;
    check(&h, "hidden state", node)?;
    Ok(NodeCache {
        x,
        children: Vec::new(),
        h_sum,
        i,
        o,
        u,
        f,
        tanh_c,
        state: NodeState { h, c },
    })
}

/// One cell application. A leaf is the empty-children case.
pub fn node_forward(
    params: &TreeLstmParams,
    x: ArrayView1<f64>,
    children: &[&NodeState],
) -> Result<NodeState, ModelError> {
    cell(params, x.to_owned(), children, 0).map(|c| c.state)
}

/// Post-order evaluation of a tree. In train mode each node input gets
/// inverted dropout (kept entries scaled by 1/(1−p)); eval mode applies
/// neither. A rate of zero draws nothing from `rng`.
pub fn tree_forward<R: Rng + ?Sized>(
    params: &TreeLstmParams,
    tree: &EncodedTree,
    dropout: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(NodeState, Tape), ModelError> {
    let mut nodes: Vec<NodeCache> = Vec::with_capacity(tree.len());
    for k in 0..tree.len() {
        let mut x = tree.input(k).clone();
        if mode == Mode::Train && dropout > 0.0 {
            let keep = 1.0 - dropout;
            x.mapv_inplace(|v| if rng.random::<f64>() < keep { v / keep } else { 0.0 });
        }
        let kids: Vec<&NodeState> = tree.children(k).iter().map(|&c| &nodes[c].state).collect();
        let mut cache = cell(params, x, &kids, k)?;
        cache.children = tree.children(k).to_vec();
        nodes.push(cache);
    }
    let tape = Tape { nodes };
    Ok((tape.root_state().clone(), tape))
}

pub fn logits(params: &TreeLstmParams, h: &Array1<f64>) -> [f64; NUM_LABELS] {
    let z = params.w_y.dot(h) + &params.b_y;
    std::array::from_fn(|k| z[k])
}

pub fn softmax(z: &[f64; NUM_LABELS]) -> [f64; NUM_LABELS] {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: [f64; NUM_LABELS] = std::array::from_fn(|k| (z[k] - max).exp());
    let sum: f64 = e.iter().sum();
    std::array::from_fn(|k| e[k] / sum)
}

/// Label distribution from a root hidden state.
pub fn predict(params: &TreeLstmParams, h: &Array1<f64>) -> [f64; NUM_LABELS] {
    softmax(&logits(params, h))
}

/// Index of the most probable label (first on ties).
pub fn argmax(p: &[f64; NUM_LABELS]) -> usize {
    let mut best = 0;
    for k in 1..NUM_LABELS {
        if p[k] > p[best] {
            best = k;
        }
    }
    best
}

fn add_outer(m: &mut Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) {
    for (mut row, &ai) in m.rows_mut().into_iter().zip(a.iter()) {
        if ai != 0.0 {
            row.scaled_add(ai, b);
        }
    }
}

/// Cross-entropy `−weight · log p[gold]` for a taped forward pass; adds the
/// parameter gradients into `grads` and returns the loss.
pub fn accumulate_backward(
    params: &TreeLstmParams,
    tape: &Tape,
    gold: usize,
    weight: f64,
    grads: &mut ParamGrads,
) -> Result<f64, ModelError> {
    let g = &mut grads.0;
    let root = tape.nodes.len() - 1;
    let z = logits(params, &tape.nodes[root].state.h);
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let loss = -weight * (z[gold] - max - log_sum);
    if !loss.is_finite() {
        return Err(ModelError::NonFinite {
            what: "loss",
            node: root,
        });
    }
    let p = softmax(&z);
    let dz = Array1::from_iter((0..NUM_LABELS).map(|k| {
        weight * (p[k] - if k == gold { 1.0 } else { 0.0 })
    }));
    add_outer(&mut g.w_y, &dz, &tape.nodes[root].state.h);
    g.b_y += &dz;

    let hidden = params.hidden_size();
    let mut dh: Vec<Array1<f64>> = vec![Array1::zeros(hidden); tape.nodes.len()];
    let mut dc: Vec<Array1<f64>> = vec![Array1::zeros(hidden); tape.nodes.len()];
    dh[root] = params.w_y.t().dot(&dz);

    for k in (0..tape.nodes.len()).rev() {
        let n = &tape.nodes[k];
        let dh_k = std::mem::replace(&mut dh[k], Array1::zeros(0));
        let mut dc_k = std::mem::replace(&mut dc[k], Array1::zeros(0));
        // h = o ⊙ tanh(c)
        dc_k += &(&dh_k * &n.o * &n.tanh_c.mapv(|t| 1.0 - t * t));
        let da_o = &dh_k * &n.tanh_c * &n.o.mapv(|v| v * (1.0 - v));
        // c = i ⊙ u + Σ f_k ⊙ c_k
        let da_i = &dc_k * &n.u * &n.i.mapv(|v| v * (1.0 - v));
        let da_u = &dc_k * &n.i * &n.u.mapv(|v| 1.0 - v * v);

        add_outer(&mut g.w_i, &da_i, &n.x);
        add_outer(&mut g.w_o, &da_o, &n.x);
        add_outer(&mut g.w_u, &da_u, &n.x);
        add_outer(&mut g.u_i, &da_i, &n.h_sum);
        add_outer(&mut g.u_o, &da_o, &n.h_sum);
        add_outer(&mut g.u_u, &da_u, &n.h_sum);
        g.b_i += &da_i;
        g.b_o += &da_o;
        g.b_u += &da_u;

        if n.children.is_empty() {
            continue;
        }
        let dh_sum =
            params.u_i.t().dot(&da_i) + params.u_o.t().dot(&da_o) + params.u_u.t().dot(&da_u);
        for (fk, &child) in n.f.iter().zip(&n.children) {
            let cs = &tape.nodes[child].state;
            let da_f = &dc_k * &cs.c * &fk.mapv(|v| v * (1.0 - v));
            add_outer(&mut g.w_f, &da_f, &n.x);
            add_outer(&mut g.u_f, &da_f, &cs.h);
            g.b_f += &da_f;
            dc[child] += &(&dc_k * fk);
            dh[child] += &dh_sum;
            dh[child] += &params.u_f.t().dot(&da_f);
        }
    }
    if !grads.is_finite() {
        return Err(ModelError::NonFinite {
            what: "gradient",
            node: root,
        });
    }
    Ok(loss)
}

/// Loss and fresh gradients for one taped tree.
pub fn loss_and_backward(
    params: &TreeLstmParams,
    tape: &Tape,
    gold: usize,
) -> Result<(f64, ParamGrads), ModelError> {
    let mut grads = ParamGrads::zeros_like(params);
    let loss = accumulate_backward(params, tape, gold, 1.0, &mut grads)?;
    Ok((loss, grads))
}

/// Eval-mode class distribution for a tree.
pub fn classify(params: &TreeLstmParams, tree: &EncodedTree) -> Result<[f64; NUM_LABELS], ModelError> {
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let (root, _) = tree_forward(params, tree, 0.0, Mode::Eval, &mut unused)?;
    Ok(predict(params, &root.h))
}
