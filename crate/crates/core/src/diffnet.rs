//! Dense Softplus networks and their exact derivatives.
//!
//! The scalar network `H(z)` needs two kinds of derivatives during training:
//! the input gradient `grad_z H` (which defines the learned vector field) and
//! the parameter gradient of losses that are themselves built from
//! `grad_z H`. The latter is computed forward-over-reverse: for a loss with
//! adjoints `c_i = dL/dH(z_i)` and `u_i = dL/d(grad_z H(z_i))` the parameter
//! gradient equals the parameter gradient of `sum_i c_i H(z_i) + u_i . grad_z H(z_i)`,
//! and the second term is a forward tangent of the input-gradient pass.
//!
//! All batched buffers are row-major with one sample per row.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dense::{gemm, Mat, MatRef};
use crate::error::{check_dim, Error, Result};
use crate::geometry::PhasePoint;
use crate::systems::Hamiltonian;

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid, the derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softplus and sigmoid sharing one exponential.
#[inline]
fn softplus_sigmoid(x: f64) -> (f64, f64) {
    let e = (-x.abs()).exp();
    let sp = x.max(0.0) + e.ln_1p();
    let s = if x >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    (sp, s)
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    w: usize,
    b: usize,
    fan_out: usize,
    fan_in: usize,
}

/// Fully connected network with Softplus hidden layers and a linear output.
///
/// Parameters live in one flat buffer: for each layer the weight matrix
/// (row-major, `fan_out x fan_in`) followed by the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpRecord", into = "MlpRecord")]
pub struct Mlp {
    widths: Vec<usize>,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpRecord {
    widths: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl From<Mlp> for MlpRecord {
    fn from(net: Mlp) -> Self {
        let layers = net.layers();
        MlpRecord {
            weights: layers
                .iter()
                .map(|l| net.params[l.w..l.w + l.fan_out * l.fan_in].to_vec())
                .collect(),
            biases: layers
                .iter()
                .map(|l| net.params[l.b..l.b + l.fan_out].to_vec())
                .collect(),
            widths: net.widths,
        }
    }
}

impl TryFrom<MlpRecord> for Mlp {
    type Error = Error;

    fn try_from(rec: MlpRecord) -> Result<Self> {
        let mut net = Mlp::zeros(&rec.widths)?;
        let layers = net.layers();
        check_dim(layers.len(), rec.weights.len())?;
        check_dim(layers.len(), rec.biases.len())?;
        for (l, (w, b)) in layers.iter().zip(rec.weights.iter().zip(&rec.biases)) {
            check_dim(l.fan_out * l.fan_in, w.len())?;
            check_dim(l.fan_out, b.len())?;
            net.params[l.w..l.w + w.len()].copy_from_slice(w);
            net.params[l.b..l.b + b.len()].copy_from_slice(b);
        }
        Ok(net)
    }
}

/// Forward activations kept for the backward passes.
struct Tape {
    /// Inputs of every layer: `acts[0]` is the batch itself.
    acts: Vec<Mat>,
    /// Sigmoid of every hidden pre-activation.
    sig: Vec<Mat>,
    out: Mat,
}

impl Mlp {
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidParameters(format!(
                "layer widths must have at least two positive entries, got {widths:?}"
            )));
        }
        let count = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Mlp {
            widths: widths.to_vec(),
            params: vec![0.0; count],
        })
    }

    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn random(widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut net = Mlp::zeros(widths)?;
        for l in net.layers() {
            let bound = 1.0 / (l.fan_in as f64).sqrt();
            for x in &mut net.params[l.w..l.b + l.fan_out] {
                *x = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    fn layers(&self) -> Vec<Layer> {
        let mut off = 0;
        self.widths
            .windows(2)
            .map(|w| {
                let l = Layer {
                    w: off,
                    b: off + w[0] * w[1],
                    fan_out: w[1],
                    fan_in: w[0],
                };
                off = l.b + l.fan_out;
                l
            })
            .collect()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_dim(self.params.len(), params.len())?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn weight(&self, l: &Layer) -> MatRef<'_> {
        MatRef::new(l.fan_out, l.fan_in, &self.params[l.w..l.b])
    }

    fn pre_activation(&self, l: &Layer, input: &Mat) -> Mat {
        let mut pre = Mat::zeros(input.rows, l.fan_out);
        let bias = &self.params[l.b..l.b + l.fan_out];
        for r in 0..input.rows {
            pre.row_mut(r).copy_from_slice(bias);
        }
        gemm(1.0, input.view(), self.weight(l).t(), 1.0, &mut pre.data, l.fan_out);
        pre
    }

    fn check_batch(&self, x: &Mat) -> Result<()> {
        check_dim(self.input_dim(), x.cols)
    }

    /// Batched evaluation; one output row per input row.
    pub fn forward_batch(&self, x: &Mat) -> Result<Mat> {
        self.check_batch(x)?;
        let layers = self.layers();
        let mut a = x.clone();
        for (i, l) in layers.iter().enumerate() {
            let mut pre = self.pre_activation(l, &a);
            if i + 1 < layers.len() {
                pre.data.iter_mut().for_each(|v| *v = softplus(*v));
            }
            a = pre;
        }
        Ok(a)
    }

    fn forward_tape(&self, x: &Mat) -> Tape {
        let layers = self.layers();
        let mut acts = Vec::with_capacity(layers.len());
        let mut sig = Vec::with_capacity(layers.len() - 1);
        let mut a = x.clone();
        for (i, l) in layers.iter().enumerate() {
            let mut pre = self.pre_activation(l, &a);
            acts.push(a);
            if i + 1 < layers.len() {
                let mut s = Mat::zeros(pre.rows, pre.cols);
                for (v, sv) in pre.data.iter_mut().zip(s.data.iter_mut()) {
                    let (sp, sg) = softplus_sigmoid(*v);
                    *v = sp;
                    *sv = sg;
                }
                sig.push(s);
            }
            a = pre;
        }
        Tape { acts, sig, out: a }
    }

    /// Parameter gradient of `sum_i out_adj_i . f(x_i)` (plain backprop).
    fn backprop(&self, tape: &Tape, out_adj: &Mat) -> Vec<f64> {
        let layers = self.layers();
        let mut grad = vec![0.0; self.params.len()];
        let mut adj = out_adj.clone();
        for (i, l) in layers.iter().enumerate().rev() {
            let input = &tape.acts[i];
            gemm(
                1.0,
                adj.view().t(),
                input.view(),
                1.0,
                &mut grad[l.w..l.b],
                l.fan_in,
            );
            add_column_sums(&adj, &mut grad[l.b..l.b + l.fan_out]);
            if i > 0 {
                let mut prev = Mat::zeros(adj.rows, l.fan_in);
                gemm(1.0, adj.view(), self.weight(l), 0.0, &mut prev.data, l.fan_in);
                for (p, s) in prev.data.iter_mut().zip(&tape.sig[i - 1].data) {
                    *p *= s;
                }
                adj = prev;
            }
        }
        grad
    }
}

fn add_column_sums(m: &Mat, out: &mut [f64]) {
    for r in 0..m.rows {
        for (o, v) in out.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
}

/// Learned Hamiltonian `H_theta : R^2n -> R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Mlp", into = "Mlp")]
pub struct ScalarNet(Mlp);

impl TryFrom<Mlp> for ScalarNet {
    type Error = Error;

    fn try_from(net: Mlp) -> Result<Self> {
        ScalarNet::from_mlp(net)
    }
}

impl From<ScalarNet> for Mlp {
    fn from(net: ScalarNet) -> Self {
        net.0
    }
}

/// Values and input gradients of a batch, together with everything needed to
/// differentiate a loss built from them.
pub struct GradientTape {
    tape: Tape,
    /// `r[l]`: adjoint of the layer-`l` input in the input-gradient pass.
    r: Vec<Mat>,
    /// `q[l]`: adjoint of the layer-`l` pre-activation in the input-gradient pass.
    q: Vec<Mat>,
}

impl GradientTape {
    pub fn len(&self) -> usize {
        self.tape.out.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, i: usize) -> f64 {
        self.tape.out.data[i]
    }

    /// `grad_z H` at sample `i`.
    pub fn gradient(&self, i: usize) -> &[f64] {
        self.r[0].row(i)
    }

    pub fn gradients(&self) -> &Mat {
        &self.r[0]
    }
}

impl ScalarNet {
    pub fn from_mlp(net: Mlp) -> Result<Self> {
        if net.output_dim() != 1 || !net.input_dim().is_multiple_of(2) {
            return Err(Error::InvalidParameters(format!(
                "scalar net needs an even input and one output, got {:?}",
                net.widths
            )));
        }
        Ok(ScalarNet(net))
    }

    /// Network `2n -> hidden.. -> 1`.
    pub fn random(n: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let widths: Vec<usize> = std::iter::once(2 * n)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        ScalarNet::from_mlp(Mlp::random(&widths, rng)?)
    }

    pub fn mlp(&self) -> &Mlp {
        &self.0
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.0
    }

    pub fn forward(&self, z: &PhasePoint) -> Result<f64> {
        let x = Mat::from_vec(1, z.as_slice().len(), z.as_slice().to_vec());
        Ok(self.0.forward_batch(&x)?.data[0])
    }

    pub fn input_gradient(&self, z: &PhasePoint) -> Result<Vec<f64>> {
        let x = Mat::from_vec(1, z.as_slice().len(), z.as_slice().to_vec());
        Ok(self.gradient_tape(&x)?.gradient(0).to_vec())
    }

    /// Forward and reverse passes over a batch, recording `H` and `grad_z H`.
    pub fn gradient_tape(&self, x: &Mat) -> Result<GradientTape> {
        self.0.check_batch(x)?;
        let net = &self.0;
        let layers = net.layers();
        let tape = net.forward_tape(x);
        let depth = layers.len();
        let mut r: Vec<Mat> = Vec::with_capacity(depth);
        let mut q: Vec<Mat> = Vec::with_capacity(depth);

        // output adjoint is one per sample; r_{L-1} repeats the output weights
        let last = &layers[depth - 1];
        let w_out = &net.params[last.w..last.b];
        let mut adj = Mat::zeros(x.rows, last.fan_in);
        for i in 0..x.rows {
            adj.row_mut(i).copy_from_slice(w_out);
        }
        q.push(Mat::from_vec(x.rows, 1, vec![1.0; x.rows]));
        r.push(adj);
        for li in (0..depth - 1).rev() {
            let l = &layers[li];
            let mut ql = r.last().unwrap().clone();
            for (v, s) in ql.data.iter_mut().zip(&tape.sig[li].data) {
                *v *= s;
            }
            let mut rl = Mat::zeros(x.rows, l.fan_in);
            gemm(1.0, ql.view(), net.weight(l), 0.0, &mut rl.data, l.fan_in);
            q.push(ql);
            r.push(rl);
        }
        r.reverse();
        q.reverse();
        Ok(GradientTape { tape, r, q })
    }

    /// Parameter gradient of `sum_i value_adj[i] * H(x_i) + grad_adj_i . grad_z H(x_i)`.
    pub fn backprop_through_gradient(
        &self,
        tape: &GradientTape,
        value_adj: &[f64],
        grad_adj: &Mat,
    ) -> Result<Vec<f64>> {
        let b = tape.len();
        check_dim(b, value_adj.len())?;
        check_dim(b, grad_adj.rows)?;
        check_dim(self.0.input_dim(), grad_adj.cols)?;
        let net = &self.0;
        let layers = net.layers();
        let depth = layers.len();

        // tangent forward along grad_adj: dot_acts[l] is the layer-l input tangent,
        // dot_pre[l] the hidden pre-activation tangent
        let mut dot_acts: Vec<Mat> = Vec::with_capacity(depth);
        let mut dot_pre: Vec<Mat> = Vec::with_capacity(depth - 1);
        dot_acts.push(grad_adj.clone());
        for li in 0..depth - 1 {
            let l = &layers[li];
            let mut pd = Mat::zeros(b, l.fan_out);
            gemm(1.0, dot_acts[li].view(), net.weight(l).t(), 0.0, &mut pd.data, l.fan_out);
            let mut ad = pd.clone();
            for (v, s) in ad.data.iter_mut().zip(&tape.tape.sig[li].data) {
                *v *= s;
            }
            dot_pre.push(pd);
            dot_acts.push(ad);
        }

        let mut grad = vec![0.0; net.params.len()];
        // output layer: tangent seed 1, value seed value_adj
        let last = &layers[depth - 1];
        {
            let g = &mut grad[last.w..last.b];
            let dot_in = &dot_acts[depth - 1];
            let a_in = &tape.tape.acts[depth - 1];
            for i in 0..b {
                let c = value_adj[i];
                for ((gj, d), a) in g.iter_mut().zip(dot_in.row(i)).zip(a_in.row(i)) {
                    *gj += d + c * a;
                }
            }
            grad[last.b] += value_adj.iter().sum::<f64>();
        }
        // primal adjoint of the last hidden activation
        let w_out = &net.params[last.w..last.b];
        let mut a_adj = Mat::zeros(b, last.fan_in);
        for i in 0..b {
            let c = value_adj[i];
            for (o, w) in a_adj.row_mut(i).iter_mut().zip(w_out) {
                *o = c * w;
            }
        }

        for li in (0..depth - 1).rev() {
            let l = &layers[li];
            let sig = &tape.tape.sig[li];
            let r_next = &tape.r[li + 1];
            let pd = &dot_pre[li];
            let mut p_adj = Mat::zeros(b, l.fan_out);
            for k in 0..p_adj.data.len() {
                let s = sig.data[k];
                p_adj.data[k] = a_adj.data[k] * s + r_next.data[k] * pd.data[k] * s * (1.0 - s);
            }
            let gw = &mut grad[l.w..l.b];
            gemm(1.0, tape.q[li].view().t(), dot_acts[li].view(), 1.0, gw, l.fan_in);
            gemm(1.0, p_adj.view().t(), tape.tape.acts[li].view(), 1.0, gw, l.fan_in);
            add_column_sums(&p_adj, &mut grad[l.b..l.b + l.fan_out]);
            if li > 0 {
                let mut prev = Mat::zeros(b, l.fan_in);
                gemm(1.0, p_adj.view(), net.weight(l), 0.0, &mut prev.data, l.fan_in);
                a_adj = prev;
            }
        }
        Ok(grad)
    }

    /// Value and parameter gradient of `sum_i f(i, H(z_i), grad_z H(z_i))`, where
    /// `f` returns its value together with `dL/dH` and `dL/d(grad_z H)`.
    pub fn loss_parameter_gradient<F>(&self, zs: &[PhasePoint], f: F) -> Result<(f64, Vec<f64>)>
    where
        F: Fn(usize, f64, &[f64]) -> (f64, f64, Vec<f64>),
    {
        let d = self.0.input_dim();
        let x = Mat::from_rows(zs, d);
        let tape = self.gradient_tape(&x)?;
        let mut loss = 0.0;
        let mut c = vec![0.0; zs.len()];
        let mut u = Mat::zeros(zs.len(), d);
        for i in 0..zs.len() {
            let (li, ci, ui) = f(i, tape.value(i), tape.gradient(i));
            check_dim(d, ui.len())?;
            loss += li;
            c[i] = ci;
            u.row_mut(i).copy_from_slice(&ui);
        }
        let grad = self.backprop_through_gradient(&tape, &c, &u)?;
        Ok((loss, grad))
    }
}

impl Hamiltonian for ScalarNet {
    fn n(&self) -> usize {
        self.0.input_dim() / 2
    }

    fn energy(&self, z: &PhasePoint) -> Result<f64> {
        self.forward(z)
    }

    fn gradient(&self, z: &PhasePoint) -> Result<Vec<f64>> {
        self.input_gradient(z)
    }
}

/// Baseline network that outputs the vector field directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Mlp", into = "Mlp")]
pub struct VectorNet(Mlp);

impl TryFrom<Mlp> for VectorNet {
    type Error = Error;

    fn try_from(net: Mlp) -> Result<Self> {
        VectorNet::from_mlp(net)
    }
}

impl From<VectorNet> for Mlp {
    fn from(net: VectorNet) -> Self {
        net.0
    }
}

impl VectorNet {
    pub fn from_mlp(net: Mlp) -> Result<Self> {
        if net.output_dim() != net.input_dim() || !net.input_dim().is_multiple_of(2) {
            return Err(Error::InvalidParameters(format!(
                "vector net needs equal even input and output widths, got {:?}",
                net.widths
            )));
        }
        Ok(VectorNet(net))
    }

    pub fn random(n: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let widths: Vec<usize> = std::iter::once(2 * n)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(2 * n))
            .collect();
        VectorNet::from_mlp(Mlp::random(&widths, rng)?)
    }

    pub fn mlp(&self) -> &Mlp {
        &self.0
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.0
    }

    pub fn n(&self) -> usize {
        self.0.input_dim() / 2
    }

    pub fn forward(&self, z: &PhasePoint) -> Result<Vec<f64>> {
        let x = Mat::from_vec(1, z.as_slice().len(), z.as_slice().to_vec());
        Ok(self.0.forward_batch(&x)?.data)
    }

    pub fn forward_batch(&self, x: &Mat) -> Result<Mat> {
        self.0.forward_batch(x)
    }

    /// Outputs of a batch and the parameter gradient of `sum_i out_adj(i, y_i) . y_i`,
    /// where `out_adj` sees each output row and returns the loss share and its adjoint.
    pub fn loss_parameter_gradient<F>(&self, x: &Mat, f: F) -> Result<(f64, Vec<f64>)>
    where
        F: Fn(usize, &[f64]) -> (f64, Vec<f64>),
    {
        self.0.check_batch(x)?;
        let tape = self.0.forward_tape(x);
        let d = self.0.output_dim();
        let mut adj = Mat::zeros(x.rows, d);
        let mut loss = 0.0;
        for i in 0..x.rows {
            let (li, ai) = f(i, tape.out.row(i));
            check_dim(d, ai.len())?;
            loss += li;
            adj.row_mut(i).copy_from_slice(&ai);
        }
        Ok((loss, self.0.backprop(&tape, &adj)))
    }
}
