//! Small feedforward networks of adapter-aware linear layers.
//!
//! Inputs are `d_in × T` matrices holding one token per column. Each layer
//! computes `act(W·h + bias)` where `W` is either a dense weight or, when an
//! adapter is installed, `W₀' + B·A` evaluated in factored form.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, LayerManifest, Manifest};

use serde::{Deserialize, Serialize};

use crate::adapter::AdapterPair;
use crate::error::{KoreError, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative at pre-activation `z`; relu uses 0 at the kink.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer {
    layer_id: String,
    /// Dense weight, or the residual base `W₀'` when an adapter is installed.
    w: Matrix,
    bias: Option<Vec<f64>>,
    adapter: Option<AdapterPair>,
    activation: Activation,
}

fn valid_layer_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl LinearLayer {
    pub fn new(
        layer_id: impl Into<String>,
        w: Matrix,
        bias: Option<Vec<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        let layer_id = layer_id.into();
        if !valid_layer_id(&layer_id) {
            return Err(KoreError::Contract(format!(
                "layer id {layer_id:?} must be non-empty [A-Za-z0-9_.-]"
            )));
        }
        if let Some(b) = &bias {
            if b.len() != w.rows() {
                return Err(KoreError::shape(
                    "LinearLayer::new",
                    format!("bias has {} entries for {} outputs", b.len(), w.rows()),
                ));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(KoreError::NonFinite("LinearLayer::new"));
            }
        }
        Ok(LinearLayer {
            layer_id,
            w,
            bias,
            adapter: None,
            activation,
        })
    }

    /// Replaces the base weight with `w0_prime` and installs `pair`.
    pub fn install_adapter(&mut self, pair: AdapterPair, w0_prime: Matrix) -> Result<()> {
        if w0_prime.shape() != self.w.shape() || (pair.d_out(), pair.d_in()) != self.w.shape() {
            return Err(KoreError::shape(
                "install_adapter",
                format!(
                    "layer {} is {:?}, base {:?}, adapter {}x{}",
                    self.layer_id,
                    self.w.shape(),
                    w0_prime.shape(),
                    pair.d_out(),
                    pair.d_in()
                ),
            ));
        }
        self.w = w0_prime;
        self.adapter = Some(pair);
        Ok(())
    }

    pub fn layer_id(&self) -> &str {
        &self.layer_id
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn adapter(&self) -> Option<&AdapterPair> {
        self.adapter.as_ref()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn d_in(&self) -> usize {
        self.w.cols()
    }

    pub fn d_out(&self) -> usize {
        self.w.rows()
    }

    /// `W₀' + B·A` for adapter layers, `W` otherwise.
    pub fn effective_weight(&self) -> Matrix {
        match &self.adapter {
            Some(pair) => self.w.add(&pair.delta()).expect("adapter shape checked"),
            None => self.w.clone(),
        }
    }

    /// Copy of this layer with a plain dense weight and no adapter.
    pub fn with_dense_weight(&self, w: Matrix) -> Result<Self> {
        if w.shape() != self.w.shape() {
            return Err(KoreError::shape(
                "with_dense_weight",
                format!("{:?} vs {:?}", w.shape(), self.w.shape()),
            ));
        }
        Ok(LinearLayer {
            w,
            adapter: None,
            ..self.clone()
        })
    }

    fn pre_activation(&self, h: &Matrix) -> Result<Matrix> {
        let mut z = self.w.matmul(h)?;
        if let Some(pair) = &self.adapter {
            let low = pair.b().matmul(&pair.a().matmul(h)?)?;
            z.add_assign(&low)?;
        }
        if let Some(bias) = &self.bias {
            let t = z.cols();
            for (i, b) in bias.iter().enumerate() {
                for v in &mut z.data_mut()[i * t..(i + 1) * t] {
                    *v += b;
                }
            }
        }
        Ok(z)
    }

    /// Trainable parameter buffers in a fixed order: `B` for adapter layers,
    /// otherwise `W` then the bias.
    pub(crate) fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        match &mut self.adapter {
            Some(pair) => vec![pair.b_mut().data_mut()],
            None => {
                let mut v = vec![self.w.data_mut()];
                if let Some(b) = &mut self.bias {
                    v.push(b.as_mut_slice());
                }
                v
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    input_dim: usize,
    layers: Vec<LinearLayer>,
}

/// Result of a forward pass; `layer_inputs[i]` is what layer `i` consumed.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub output: Matrix,
    pub layer_inputs: Option<Vec<Matrix>>,
}

struct Trace {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    output: Matrix,
}

impl ToyModel {
    pub fn new(input_dim: usize, layers: Vec<LinearLayer>) -> Result<Self> {
        let mut dim = input_dim;
        for (i, l) in layers.iter().enumerate() {
            if l.d_in() != dim {
                return Err(KoreError::shape(
                    "ToyModel::new",
                    format!("layer {i} ({}) expects {} inputs, previous width is {dim}", l.layer_id, l.d_in()),
                ));
            }
            dim = l.d_out();
        }
        let mut ids: Vec<&str> = layers.iter().map(|l| l.layer_id()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(KoreError::Contract(format!("duplicate layer id {}", w[0])));
        }
        Ok(ToyModel { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, LinearLayer::d_out)
    }

    pub fn layers(&self) -> &[LinearLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [LinearLayer] {
        &mut self.layers
    }

    pub fn layer(&self, layer_id: &str) -> Option<&LinearLayer> {
        self.layers.iter().find(|l| l.layer_id == layer_id)
    }

    /// Copy of the model with every layer's weight replaced through `f`
    /// (adapters are merged away first).
    pub fn map_weights(&self, mut f: impl FnMut(&LinearLayer, Matrix) -> Result<Matrix>) -> Result<Self> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let w = f(l, l.effective_weight())?;
                l.with_dense_weight(w)
            })
            .collect::<Result<Vec<_>>>()?;
        ToyModel::new(self.input_dim, layers)
    }

    pub fn forward(&self, x: &Matrix, capture: bool) -> Result<ForwardPass> {
        let trace = self.trace(x, capture)?;
        Ok(ForwardPass {
            output: trace.output,
            layer_inputs: capture.then_some(trace.inputs),
        })
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.trace(x, false)?.output)
    }

    fn trace(&self, x: &Matrix, keep: bool) -> Result<Trace> {
        if x.rows() != self.input_dim {
            return Err(KoreError::shape(
                "forward",
                format!("input has {} rows, model expects {}", x.rows(), self.input_dim),
            ));
        }
        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        let mut h = x.clone();
        for layer in &self.layers {
            let z = layer.pre_activation(&h)?;
            let act = layer.activation;
            let next = z.map(|v| act.apply(v));
            if keep {
                inputs.push(std::mem::replace(&mut h, next));
                pre.push(z);
            } else {
                h = next;
            }
        }
        Ok(Trace { inputs, pre, output: h })
    }

    /// Gradients of trainable parameters given `upstream = ∂L/∂output`.
    pub fn backward(&self, x: &Matrix, upstream: &Matrix) -> Result<GradientSet> {
        let trace = self.trace(x, true)?;
        if upstream.shape() != trace.output.shape() {
            return Err(KoreError::shape(
                "backward",
                format!("upstream {:?} vs output {:?}", upstream.shape(), trace.output.shape()),
            ));
        }
        let mut delta = upstream.clone();
        let mut grads = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let z = &trace.pre[i];
            let h = &trace.inputs[i];
            let act = layer.activation;
            let dz = Matrix::from_parts(
                z.rows(),
                z.cols(),
                z.as_slice()
                    .iter()
                    .zip(delta.as_slice())
                    .map(|(&zv, &d)| d * act.derivative(zv))
                    .collect(),
            );
            let grad = match &layer.adapter {
                Some(pair) => {
                    let ah = pair.a().matmul(h)?;
                    ParamGradient::Adapter {
                        b: dz.matmul(&ah.transpose())?,
                    }
                }
                None => ParamGradient::Dense {
                    w: dz.matmul(&h.transpose())?,
                    bias: layer
                        .bias
                        .as_ref()
                        .map(|_| (0..dz.rows()).map(|r| dz.row(r).iter().sum()).collect()),
                },
            };
            grads.push(LayerGradient {
                layer_id: layer.layer_id.clone(),
                grad,
            });
            if i > 0 {
                let mut back = layer.w.transpose().matmul(&dz)?;
                if let Some(pair) = &layer.adapter {
                    let via = pair.a().transpose().matmul(&pair.b().transpose().matmul(&dz)?)?;
                    back.add_assign(&via)?;
                }
                delta = back;
            }
        }
        grads.reverse();
        Ok(GradientSet { layers: grads })
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match &l.adapter {
                Some(p) => p.b().as_slice().len(),
                None => l.w.as_slice().len() + l.bias.as_ref().map_or(0, Vec::len),
            })
            .sum()
    }

    pub(crate) fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(LinearLayer::trainable_mut).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ParamGradient {
    /// Only `B` is trainable on adapter layers.
    Adapter { b: Matrix },
    Dense { w: Matrix, bias: Option<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradient {
    pub layer_id: String,
    pub grad: ParamGradient,
}

/// Gradients for trainable parameters, in layer order. Frozen `A` and `W₀'`
/// never appear.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGradient>,
}

impl GradientSet {
    pub fn get(&self, layer_id: &str) -> Option<&ParamGradient> {
        self.layers.iter().find(|l| l.layer_id == layer_id).map(|l| &l.grad)
    }

    /// Flattened in the same order as the model's trainable buffers.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            match &l.grad {
                ParamGradient::Adapter { b } => out.extend_from_slice(b.as_slice()),
                ParamGradient::Dense { w, bias } => {
                    out.extend_from_slice(w.as_slice());
                    if let Some(b) = bias {
                        out.extend_from_slice(b);
                    }
                }
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.flatten().iter().all(|&v| v == 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Mean of squared errors over every output entry.
    Mse,
    /// Softmax cross-entropy per column against a target distribution, averaged over columns.
    SoftmaxXent,
}

impl Loss {
    pub fn value_and_grad(self, output: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
        if output.shape() != target.shape() {
            return Err(KoreError::shape(
                "loss",
                format!("output {:?} vs target {:?}", output.shape(), target.shape()),
            ));
        }
        let (rows, cols) = output.shape();
        match self {
            Loss::Mse => {
                let n = (rows * cols).max(1) as f64;
                let diff = output.sub(target)?;
                let value = diff.as_slice().iter().map(|d| d * d).sum::<f64>() / n;
                Ok((value, diff.scale(2.0 / n)))
            }
            Loss::SoftmaxXent => {
                let t = cols.max(1) as f64;
                let mut grad = Matrix::zeros(rows, cols);
                let mut value = 0.0;
                for j in 0..cols {
                    let col = output.column(j);
                    let probs = softmax(&col);
                    let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let log_norm = max + col.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    for i in 0..rows {
                        let ti = target.get(i, j);
                        if ti != 0.0 {
                            value -= ti * (col[i] - log_norm);
                        }
                        grad.set(i, j, (probs[i] - ti) / t);
                    }
                }
                Ok((value / t, grad))
            }
        }
    }

    pub fn value(self, output: &Matrix, target: &Matrix) -> Result<f64> {
        Ok(self.value_and_grad(output, target)?.0)
    }
}

/// Max-subtracted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Column-wise argmax, lowest index on ties.
pub fn argmax_columns(m: &Matrix) -> Vec<usize> {
    (0..m.cols())
        .map(|j| {
            let mut best = 0;
            for i in 1..m.rows() {
                if m.get(i, j) > m.get(best, j) {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Worst relative error between analytic gradients and central differences
/// over every trainable scalar: `|g − ĝ| / (max(|g|, |ĝ|) + 1e-12)`.
pub fn finite_diff_check(model: &ToyModel, x: &Matrix, loss: Loss, target: &Matrix, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(KoreError::Contract(format!("epsilon {epsilon} outside (0, 1e-2]")));
    }
    let eval = |m: &ToyModel| -> Result<f64> {
        let l = loss.value(&m.predict(x)?, target)?;
        if l.is_finite() {
            Ok(l)
        } else {
            Err(KoreError::Numeric(format!("non-finite loss {l}")))
        }
    };
    let out = model.predict(x)?;
    let (l0, upstream) = loss.value_and_grad(&out, target)?;
    if !l0.is_finite() {
        return Err(KoreError::Numeric(format!("non-finite loss {l0}")));
    }
    let analytic = model.backward(x, &upstream)?.flatten();

    let mut probe = model.clone();
    let mut worst = 0.0_f64;
    let mut flat = 0;
    let buffers: Vec<usize> = probe.trainable_mut().iter().map(|b| b.len()).collect();
    for (bi, len) in buffers.into_iter().enumerate() {
        for k in 0..len {
            let orig = probe.trainable_mut()[bi][k];
            probe.trainable_mut()[bi][k] = orig + epsilon;
            let plus = eval(&probe)?;
            probe.trainable_mut()[bi][k] = orig - epsilon;
            let minus = eval(&probe)?;
            probe.trainable_mut()[bi][k] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[flat];
            let rel = (a - numeric).abs() / (a.abs().max(numeric.abs()) + 1e-12);
            worst = worst.max(rel);
            flat += 1;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::AdapterPair;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn single(w: Matrix, act: Activation) -> ToyModel {
        let d = w.cols();
        ToyModel::new(d, vec![LinearLayer::new("l0", w, None, act).unwrap()]).unwrap()
    }

    #[test]
    fn identity_layer_passes_through() {
        let m = single(Matrix::identity(3), Activation::Identity);
        let x = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0], [7.0, 0.0]]).unwrap();
        assert_eq!(m.predict(&x).unwrap(), x);
    }

    #[test]
    fn relu_clamps_negative() {
        let m = single(Matrix::identity(2), Activation::Relu);
        let x = Matrix::column_vector(&[-1.0, 2.0]).unwrap();
        assert_eq!(m.predict(&x).unwrap().as_slice(), &[0.0, 2.0]);
    }

    #[test]
    fn two_layer_tanh_matches_straight_line_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w1 = random(3, 2, &mut rng);
        let b1 = vec![0.1, -0.2, 0.3];
        let w2 = random(2, 3, &mut rng);
        let model = ToyModel::new(
            2,
            vec![
                LinearLayer::new("l0", w1.clone(), Some(b1.clone()), Activation::Tanh).unwrap(),
                LinearLayer::new("l1", w2.clone(), None, Activation::Tanh).unwrap(),
            ],
        )
        .unwrap();
        let x = [0.7, -1.3];
        let out = model.predict(&Matrix::column_vector(&x).unwrap()).unwrap();
        let mut h = [0.0; 3];
        for i in 0..3 {
            h[i] = (w1.get(i, 0) * x[0] + w1.get(i, 1) * x[1] + b1[i]).tanh();
        }
        for i in 0..2 {
            let y = (w2.get(i, 0) * h[0] + w2.get(i, 1) * h[1] + w2.get(i, 2) * h[2]).tanh();
            assert!((out.get(i, 0) - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn capture_returns_layer_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = ToyModel::new(
            2,
            vec![
                LinearLayer::new("l0", random(3, 2, &mut rng), None, Activation::Relu).unwrap(),
                LinearLayer::new("l1", random(1, 3, &mut rng), None, Activation::Identity).unwrap(),
            ],
        )
        .unwrap();
        let x = random(2, 4, &mut rng);
        let pass = model.forward(&x, true).unwrap();
        let inputs = pass.layer_inputs.unwrap();
        assert_eq!(inputs[0], x);
        assert_eq!(inputs[1], model.layers()[0].w().matmul(&x).unwrap().map(|v| v.max(0.0)));
        assert!(model.forward(&x, false).unwrap().layer_inputs.is_none());
        assert!(model.forward(&random(3, 1, &mut rng), false).is_err());
    }

    #[test]
    fn chain_validation() {
        let l0 = LinearLayer::new("a", Matrix::zeros(3, 2), None, Activation::Identity).unwrap();
        let l1 = LinearLayer::new("b", Matrix::zeros(1, 2), None, Activation::Identity).unwrap();
        assert!(ToyModel::new(2, vec![l0.clone(), l1]).is_err());
        let dup = LinearLayer::new("a", Matrix::zeros(1, 3), None, Activation::Identity).unwrap();
        assert!(ToyModel::new(2, vec![l0, dup]).is_err());
        assert!(LinearLayer::new("../x", Matrix::zeros(1, 1), None, Activation::Identity).is_err());
    }

    #[test]
    fn scalar_mse_gradient_is_hand_calculus() {
        let (w, x, y) = (0.7, 1.5, 0.2);
        let m = single(Matrix::from_rows(&[[w]]).unwrap(), Activation::Identity);
        let xm = Matrix::from_rows(&[[x]]).unwrap();
        let (_, up) = Loss::Mse
            .value_and_grad(&m.predict(&xm).unwrap(), &Matrix::from_rows(&[[y]]).unwrap())
            .unwrap();
        let g = m.backward(&xm, &up).unwrap();
        match g.get("l0").unwrap() {
            ParamGradient::Dense { w: gw, bias } => {
                assert!((gw.get(0, 0) - 2.0 * (w * x - y) * x).abs() < 1e-15);
                assert!(bias.is_none());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn adapter_gradient_only_touches_b() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut layer = LinearLayer::new("l0", random(2, 3, &mut rng), Some(vec![0.0, 0.1]), Activation::Identity).unwrap();
        let a = random(2, 3, &mut rng);
        let pair = AdapterPair::new(a.clone(), Matrix::zeros(2, 2)).unwrap();
        let base = layer.w().clone();
        layer.install_adapter(pair, base).unwrap();
        let model = ToyModel::new(3, vec![layer]).unwrap();
        let x = random(3, 5, &mut rng);
        let up = random(2, 5, &mut rng);
        let g = model.backward(&x, &up).unwrap();
        let expected = up.matmul(&a.matmul(&x).unwrap().transpose()).unwrap();
        match g.get("l0").unwrap() {
            ParamGradient::Adapter { b } => {
                assert!(b.sub(&expected).unwrap().frobenius() < 1e-14);
                assert!(b.frobenius() > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(model.trainable_count(), 4);
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = ToyModel::new(
            3,
            vec![
                LinearLayer::new("l0", random(4, 3, &mut rng), Some(vec![0.1; 4]), Activation::Tanh).unwrap(),
                LinearLayer::new("l1", random(2, 4, &mut rng), None, Activation::Relu).unwrap(),
            ],
        )
        .unwrap();
        let x = random(3, 3, &mut rng);
        assert!(model.backward(&x, &Matrix::zeros(2, 3)).unwrap().is_zero());
    }

    #[test]
    fn linear_mse_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let model = single(random(3, 2, &mut rng), Activation::Identity);
        let x = random(2, 6, &mut rng);
        let t = random(3, 6, &mut rng);
        let err = finite_diff_check(&model, &x, Loss::Mse, &t, 1e-5).unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn zero_model_finite_difference_is_zero() {
        let model = single(Matrix::zeros(2, 2), Activation::Identity);
        let x = Matrix::zeros(2, 3);
        let err = finite_diff_check(&model, &x, Loss::Mse, &Matrix::zeros(2, 3), 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn finite_difference_rejects_bad_epsilon() {
        let model = single(Matrix::identity(1), Activation::Identity);
        let x = Matrix::identity(1);
        assert!(finite_diff_check(&model, &x, Loss::Mse, &x, 0.0).is_err());
        assert!(finite_diff_check(&model, &x, Loss::Mse, &x, 0.1).is_err());
    }

    #[test]
    fn softmax_xent_gradient_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model = ToyModel::new(
            3,
            vec![
                LinearLayer::new("l0", random(4, 3, &mut rng), Some(vec![0.05; 4]), Activation::Tanh).unwrap(),
                LinearLayer::new("l1", random(3, 4, &mut rng), Some(vec![0.0; 3]), Activation::Identity).unwrap(),
            ],
        )
        .unwrap();
        let x = random(3, 4, &mut rng);
        let t = Matrix::from_fn(3, 4, |i, j| if i == j % 3 { 1.0 } else { 0.0 });
        let err = finite_diff_check(&model, &x, Loss::SoftmaxXent, &t, 1e-5).unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn softmax_is_stable_and_argmax_breaks_ties_low() {
        let p = softmax(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        let m = Matrix::from_rows(&[[1.0, 0.0], [1.0, 2.0]]).unwrap();
        assert_eq!(argmax_columns(&m), vec![0, 1]);
    }

    #[test]
    fn fresh_adapter_preserves_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w0 = random(3, 4, &mut rng);
        let a = random(2, 4, &mut rng);
        let b = random(3, 2, &mut rng);
        let pair = AdapterPair::new(a, b).unwrap();
        let w0_prime = w0.sub(&pair.delta()).unwrap();
        let plain = single(w0, Activation::Tanh);
        let mut layer = plain.layers()[0].clone();
        layer.install_adapter(pair, w0_prime).unwrap();
        let adapted = ToyModel::new(4, vec![layer]).unwrap();
        let x = random(4, 7, &mut rng);
        let (y0, y1) = (plain.predict(&x).unwrap(), adapted.predict(&x).unwrap());
        assert!(y1.sub(&y0).unwrap().frobenius() <= 1e-10 * y0.frobenius());
    }
}
