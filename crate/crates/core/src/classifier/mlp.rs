use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Classifier;
use crate::error::{contract, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Weight each sample's loss by the inverse frequency of its class.
    pub class_weighting: bool,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![100, 100],
            epochs: 50,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 128,
            seed: 0,
            class_weighting: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub epochs: usize,
    pub seed: u64,
    /// Mean mini-batch loss of every epoch.
    pub loss_history: Vec<f64>,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Dense<F> {
    /// `in × out`
    w: Array2<F>,
    b: Array1<F>,
}

/// Fully connected ReLU network with a softmax output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<F> {
    layers: Vec<Dense<F>>,
    classes: Vec<String>,
    activation: Activation,
    training: Option<TrainingInfo>,
}

/// JSON checkpoint: layer sizes plus row-major flattened weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct MlpCheckpoint<F> {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub classes: Vec<String>,
    pub weights: Vec<Vec<F>>,
    pub biases: Vec<Vec<F>>,
    pub training: Option<TrainingInfo>,
}

/// Result of comparing backpropagated gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub checked: usize,
}

struct Forward<F> {
    /// Layer inputs; `acts[0]` is the batch itself.
    acts: Vec<Array2<F>>,
    /// Pre-activations of every layer; the last is the logits.
    pre: Vec<Array2<F>>,
}

fn log_softmax_rows<F: Scalar>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

impl<F: Scalar> MlpModel<F> {
    /// Untrained network with He-uniform weights and zero biases.
    pub fn new(input_dim: usize, hidden: &[usize], classes: Vec<String>, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(input_dim, hidden, classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut model.layers {
            let limit = (6.0 / layer.w.nrows() as f64).sqrt();
            layer.w.mapv_inplace(|_| F::of(rng.random_range(-limit..limit)));
        }
        Ok(model)
    }

    /// Untrained network with every parameter at zero.
    pub fn zeros(input_dim: usize, hidden: &[usize], classes: Vec<String>) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(contract("layer widths must be positive"));
        }
        if classes.len() < 2 {
            return Err(contract("a classifier needs at least 2 classes"));
        }
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(classes.len());
        let layers = sizes
            .windows(2)
            .map(|w| Dense {
                w: Array2::zeros((w[0], w[1])),
                b: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Self {
            layers,
            classes,
            activation: Activation::Relu,
            training: None,
        })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].w.nrows()];
        s.extend(self.layers.iter().map(|l| l.w.ncols()));
        s
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn training(&self) -> Option<&TrainingInfo> {
        self.training.as_ref()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn param(&self, idx: usize) -> F {
        let mut i = idx;
        for l in &self.layers {
            if i < l.w.len() {
                return l.w.as_slice().expect("standard layout")[i];
            }
            i -= l.w.len();
            if i < l.b.len() {
                return l.b[i];
            }
            i -= l.b.len();
        }
        panic!("parameter index {idx} out of range")
    }

    fn param_mut(&mut self, idx: usize) -> &mut F {
        let mut i = idx;
        for l in &mut self.layers {
            if i < l.w.len() {
                return &mut l.w.as_slice_mut().expect("standard layout")[i];
            }
            i -= l.w.len();
            if i < l.b.len() {
                return &mut l.b[i];
            }
            i -= l.b.len();
        }
        panic!("parameter index {idx} out of range")
    }

    fn forward(&self, x: ArrayView2<F>) -> Forward<F> {
        let mut acts = vec![x.to_owned()];
        let mut pre = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let z = acts[li].dot(&layer.w) + &layer.b;
            if li < last {
                acts.push(z.mapv(|v| v.max(F::zero())));
            }
            pre.push(z);
        }
        Forward { acts, pre }
    }

    /// Weighted mean cross-entropy and its gradient, flattened in parameter
    /// order. `sample_w` are per-row loss weights; the loss is
    /// `Σ w_i · (−ln p_{i,y_i}) / n`.
    fn loss_and_grad(&self, x: ArrayView2<F>, y: &[usize], sample_w: &[F]) -> (F, Vec<(Array2<F>, Array1<F>)>) {
        let n = F::of_usize(x.nrows());
        let fw = self.forward(x);
        let logp = log_softmax_rows(fw.pre.last().expect("output layer"));
        let mut loss = F::zero();
        let mut delta = logp.mapv(|v| v.exp());
        for (i, &yi) in y.iter().enumerate() {
            loss -= sample_w[i] * logp[[i, yi]];
            delta[[i, yi]] -= F::one();
            let scale = sample_w[i] / n;
            delta.row_mut(i).mapv_inplace(|v| v * scale);
        }
        loss /= n;

        let mut grads = Vec::with_capacity(self.layers.len());
        for li in (0..self.layers.len()).rev() {
            let gw = fw.acts[li].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if li > 0 {
                let mut back = delta.dot(&self.layers[li].w.t());
                back.zip_mut_with(&fw.pre[li - 1], |g, &z| {
                    if z <= F::zero() {
                        *g = F::zero();
                    }
                });
                delta = back;
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        (loss, grads)
    }

    fn check_input(&self, x: ArrayView2<F>) -> Result<()> {
        let d = self.layers[0].w.nrows();
        if x.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: x.ncols() });
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> MlpCheckpoint<F> {
        MlpCheckpoint {
            layer_sizes: self.layer_sizes(),
            activation: self.activation,
            classes: self.classes.clone(),
            weights: self.layers.iter().map(|l| l.w.iter().copied().collect()).collect(),
            biases: self.layers.iter().map(|l| l.b.to_vec()).collect(),
            training: self.training.clone(),
        }
    }

    pub fn from_checkpoint(cp: MlpCheckpoint<F>) -> Result<Self> {
        let sizes = &cp.layer_sizes;
        if sizes.len() < 2 || cp.weights.len() != sizes.len() - 1 || cp.biases.len() != sizes.len() - 1 {
            return Err(contract("checkpoint layer count mismatch"));
        }
        if *sizes.last().expect("non-empty") != cp.classes.len() {
            return Err(contract("output width differs from class count"));
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (i, (w, b)) in cp.weights.into_iter().zip(cp.biases).enumerate() {
            let w = Array2::from_shape_vec((sizes[i], sizes[i + 1]), w)
                .map_err(|e| contract(format!("layer {i}: {e}")))?;
            if b.len() != sizes[i + 1] {
                return Err(contract(format!("layer {i}: bias length mismatch")));
            }
            layers.push(Dense { w, b: Array1::from(b) });
        }
        Ok(Self {
            layers,
            classes: cp.classes,
            activation: cp.activation,
            training: cp.training,
        })
    }
}

impl<F: Scalar> Classifier<F> for MlpModel<F> {
    fn n_classes(&self) -> usize {
        self.classes.len()
    }

    fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    fn is_trained(&self) -> bool {
        self.training.is_some()
    }

    fn predict_proba(&self, x: ArrayView2<F>) -> Result<Array2<F>> {
        self.check_input(x)?;
        if x.nrows() == 0 {
            return Ok(Array2::zeros((0, self.n_classes())));
        }
        let fw = self.forward(x);
        Ok(log_softmax_rows(fw.pre.last().expect("output layer")).mapv(|v| v.exp()))
    }
}

/// Mini-batch SGD with momentum on softmax cross-entropy.
///
/// `x` is the encoded feature matrix, `y` class indices into `classes`.
/// Deterministic for a fixed seed: initialisation and per-epoch shuffles
/// draw from one seeded stream and reductions run in a fixed order.
pub fn train_mlp<F: Scalar>(
    x: ArrayView2<F>,
    y: &[usize],
    classes: Vec<String>,
    config: &MlpConfig,
) -> Result<MlpModel<F>> {
    let n = x.nrows();
    if n != y.len() {
        return Err(Error::DimensionMismatch { expected: n, actual: y.len() });
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if y.iter().any(|&l| l >= classes.len()) {
        return Err(contract("label outside class vocabulary"));
    }
    let mut counts = vec![0usize; classes.len()];
    for &l in y {
        counts[l] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(contract("training set must contain at least 2 classes"));
    }
    if config.batch_size == 0 || !(config.lr > 0.0) {
        return Err(Error::Config("batch size and learning rate must be positive".into()));
    }

    let mut model = MlpModel::new(x.ncols(), &config.hidden, classes, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed);
    let sample_w: Vec<F> = if config.class_weighting {
        let present = counts.iter().filter(|&&c| c > 0).count() as f64;
        y.iter()
            .map(|&l| F::of(n as f64 / (present * counts[l] as f64)))
            .collect()
    } else {
        vec![F::one(); n]
    };

    let lr = F::of(config.lr);
    let mu = F::of(config.momentum);
    let mut velocity: Vec<(Array2<F>, Array1<F>)> = model
        .layers
        .iter()
        .map(|l| (Array2::zeros(l.w.raw_dim()), Array1::zeros(l.b.len())))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let wb: Vec<F> = chunk.iter().map(|&i| sample_w[i]).collect();
            let (loss, grads) = model.loss_and_grad(xb.view(), &yb, &wb);
            epoch_loss += loss.as_f64();
            batches += 1;
            for ((layer, (vw, vb)), (gw, gb)) in model.layers.iter_mut().zip(&mut velocity).zip(grads) {
                vw.zip_mut_with(&gw, |v, &g| *v = mu * *v - lr * g);
                vb.zip_mut_with(&gb, |v, &g| *v = mu * *v - lr * g);
                layer.w += &*vw;
                layer.b += &*vb;
            }
        }
        history.push(epoch_loss / batches as f64);
    }
    model.training = Some(TrainingInfo {
        epochs: config.epochs,
        seed: config.seed,
        final_loss: history.last().copied().unwrap_or(f64::NAN),
        loss_history: history,
    });
    Ok(model)
}

/// Compares backpropagated gradients of the single-sample cross-entropy at
/// `(x, label)` with central differences of step `h` on up to `max_params`
/// parameters drawn with `seed` (all parameters if fewer).
///
/// Relative error per parameter is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn finite_difference_check<F: Scalar>(
    model: &MlpModel<F>,
    x: &[F],
    label: usize,
    h: f64,
    max_params: usize,
    seed: u64,
) -> Result<GradientCheck> {
    let xm = Array2::from_shape_vec((1, x.len()), x.to_vec()).map_err(|e| contract(e.to_string()))?;
    model.check_input(xm.view())?;
    if label >= model.classes.len() {
        return Err(contract("label outside class vocabulary"));
    }
    let w = [F::one()];
    let (_, grads) = model.loss_and_grad(xm.view(), &[label], &w);
    let analytic: Vec<F> = grads
        .iter()
        .flat_map(|(gw, gb)| gw.iter().copied().chain(gb.iter().copied()).collect::<Vec<_>>())
        .collect();

    let total = model.n_params();
    let mut idx: Vec<usize> = (0..total).collect();
    if total > max_params {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx = rand::seq::index::sample(&mut rng, total, max_params).into_vec();
        idx.sort_unstable();
    }

    let loss_at = |m: &MlpModel<F>| m.loss_and_grad(xm.view(), &[label], &w).0.as_f64();
    let mut probe = model.clone();
    let hf = F::of(h);
    let mut report = GradientCheck { max_relative_error: 0.0, max_absolute_error: 0.0, checked: idx.len() };
    for &p in &idx {
        let orig = probe.param(p);
        *probe.param_mut(p) = orig + hf;
        let up = loss_at(&probe);
        *probe.param_mut(p) = orig - hf;
        let down = loss_at(&probe);
        *probe.param_mut(p) = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[p].as_f64();
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(1e-6);
        report.max_absolute_error = report.max_absolute_error.max(abs);
        report.max_relative_error = report.max_relative_error.max(rel);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn classes(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    fn blobs(n: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut x = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 2;
            let centre = if c == 0 { -2.0 } else { 2.0 };
            x[[i, 0]] = centre + noise.sample(&mut rng);
            x[[i, 1]] = centre + noise.sample(&mut rng);
            y.push(c);
        }
        (x, y)
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (x, y) = blobs(400, 1);
        // margin oracle: the line x0 + x1 = 0 separates the generated blobs
        let separable = x.rows().into_iter().zip(&y).all(|(r, &c)| (r[0] + r[1] > 0.0) == (c == 1));
        assert!(separable);
        let m = train_mlp(x.view(), &y, classes(2), &MlpConfig::default()).unwrap();
        let pred = m.predict(x.view()).unwrap();
        let acc = pred.iter().zip(&y).filter(|(a, b)| a == b).count() as f64 / 400.0;
        assert!(acc >= 0.99, "accuracy {acc}");
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = blobs(200, 2);
        let cfg = MlpConfig { epochs: 5, hidden: vec![8, 8], ..Default::default() };
        let a = train_mlp(x.view(), &y, classes(2), &cfg).unwrap();
        let b = train_mlp(x.view(), &y, classes(2), &cfg).unwrap();
        assert_eq!(a, b);
        let c = train_mlp(x.view(), &y, classes(2), &MlpConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn full_batch_loss_does_not_increase() {
        let (x, y) = blobs(60, 3);
        let cfg = MlpConfig {
            hidden: vec![6],
            epochs: 40,
            lr: 0.05,
            momentum: 0.0,
            batch_size: 60,
            ..Default::default()
        };
        let m = train_mlp(x.view(), &y, classes(2), &cfg).unwrap();
        let h = &m.training().unwrap().loss_history;
        assert!(h.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{h:?}");
    }

    #[test]
    fn architecture_widths() {
        let m = MlpModel::<f64>::new(20, &[100, 100], classes(11), 0).unwrap();
        assert_eq!(m.layer_sizes(), vec![20, 100, 100, 11]);
        assert_eq!(m.n_classes(), 11);
    }

    #[test]
    fn zero_network_is_uniform() {
        let m = MlpModel::<f64>::zeros(3, &[4], classes(5)).unwrap();
        let p = m.predict_proba(Array2::from_elem((2, 3), 0.7).view()).unwrap();
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        assert_eq!(m.predict_proba(Array2::zeros((0, 3)).view()).unwrap().dim(), (0, 5));
        assert!(m.predict_proba(Array2::zeros((1, 4)).view()).is_err());
    }

    #[test]
    fn rows_are_distributions() {
        let m = MlpModel::<f64>::new(4, &[7, 5], classes(3), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((50, 4), |_| rng.random_range(-30.0..30.0));
        let p = m.predict_proba(x.view()).unwrap();
        for r in p.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-6);
            assert!(r.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn single_class_rejected() {
        let x = Array2::<f64>::zeros((4, 2));
        assert!(train_mlp(x.view(), &[1, 1, 1, 1], classes(3), &MlpConfig::default()).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = MlpModel::<f64>::new(4, &[6, 5], classes(3), 21).unwrap();
        let g = finite_difference_check(&m, &[0.3, -0.7, 1.1, 0.2], 1, 1e-5, 50, 0).unwrap();
        assert!(g.max_relative_error < 1e-4, "{g:?}");
        assert_eq!(g.checked, 50);

        let linear = MlpModel::<f64>::new(5, &[], classes(4), 3).unwrap();
        let g = finite_difference_check(&linear, &[1.0, -2.0, 0.5, 0.0, 3.0], 2, 1e-5, 1000, 0).unwrap();
        assert!(g.max_relative_error < 1e-6, "{g:?}");
        assert_eq!(g.checked, linear.n_params());
    }

    #[test]
    fn exact_fit_has_zero_gradient() {
        // a linear model with a huge margin on the true class
        let mut m = MlpModel::<f64>::zeros(1, &[], classes(2)).unwrap();
        m.layers[0].b[0] = 60.0;
        let g = finite_difference_check(&m, &[0.5], 0, 1e-5, 10, 0).unwrap();
        assert!(g.max_absolute_error < 1e-8, "{g:?}");
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let (x, y) = blobs(100, 4);
        let m = train_mlp(x.view(), &y, classes(2), &MlpConfig { epochs: 3, hidden: vec![5], ..Default::default() }).unwrap();
        let text = serde_json::to_string(&m.to_checkpoint()).unwrap();
        let back = MlpModel::from_checkpoint(serde_json::from_str::<MlpCheckpoint<f64>>(&text).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
