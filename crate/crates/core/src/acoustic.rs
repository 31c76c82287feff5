//! Acoustic model of the hybrid recognizer: a 39-100-100-95 MLP with ReLU
//! hidden layers and a log-softmax output over the HMM states, trained with
//! Adam on frame-wise cross-entropy.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub const INPUT_DIM: usize = 39;
pub const HIDDEN_DIM: usize = 100;
pub const NUM_STATES: usize = 95;

/// Weights stored input-major so a batch row-matrix multiplies directly.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

impl ParamSet {
    fn zeros_like(&self) -> ParamSet {
        ParamSet {
            w1: Array2::zeros(self.w1.dim()),
            b1: Array1::zeros(self.b1.len()),
            w2: Array2::zeros(self.w2.dim()),
            b2: Array1::zeros(self.b2.len()),
            w3: Array2::zeros(self.w3.dim()),
            b3: Array1::zeros(self.b3.len()),
        }
    }

    fn tensors(&self) -> [&Array2<f64>; 3] {
        [&self.w1, &self.w2, &self.w3]
    }

    fn biases(&self) -> [&Array1<f64>; 3] {
        [&self.b1, &self.b2, &self.b3]
    }
}

/// The MLP with the seed it was initialized from.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub params: ParamSet,
    pub seed: u64,
}

impl MlpModel {
    /// Glorot-uniform initialization, deterministic in `seed`.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-bound..bound));
            (w, Array1::zeros(fan_out))
        };
        let (w1, b1) = layer(INPUT_DIM, HIDDEN_DIM);
        let (w2, b2) = layer(HIDDEN_DIM, HIDDEN_DIM);
        let (w3, b3) = layer(HIDDEN_DIM, NUM_STATES);
        MlpModel { params: ParamSet { w1, b1, w2, b2, w3, b3 }, seed }
    }

    /// Per-frame log-probabilities over the 95 states (rows log-normalize).
    pub fn forward(&self, feats: &Array2<f64>) -> Result<Array2<f64>> {
        check_input(feats)?;
        Ok(forward_cached(&self.params, feats).logp)
    }
}

struct ForwardCache {
    h1: Array2<f64>,
    h2: Array2<f64>,
    logp: Array2<f64>,
}

fn check_input(feats: &Array2<f64>) -> Result<()> {
    if feats.ncols() != INPUT_DIM {
        return Err(Error::InvalidArgument(format!(
            "expected {INPUT_DIM} feature columns, got {}",
            feats.ncols()
        )));
    }
    Ok(())
}

fn check_labels(feats: &Array2<f64>, labels: &[usize]) -> Result<()> {
    if feats.nrows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if labels.len() != feats.nrows() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} frames",
            labels.len(),
            feats.nrows()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= NUM_STATES) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range 0..{NUM_STATES}"
        )));
    }
    Ok(())
}

fn forward_cached(p: &ParamSet, x: &Array2<f64>) -> ForwardCache {
    let mut h1 = x.dot(&p.w1) + &p.b1;
    h1.mapv_inplace(|v| v.max(0.0));
    let mut h2 = h1.dot(&p.w2) + &p.b2;
    h2.mapv_inplace(|v| v.max(0.0));
    let mut logp = h2.dot(&p.w3) + &p.b3;
    for mut row in logp.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    ForwardCache { h1, h2, logp }
}

/// Backpropagates summed frame-wise cross-entropy; returns the summed loss,
/// the parameter gradients, and the input gradient.
fn backprop(p: &ParamSet, x: &Array2<f64>, labels: &[usize]) -> (f64, ParamSet, Array2<f64>) {
    let cache = forward_cached(p, x);
    let t = x.nrows();
    let mut loss = 0.0;
    // d(sum CE)/d logits = softmax - onehot
    let mut g_out = cache.logp.mapv(f64::exp);
    for (i, &label) in labels.iter().enumerate() {
        loss -= cache.logp[[i, label]];
        g_out[[i, label]] -= 1.0;
    }
    let _ = t;

    let g_w3 = cache.h2.t().dot(&g_out);
    let g_b3 = g_out.sum_axis(Axis(0));
    let mut g_h2 = g_out.dot(&p.w3.t());
    g_h2.zip_mut_with(&cache.h2, |g, &h| {
        if h <= 0.0 {
            *g = 0.0;
        }
    });
    let g_w2 = cache.h1.t().dot(&g_h2);
    let g_b2 = g_h2.sum_axis(Axis(0));
    let mut g_h1 = g_h2.dot(&p.w2.t());
    g_h1.zip_mut_with(&cache.h1, |g, &h| {
        if h <= 0.0 {
            *g = 0.0;
        }
    });
    let g_w1 = x.t().dot(&g_h1);
    let g_b1 = g_h1.sum_axis(Axis(0));
    let g_x = g_h1.dot(&p.w1.t());

    let grads = ParamSet { w1: g_w1, b1: g_b1, w2: g_w2, b2: g_b2, w3: g_w3, b3: g_b3 };
    (loss, grads, g_x)
}

/// Adam optimizer state with the paper's hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: ParamSet,
    v: ParamSet,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        AdamState {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: model.params.zeros_like(),
            v: model.params.zeros_like(),
        }
    }
}

/// One Adam update on a frame batch; returns the pre-update mean
/// cross-entropy.
pub fn train_step(
    model: &mut MlpModel,
    adam: &mut AdamState,
    feats: &Array2<f64>,
    labels: &[usize],
) -> Result<f64> {
    check_input(feats)?;
    check_labels(feats, labels)?;
    let n = feats.nrows() as f64;
    let (loss_sum, grads, _) = backprop(&model.params, feats, labels);

    adam.step += 1;
    let bias1 = 1.0 - adam.beta1.powi(adam.step as i32);
    let bias2 = 1.0 - adam.beta2.powi(adam.step as i32);
    let (b1, b2, lr, eps) = (adam.beta1, adam.beta2, adam.learning_rate, adam.epsilon);
    let update = |theta: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
        let g = g / n; // mean-loss gradient
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *theta -= lr * m_hat / (v_hat.sqrt() + eps);
    };
    macro_rules! apply {
        ($field:ident) => {
            for ((theta, m), (v, g)) in model
                .params
                .$field
                .iter_mut()
                .zip(adam.m.$field.iter_mut())
                .zip(adam.v.$field.iter_mut().zip(grads.$field.iter()))
            {
                update(theta, m, v, *g);
            }
        };
    }
    apply!(w1);
    apply!(b1);
    apply!(w2);
    apply!(b2);
    apply!(w3);
    apply!(b3);
    Ok(loss_sum / n)
}

/// Gradient of the summed frame-wise cross-entropy with respect to the
/// input features (T x 39).
pub fn input_grad(model: &MlpModel, feats: &Array2<f64>, labels: &[usize]) -> Result<Array2<f64>> {
    loss_and_input_grad(model, feats, labels).map(|(_, g)| g)
}

/// Summed cross-entropy and its input gradient in one pass.
pub fn loss_and_input_grad(
    model: &MlpModel,
    feats: &Array2<f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>)> {
    check_input(feats)?;
    check_labels(feats, labels)?;
    let (loss, _, g_x) = backprop(&model.params, feats, labels);
    Ok((loss, g_x))
}

// --- checkpoint I/O: shapes header + 64-bit parameters + Adam state + seed ---

const MAGIC: &[u8; 6] = b"SGMLP1";

fn write_tensor<W: Write>(w: &mut W, rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    w.write_all(&(rows as u64).to_le_bytes())?;
    w.write_all(&(cols as u64).to_le_bytes())?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_params<W: Write>(w: &mut W, p: &ParamSet) -> Result<()> {
    for t in p.tensors() {
        write_tensor(w, t.nrows(), t.ncols(), t.as_slice().unwrap())?;
    }
    for b in p.biases() {
        write_tensor(w, b.len(), 1, b.as_slice().unwrap())?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_tensor<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Vec<f64>> {
    let got = (read_u64(r)? as usize, read_u64(r)? as usize);
    if got != (rows, cols) {
        return Err(Error::Format(format!("tensor shape {got:?}, expected ({rows}, {cols})")));
    }
    (0..rows * cols).map(|_| read_f64(r)).collect()
}

fn read_params<R: Read>(r: &mut R) -> Result<ParamSet> {
    let w1 = Array2::from_shape_vec((INPUT_DIM, HIDDEN_DIM), read_tensor(r, INPUT_DIM, HIDDEN_DIM)?).unwrap();
    let w2 = Array2::from_shape_vec((HIDDEN_DIM, HIDDEN_DIM), read_tensor(r, HIDDEN_DIM, HIDDEN_DIM)?).unwrap();
    let w3 = Array2::from_shape_vec((HIDDEN_DIM, NUM_STATES), read_tensor(r, HIDDEN_DIM, NUM_STATES)?).unwrap();
    let b1 = Array1::from_vec(read_tensor(r, HIDDEN_DIM, 1)?);
    let b2 = Array1::from_vec(read_tensor(r, HIDDEN_DIM, 1)?);
    let b3 = Array1::from_vec(read_tensor(r, NUM_STATES, 1)?);
    Ok(ParamSet { w1, b1, w2, b2, w3, b3 })
}

/// Serializes model and optimizer state.
pub fn write_checkpoint<W: Write>(w: &mut W, model: &MlpModel, adam: &AdamState) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&model.seed.to_le_bytes())?;
    write_params(w, &model.params)?;
    w.write_all(&adam.step.to_le_bytes())?;
    for v in [adam.learning_rate, adam.beta1, adam.beta2, adam.epsilon] {
        w.write_all(&v.to_le_bytes())?;
    }
    write_params(w, &adam.m)?;
    write_params(w, &adam.v)?;
    Ok(())
}

/// Reads a checkpoint produced by [`write_checkpoint`].
pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(MlpModel, AdamState)> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad model checkpoint magic".into()));
    }
    let seed = read_u64(r)?;
    let params = read_params(r)?;
    let step = read_u64(r)?;
    let learning_rate = read_f64(r)?;
    let beta1 = read_f64(r)?;
    let beta2 = read_f64(r)?;
    let epsilon = read_f64(r)?;
    let m = read_params(r)?;
    let v = read_params(r)?;
    let model = MlpModel { params, seed };
    Ok((model, AdamState { learning_rate, beta1, beta2, epsilon, step, m, v }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_feats(t: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((t, INPUT_DIM), |_| rng.gen_range(-1.0..1.0))
    }

    /// Linearly separable toy: one Gaussian blob per class.
    fn separable_toy(classes: &[usize], per_class: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<Array1<f64>> = classes
            .iter()
            .map(|_| Array1::from_shape_fn(INPUT_DIM, |_| rng.gen_range(-2.0..2.0)))
            .collect();
        let n = classes.len() * per_class;
        let mut x = Array2::zeros((n, INPUT_DIM));
        let mut labels = Vec::with_capacity(n);
        for (ci, &class) in classes.iter().enumerate() {
            for k in 0..per_class {
                let row = ci * per_class + k;
                for d in 0..INPUT_DIM {
                    x[[row, d]] = centers[ci][d] + rng.gen_range(-0.05..0.05);
                }
                labels.push(class);
            }
        }
        (x, labels)
    }

    #[test]
    fn zero_parameters_give_uniform_rows() {
        let mut model = MlpModel::new(0);
        model.params = model.params.zeros_like();
        let logp = model.forward(&random_feats(4, 1)).unwrap();
        let expect = (1.0 / NUM_STATES as f64).ln();
        for v in logp.iter() {
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_log_normalize() {
        let model = MlpModel::new(3);
        let logp = model.forward(&random_feats(16, 4)).unwrap();
        for row in logp.rows() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            assert!(lse.abs() < 1e-9);
        }
    }

    #[test]
    fn wrong_width_rejected() {
        let model = MlpModel::new(0);
        let bad = Array2::<f64>::zeros((3, 13));
        assert!(model.forward(&bad).is_err());
    }

    #[test]
    fn out_of_range_label_rejected() {
        let mut model = MlpModel::new(0);
        let mut adam = AdamState::new(&model);
        let x = random_feats(2, 5);
        assert!(train_step(&mut model, &mut adam, &x, &[0, 95]).is_err());
        assert!(train_step(&mut model, &mut adam, &x, &[0]).is_err());
    }

    #[test]
    fn overfits_single_frame() {
        let mut model = MlpModel::new(7);
        let mut adam = AdamState::new(&model);
        let x = random_feats(1, 8);
        let labels = [42usize];
        for _ in 0..500 {
            train_step(&mut model, &mut adam, &x, &labels).unwrap();
        }
        let logp = model.forward(&x).unwrap();
        let argmax = (0..NUM_STATES)
            .max_by(|&a, &b| logp[[0, a]].partial_cmp(&logp[[0, b]]).unwrap())
            .unwrap();
        assert_eq!(argmax, 42);
    }

    #[test]
    fn fixed_batch_overfit_reaches_low_loss() {
        let (x, labels) = separable_toy(&[3, 17, 60], 4, 9);
        let mut model = MlpModel::new(10);
        let mut adam = AdamState::new(&model);
        let mut last = f64::INFINITY;
        for _ in 0..2000 {
            last = train_step(&mut model, &mut adam, &x, &labels).unwrap();
        }
        assert!(last < 0.01, "final loss {last}");
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut model = MlpModel::new(11);
            let mut adam = AdamState::new(&model);
            let x = random_feats(32, 12);
            let labels: Vec<usize> = (0..32).map(|i| i % NUM_STATES).collect();
            for _ in 0..50 {
                train_step(&mut model, &mut adam, &x, &labels).unwrap();
            }
            model
        };
        let a = run();
        let b = run();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn adam_step_size_bound() {
        // With beta1 = 0.9 and beta2 = 0.999 the per-parameter step is
        // bounded by lr * (1 - beta1) / sqrt(1 - beta2).
        let (x, labels) = separable_toy(&[5, 80], 4, 13);
        let mut model = MlpModel::new(14);
        let mut adam = AdamState::new(&model);
        for _ in 0..4000 {
            train_step(&mut model, &mut adam, &x, &labels).unwrap();
        }
        let before = model.params.clone();
        train_step(&mut model, &mut adam, &x, &labels).unwrap();
        let bound = adam.learning_rate * (1.0 - adam.beta1) / (1.0 - adam.beta2).sqrt() * 1.01;
        let mut max_delta = 0.0f64;
        for (a, b) in before.w1.iter().chain(before.w3.iter()).zip(model.params.w1.iter().chain(model.params.w3.iter())) {
            max_delta = max_delta.max((a - b).abs());
        }
        assert!(max_delta <= bound, "max step {max_delta} > bound {bound}");
    }

    #[test]
    fn gradient_near_zero_at_minimum_of_separable_toy() {
        let (x, labels) = separable_toy(&[2, 50], 3, 15);
        let mut model = MlpModel::new(16);
        let mut adam = AdamState::new(&model);
        for _ in 0..20000 {
            train_step(&mut model, &mut adam, &x, &labels).unwrap();
        }
        let g = input_grad(&model, &x, &labels).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 1e-6, "gradient norm {norm}");
    }

    #[test]
    fn input_grad_matches_finite_differences() {
        let model = MlpModel::new(20);
        for case in 0..10u64 {
            let mut x = random_feats(6, 30 + case);
            // Scale features up so ReLU pre-activations stay away from kinks.
            x.mapv_inplace(|v| 3.0 * v);
            let mut rng = ChaCha8Rng::seed_from_u64(40 + case);
            let labels: Vec<usize> = (0..6).map(|_| rng.gen_range(0..NUM_STATES)).collect();
            let g = input_grad(&model, &x, &labels).unwrap();
            let dir = Array2::from_shape_fn(x.dim(), |_| rng.gen_range(-1.0..1.0));
            let h = 1e-5;
            let loss = |m: &Array2<f64>| -> f64 {
                let logp = model.forward(m).unwrap();
                labels.iter().enumerate().map(|(i, &l)| -logp[[i, l]]).sum()
            };
            let fd = (loss(&(&x + &(&dir * h))) - loss(&(&x - &(&dir * h)))) / (2.0 * h);
            let analytic: f64 = g.iter().zip(dir.iter()).map(|(a, b)| a * b).sum();
            let rel = (analytic - fd).abs() / fd.abs().max(analytic.abs()).max(1e-12);
            assert!(rel <= 1e-4, "case {case}: rel {rel}");
        }
    }

    #[test]
    fn duplicated_frames_double_the_summed_gradient() {
        let model = MlpModel::new(21);
        let x = random_feats(5, 50);
        let labels: Vec<usize> = vec![1, 2, 3, 4, 5];
        let g = input_grad(&model, &x, &labels).unwrap();
        let doubled = ndarray::concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        let labels2: Vec<usize> = labels.iter().chain(labels.iter()).cloned().collect();
        let g2 = input_grad(&model, &doubled, &labels2).unwrap();
        for t in 0..5 {
            for d in 0..INPUT_DIM {
                assert_eq!(g2[[t, d]], g[[t, d]]);
                assert_eq!(g2[[t + 5, d]], g[[t, d]]);
            }
        }
        let sum: f64 = g.sum();
        let sum2: f64 = g2.sum();
        assert!((sum2 - 2.0 * sum).abs() < 1e-12);
    }

    #[test]
    fn toy_training_reaches_low_frame_error() {
        let (x, labels) = separable_toy(&[0, 7, 23, 55, 94], 12, 17);
        let mut model = MlpModel::new(18);
        let mut adam = AdamState::new(&model);
        for _ in 0..5000 {
            train_step(&mut model, &mut adam, &x, &labels).unwrap();
        }
        let logp = model.forward(&x).unwrap();
        let errors = labels
            .iter()
            .enumerate()
            .filter(|(i, &l)| {
                let am = (0..NUM_STATES)
                    .max_by(|&a, &b| logp[[*i, a]].partial_cmp(&logp[[*i, b]]).unwrap())
                    .unwrap();
                am != l
            })
            .count();
        let rate = errors as f64 / labels.len() as f64;
        assert!(rate < 0.01, "frame error {rate}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut model = MlpModel::new(23);
        let mut adam = AdamState::new(&model);
        let x = random_feats(8, 24);
        let labels: Vec<usize> = (0..8).collect();
        for _ in 0..10 {
            train_step(&mut model, &mut adam, &x, &labels).unwrap();
        }
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &model, &adam).unwrap();
        let (m2, a2) = read_checkpoint(&mut &bytes[..]).unwrap();
        assert_eq!(m2, model);
        assert_eq!(a2, adam);
        // Bit-identical re-serialization.
        let mut bytes2 = Vec::new();
        write_checkpoint(&mut bytes2, &m2, &a2).unwrap();
        assert_eq!(bytes, bytes2);
    }
}
