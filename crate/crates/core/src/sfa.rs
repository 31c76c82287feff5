//! Slow feature extraction on raw audio: time embedding, quadratic
//! expansion, PCA whitening, and projection onto the direction of slowest
//! variation of the whitened derivative signal.
//!
//! The transform is fitted per utterance: covariances are estimated from the
//! signal being transformed, and only the single slowest component is kept.

use ndarray::{Array1, Array2, Axis};

use crate::{Error, Result, Waveform};

/// Relative eigenvalue below which a whitened direction is dropped.
const RANK_EPS: f64 = 1e-9;
/// Ridge added to covariance matrices before eigendecomposition.
const COV_REG: f64 = 1e-10;

/// Overlapping delay-embedded view of a scalar signal.
#[derive(Debug, Clone)]
pub struct EmbeddedSeries {
    pub rows: Array2<f64>,
    pub window: usize,
    pub stride: usize,
}

/// Quadratic expansion `[x0, x1, x0^2, x0*x1, x1^2]` of a width-2 embedding.
#[derive(Debug, Clone)]
pub struct ExpandedSeries {
    pub rows: Array2<f64>,
}

/// Fitted whitening stage.
#[derive(Debug, Clone)]
pub struct Whitening {
    pub whitened: Array2<f64>,
    pub mean: Array1<f64>,
    /// Input-dim x retained-rank map; whitened = (data - mean) . map
    pub map: Array2<f64>,
    pub retained_rank: usize,
}

/// Complete fitted transform: whitening map, slowness spectrum, and the
/// unit-norm projection onto the slowest component.
#[derive(Debug, Clone)]
pub struct SfaTransform {
    pub mean: Array1<f64>,
    pub whitening_map: Array2<f64>,
    pub slowness_eigenvalues: Vec<f64>,
    pub projection: Array1<f64>,
    pub retained_rank: usize,
}

impl SfaTransform {
    /// Flat text record for inspection: one labelled line per field.
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| {
            v.iter().map(|x| format!("{x:.17e}")).collect::<Vec<_>>().join(" ")
        };
        let mut out = String::new();
        out.push_str(&format!("mean\t{}\n", join(self.mean.as_slice().unwrap())));
        for row in self.whitening_map.rows() {
            out.push_str(&format!("map_row\t{}\n", join(row.as_slice().unwrap())));
        }
        out.push_str(&format!("eigenvalues\t{}\n", join(&self.slowness_eigenvalues)));
        out.push_str(&format!("projection\t{}\n", join(self.projection.as_slice().unwrap())));
        out.push_str(&format!("retained_rank\t{}\n", self.retained_rank));
        out
    }
}

/// Delay-embeds `samples` into overlapping rows
/// `(x[t], x[t+stride], ..., x[t+(window-1)*stride])`, one row per t.
pub fn time_embed(samples: &[f64], window: usize, stride: usize) -> Result<EmbeddedSeries> {
    if window < 2 || stride < 1 {
        return Err(Error::InvalidArgument(format!(
            "window must be >= 2 and stride >= 1, got {window}/{stride}"
        )));
    }
    let span = (window - 1) * stride;
    if samples.len() < span + 1 {
        return Err(Error::InvalidArgument(format!(
            "signal of {} samples is shorter than embedding span {}",
            samples.len(),
            span + 1
        )));
    }
    let n_rows = samples.len() - span;
    let mut rows = Array2::zeros((n_rows, window));
    for t in 0..n_rows {
        for k in 0..window {
            rows[[t, k]] = samples[t + k * stride];
        }
    }
    Ok(EmbeddedSeries { rows, window, stride })
}

/// Expands a width-2 embedding by the quadratic map
/// `h(x) = [x0, x1, x0^2, x0*x1, x1^2]`.
pub fn quadratic_expand(embedded: &EmbeddedSeries) -> Result<ExpandedSeries> {
    if embedded.rows.ncols() != 2 {
        return Err(Error::InvalidArgument(format!(
            "quadratic expansion needs embedding width 2, got {}",
            embedded.rows.ncols()
        )));
    }
    let n = embedded.rows.nrows();
    let mut rows = Array2::zeros((n, 5));
    for t in 0..n {
        let x0 = embedded.rows[[t, 0]];
        let x1 = embedded.rows[[t, 1]];
        rows[[t, 0]] = x0;
        rows[[t, 1]] = x1;
        rows[[t, 2]] = x0 * x0;
        rows[[t, 3]] = x0 * x1;
        rows[[t, 4]] = x1 * x1;
    }
    Ok(ExpandedSeries { rows })
}

/// PCA-whitens arbitrary row-major data: the output has zero mean, unit
/// variance per dimension, and decorrelated columns. Directions whose
/// eigenvalue is below `RANK_EPS` times the largest are dropped.
pub fn whiten_data(data: &Array2<f64>) -> Result<Whitening> {
    let n = data.nrows();
    let d = data.ncols();
    if n < 6 {
        return Err(Error::InvalidArgument(format!("need at least 6 rows, got {n}")));
    }
    let mean = data.mean_axis(Axis(0)).expect("non-empty");
    let centered = data - &mean.view().insert_axis(Axis(0));
    let mut cov = centered.t().dot(&centered) / n as f64;
    for i in 0..d {
        cov[[i, i]] += COV_REG;
    }
    let (eigvals, eigvecs) = sym_eigen(&cov);
    // The ridge shifts every eigenvalue by exactly COV_REG; remove it so the
    // whitening scales match the true variances.
    let raw: Vec<f64> = eigvals.iter().map(|l| (l - COV_REG).max(0.0)).collect();
    let max = raw.iter().cloned().fold(0.0f64, f64::max);
    if max <= 1e-18 {
        return Err(Error::DegenerateInput("zero covariance (constant input)".into()));
    }
    let kept: Vec<usize> = (0..d).rev().filter(|&i| raw[i] > RANK_EPS * max).collect();
    let rank = kept.len();
    let mut map = Array2::zeros((d, rank));
    for (j, &i) in kept.iter().enumerate() {
        let scale = 1.0 / raw[i].sqrt();
        for r in 0..d {
            map[[r, j]] = eigvecs[[r, i]] * scale;
        }
    }
    let whitened = centered.dot(&map);
    Ok(Whitening { whitened, mean, map, retained_rank: rank })
}

/// Whitens an expanded series; see [`whiten_data`].
pub fn fit_whitening(expanded: &ExpandedSeries) -> Result<Whitening> {
    whiten_data(&expanded.rows)
}

/// Finds the direction of slowest variation of a whitened series.
///
/// The derivative is the difference of successive rows; the covariance of
/// the derivative is eigendecomposed and the unit eigenvector of the
/// smallest eigenvalue is returned, sign-fixed so its first nonzero
/// component is positive. Eigenvalues come back in ascending order.
pub fn slowest_projection(whitened: &Array2<f64>) -> Result<(Vec<f64>, Array1<f64>)> {
    let n = whitened.nrows();
    let d = whitened.ncols();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 rows, got {n}")));
    }
    let mut dcov = Array2::zeros((d, d));
    for t in 0..n - 1 {
        for i in 0..d {
            let di = whitened[[t + 1, i]] - whitened[[t, i]];
            for j in i..d {
                let dj = whitened[[t + 1, j]] - whitened[[t, j]];
                dcov[[i, j]] += di * dj;
            }
        }
    }
    let count = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = dcov[[i, j]] / count;
            dcov[[i, j]] = v;
            dcov[[j, i]] = v;
        }
    }
    for i in 0..d {
        dcov[[i, i]] += COV_REG;
    }
    let (eigvals, eigvecs) = sym_eigen(&dcov);
    let eigenvalues: Vec<f64> = eigvals.iter().map(|l| (l - COV_REG).max(0.0)).collect();
    let mut projection = eigvecs.column(0).to_owned();
    if let Some(first) = projection.iter().find(|v| v.abs() > 1e-12) {
        if *first < 0.0 {
            projection.mapv_inplace(|v| -v);
        }
    }
    Ok((eigenvalues, projection))
}

/// Fits the full pipeline (embed, expand, whiten, slowest projection) on one
/// waveform and returns the fitted transform with its output signal.
///
/// The output is the slowest unit-variance component: length `len(x) - 1`,
/// zero mean, same nominal sample rate.
pub fn fit_sfa(x: &Waveform) -> Result<(SfaTransform, Waveform)> {
    if x.len() < 32 {
        return Err(Error::InvalidArgument(format!(
            "need at least 32 samples, got {}",
            x.len()
        )));
    }
    let embedded = time_embed(&x.samples, 2, 1)?;
    let expanded = quadratic_expand(&embedded)?;
    let whitening = fit_whitening(&expanded)?;
    let (eigenvalues, projection) = slowest_projection(&whitening.whitened)?;
    let output = whitening.whitened.dot(&projection);
    let transform = SfaTransform {
        mean: whitening.mean,
        whitening_map: whitening.map,
        slowness_eigenvalues: eigenvalues,
        projection,
        retained_rank: whitening.retained_rank,
    };
    Ok((transform, Waveform::new(output.to_vec(), x.sample_rate)))
}

/// Convenience wrapper around [`fit_sfa`] returning only the transformed
/// signal.
pub fn sfa_transform(x: &Waveform) -> Result<Waveform> {
    fit_sfa(x).map(|(_, w)| w)
}

/// Mean squared temporal derivative; the slowness objective.
pub fn slowness_delta(signal: &[f64]) -> f64 {
    if signal.len() < 2 {
        return 0.0;
    }
    signal.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum::<f64>()
        / (signal.len() - 1) as f64
}

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix.
/// Returns eigenvalues in ascending order with matching eigenvector columns.
pub(crate) fn sym_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut m = a.clone();
    let mut v: Array2<f64> = Array2::eye(n);
    let fro_sq: f64 = a.iter().map(|x| x * x).sum();
    for _ in 0..64 {
        let off_sq: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| m[[p, q]] * m[[p, q]])
            .sum();
        if off_sq <= 1e-30 * fro_sq.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[i, i]].partial_cmp(&m[[j, j]]).unwrap());
    let eigvals: Vec<f64> = order.iter().map(|&i| m[[i, i]]).collect();
    let mut eigvecs = Array2::zeros((n, n));
    for (j, &i) in order.iter().enumerate() {
        for r in 0..n {
            eigvecs[[r, j]] = v[[r, i]];
        }
    }
    (eigvals, eigvecs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn embed_unrolls_definition() {
        let e = time_embed(&[1.0, 2.0, 3.0, 4.0], 2, 1).unwrap();
        assert_eq!(e.rows.nrows(), 3);
        assert_eq!(e.rows.row(0).to_vec(), vec![1.0, 2.0]);
        assert_eq!(e.rows.row(1).to_vec(), vec![2.0, 3.0]);
        assert_eq!(e.rows.row(2).to_vec(), vec![3.0, 4.0]);
    }

    #[test]
    fn embed_constant_input() {
        let e = time_embed(&[0.0, 0.0, 0.0], 2, 1).unwrap();
        assert_eq!(e.rows.nrows(), 2);
        assert!(e.rows.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embed_too_short_rejected() {
        assert!(time_embed(&[5.0], 2, 1).is_err());
    }

    #[test]
    fn embed_row_count_formula() {
        for len in 4..20usize {
            for (l, r) in [(2, 1), (3, 2), (2, 3)] {
                if len >= 1 + (l - 1) * r {
                    let e = time_embed(&vec![1.0; len], l, r).unwrap();
                    assert_eq!(e.rows.nrows(), len - (l - 1) * r);
                }
            }
        }
    }

    #[test]
    fn embed_rows_reconstruct_signal() {
        let x: Vec<f64> = (0..37).map(|i| (i as f64).sin()).collect();
        let e = time_embed(&x, 2, 1).unwrap();
        let mut rebuilt = vec![0.0; x.len()];
        for t in 0..e.rows.nrows() {
            rebuilt[t] = e.rows[[t, 0]];
        }
        rebuilt[x.len() - 1] = e.rows[[e.rows.nrows() - 1, 1]];
        assert_eq!(rebuilt, x);
    }

    #[test]
    fn expansion_matches_formula() {
        let e = time_embed(&[1.0, 2.0], 2, 1).unwrap();
        let q = quadratic_expand(&e).unwrap();
        assert_eq!(q.rows.row(0).to_vec(), vec![1.0, 2.0, 1.0, 2.0, 4.0]);

        let e = time_embed(&[0.0, 0.0], 2, 1).unwrap();
        let q = quadratic_expand(&e).unwrap();
        assert_eq!(q.rows.row(0).to_vec(), vec![0.0; 5]);

        let e = time_embed(&[-1.0, 1.0], 2, 1).unwrap();
        let q = quadratic_expand(&e).unwrap();
        assert_eq!(q.rows.row(0).to_vec(), vec![-1.0, 1.0, 1.0, -1.0, 1.0]);
    }

    #[test]
    fn expansion_rejects_wrong_width() {
        let e = time_embed(&[1.0, 2.0, 3.0, 4.0, 5.0], 3, 1).unwrap();
        assert!(quadratic_expand(&e).is_err());
    }

    #[test]
    fn whitening_rejects_constant_input() {
        let e = time_embed(&vec![0.25; 100], 2, 1).unwrap();
        let q = quadratic_expand(&e).unwrap();
        assert!(matches!(fit_whitening(&q), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn whitening_of_correlated_gaussians() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 10_000;
        let mut data = Array2::zeros((n, 2));
        for t in 0..n {
            // Box-Muller
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let r = (-2.0 * u1.ln()).sqrt();
            let z1 = r * (std::f64::consts::TAU * u2).cos();
            let z2 = r * (std::f64::consts::TAU * u2).sin();
            data[[t, 0]] = 2.0 * z1 + 1.0;
            data[[t, 1]] = 0.8 * z1 + 0.6 * z2 - 0.5;
        }
        let w = whiten_data(&data).unwrap();
        assert_eq!(w.retained_rank, 2);
        let z = &w.whitened;
        let m = z.nrows() as f64;
        for i in 0..2 {
            for j in 0..2 {
                let cov: f64 = (0..z.nrows()).map(|t| z[[t, i]] * z[[t, j]]).sum::<f64>() / m;
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((cov - expect).abs() < 1e-2, "cov[{i}{j}] = {cov}");
            }
        }
    }

    #[test]
    fn whitened_output_statistics() {
        let x = crate::corpus::synth_digit_utterance(
            &["three".to_string(), "nine".to_string()],
            4,
            16000,
        )
        .unwrap();
        let q = quadratic_expand(&time_embed(&x.samples, 2, 1).unwrap()).unwrap();
        let w = fit_whitening(&q).unwrap();
        let z = &w.whitened;
        let n = z.nrows() as f64;
        let mut mean_norm_sq = 0.0;
        for j in 0..z.ncols() {
            let mu: f64 = z.column(j).sum() / n;
            mean_norm_sq += mu * mu;
            let var: f64 = z.column(j).iter().map(|v| v * v).sum::<f64>() / n;
            assert!((var - 1.0).abs() <= 1e-6, "var of dim {j}: {var}");
            for k in j + 1..z.ncols() {
                let corr: f64 = (0..z.nrows()).map(|t| z[[t, j]] * z[[t, k]]).sum::<f64>() / n;
                assert!(corr.abs() <= 1e-6, "corr[{j}{k}] = {corr}");
            }
        }
        assert!(mean_norm_sq.sqrt() <= 1e-8);
    }

    #[test]
    fn projection_finds_slow_axis() {
        // Dimension 0: slow sine; dimension 1: fast noise, decorrelated from
        // dimension 0 by Gram-Schmidt. Both unit variance.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 4000;
        let mut slow: Vec<f64> = (0..n)
            .map(|t| (std::f64::consts::TAU * 3.0 * t as f64 / n as f64).sin())
            .collect();
        let mut fast: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        center_unit(&mut slow);
        let dot: f64 = slow.iter().zip(&fast).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        for (f, s) in fast.iter_mut().zip(&slow) {
            *f -= dot * s;
        }
        center_unit(&mut fast);
        let mut z = Array2::zeros((n, 2));
        for t in 0..n {
            z[[t, 0]] = slow[t];
            z[[t, 1]] = fast[t];
        }
        let (eigvals, proj) = slowest_projection(&z).unwrap();
        assert!(eigvals[0] <= eigvals[1]);
        let angle = proj[0].abs().min(1.0).acos().to_degrees();
        assert!(angle <= 5.0, "angle {angle} deg");
        // The projected output recovers the slow source almost exactly.
        let out: Vec<f64> = (0..n).map(|t| z[[t, 0]] * proj[0] + z[[t, 1]] * proj[1]).collect();
        let rho = correlation(&out, &slow);
        assert!(rho.abs() >= 0.99, "rho {rho}");
    }

    fn center_unit(v: &mut [f64]) {
        let n = v.len() as f64;
        let mu: f64 = v.iter().sum::<f64>() / n;
        for x in v.iter_mut() {
            *x -= mu;
        }
        let sd = (v.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
        for x in v.iter_mut() {
            *x /= sd;
        }
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len().min(b.len());
        let (a, b) = (&a[..n], &b[..n]);
        let ma: f64 = a.iter().sum::<f64>() / n as f64;
        let mb: f64 = b.iter().sum::<f64>() / n as f64;
        let mut num = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for i in 0..n {
            num += (a[i] - ma) * (b[i] - mb);
            va += (a[i] - ma) * (a[i] - ma);
            vb += (b[i] - mb) * (b[i] - mb);
        }
        num / (va * vb).sqrt()
    }

    #[test]
    fn projection_on_diagonal_derivative_covariance() {
        // Hand-built series whose derivative columns are orthogonal sign
        // patterns scaled so the derivative covariance is diag(0.1, 1.0).
        let steps = 64;
        let mut diffs = Array2::zeros((steps, 2));
        for t in 0..steps {
            diffs[[t, 0]] = if t % 2 == 0 { 1.0 } else { -1.0 };
            diffs[[t, 1]] = match t % 4 {
                0 => 1.0,
                1 => -1.0,
                2 => -1.0,
                _ => 1.0,
            };
        }
        for t in 0..steps {
            diffs[[t, 0]] *= 0.1f64.sqrt();
        }
        let mut z = Array2::zeros((steps + 1, 2));
        for t in 0..steps {
            z[[t + 1, 0]] = z[[t, 0]] + diffs[[t, 0]];
            z[[t + 1, 1]] = z[[t, 1]] + diffs[[t, 1]];
        }
        let (eigvals, proj) = slowest_projection(&z).unwrap();
        assert!((eigvals[0] - 0.1).abs() < 1e-6);
        assert!((eigvals[1] - 1.0).abs() < 1e-6);
        assert!((proj[0] - 1.0).abs() < 1e-9);
        assert!(proj[1].abs() < 1e-9);
    }

    #[test]
    fn eigenvalues_ascending_for_random_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 300;
        let mut z = Array2::zeros((n, 4));
        for t in 0..n {
            for d in 0..4 {
                z[[t, d]] = rng.gen_range(-1.0..1.0);
            }
        }
        let (eigvals, _) = slowest_projection(&z).unwrap();
        for w in eigvals.windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn projection_rejects_short_series() {
        let z = Array2::zeros((2, 3));
        assert!(slowest_projection(&z).is_err());
    }

    #[test]
    fn transform_output_statistics() {
        let x = crate::corpus::synth_digit_utterance(&["six".to_string()], 12, 16000).unwrap();
        let y = sfa_transform(&x).unwrap();
        assert_eq!(y.len(), x.len() - 1);
        assert_eq!(y.sample_rate, x.sample_rate);
        let n = y.len() as f64;
        let mean: f64 = y.samples.iter().sum::<f64>() / n;
        let var: f64 = y.samples.iter().map(|v| v * v).sum::<f64>() / n;
        assert!(mean.abs() <= 1e-8, "mean {mean}");
        assert!((var - 1.0).abs() <= 1e-6, "var {var}");
    }

    #[test]
    fn transform_recovers_pure_slow_sine() {
        let n = 16000;
        let x: Vec<f64> = (0..n)
            .map(|t| (std::f64::consts::TAU * 2.0 * t as f64 / n as f64).sin())
            .collect();
        let y = sfa_transform(&Waveform::new(x.clone(), 16000)).unwrap();
        // Compare against the same-frequency sinusoid, allowing sign flips
        // and a one-sample shift.
        let rho0 = correlation(&y.samples, &x[..n - 1]);
        let rho1 = correlation(&y.samples, &x[1..]);
        let best = rho0.abs().max(rho1.abs());
        assert!(best >= 0.99, "rho {best}");
    }

    #[test]
    fn transform_slows_mixture() {
        let fs = 16000;
        let x: Vec<f64> = (0..fs)
            .map(|t| {
                let time = t as f64 / fs as f64;
                0.5 * (std::f64::consts::TAU * 50.0 * time).sin()
                    + 0.5 * (std::f64::consts::TAU * 6000.0 * time).sin()
            })
            .collect();
        let mut normalized = x.clone();
        let n = normalized.len() as f64;
        let mu: f64 = normalized.iter().sum::<f64>() / n;
        for v in &mut normalized {
            *v -= mu;
        }
        let sd = (normalized.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        for v in &mut normalized {
            *v /= sd;
        }
        let y = sfa_transform(&Waveform::new(x, fs as u32)).unwrap();
        assert!(slowness_delta(&y.samples) <= slowness_delta(&normalized));
    }

    #[test]
    fn transform_optimality_over_random_projections() {
        let x = crate::corpus::synth_digit_utterance(&["two".to_string()], 3, 16000).unwrap();
        let embedded = time_embed(&x.samples, 2, 1).unwrap();
        let expanded = quadratic_expand(&embedded).unwrap();
        let w = fit_whitening(&expanded).unwrap();
        let (_, proj) = slowest_projection(&w.whitened).unwrap();
        let y = w.whitened.dot(&proj);
        let delta_opt = slowness_delta(y.as_slice().unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let mut p: Vec<f64> = (0..w.retained_rank).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in &mut p {
                *v /= norm;
            }
            let p = Array1::from(p);
            let yp = w.whitened.dot(&p);
            let delta_p = slowness_delta(yp.as_slice().unwrap());
            assert!(delta_opt <= delta_p + 1e-9, "{delta_opt} vs {delta_p}");
        }
    }

    #[test]
    fn transform_rejects_degenerate_and_short() {
        assert!(matches!(
            sfa_transform(&Waveform::new(vec![0.5; 100], 16000)),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(
            sfa_transform(&Waveform::new(vec![0.5; 10], 16000)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn transform_text_record_has_all_fields() {
        let x = crate::corpus::synth_digit_utterance(&["one".to_string()], 1, 16000).unwrap();
        let (t, _) = fit_sfa(&x).unwrap();
        let text = t.to_text();
        for key in ["mean", "map_row", "eigenvalues", "projection", "retained_rank"] {
            assert!(text.contains(key), "missing {key}");
        }
        assert!(t.slowness_eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        let norm: f64 = t.projection.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() <= 1e-10);
        assert!((1..=5).contains(&t.retained_rank));
    }
}
