use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::SignalError;
use crate::spd::SpdMatrix;

/// Relative diagonal loading added to every segment covariance.
pub const COVARIANCE_JITTER: f64 = 1e-6;

/// Standardizes to zero mean and unit population standard deviation.
pub fn zscore(signal: &[f64]) -> Result<Vec<f64>, SignalError> {
    if signal.len() < 2 {
        return Err(SignalError::DegenerateSignal);
    }
    let n = signal.len() as f64;
    let mean = signal.iter().sum::<f64>() / n;
    let var = signal.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std.is_nan() || std < 1e-12 {
        return Err(SignalError::DegenerateSignal);
    }
    Ok(signal.iter().map(|v| (v - mean) / std).collect())
}

/// One covariance matrix per non-overlapping one-second segment.
///
/// `rows` holds the `n` signals of one epoch, all of equal length, a multiple of `fs`.
pub fn segment_covariance(rows: &[&[f64]], fs: usize) -> Result<Vec<SpdMatrix>, SignalError> {
    let n = rows.len();
    if n == 0 || fs < 2 {
        return Err(SignalError::InvalidRecording(format!(
            "need at least one signal and fs ≥ 2 (got n = {n}, fs = {fs})"
        )));
    }
    let len = rows[0].len();
    if rows.iter().any(|r| r.len() != len) || !len.is_multiple_of(fs) || len == 0 {
        return Err(SignalError::InvalidRecording(format!(
            "signal lengths must be equal non-zero multiples of fs = {fs}"
        )));
    }
    let mut centered = vec![0.0; n * fs];
    (0..len / fs)
        .map(|seg| {
            let range = seg * fs..(seg + 1) * fs;
            for (i, row) in rows.iter().enumerate() {
                let x = &row[range.clone()];
                let mean = x.iter().sum::<f64>() / fs as f64;
                for (dst, v) in centered[i * fs..(i + 1) * fs].iter_mut().zip(x) {
                    *dst = v - mean;
                }
            }
            let mut cov = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                let xi = &centered[i * fs..(i + 1) * fs];
                for j in i..n {
                    let xj = &centered[j * fs..(j + 1) * fs];
                    let c = xi.iter().zip(xj).map(|(a, b)| a * b).sum::<f64>() / (fs - 1) as f64;
                    cov[(i, j)] = c;
                    cov[(j, i)] = c;
                }
            }
            let trace = cov.trace();
            if trace.is_nan() || trace < 1e-12 {
                return Err(SignalError::DegenerateSegment);
            }
            let jitter = COVARIANCE_JITTER * trace / n as f64;
            for i in 0..n {
                cov[(i, i)] += jitter;
            }
            Ok(SpdMatrix::new(cov)?)
        })
        .collect()
}

/// Periodogram-based average power spectral density with a cached FFT plan.
pub struct PsdEstimator {
    len: usize,
    fft: Arc<dyn Fft<f64>>,
    buffer: Vec<Complex64>,
}

impl PsdEstimator {
    pub fn new(len: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(len);
        PsdEstimator {
            len,
            fft,
            buffer: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    /// Number of one-sided frequency bins, `⌊N/2⌋ + 1`.
    pub fn bins(&self) -> usize {
        self.len / 2 + 1
    }

    /// One-sided periodogram `P[q] = w_q·|X[q]|² / (fs·N)`, `w_q = 2` except
    /// at DC and (for even `N`) Nyquist where `w_q = 1`.
    pub fn periodogram(&mut self, segment: &[f64], fs: f64) -> Vec<f64> {
        assert_eq!(segment.len(), self.len, "segment length must match the plan");
        for (b, &x) in self.buffer.iter_mut().zip(segment) {
            *b = Complex64::new(x, 0.0);
        }
        self.fft.process(&mut self.buffer);
        let n = self.len;
        (0..self.bins())
            .map(|q| {
                let w = if q == 0 || (n.is_multiple_of(2) && q == n / 2) { 1.0 } else { 2.0 };
                w * self.buffer[q].norm_sqr() / (fs * n as f64)
            })
            .collect()
    }

    /// Mean of [`PsdEstimator::periodogram`] over all bins.
    pub fn average(&mut self, segment: &[f64], fs: f64) -> f64 {
        let p = self.periodogram(segment, fs);
        p.iter().sum::<f64>() / p.len() as f64
    }
}

/// Average PSD of one segment (typically one second, `fs` samples).
pub fn avg_psd(segment: &[f64], fs: f64) -> f64 {
    if segment.is_empty() {
        return 0.0;
    }
    PsdEstimator::new(segment.len()).average(segment, fs)
}
