//! Butterworth bandpass design as a cascade of biquads.
//!
//! A fourth-order analog lowpass prototype is moved to a bandpass (one
//! conjugate pole pair per section, four sections), then mapped to the z-plane
//! with the bilinear transform after pre-warping both band edges.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use super::SignalError;

/// Order of the lowpass prototype.
pub const BUTTERWORTH_ORDER: usize = 4;

/// One second-order section, `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b0 + z_inv * self.b1 + z2 * self.b2) / (1.0 + z_inv * self.a1 + z2 * self.a2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandpassFilter {
    pub low: f64,
    pub high: f64,
    pub fs: f64,
    pub sections: Vec<Biquad>,
}

impl BandpassFilter {
    /// `|H(e^{jω})|` at `freq` Hz.
    pub fn magnitude_at(&self, freq: f64) -> f64 {
        let w = 2.0 * PI * freq / self.fs;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .map(|s| s.response(z_inv))
            .fold(Complex64::new(1.0, 0.0), |acc, h| acc * h)
            .norm()
    }

    /// Centre frequency of the digital passband (where the gain is exactly 1).
    pub fn center_frequency(&self) -> f64 {
        let (w1, w2) = prewarp(self.low, self.high, self.fs);
        let w0 = (w1 * w2).sqrt();
        self.fs / PI * (w0 / (2.0 * self.fs)).atan()
    }
}

fn prewarp(low: f64, high: f64, fs: f64) -> (f64, f64) {
    let w = |f: f64| 2.0 * fs * (PI * f / fs).tan();
    (w(low), w(high))
}

/// Fourth-order Butterworth bandpass for `[low, high]` Hz at sampling rate `fs`,
/// as `BUTTERWORTH_ORDER` second-order sections.
pub fn design_bandpass(low: f64, high: f64, fs: f64) -> Result<BandpassFilter, SignalError> {
    if !(low > 0.0 && low < high && high < fs / 2.0) {
        return Err(SignalError::InvalidBand { low, high, fs });
    }
    let (w1, w2) = prewarp(low, high, fs);
    let bw = w2 - w1;
    let w0_sq = w1 * w2;
    let k = 2.0 * fs;

    // Upper-half-plane prototype poles; conjugates give the other half.
    let order = BUTTERWORTH_ORDER;
    let analog: Vec<Complex64> = (0..order / 2)
        .flat_map(|i| {
            let theta = PI * (2 * i + order + 1) as f64 / (2 * order) as f64;
            let pb = Complex64::from_polar(1.0, theta) * bw;
            let disc = (pb * pb - 4.0 * w0_sq).sqrt();
            [(pb + disc) * 0.5, (pb - disc) * 0.5]
        })
        .collect();

    let center = {
        let w0 = w0_sq.sqrt();
        2.0 * (w0 / k).atan()
    };
    let z_center = Complex64::from_polar(1.0, -center);

    let sections = analog
        .iter()
        .map(|&s| {
            let z = (k + s) / (k - s);
            let mut q = Biquad {
                b0: 1.0,
                b1: 0.0,
                b2: -1.0,
                a1: -2.0 * z.re,
                a2: z.norm_sqr(),
            };
            let g = 1.0 / q.response(z_center).norm();
            q.b0 *= g;
            q.b2 *= g;
            q
        })
        .collect();

    Ok(BandpassFilter {
        low,
        high,
        fs,
        sections,
    })
}

/// Causal filtering (transposed direct form II), zero initial state.
pub fn apply_filter(filter: &BandpassFilter, signal: &[f64]) -> Vec<f64> {
    let mut out = signal.to_vec();
    for s in &filter.sections {
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in out.iter_mut() {
            let x = *v;
            let y = s.b0 * x + z1;
            z1 = s.b1 * x - s.a1 * y + z2;
            z2 = s.b2 * x - s.a2 * y;
            *v = y;
        }
    }
    out
}
