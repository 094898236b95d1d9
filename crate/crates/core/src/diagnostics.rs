//! Finite-difference gradient suite shared by the `gradcheck` command and the tests.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{grad_check, AutodiffError, ParamSet, Tape, Tensor, Var};
use crate::model::{HeadCombination, Model, ModelConfig};
use crate::spd::{matrix_log, matrix_log_vjp, SpdError, SpdMatrix, SymMatrix};

/// Relative tolerance for single primitives and well-separated spectra.
pub const PRIMITIVE_TOLERANCE: f64 = 1e-5;
/// Relative tolerance near eigenvalue degeneracy and for whole models.
pub const COMPOSITE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteCheck {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl SuiteCheck {
    fn new(name: &str, error: f64, tolerance: f64) -> Self {
        SuiteCheck {
            name: name.to_string(),
            error,
            tolerance,
            passed: error <= tolerance,
        }
    }
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).expect("shape matches data")
}

fn readout(t: &mut Tape, v: Var, seed: u64) -> Result<Var, AutodiffError> {
    let shape = t.value(v).shape().to_vec();
    let w = t.constant(randn(&mut ChaCha8Rng::seed_from_u64(seed), &shape));
    let p = t.mul(v, w)?;
    Ok(t.sum_all(p))
}

fn params(shapes: &[&[usize]], seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    for (i, s) in shapes.iter().enumerate() {
        ps.push(format!("p{i}"), randn(&mut rng, s));
    }
    ps
}

fn spd_param(n: usize, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let x = &b * b.transpose() + DMatrix::<f64>::identity(n, n);
    let mut ps = ParamSet::new();
    ps.push("x", Tensor::new(vec![n, n], x.transpose().as_slice().to_vec()).expect("square"));
    ps
}

type Probe = fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>;

fn primitive_cases() -> Vec<(&'static str, ParamSet, Probe)> {
    vec![
        ("matmul", params(&[&[3, 4], &[4, 5]], 1), |t, v| {
            let y = t.matmul(v[0], v[1])?;
            readout(t, y, 11)
        }),
        ("add", params(&[&[2, 3], &[2, 3]], 2), |t, v| {
            let y = t.add(v[0], v[1])?;
            readout(t, y, 12)
        }),
        ("sub", params(&[&[2, 3], &[2, 3]], 3), |t, v| {
            let y = t.sub(v[0], v[1])?;
            readout(t, y, 13)
        }),
        ("mul", params(&[&[2, 3], &[2, 3]], 4), |t, v| {
            let y = t.mul(v[0], v[1])?;
            readout(t, y, 14)
        }),
        ("scale", params(&[&[3, 2]], 5), |t, v| {
            let y = t.scale(v[0], -0.7);
            readout(t, y, 15)
        }),
        ("add_bias", params(&[&[4, 3], &[3]], 6), |t, v| {
            let y = t.add_bias(v[0], v[1])?;
            readout(t, y, 16)
        }),
        ("mul_scalar_var", params(&[&[3, 3], &[4]], 7), |t, v| {
            let y = t.mul_scalar_var(v[0], v[1], 2)?;
            readout(t, y, 17)
        }),
        ("relu", params(&[&[5, 4]], 8), |t, v| {
            let y = t.relu(v[0]);
            readout(t, y, 18)
        }),
        ("mean_axis", params(&[&[2, 3, 4]], 9), |t, v| {
            let y = t.mean_axis(v[0], 1)?;
            readout(t, y, 19)
        }),
        ("sum_all", params(&[&[3, 3]], 10), |t, v| {
            let w = t.constant(Tensor::full(&[3, 3], 0.5));
            let y = t.mul(v[0], v[0])?;
            let y = t.mul(y, w)?;
            Ok(t.sum_all(y))
        }),
        ("reshape", params(&[&[2, 6]], 11), |t, v| {
            let y = t.reshape(v[0], &[3, 4])?;
            readout(t, y, 21)
        }),
        ("transpose", params(&[&[2, 5]], 12), |t, v| {
            let y = t.transpose(v[0])?;
            readout(t, y, 22)
        }),
        ("softmax_rows", params(&[&[3, 5]], 13), |t, v| {
            let y = t.softmax_rows(v[0]);
            readout(t, y, 23)
        }),
        ("layer_norm", params(&[&[4, 6], &[6], &[6]], 14), |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2])?;
            readout(t, y, 24)
        }),
        ("dropout", params(&[&[3, 4]], 15), |t, v| {
            let y = t.dropout(v[0], 0.3)?;
            readout(t, y, 25)
        }),
        ("concat_rows", params(&[&[2, 3], &[4, 3]], 16), |t, v| {
            let y = t.concat_rows(&[v[0], v[1]])?;
            readout(t, y, 26)
        }),
        ("slice_rows", params(&[&[5, 3]], 17), |t, v| {
            let y = t.slice_rows(v[0], 1, 3)?;
            readout(t, y, 27)
        }),
        ("concat_cols", params(&[&[3, 2], &[3, 4]], 18), |t, v| {
            let y = t.concat_cols(&[v[0], v[1]])?;
            readout(t, y, 28)
        }),
        ("cross_entropy", params(&[&[5]], 19), |t, v| t.cross_entropy(v[0], 2, 0.1)),
        ("sym_log", spd_param(4, 20), |t, v| {
            let y = t.sym_log(v[0])?;
            readout(t, y, 30)
        }),
    ]
}

/// Relative error of `matrix_log_vjp` at `x` against central differences of
/// `⟨W, log X⟩` along every symmetric basis direction.
pub fn matrix_log_vjp_error(x: &SpdMatrix, upstream: &SymMatrix, step: f64) -> Result<f64, SpdError> {
    let n = x.dim();
    let analytic = matrix_log_vjp(x, upstream)?;
    let f = |m: DMatrix<f64>| -> Result<f64, SpdError> {
        Ok(matrix_log(&SpdMatrix::new(m)?)?.as_matrix().component_mul(upstream.as_matrix()).sum())
    };
    let mut max_err: f64 = 0.0;
    let mut max_num: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            let mut e = DMatrix::<f64>::zeros(n, n);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            let numeric = (f(x.as_matrix() + &e * step)? - f(x.as_matrix() - &e * step)?) / (2.0 * step);
            let exact = analytic.as_matrix().component_mul(&e).sum();
            max_err = max_err.max((numeric - exact).abs());
            max_num = max_num.max(numeric.abs());
        }
    }
    Ok(max_err / max_num.max(1e-8))
}

/// SPD matrix with eigenvalues `spectrum` in a seeded random basis, plus a
/// seeded symmetric upstream gradient.
pub fn vjp_fixture(spectrum: &[f64], seed: u64) -> (SpdMatrix, SymMatrix) {
    let n = spectrum.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let q = a.qr().q();
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(spectrum));
    let x = &q * d * q.transpose();
    let x = (&x + x.transpose()) * 0.5;
    let w = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let w = (&w + w.transpose()) * 0.5;
    (
        SpdMatrix::new(x).expect("positive spectrum"),
        SymMatrix::new(w).expect("symmetrized"),
    )
}

fn model_check(name: &str, cfg: ModelConfig, seed: u64) -> Result<SuiteCheck, AutodiffError> {
    let model = Model::new(cfg.clone(), seed).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let epochs: Vec<Vec<f64>> = (0..cfg.seq_len)
        .map(|_| {
            (0..cfg.epoch_tokens * cfg.input_token_dim())
                .map(|_| rng.sample(StandardNormal))
                .collect()
        })
        .collect();
    let refs: Vec<&[f64]> = epochs.iter().map(Vec::as_slice).collect();
    let report = grad_check(
        |t, v| {
            model.loss(t, v, &refs, 1).map_err(|e| match e {
                crate::model::ModelError::Autodiff(a) => a,
                other => AutodiffError::Checkpoint(other.to_string()),
            })
        },
        model.params(),
        1e-5,
        COMPOSITE_TOLERANCE,
    )?;
    Ok(SuiteCheck::new(name, report.max_error, COMPOSITE_TOLERANCE))
}

/// Every primitive, `matrix_log_vjp` on separated and nearly degenerate
/// spectra, and an end-to-end check of the tiny model. `extended` adds a
/// deeper model with learned head weights.
pub fn gradient_suite(extended: bool) -> Result<Vec<SuiteCheck>, AutodiffError> {
    let mut out = Vec::new();
    for (name, ps, f) in primitive_cases() {
        let report = grad_check(f, &ps, 1e-5, PRIMITIVE_TOLERANCE)?;
        out.push(SuiteCheck::new(name, report.max_error, PRIMITIVE_TOLERANCE));
    }
    for (name, spectrum, tol) in [
        ("matrix_log_vjp separated", vec![0.5, 1.0, 2.0, 4.0], PRIMITIVE_TOLERANCE),
        ("matrix_log_vjp near-degenerate", vec![1.0, 1.0 + 5e-10, 2.0, 3.0], COMPOSITE_TOLERANCE),
        ("matrix_log_vjp repeated", vec![2.0, 2.0, 2.0, 0.7], COMPOSITE_TOLERANCE),
    ] {
        let mut worst: f64 = 0.0;
        for seed in 0..5 {
            let (x, w) = vjp_fixture(&spectrum, seed);
            worst = worst.max(matrix_log_vjp_error(&x, &w, 1e-5)?);
        }
        out.push(SuiteCheck::new(name, worst, tol));
    }
    out.push(model_check("tiny model end-to-end", ModelConfig::tiny(), 3)?);
    if extended {
        let cfg = ModelConfig {
            heads: 3,
            model_dim: 3,
            n_layers_intra: 2,
            n_layers_inter: 2,
            head_combination: HeadCombination::Learned,
            ..ModelConfig::tiny()
        };
        out.push(model_check("two-layer model, learned heads", cfg, 4)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let checks = gradient_suite(false).unwrap();
        assert_eq!(checks.len(), 24);
        for c in &checks {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn vjp_fixture_spectrum() {
        let (x, _) = vjp_fixture(&[1.0, 1.0 + 5e-10, 2.0], 1);
        let mut ev: Vec<f64> = x.eig().unwrap().eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!((ev[1] - ev[0]) < 1e-8);
        assert!((ev[2] - 2.0).abs() < 1e-12);
    }
}
