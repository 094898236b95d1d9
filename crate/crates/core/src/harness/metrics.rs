use std::fmt;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Classification scores. F1, MF1 and accuracy are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<u64>>,
    pub f1: Vec<f64>,
    pub mf1: f64,
    pub accuracy: f64,
}

impl MetricsReport {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self, HarnessError> {
        let k = confusion.len();
        if k == 0 || confusion.iter().any(|row| row.len() != k) {
            return Err(HarnessError::Config("confusion matrix must be square and non-empty".into()));
        }
        let f1: Vec<f64> = (0..k)
            .map(|c| {
                let tp = confusion[c][c] as f64;
                let fn_: f64 = confusion[c].iter().sum::<u64>() as f64 - tp;
                let fp: f64 = confusion.iter().map(|row| row[c]).sum::<u64>() as f64 - tp;
                let denom = 2.0 * tp + fp + fn_;
                if denom == 0.0 {
                    0.0
                } else {
                    100.0 * 2.0 * tp / denom
                }
            })
            .collect();
        let total: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..k).map(|c| confusion[c][c]).sum();
        let accuracy = if total == 0 {
            0.0
        } else {
            100.0 * correct as f64 / total as f64
        };
        let mf1 = f1.iter().sum::<f64>() / k as f64;
        Ok(MetricsReport {
            confusion,
            f1,
            mf1,
            accuracy,
        })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self, HarnessError> {
        if truth.len() != predicted.len() {
            return Err(HarnessError::Config(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut confusion = vec![vec![0u64; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            for l in [t, p] {
                if l >= classes {
                    return Err(HarnessError::LabelOutOfRange { label: l, classes });
                }
            }
            confusion[t][p] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn classes(&self) -> usize {
        self.confusion.len()
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    /// Rows are true classes, columns predictions, with a header line.
    pub fn confusion_csv(&self, names: &[String]) -> String {
        let mut out = String::from("true\\predicted");
        for n in names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (name, row) in names.iter().zip(&self.confusion) {
            out.push_str(name);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

/// Sample (`n − 1`) standard deviation; zero for a single value.
pub fn mean_std(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            mean: f64::NAN,
            std: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Summary { mean, std }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: usize,
    pub mf1: Summary,
    pub accuracy: Summary,
    pub f1: Vec<Summary>,
}

pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregateReport, HarnessError> {
    let first = reports
        .first()
        .ok_or_else(|| HarnessError::Config("nothing to aggregate".into()))?;
    let k = first.classes();
    if reports.iter().any(|r| r.classes() != k) {
        return Err(HarnessError::Config("reports disagree on the number of classes".into()));
    }
    let column = |f: &dyn Fn(&MetricsReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(AggregateReport {
        runs: reports.len(),
        mf1: column(&|r| r.mf1),
        accuracy: column(&|r| r.accuracy),
        f1: (0..k).map(|c| column(&|r| r.f1[c])).collect(),
    })
}
