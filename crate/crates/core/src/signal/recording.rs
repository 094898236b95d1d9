use std::fs;
use std::io::Write;
use std::path::Path;

use super::SignalError;

/// Length of one labelled epoch.
pub const EPOCH_SECONDS: usize = 30;
/// Number of sleep stages a label may take.
pub const NUM_STAGES: usize = 5;
pub const STAGE_NAMES: [&str; NUM_STAGES] = ["Awake", "N1", "N2", "N3", "REM"];

const HEADER_FILE: &str = "header.txt";
const SIGNALS_FILE: &str = "signals.f64";

/// A multichannel recording of `n` signals, sampled at `fs` Hz, with one
/// label per 30-second epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    id: String,
    fs: usize,
    signals: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl Recording {
    pub fn new(
        id: impl Into<String>,
        fs: usize,
        signals: Vec<Vec<f64>>,
        labels: Vec<usize>,
    ) -> Result<Self, SignalError> {
        let id = id.into();
        let bad = |msg: String| Err(SignalError::InvalidRecording(format!("{id}: {msg}")));
        if id.is_empty() || id.contains(['/', '\\', '\n', '=']) {
            return bad("id must be a non-empty plain name".into());
        }
        if signals.len() < 2 {
            return bad(format!("need n ≥ 2 signals, got {}", signals.len()));
        }
        if fs <= 90 {
            return bad(format!("fs = {fs} Hz must exceed 90 Hz"));
        }
        if labels.is_empty() {
            return bad("no epochs".into());
        }
        let expected = EPOCH_SECONDS * fs * labels.len();
        if let Some(row) = signals.iter().find(|r| r.len() != expected) {
            return bad(format!(
                "{} samples per signal, expected {expected} for {} epochs",
                row.len(),
                labels.len()
            ));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= NUM_STAGES) {
            return bad(format!("label {l} outside 0..{NUM_STAGES}"));
        }
        if signals.iter().flatten().any(|v| !v.is_finite()) {
            return bad("non-finite sample".into());
        }
        Ok(Recording {
            id,
            fs,
            signals,
            labels,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn fs(&self) -> usize {
        self.fs
    }

    pub fn n_signals(&self) -> usize {
        self.signals.len()
    }

    pub fn n_samples(&self) -> usize {
        self.signals[0].len()
    }

    pub fn n_epochs(&self) -> usize {
        self.labels.len()
    }

    pub fn signals(&self) -> &[Vec<f64>] {
        &self.signals
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn samples_per_epoch(&self) -> usize {
        EPOCH_SECONDS * self.fs
    }

    /// Writes `header.txt` and `signals.f64` into `dir` (created if missing).
    pub fn write_dir(&self, dir: &Path) -> Result<(), SignalError> {
        fs::create_dir_all(dir)?;
        let labels: Vec<String> = self.labels.iter().map(|l| l.to_string()).collect();
        let header = format!(
            "id={}\nfs={}\nn={}\nepochs={}\nlabels={}\n",
            self.id,
            self.fs,
            self.n_signals(),
            self.n_epochs(),
            labels.join(",")
        );
        fs::write(dir.join(HEADER_FILE), header)?;
        let mut bytes = Vec::with_capacity(self.n_signals() * self.n_samples() * 8);
        for v in self.signals.iter().flatten() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(dir.join(SIGNALS_FILE))?;
        f.write_all(&bytes)?;
        Ok(())
    }

    /// Reads a recording directory written by [`Recording::write_dir`].
    pub fn read_dir(dir: &Path) -> Result<Self, SignalError> {
        let header = fs::read_to_string(dir.join(HEADER_FILE))?;
        let bad = |msg: String| SignalError::InvalidRecording(format!("{}: {msg}", dir.display()));
        let mut id = None;
        let mut fs_hz = None;
        let mut n = None;
        let mut epochs = None;
        let mut labels = None;
        for line in header.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed header line {line:?}")))?;
            let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| bad(format!("{key}: {e}")));
            match key.trim() {
                "id" => id = Some(value.trim().to_string()),
                "fs" => fs_hz = Some(parse(value)?),
                "n" => n = Some(parse(value)?),
                "epochs" => epochs = Some(parse(value)?),
                "labels" => {
                    labels = Some(
                        value
                            .split(',')
                            .filter(|s| !s.trim().is_empty())
                            .map(parse)
                            .collect::<Result<Vec<_>, _>>()?,
                    )
                }
                other => return Err(bad(format!("unknown header key {other:?}"))),
            }
        }
        let missing = |k: &str| bad(format!("header is missing {k}"));
        let id = id.ok_or_else(|| missing("id"))?;
        let fs_hz = fs_hz.ok_or_else(|| missing("fs"))?;
        let n = n.ok_or_else(|| missing("n"))?;
        let epochs = epochs.ok_or_else(|| missing("epochs"))?;
        let labels = labels.ok_or_else(|| missing("labels"))?;
        if labels.len() != epochs {
            return Err(bad(format!("{} labels for {epochs} epochs", labels.len())));
        }
        let bytes = fs::read(dir.join(SIGNALS_FILE))?;
        let t = EPOCH_SECONDS * fs_hz * epochs;
        if bytes.len() != n * t * 8 {
            return Err(bad(format!("signals.f64 has {} bytes, expected {}", bytes.len(), n * t * 8)));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let signals = values.chunks(t.max(1)).map(<[f64]>::to_vec).collect();
        Recording::new(id, fs_hz, signals, labels)
    }

    /// Reads a CSV file with one column per signal and one row per sample.
    /// A first row that does not parse as numbers is treated as a header.
    pub fn from_csv(
        id: impl Into<String>,
        fs: usize,
        path: &Path,
        labels: Vec<usize>,
    ) -> Result<Self, SignalError> {
        let text = fs::read_to_string(path)?;
        let mut columns: Vec<Vec<f64>> = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parsed: Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
            let row = match parsed {
                Ok(row) => row,
                Err(_) if i == 0 => continue,
                Err(e) => {
                    return Err(SignalError::InvalidRecording(format!(
                        "{}:{}: {e}",
                        path.display(),
                        i + 1
                    )))
                }
            };
            if columns.is_empty() {
                columns = vec![Vec::new(); row.len()];
            }
            if row.len() != columns.len() {
                return Err(SignalError::InvalidRecording(format!(
                    "{}:{}: expected {} columns",
                    path.display(),
                    i + 1,
                    columns.len()
                )));
            }
            for (col, v) in columns.iter_mut().zip(row) {
                col.push(v);
            }
        }
        Recording::new(id, fs, columns, labels)
    }
}
