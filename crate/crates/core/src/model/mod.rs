//! Structure-preserving transformer over sequences of epoch token grids.
//!
//! Per item: `L` epochs of `C·S` tokens each are mapped from `d(m)` to `d(p)`
//! by a shared linear map, encoded per epoch, pooled into `t` feature tokens,
//! encoded jointly across the sequence, and the central epoch's feature tokens
//! are classified by a Linear+ head.

mod attention;
mod audit;
mod config;

pub use attention::{attention_maps, classic_mha, sp_mha, AttentionVars};
pub use audit::{structure_audit, AuditReport};
pub use config::{nearest_triangular, HeadCombination, MhaKind, ModelConfig};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    load_checkpoint, save_checkpoint, AutodiffError, Checkpoint, Marker, ParamSet, Tape, Tensor, Var,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("t = {t} does not divide the {tokens} tokens of an epoch")]
    TDoesNotDivide { t: usize, tokens: usize },
    #[error("sequence of {len} tokens exceeds the positional table ({max})")]
    SequenceTooLong { len: usize, max: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone)]
struct LayerSlots {
    wq: Vec<usize>,
    wk: Vec<usize>,
    wv: Vec<usize>,
    wo: Option<usize>,
    head_logits: Option<usize>,
    ln1: [usize; 2],
    ff1: [usize; 2],
    ff2: [usize; 2],
    ln2: [usize; 2],
}

#[derive(Debug, Clone)]
struct Layout {
    map: [usize; 2],
    pos_intra: usize,
    pos_inter: Option<usize>,
    intra: Vec<LayerSlots>,
    inter: Vec<LayerSlots>,
    head: [[usize; 2]; 3],
}

/// Layer parameters bound to a tape.
#[derive(Debug, Clone)]
pub struct LayerVars {
    pub attention: AttentionVars,
    pub ln1: [Var; 2],
    pub ff1: [Var; 2],
    pub ff2: [Var; 2],
    pub ln2: [Var; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelConfig,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Parameters and configuration of the network.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    params: ParamSet,
    layout: Layout,
}

struct Init<'a> {
    rng: ChaCha8Rng,
    params: &'a mut ParamSet,
}

impl Init<'_> {
    fn normal(&mut self, name: String, shape: &[usize], std: f64) -> usize {
        let n = shape.iter().product();
        let data = (0..n).map(|_| std * self.rng.sample::<f64, _>(StandardNormal)).collect();
        self.params.push(name, Tensor::new(shape.to_vec(), data).expect("shape and data agree"))
    }

    fn constant(&mut self, name: String, shape: &[usize], v: f64) -> usize {
        self.params.push(name, Tensor::full(shape, v))
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> [usize; 2] {
        [
            self.normal(format!("{name}.weight"), &[fan_in, fan_out], (1.0 / fan_in as f64).sqrt()),
            self.constant(format!("{name}.bias"), &[fan_out], 0.0),
        ]
    }

    fn layer(&mut self, prefix: &str, cfg: &ModelConfig) -> LayerSlots {
        let d = cfg.token_dim();
        let dh = cfg.head_dim();
        let std = (1.0 / d as f64).sqrt();
        let per_head = |this: &mut Self, what: &str| -> Vec<usize> {
            (0..cfg.heads)
                .map(|i| this.normal(format!("{prefix}.attn.{what}.{i}"), &[d, dh], std))
                .collect()
        };
        let wq = per_head(self, "wq");
        let wk = per_head(self, "wk");
        let (wv, wo, head_logits) = match cfg.mha_kind {
            MhaKind::Classic => {
                let wv = per_head(self, "wv");
                let wo = self.normal(format!("{prefix}.attn.wo"), &[d, d], std);
                (wv, Some(wo), None)
            }
            MhaKind::Sp => {
                let logits = (cfg.head_combination == HeadCombination::Learned)
                    .then(|| self.constant(format!("{prefix}.attn.head_logits"), &[1, cfg.heads], 0.0));
                (Vec::new(), None, logits)
            }
        };
        let ln1 = [
            self.constant(format!("{prefix}.ln1.gain"), &[d], 1.0),
            self.constant(format!("{prefix}.ln1.offset"), &[d], 0.0),
        ];
        let ff1 = self.linear(&format!("{prefix}.ff1"), d, cfg.ff_dim);
        let ff2 = self.linear(&format!("{prefix}.ff2"), cfg.ff_dim, d);
        let ln2 = [
            self.constant(format!("{prefix}.ln2.gain"), &[d], 1.0),
            self.constant(format!("{prefix}.ln2.offset"), &[d], 0.0),
        ];
        LayerSlots {
            wq,
            wk,
            wv,
            wo,
            head_logits,
            ln1,
            ff1,
            ff2,
            ln2,
        }
    }
}

fn linear(tape: &mut Tape, x: Var, wb: [Var; 2]) -> Result<Var, ModelError> {
    let y = tape.matmul(x, wb[0])?;
    Ok(tape.add_bias(y, wb[1])?)
}

impl Model {
    /// Freshly initialized model; weights are drawn from a seeded generator.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: &mut params,
        };
        let d = cfg.token_dim();
        let map = init.linear("input_map", cfg.input_token_dim(), d);
        let pos_intra = init.normal("pos_intra".into(), &[cfg.epoch_tokens, d], 0.02);
        let pos_inter = cfg
            .inter_positional
            .then(|| init.normal("pos_inter".into(), &[cfg.seq_len * cfg.feature_tokens, d], 0.02));
        let intra = (0..cfg.n_layers_intra).map(|i| init.layer(&format!("intra.{i}"), &cfg)).collect();
        let inter = (0..cfg.n_layers_inter).map(|i| init.layer(&format!("inter.{i}"), &cfg)).collect();
        let [h1, h2] = cfg.head_sizes();
        let head = [
            init.linear("head.lin1", cfg.feature_tokens * d, h1),
            init.linear("head.lin2", h1, h2),
            init.linear("head.out", h2, cfg.classes),
        ];
        let layout = Layout {
            map,
            pos_intra,
            pos_inter,
            intra,
            inter,
            head,
        };
        Ok(Model { cfg, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Replaces all parameter values, checking names and shapes.
    pub fn load_params(&mut self, params: &ParamSet) -> Result<(), ModelError> {
        if params.names() != self.params.names() {
            return Err(ModelError::ShapeMismatch("parameter names differ from the model layout".into()));
        }
        for (i, t) in params.tensors().iter().enumerate() {
            if t.shape() != self.params.get(i).shape() {
                return Err(ModelError::ShapeMismatch(format!(
                    "{}: {:?} vs {:?}",
                    params.name(i),
                    t.shape(),
                    self.params.get(i).shape()
                )));
            }
        }
        self.params = params.clone();
        Ok(())
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<(), ModelError> {
        let meta = CheckpointMeta {
            model: self.cfg.clone(),
            extra,
        };
        let metadata = serde_json::to_string(&meta).map_err(|e| ModelError::Config(e.to_string()))?;
        save_checkpoint(
            path,
            &Checkpoint {
                metadata,
                params: self.params.clone(),
            },
        )?;
        Ok(())
    }

    /// Loads a model saved by [`Model::save`], returning it with the extra metadata.
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value), ModelError> {
        let ck = load_checkpoint(path)?;
        let meta: CheckpointMeta =
            serde_json::from_str(&ck.metadata).map_err(|e| ModelError::Config(format!("checkpoint metadata: {e}")))?;
        let mut model = Model::new(meta.model, 0)?;
        model.load_params(&ck.params)?;
        Ok((model, meta.extra))
    }

    /// Number of attention parameters in one encoder layer.
    pub fn attention_param_count(cfg: &ModelConfig) -> usize {
        let d = cfg.token_dim();
        let dh = cfg.head_dim();
        let qk = 2 * cfg.heads * d * dh;
        match cfg.mha_kind {
            MhaKind::Sp => qk + if cfg.head_combination == HeadCombination::Learned { cfg.heads } else { 0 },
            MhaKind::Classic => qk + cfg.heads * d * dh + d * d,
        }
    }

    fn layer_vars(slots: &LayerSlots, v: &[Var]) -> LayerVars {
        let pick = |s: &[usize]| s.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let pair = |s: [usize; 2]| [v[s[0]], v[s[1]]];
        LayerVars {
            attention: AttentionVars {
                wq: pick(&slots.wq),
                wk: pick(&slots.wk),
                wv: pick(&slots.wv),
                wo: slots.wo.map(|i| v[i]),
                head_logits: slots.head_logits.map(|i| v[i]),
            },
            ln1: pair(slots.ln1),
            ff1: pair(slots.ff1),
            ff2: pair(slots.ff2),
            ln2: pair(slots.ln2),
        }
    }

    /// Adds the leading rows of a positional table to `x`.
    pub fn positional_encoding(tape: &mut Tape, x: Var, table: Var) -> Result<Var, ModelError> {
        let rows = tape.value(x).shape()[0];
        let max = tape.value(table).shape()[0];
        if rows > max {
            return Err(ModelError::SequenceTooLong { len: rows, max });
        }
        let pos = if rows == max { table } else { tape.slice_rows(table, 0, rows)? };
        Ok(tape.add(x, pos)?)
    }

    /// Post-norm encoder layer. Returns the output and the attention maps.
    pub fn encoder_layer(&self, tape: &mut Tape, x: Var, layer: &LayerVars) -> Result<(Var, Vec<Var>), ModelError> {
        let (att, maps) = match self.cfg.mha_kind {
            MhaKind::Sp => sp_mha(tape, x, &layer.attention)?,
            MhaKind::Classic => classic_mha(tape, x, &layer.attention)?,
        };
        let r1 = tape.add(x, att)?;
        let x1 = tape.layer_norm(r1, layer.ln1[0], layer.ln1[1])?;
        let h = linear(tape, x1, layer.ff1)?;
        let h = tape.relu(h);
        let h = tape.dropout(h, self.cfg.dropout)?;
        let f = linear(tape, h, layer.ff2)?;
        let r2 = tape.add(x1, f)?;
        Ok((tape.layer_norm(r2, layer.ln2[0], layer.ln2[1])?, maps))
    }

    /// Maps raw `d(m)` tokens of one epoch onto `d(p)`.
    pub fn input_map(&self, tape: &mut Tape, v: &[Var], tokens: Var) -> Result<Var, ModelError> {
        linear(tape, tokens, [v[self.layout.map[0]], v[self.layout.map[1]]])
    }

    /// Epoch encoder: `C·S × d(p)` tokens to `t × d(p)` feature tokens.
    pub fn intra_epoch(&self, tape: &mut Tape, v: &[Var], tokens: Var) -> Result<Var, ModelError> {
        let (rows, d) = tape
            .value(tokens)
            .dims2()
            .ok_or_else(|| ModelError::ShapeMismatch("intra-epoch input must be 2-D".into()))?;
        let t = self.cfg.feature_tokens;
        if rows % t != 0 {
            return Err(ModelError::TDoesNotDivide { t, tokens: rows });
        }
        let mut x = Self::positional_encoding(tape, tokens, v[self.layout.pos_intra])?;
        for slots in &self.layout.intra {
            x = self.encoder_layer(tape, x, &Self::layer_vars(slots, v))?.0;
        }
        let chunks = tape.reshape(x, &[t, rows / t, d])?;
        Ok(tape.mean_axis(chunks, 1)?)
    }

    /// Sequence encoder over `(L·t) × d(p)` feature tokens; returns the `t`
    /// tokens of the central epoch.
    pub fn inter_epoch(&self, tape: &mut Tape, v: &[Var], features: Var) -> Result<Var, ModelError> {
        let t = self.cfg.feature_tokens;
        let rows = tape.value(features).shape()[0];
        if rows != self.cfg.seq_len * t {
            return Err(ModelError::ShapeMismatch(format!(
                "inter-epoch input has {rows} tokens, expected {}",
                self.cfg.seq_len * t
            )));
        }
        let mut x = match self.layout.pos_inter {
            Some(p) => Self::positional_encoding(tape, features, v[p])?,
            None => features,
        };
        for slots in &self.layout.inter {
            x = self.encoder_layer(tape, x, &Self::layer_vars(slots, v))?.0;
        }
        if rows == t {
            return Ok(x);
        }
        Ok(tape.slice_rows(x, self.cfg.ell() * t, t)?)
    }

    /// Linear+ head: `t × d(p)` central tokens to class logits.
    pub fn classify(&self, tape: &mut Tape, v: &[Var], features: Var) -> Result<Var, ModelError> {
        tape.mark(Marker::Flatten);
        let len = tape.value(features).len();
        let mut x = tape.reshape(features, &[1, len])?;
        for wb in &self.layout.head[..2] {
            x = linear(tape, x, [v[wb[0]], v[wb[1]]])?;
            x = tape.relu(x);
            x = tape.dropout(x, self.cfg.dropout)?;
        }
        let out = self.layout.head[2];
        let logits = linear(tape, x, [v[out[0]], v[out[1]]])?;
        Ok(tape.reshape(logits, &[self.cfg.classes])?)
    }

    /// Logits for one sequence of `L` epochs, each given as `C·S` raw tokens
    /// of length `d(m)`, flattened row-major.
    pub fn forward(&self, tape: &mut Tape, v: &[Var], epochs: &[&[f64]]) -> Result<Var, ModelError> {
        let cfg = &self.cfg;
        if epochs.len() != cfg.seq_len {
            return Err(ModelError::ShapeMismatch(format!("{} epochs, expected L = {}", epochs.len(), cfg.seq_len)));
        }
        let dm = cfg.input_token_dim();
        let mut feats = Vec::with_capacity(epochs.len());
        for e in epochs {
            if e.len() != cfg.epoch_tokens * dm {
                return Err(ModelError::ShapeMismatch(format!(
                    "epoch of {} values, expected {} tokens × {dm}",
                    e.len(),
                    cfg.epoch_tokens
                )));
            }
            let raw = tape.constant(Tensor::matrix(cfg.epoch_tokens, dm, e.to_vec())?);
            tape.mark(Marker::TokensIn(raw));
            let mapped = self.input_map(tape, v, raw)?;
            feats.push(self.intra_epoch(tape, v, mapped)?);
        }
        let seq = if feats.len() == 1 { feats[0] } else { tape.concat_rows(&feats)? };
        let central = self.inter_epoch(tape, v, seq)?;
        self.classify(tape, v, central)
    }

    /// Label-smoothed cross-entropy of one item.
    pub fn loss(&self, tape: &mut Tape, v: &[Var], epochs: &[&[f64]], label: usize) -> Result<Var, ModelError> {
        let logits = self.forward(tape, v, epochs)?;
        Ok(tape.cross_entropy(logits, label, self.cfg.label_smoothing)?)
    }

    /// Evaluation-mode logits.
    pub fn predict_logits(&self, epochs: &[&[f64]]) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new(false, 0);
        let v = self.params.bind(&mut tape);
        let logits = self.forward(&mut tape, &v, epochs)?;
        Ok(tape.value(logits).data().to_vec())
    }

    /// Loss and parameter gradients of one item. Dropout masks derive from `seed`.
    pub fn loss_and_grads(
        &self,
        epochs: &[&[f64]],
        label: usize,
        train: bool,
        seed: u64,
    ) -> Result<(f64, Vec<Tensor>), ModelError> {
        let mut tape = Tape::new(train, seed);
        let v = self.params.bind(&mut tape);
        let loss = self.loss(&mut tape, &v, epochs, label)?;
        let value = tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        let mut out = self.params.zeros_like();
        grads.accumulate_params(&mut out);
        Ok((value, out))
    }
}
