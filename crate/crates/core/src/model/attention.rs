use crate::autodiff::{Scope, Tape, Var};

use super::ModelError;

/// Attention parameters of one encoder layer, as tape variables.
#[derive(Debug, Clone)]
pub struct AttentionVars {
    pub wq: Vec<Var>,
    pub wk: Vec<Var>,
    /// Classic attention only.
    pub wv: Vec<Var>,
    /// Classic attention only.
    pub wo: Option<Var>,
    /// Learnable head logits (SP attention with learned combination).
    pub head_logits: Option<Var>,
}

/// Row-stochastic attention map of every head, computed under
/// [`Scope::AttentionWeights`].
pub fn attention_maps(tape: &mut Tape, x: Var, p: &AttentionVars) -> Result<Vec<Var>, ModelError> {
    let head_dim = tape.value(p.wq[0]).shape()[1];
    let scale = 1.0 / (head_dim as f64).sqrt();
    tape.scoped(Scope::AttentionWeights, |t| {
        p.wq.iter()
            .zip(&p.wk)
            .map(|(&wq, &wk)| {
                let q = t.matmul(x, wq)?;
                let k = t.matmul(x, wk)?;
                let kt = t.transpose(k)?;
                let scores = t.matmul(q, kt)?;
                let scaled = t.scale(scores, scale);
                Ok(t.softmax_rows(scaled))
            })
            .collect()
    })
}

/// Structure-preserving multihead attention on tokens `x` (`s × d`).
///
/// The head maps are averaged (or combined with softmax-normalized learned
/// weights) into one row-stochastic matrix that multiplies the unprojected
/// tokens, so each output token is a convex combination of input tokens.
pub fn sp_mha(tape: &mut Tape, x: Var, p: &AttentionVars) -> Result<(Var, Vec<Var>), ModelError> {
    let maps = attention_maps(tape, x, p)?;
    let combined = tape.scoped(Scope::AttentionWeights, |t| -> Result<Var, ModelError> {
        let weighted: Vec<Var> = match p.head_logits {
            None => maps.iter().map(|&a| t.scale(a, 1.0 / maps.len() as f64)).collect(),
            Some(logits) => {
                let w = t.softmax_rows(logits);
                maps.iter()
                    .enumerate()
                    .map(|(i, &a)| t.mul_scalar_var(a, w, i))
                    .collect::<Result<_, _>>()?
            }
        };
        let mut acc = weighted[0];
        for &w in &weighted[1..] {
            acc = t.add(acc, w)?;
        }
        Ok(acc)
    })?;
    Ok((tape.matmul(combined, x)?, maps))
}

/// Standard multihead attention: per-head value projections, concatenation
/// of the head outputs and a final output projection.
pub fn classic_mha(tape: &mut Tape, x: Var, p: &AttentionVars) -> Result<(Var, Vec<Var>), ModelError> {
    let maps = attention_maps(tape, x, p)?;
    let wo = p
        .wo
        .ok_or_else(|| ModelError::Config("classic attention needs an output projection".into()))?;
    let heads = maps
        .iter()
        .zip(&p.wv)
        .map(|(&a, &wv)| {
            let v = tape.matmul(x, wv)?;
            tape.matmul(a, v)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let cat = tape.concat_cols(&heads)?;
    Ok((tape.matmul(cat, wo)?, maps))
}
