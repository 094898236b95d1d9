use std::collections::HashSet;

use crate::autodiff::{Marker, NodeInfo, OpKind, Scope, Tape};
use crate::tokenization::is_triangular;

/// Outcome of [`structure_audit`].
#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    /// Nodes that carry tokens inside the audited region.
    pub token_nodes: usize,
    /// Human-readable description of every offending node.
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.token_nodes > 0
    }
}

/// Enumerates the recorded operations between the token inputs and the
/// flatten marker and checks that every token-valued node is produced by an
/// operation that keeps tokens inside the span of symmetric-matrix tokens:
/// convex or learned-scalar combinations of tokens, triangular linear maps,
/// elementwise ReLU or dropout, layer normalization, or sequence regrouping.
///
/// A node carries tokens when it depends on a token input outside of the
/// attention-weight scope; attention coefficients themselves are not tokens.
pub fn structure_audit(tape: &Tape) -> AuditReport {
    let nodes = tape.node_info();
    let mut tokens: HashSet<usize> = HashSet::new();
    let mut end = nodes.len();
    for (pos, marker) in tape.markers() {
        match marker {
            Marker::TokensIn(v) => {
                tokens.insert(v.index());
            }
            Marker::Flatten => end = end.min(*pos),
        }
    }
    let start = tokens.iter().min().copied().unwrap_or(end);
    let mut violations = Vec::new();
    let mut count = tokens.len();
    for node in &nodes[start..end] {
        if tokens.contains(&node.var.index()) || node.scope == Some(Scope::AttentionWeights) {
            continue;
        }
        if !node.inputs.iter().any(|i| tokens.contains(&i.index())) {
            continue;
        }
        tokens.insert(node.var.index());
        count += 1;
        if let Err(why) = check(node, &nodes, &tokens) {
            violations.push(format!("node {} ({:?}, shape {:?}): {why}", node.var.index(), node.kind, node.shape));
        }
    }
    AuditReport {
        token_nodes: count,
        violations,
    }
}

fn check(node: &NodeInfo, nodes: &[NodeInfo], tokens: &HashSet<usize>) -> Result<(), String> {
    let is_token = |i: usize| tokens.contains(&node.inputs[i].index());
    let input = |i: usize| &nodes[node.inputs[i].index()];
    match node.kind {
        OpKind::MatMul => match (is_token(0), is_token(1)) {
            (false, true) if input(0).scope == Some(Scope::AttentionWeights) => Ok(()),
            (false, true) => Err("left factor is not an attention-weight matrix".into()),
            (true, false) => {
                let w = &input(1).shape;
                if w.len() == 2 && is_triangular(w[0]) && is_triangular(w[1]) {
                    Ok(())
                } else {
                    Err(format!("token map {w:?} is not between triangular lengths"))
                }
            }
            _ => Err("product of two token tensors".into()),
        },
        OpKind::Add | OpKind::Sub | OpKind::Scale | OpKind::AddBias => Ok(()),
        OpKind::MulScalarVar if !is_token(1) => Ok(()),
        OpKind::Relu | OpKind::Dropout | OpKind::ConcatRows | OpKind::SliceRows => Ok(()),
        OpKind::LayerNorm if is_token(0) && !is_token(1) && !is_token(2) => Ok(()),
        OpKind::MeanAxis => {
            if node.shape.last() == input(0).shape.last() && input(0).shape.len() > 1 {
                Ok(())
            } else {
                Err("mean over the token coordinates".into())
            }
        }
        OpKind::Reshape => {
            if node.shape.last() == input(0).shape.last() {
                Ok(())
            } else {
                Err("reshape changes the token length".into())
            }
        }
        other => Err(format!("{other:?} is not structure-preserving")),
    }
}
