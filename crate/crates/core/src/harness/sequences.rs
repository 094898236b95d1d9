use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{HarnessError, TokenSet};

/// Which central epochs of a recording become targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Targets {
    /// Every epoch with `ℓ` neighbours on both sides.
    Context,
    /// Additionally drop the first and last `clip` epochs.
    Clipped(usize),
}

/// One sequence-to-label example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SequenceItem {
    /// Position of the recording in the caller's list.
    pub recording: usize,
    pub center: usize,
    pub label: usize,
}

/// Central-epoch indices for a recording of `epochs` epochs.
pub fn target_range(epochs: usize, ell: usize, targets: Targets) -> Range<usize> {
    let margin = match targets {
        Targets::Context => ell,
        Targets::Clipped(clip) => clip.max(ell),
    };
    margin..epochs.saturating_sub(margin).max(margin)
}

pub fn build_sequences(
    set: &TokenSet,
    recording: usize,
    ell: usize,
    targets: Targets,
) -> Result<Vec<SequenceItem>, HarnessError> {
    let needed = 2 * ell + 1;
    if set.n_epochs() < needed {
        return Err(HarnessError::RecordingTooShort {
            id: set.id().to_string(),
            epochs: set.n_epochs(),
            needed,
        });
    }
    Ok(target_range(set.n_epochs(), ell, targets)
        .map(|center| SequenceItem {
            recording,
            center,
            label: set.labels()[center],
        })
        .collect())
}

/// Duplicates items of minority classes until every class matches the
/// largest one, then shuffles. Duplicates cycle through a seeded permutation
/// of each class, so no item is repeated twice before all are repeated once.
pub fn oversample<T: Clone>(
    items: &[T],
    label: impl Fn(&T) -> usize,
    classes: usize,
    seed: u64,
) -> Result<Vec<T>, HarnessError> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, item) in items.iter().enumerate() {
        let l = label(item);
        if l >= classes {
            return Err(HarnessError::LabelOutOfRange { label: l, classes });
        }
        by_class[l].push(i);
    }
    if let Some(c) = by_class.iter().position(|v| v.is_empty()) {
        return Err(HarnessError::MissingClass(c));
    }
    let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(target * classes);
    for members in &by_class {
        out.extend(members.iter().map(|&i| items[i].clone()));
        let mut order = members.clone();
        order.shuffle(&mut rng);
        out.extend(order.iter().cycle().take(target - members.len()).map(|&i| items[i].clone()));
    }
    out.shuffle(&mut rng);
    Ok(out)
}
