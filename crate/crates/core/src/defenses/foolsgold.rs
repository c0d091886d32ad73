//! FoolsGold: down-weights clients whose accumulated output-layer updates are
//! too similar to another client's.

use std::collections::BTreeMap;
use std::ops::Range;

use super::cluster::cosine_similarity;
use super::{Defense, DefenseContext, DefenseVerdict, Diagnostics, Submission};
use crate::Result;

/// Cumulative output-layer update per client id.
#[derive(Debug, Clone, Default)]
pub struct FoolsGoldState {
    history: BTreeMap<usize, Vec<f64>>,
}

impl FoolsGoldState {
    pub fn history(&self, client: usize) -> Option<&[f64]> {
        self.history.get(&client).map(Vec::as_slice)
    }

    pub fn client_count(&self) -> usize {
        self.history.len()
    }
}

/// Adds this round's `block` slice of each update to the history, then weights
/// each submitter by `1 - max_j cos(h_i, h_j)` over the other submitters,
/// clamped to `[0, 1]`. Zero-weight submissions are rejected.
pub fn foolsgold(subs: &[Submission<'_>], state: &mut FoolsGoldState, block: Range<usize>) -> DefenseVerdict {
    for s in subs {
        let part = &s.update.as_slice()[block.clone()];
        let h = state
            .history
            .entry(s.client_id)
            .or_insert_with(|| vec![0.0; part.len()]);
        for (a, b) in h.iter_mut().zip(part) {
            *a += b;
        }
    }
    let hs: Vec<&[f64]> = subs.iter().map(|s| state.history[&s.client_id].as_slice()).collect();
    let weights: Vec<f64> = (0..subs.len())
        .map(|i| {
            let max_cs = (0..subs.len())
                .filter(|&j| j != i)
                .map(|j| cosine_similarity(hs[i], hs[j]))
                .fold(f64::NEG_INFINITY, f64::max);
            if max_cs.is_finite() {
                (1.0 - max_cs).clamp(0.0, 1.0)
            } else {
                1.0
            }
        })
        .collect();
    let keep: Vec<bool> = weights.iter().map(|&w| w > 0.0).collect();
    let mut v = DefenseVerdict::select(subs, &keep);
    v.weights = weights.iter().copied().filter(|&w| w > 0.0).collect();
    v.diagnostics = Diagnostics {
        weights: Some(weights),
        ..Diagnostics::default()
    };
    v
}

#[derive(Debug, Clone, Default)]
pub struct FoolsGold {
    pub state: FoolsGoldState,
}

impl Defense for FoolsGold {
    fn name(&self) -> &'static str {
        "foolsgold"
    }

    fn apply(&mut self, ctx: &DefenseContext<'_>, subs: &[Submission<'_>]) -> Result<DefenseVerdict> {
        let block = ctx.global.layout().output().weights.clone();
        Ok(foolsgold(subs, &mut self.state, block))
    }
}
