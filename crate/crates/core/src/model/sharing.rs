use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::CViTModel;
use crate::tensor::Scalar;

/// Which successive blocks ended up sharing FFN weights.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingReport {
    /// `(owner, follower)` block paths; the follower uses the owner's FFNs.
    pub pairs: Vec<(String, String)>,
    /// Neighbouring blocks that could not be paired, with the reason.
    pub skipped: Vec<(String, String, String)>,
    /// Blocks left with their own weights.
    pub unshared: Vec<String>,
}

/// Tie the pre- and post-attention FFNs of successive compatible blocks.
pub fn apply_weight_sharing<T: Scalar>(mut model: CViTModel<T>) -> CViTModel<T> {
    let report = share_pairs(&mut model);
    model.config.weight_sharing = true;
    model.sharing = Some(report);
    model
}

/// Walk the blocks in order and pair each with its successor when both FFNs
/// have identical shapes. A block that cannot pair forward stays unshared.
pub(super) fn share_pairs<T: Scalar>(model: &mut CViTModel<T>) -> SharingReport {
    let order: Vec<(usize, usize)> = model
        .stages
        .iter()
        .enumerate()
        .flat_map(|(s, blocks)| (0..blocks.len()).map(move |b| (s, b)))
        .collect();
    let name = |(s, b): (usize, usize)| format!("stages.{s}.{b}");
    let mut report = SharingReport::default();
    let mut i = 0;
    while i < order.len() {
        let Some(&next) = order.get(i + 1) else {
            report.unshared.push(name(order[i]));
            break;
        };
        let cur = order[i];
        let (a, b) = (&model.stages[cur.0][cur.1], &model.stages[next.0][next.1]);
        let reason = if a.dim() != b.dim() {
            Some(format!("width {} vs {}", a.dim(), b.dim()))
        } else if a.ffn0.config != b.ffn0.config || a.ffn1.config != b.ffn1.config {
            Some("different ffn shapes".to_string())
        } else {
            None
        };
        match reason {
            Some(r) => {
                report.skipped.push((name(cur), name(next), r));
                report.unshared.push(name(cur));
                i += 1;
            }
            None => {
                let (pre, post) = (Arc::clone(&a.ffn0), Arc::clone(&a.ffn1));
                let follower = &mut model.stages[next.0][next.1];
                follower.ffn0 = pre;
                follower.ffn1 = post;
                report.pairs.push((name(cur), name(next)));
                i += 2;
            }
        }
    }
    report
}
