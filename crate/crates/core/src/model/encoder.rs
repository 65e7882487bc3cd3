//! Set encoder: a small bidirectional self-attention stack over member
//! embeddings.
//!
//! The group is treated like a sentence of member tokens with a learned
//! summary token prepended; after L pre-norm transformer layers the summary
//! position's vector is the group's encoded preference. Two deliberate
//! choices make the module testable: no positional embeddings, so member
//! order cannot matter, and pre-norm residuals, so zeroing every projection
//! collapses the encoder to an exact identity on the summary token.

use super::LAYER_NORM_EPS;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Leaf handles for one encoder layer.
#[derive(Clone, Copy)]
pub struct LayerVars {
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
    /// First feed-forward matrix, [d_ff, d].
    pub ff_w1: Var,
    pub ff_b1: Var,
    /// Second feed-forward matrix, [d, d_ff].
    pub ff_w2: Var,
    pub ff_b2: Var,
}

/// Runs the encoder over `[m, d]` member rows and returns the summary
/// position's final `[d]` vector.
///
/// `mask[j]` marks member row `j` as real; masked rows are excluded from
/// every attention sum (they may carry arbitrary values). The summary token
/// itself is always unmasked. Masked rows still flow through the row-local
/// ops, which is harmless: nothing they produce can reach the summary row.
pub fn encode_group(
    tape: &mut Tape,
    members_mat: Var,
    mask: &[bool],
    summary_token: Var,
    layers: &[LayerVars],
    heads: usize,
) -> Result<Var> {
    let d = tape.value(members_mat).cols();
    let m = tape.value(members_mat).rows();
    if mask.len() != m {
        return Err(Error::Invalid(format!(
            "mask length {} does not match {} member rows",
            mask.len(),
            m
        )));
    }
    if !mask.iter().any(|&x| x) {
        return Err(Error::Invalid("all member positions are masked".into()));
    }
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "{} heads do not divide width {}",
            heads, d
        )));
    }
    let head_dim = d / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let mut full_mask = Vec::with_capacity(m + 1);
    full_mask.push(true); // summary position
    full_mask.extend_from_slice(mask);

    let mut x = tape.concat_rows(&[summary_token, members_mat])?; // [m+1, d]
    for layer in layers {
        // Self-attention sublayer (pre-norm).
        let normed = tape.layer_norm(x, layer.ln1_gain, layer.ln1_bias, LAYER_NORM_EPS)?;
        let q = tape.matmul(normed, layer.wq)?;
        let k = tape.matmul(normed, layer.wk)?;
        let v = tape.matmul(normed, layer.wv)?;
        let mut contexts = Vec::with_capacity(heads);
        for h in 0..heads {
            let (from, to) = (h * head_dim, (h + 1) * head_dim);
            let qh = tape.slice_cols(q, from, to)?;
            let kh = tape.slice_cols(k, from, to)?;
            let vh = tape.slice_cols(v, from, to)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scaled = tape.scale(scores, scale);
            let attn = tape.masked_softmax_rows(scaled, &full_mask)?;
            contexts.push(tape.matmul(attn, vh)?);
        }
        let ctx = if heads == 1 {
            contexts[0]
        } else {
            tape.concat_cols(&contexts)?
        };
        let projected = tape.matmul(ctx, layer.wo)?;
        x = tape.add(x, projected)?;

        // Feed-forward sublayer (pre-norm).
        let normed = tape.layer_norm(x, layer.ln2_gain, layer.ln2_bias, LAYER_NORM_EPS)?;
        let w1t = tape.transpose(layer.ff_w1)?;
        let pre = tape.matmul(normed, w1t)?;
        let pre = tape.add_bias(pre, layer.ff_b1)?;
        let act = tape.relu(pre);
        let w2t = tape.transpose(layer.ff_w2)?;
        let post = tape.matmul(act, w2t)?;
        let post = tape.add_bias(post, layer.ff_b2)?;
        x = tape.add(x, post)?;
    }
    tape.row(x, 0)
}
