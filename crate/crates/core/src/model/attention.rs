//! Member attention: which group member speaks for the group on an item.
//!
//! Each (item, member) pair gets a logit from a one-hidden-layer scorer,
//! `aᵀ·ReLU(H_v·v + H_u·u + b)`, and a softmax over the group turns the
//! logits into weights. Because the logit depends on the item, the weights
//! can concentrate on different members for different items — the signal
//! this module exists to surface. One parameter set is shared across all
//! groups and items.

use crate::error::Result;
use crate::tensor::{Tape, Var};

/// Scalar attention logit for one (item, member) pair.
pub fn attention_logit(
    tape: &mut Tape,
    item_vec: Var,
    member_vec: Var,
    h_v: Var,
    h_u: Var,
    b: Var,
    a: Var,
) -> Result<Var> {
    let vi = tape.matvec(h_v, item_vec)?;
    let vu = tape.matvec(h_u, member_vec)?;
    let pre = tape.add(vi, vu)?;
    let pre = tape.add(pre, b)?;
    let hidden = tape.relu(pre);
    tape.dot(a, hidden)
}

/// Softmax attention weights over the members of one group for one item.
///
/// `members_mat` is [m, d]; positions with `mask[j] == false` get weight
/// exactly zero (used when short groups are padded into a fixed-size
/// batch). Computes all member logits in one matrix pass.
#[allow(clippy::too_many_arguments)]
pub fn attention_weights(
    tape: &mut Tape,
    members_mat: Var,
    item_vec: Var,
    h_v: Var,
    h_u: Var,
    b: Var,
    a: Var,
    mask: &[bool],
) -> Result<Var> {
    let vi = tape.matvec(h_v, item_vec)?; // [d_att]
    let shift = tape.add(vi, b)?; // item contribution + bias, broadcast below
    let hu_t = tape.transpose(h_u)?; // [d, d_att]
    let proj = tape.matmul(members_mat, hu_t)?; // [m, d_att]
    let pre = tape.add_bias(proj, shift)?;
    let hidden = tape.relu(pre);
    let logits = tape.matvec(hidden, a)?; // [m]
    tape.masked_softmax(logits, mask)
}

/// Attention-weighted blend of member embeddings: Σ_j α_j·u_j.
pub fn maven_vector(tape: &mut Tape, alpha: Var, members_mat: Var) -> Result<Var> {
    tape.weighted_sum(alpha, members_mat)
}
