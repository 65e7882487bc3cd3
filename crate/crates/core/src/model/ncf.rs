//! Prediction stack: pooling, hidden layers, and the score readout.
//!
//! Both towers meet here. The entity vector — a user embedding or a group
//! profile — is pooled with the item embedding into a 3d vector (elementwise
//! product plus both originals), pushed through a ReLU stack, and read out
//! by a single weight vector with no bias and no output nonlinearity.

use crate::error::Result;
use crate::tensor::{Tape, Var};

/// Sum of the maven view and the encoder view of a group.
pub fn aggregate_group(tape: &mut Tape, maven_vec: Var, group_vec: Var) -> Result<Var> {
    tape.add(maven_vec, group_vec)
}

/// Pools an entity vector with an item vector: concat(e ⊙ v, e, v).
pub fn pool(tape: &mut Tape, entity_vec: Var, item_vec: Var) -> Result<Var> {
    let prod = tape.mul(entity_vec, item_vec)?;
    tape.concat(&[prod, entity_vec, item_vec])
}

/// Applies the ReLU stack e ← ReLU(W·e + b) layer by layer.
///
/// An empty stack is the identity.
pub fn hidden_forward(tape: &mut Tape, e0: Var, layers: &[(Var, Var)]) -> Result<Var> {
    let mut e = e0;
    for &(w, b) in layers {
        let lin = tape.matvec(w, e)?;
        let lin = tape.add(lin, b)?;
        e = tape.relu(lin);
    }
    Ok(e)
}

/// Final score wᵀ·e.
pub fn predict(tape: &mut Tape, w: Var, e: Var) -> Result<Var> {
    tape.dot(w, e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use crate::model::{Forward, ModelConfig, ModelParameters, ScoreMode};
    use crate::tensor::{Init, Tensor};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t1(data: &[f64]) -> Tensor {
        Tensor::from_vec(data.to_vec()).unwrap()
    }

    #[test]
    fn aggregate_is_elementwise_sum() {
        let mut tape = Tape::new();
        let a = tape.leaf(t1(&[1.0, 2.0]));
        let b = tape.leaf(t1(&[3.0, -2.0]));
        let out = aggregate_group(&mut tape, a, b).unwrap();
        assert_eq!(tape.value(out).data(), &[4.0, 0.0]);
    }

    #[test]
    fn aggregate_zero_sides_select_the_other() {
        let mut tape = Tape::new();
        let zero = tape.leaf(t1(&[0.0, 0.0]));
        let v = tape.leaf(t1(&[1.5, -0.5]));
        let maven_only = aggregate_group(&mut tape, v, zero).unwrap();
        assert_eq!(tape.value(maven_only).data(), &[1.5, -0.5]);
        let encoder_only = aggregate_group(&mut tape, zero, v).unwrap();
        assert_eq!(tape.value(encoder_only).data(), &[1.5, -0.5]);
    }

    #[test]
    fn aggregate_shape_mismatch_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(t1(&[1.0, 2.0]));
        let b = tape.leaf(t1(&[1.0, 2.0, 3.0]));
        assert!(aggregate_group(&mut tape, a, b).is_err());
    }

    #[test]
    fn pool_hand_computed() {
        let mut tape = Tape::new();
        let e = tape.leaf(t1(&[1.0, 2.0]));
        let v = tape.leaf(t1(&[3.0, 4.0]));
        let out = pool(&mut tape, e, v).unwrap();
        assert_eq!(tape.value(out).data(), &[3.0, 8.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn pool_zero_item_zeroes_product_and_tail() {
        let mut tape = Tape::new();
        let e = tape.leaf(t1(&[1.0, -2.0, 3.0]));
        let v = tape.leaf(t1(&[0.0, 0.0, 0.0]));
        let out = pool(&mut tape, e, v).unwrap();
        assert_eq!(
            tape.value(out).data(),
            &[0.0, 0.0, 0.0, 1.0, -2.0, 3.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn pool_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = vec![
            Tensor::param_with_rng(&[4], Init::XavierUniform, &mut rng).unwrap(),
            Tensor::param_with_rng(&[4], Init::XavierUniform, &mut rng).unwrap(),
            Tensor::param_with_rng(&[12], Init::XavierUniform, &mut rng).unwrap(), // readout
        ];
        let report = gradcheck::check(&params, gradcheck::DEFAULT_STEP, |tape, vars| {
            let pooled = pool(tape, vars[0], vars[1])?;
            tape.dot(vars[2], pooled)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn empty_hidden_stack_is_identity() {
        let mut tape = Tape::new();
        let e = tape.leaf(t1(&[1.0, -2.0, 3.0]));
        let out = hidden_forward(&mut tape, e, &[]).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn identity_layer_preserves_nonnegative_input() {
        let mut tape = Tape::new();
        let e = tape.leaf(t1(&[1.0, 0.5, 2.0]));
        let w = tape.leaf(
            Tensor::new(
                vec![3, 3],
                vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            )
            .unwrap(),
        );
        let b = tape.leaf(t1(&[0.0, 0.0, 0.0]));
        let out = hidden_forward(&mut tape, e, &[(w, b)]).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 0.5, 2.0]);
    }

    #[test]
    fn hidden_outputs_are_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let mut tape = Tape::new();
            let e = tape.leaf(Tensor::param_with_rng(&[6], Init::XavierUniform, &mut rng).unwrap());
            let w1 =
                tape.leaf(Tensor::param_with_rng(&[5, 6], Init::XavierUniform, &mut rng).unwrap());
            let b1 =
                tape.leaf(Tensor::param_with_rng(&[5], Init::XavierUniform, &mut rng).unwrap());
            let w2 =
                tape.leaf(Tensor::param_with_rng(&[3, 5], Init::XavierUniform, &mut rng).unwrap());
            let b2 =
                tape.leaf(Tensor::param_with_rng(&[3], Init::XavierUniform, &mut rng).unwrap());
            let out = hidden_forward(&mut tape, e, &[(w1, b1), (w2, b2)]).unwrap();
            assert!(tape.value(out).data().iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn hidden_width_mismatch_is_rejected() {
        let mut tape = Tape::new();
        let e = tape.leaf(t1(&[1.0, 2.0]));
        let w = tape.leaf(Tensor::new(vec![3, 4], vec![0.0; 12]).unwrap());
        let b = tape.leaf(t1(&[0.0, 0.0, 0.0]));
        assert!(hidden_forward(&mut tape, e, &[(w, b)]).is_err());
    }

    #[test]
    fn zero_readout_scores_zero_everywhere() {
        let config = ModelConfig {
            embedding_dim: 4,
            attention_dim: 4,
            hidden_widths: vec![12, 6],
            encoder_layers: 1,
            encoder_heads: 2,
        };
        let mut params = ModelParameters::init(config, 4, 5, 3).unwrap();
        for x in params.get_mut("predict.w").data_mut() {
            *x = 0.0;
        }
        let mut f = Forward::new(&params);
        for item in 0..5 {
            let su = f.score_user(1, item).unwrap();
            assert_eq!(f.tape.scalar_value(su), 0.0);
            let sg = f.score_group(&[0, 2], item, ScoreMode::Full).unwrap();
            assert_eq!(f.tape.scalar_value(sg), 0.0);
        }
    }

    #[test]
    fn full_model_gradient_matches_finite_differences() {
        // End-to-end: every parameter of a d=4 model, group tower, full
        // mode. Leaves are fed through a fresh ModelParameters so the graph
        // is the production one.
        let config = ModelConfig {
            embedding_dim: 4,
            attention_dim: 3,
            hidden_widths: vec![12, 5],
            encoder_layers: 1,
            encoder_heads: 2,
        };
        let params = ModelParameters::init(config.clone(), 3, 4, 7).unwrap();
        let names: Vec<String> = params.names().to_vec();
        let mut tensors: Vec<Tensor> = names.iter().map(|n| params.get(n).clone()).collect();
        // Lift zero-initialized biases off the origin so their gradient is
        // exercised away from ReLU kinks.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for t in tensors.iter_mut() {
            if t.data().iter().all(|&x| x == 0.0) {
                for x in t.data_mut() {
                    *x = rng.random_range(-0.05..0.05);
                }
            }
        }
        let members = [0usize, 2];
        let item = 1usize;
        let report = gradcheck::check(&tensors, gradcheck::DEFAULT_STEP, |tape, vars| {
            let rebuilt: std::collections::HashMap<&str, Var> = names
                .iter()
                .map(|n| n.as_str())
                .zip(vars.iter().copied())
                .collect();
            // group tower, full mode, rebuilt from raw vars
            let members_mat = tape.embedding_lookup(rebuilt["user_embeddings"], &members)?;
            let item_row = tape.embedding_lookup(rebuilt["item_embeddings"], &[item])?;
            let item_vec = tape.row(item_row, 0)?;
            let alpha = crate::model::attention::attention_weights(
                tape,
                members_mat,
                item_vec,
                rebuilt["attention.h_v"],
                rebuilt["attention.h_u"],
                rebuilt["attention.b"],
                rebuilt["attention.a"],
                &[true, true],
            )?;
            let maven = crate::model::attention::maven_vector(tape, alpha, members_mat)?;
            let layer = crate::model::encoder::LayerVars {
                ln1_gain: rebuilt["encoder.layer0.ln1_gain"],
                ln1_bias: rebuilt["encoder.layer0.ln1_bias"],
                wq: rebuilt["encoder.layer0.wq"],
                wk: rebuilt["encoder.layer0.wk"],
                wv: rebuilt["encoder.layer0.wv"],
                wo: rebuilt["encoder.layer0.wo"],
                ln2_gain: rebuilt["encoder.layer0.ln2_gain"],
                ln2_bias: rebuilt["encoder.layer0.ln2_bias"],
                ff_w1: rebuilt["encoder.layer0.ff_w1"],
                ff_b1: rebuilt["encoder.layer0.ff_b1"],
                ff_w2: rebuilt["encoder.layer0.ff_w2"],
                ff_b2: rebuilt["encoder.layer0.ff_b2"],
            };
            let encoded = crate::model::encoder::encode_group(
                tape,
                members_mat,
                &[true, true],
                rebuilt["encoder.summary_token"],
                &[layer],
                2,
            )?;
            let profile = aggregate_group(tape, maven, encoded)?;
            let pooled = pool(tape, profile, item_vec)?;
            let e_n = hidden_forward(
                tape,
                pooled,
                &[
                    (rebuilt["hidden.layer0.w"], rebuilt["hidden.layer0.b"]),
                    (rebuilt["hidden.layer1.w"], rebuilt["hidden.layer1.b"]),
                ],
            )?;
            predict(tape, rebuilt["predict.w"], e_n)
        })
        .unwrap();
        assert!(
            report.max_rel_err < 1e-4,
            "rel err {} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }
}
