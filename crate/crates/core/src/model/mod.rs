//! Model architecture: parameters, checkpointing, and forward graphs.
//!
//! The model scores (entity, item) pairs with two towers that share one
//! prediction stack. The user tower pools a user embedding with an item
//! embedding; the group tower first builds a group profile as the sum of
//! two views — an attention-weighted blend of member embeddings (the
//! "maven" view, which may concentrate on an opinion leader) and a
//! set-encoder summary of the membership — then pools that profile with
//! the item. Ablation modes keep exactly one of the two views.
//!
//! All parameters live in a flat name → tensor registry so the optimizer,
//! checkpoint format, and leaf registration never drift out of sync.

pub mod attention;
pub mod encoder;
pub mod ncf;

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::{Init, Tape, Tensor, Var};

/// Epsilon inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Architecture knobs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Embedding width d shared by users, items, and groups.
    pub embedding_dim: usize,
    /// Hidden width of the member-attention scorer.
    pub attention_dim: usize,
    /// Output widths of the prediction stack; the first layer always
    /// consumes the pooled 3d vector.
    pub hidden_widths: Vec<usize>,
    /// Encoder depth L.
    pub encoder_layers: usize,
    /// Encoder attention heads h; must divide the embedding width.
    pub encoder_heads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding_dim: 32,
            attention_dim: 32,
            hidden_widths: vec![96, 48, 16],
            encoder_layers: 1,
            encoder_heads: 2,
        }
    }
}

impl ModelConfig {
    /// Feed-forward width inside each encoder layer.
    pub fn ff_dim(&self) -> usize {
        4 * self.embedding_dim
    }

    /// Validates dimensional consistency.
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        if self.attention_dim == 0 {
            return Err(Error::Config("attention_dim must be positive".into()));
        }
        if self.encoder_heads == 0 {
            return Err(Error::Config("encoder_heads must be positive".into()));
        }
        if !self.embedding_dim.is_multiple_of(self.encoder_heads) {
            return Err(Error::Config(format!(
                "embedding_dim {} is not divisible by encoder_heads {}",
                self.embedding_dim, self.encoder_heads
            )));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Which view(s) of the group feed the prediction stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreMode {
    /// Maven view + encoder view (the full model).
    Full,
    /// Encoder view only; scores are independent of attention parameters.
    EncoderOnly,
    /// Maven view only; scores are independent of encoder parameters.
    MavenOnly,
}

/// Checkpoint bookkeeping stored next to the tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Seed the training run was launched with; evaluation reuses it to
    /// reproduce the same data split.
    pub seed: u64,
    /// Number of completed training epochs.
    pub epochs_trained: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    config: ModelConfig,
    n_users: usize,
    n_items: usize,
    meta: CheckpointMeta,
    tensors: Vec<(String, Tensor)>,
}

/// All learnable tensors, addressable by name in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters {
    config: ModelConfig,
    n_users: usize,
    n_items: usize,
    names: Vec<String>,
    tensors: HashMap<String, Tensor>,
}

/// The full tensor manifest: (name, shape, initializer), in registry order.
fn manifest(
    config: &ModelConfig,
    n_users: usize,
    n_items: usize,
) -> Vec<(String, Vec<usize>, Init)> {
    let d = config.embedding_dim;
    let d_att = config.attention_dim;
    let d_ff = config.ff_dim();
    let mut out = vec![
        (
            "user_embeddings".into(),
            vec![n_users, d],
            Init::XavierUniform,
        ),
        (
            "item_embeddings".into(),
            vec![n_items, d],
            Init::XavierUniform,
        ),
        ("attention.h_v".into(), vec![d_att, d], Init::XavierUniform),
        ("attention.h_u".into(), vec![d_att, d], Init::XavierUniform),
        ("attention.b".into(), vec![d_att], Init::Zeros),
        ("attention.a".into(), vec![d_att], Init::XavierUniform),
        ("encoder.summary_token".into(), vec![d], Init::XavierUniform),
    ];
    for l in 0..config.encoder_layers {
        let p = |suffix: &str| format!("encoder.layer{}.{}", l, suffix);
        out.push((p("ln1_gain"), vec![d], Init::Ones));
        out.push((p("ln1_bias"), vec![d], Init::Zeros));
        for proj in ["wq", "wk", "wv"] {
            out.push((p(proj), vec![d, d], Init::XavierUniform));
        }
        // Residual writers start small so the encoder's contribution to the
        // group profile grows from near zero instead of dominating the
        // attention blend at initialization.
        out.push((p("wo"), vec![d, d], Init::ResidualXavier));
        out.push((p("ln2_gain"), vec![d], Init::Ones));
        out.push((p("ln2_bias"), vec![d], Init::Zeros));
        out.push((p("ff_w1"), vec![d_ff, d], Init::XavierUniform));
        out.push((p("ff_b1"), vec![d_ff], Init::Zeros));
        out.push((p("ff_w2"), vec![d, d_ff], Init::ResidualXavier));
        out.push((p("ff_b2"), vec![d], Init::Zeros));
    }
    let mut prev = 3 * d;
    for (n, &width) in config.hidden_widths.iter().enumerate() {
        out.push((
            format!("hidden.layer{}.w", n),
            vec![width, prev],
            Init::XavierUniform,
        ));
        out.push((format!("hidden.layer{}.b", n), vec![width], Init::Zeros));
        prev = width;
    }
    out.push(("predict.w".into(), vec![prev], Init::XavierUniform));
    out
}

impl ModelParameters {
    /// Freshly initialized parameters, deterministic in `seed`.
    pub fn init(config: ModelConfig, n_users: usize, n_items: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_users == 0 || n_items == 0 {
            return Err(Error::Config(
                "cannot build a model over zero users or items".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix(seed, 0x6d6f64656c));
        let mut names = Vec::new();
        let mut tensors = HashMap::new();
        for (name, shape, init) in manifest(&config, n_users, n_items) {
            let t = Tensor::param_with_rng(&shape, init, &mut rng)?;
            names.push(name.clone());
            tensors.insert(name, t);
        }
        Ok(ModelParameters {
            config,
            n_users,
            n_items,
            names,
            tensors,
        })
    }

    /// Architecture this parameter set was built for.
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// User table size.
    pub fn n_users(&self) -> usize {
        self.n_users
    }

    /// Item table size.
    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// Tensor names in registry order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Tensor by name; panics on unknown names (registry is closed).
    pub fn get(&self, name: &str) -> &Tensor {
        &self.tensors[name]
    }

    /// Mutable tensor by name.
    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.tensors.get_mut(name).expect("known tensor name")
    }

    /// True when every value in every tensor is finite.
    pub fn all_finite(&self) -> bool {
        self.names
            .iter()
            .all(|n| self.tensors[n].data().iter().all(|x| x.is_finite()))
    }

    /// Writes a checkpoint atomically (temp file + rename).
    pub fn save(&self, path: &Path, meta: CheckpointMeta) -> Result<()> {
        let file = CheckpointFile {
            config: self.config.clone(),
            n_users: self.n_users,
            n_items: self.n_items,
            meta,
            tensors: self
                .names
                .iter()
                .map(|n| (n.clone(), self.tensors[n].clone()))
                .collect(),
        };
        let body = serde_json::to_string(&file).map_err(|e| Error::Serialize {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, body).map_err(|e| Error::io(tmp.display().to_string(), e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }

    /// Loads a checkpoint, validating every tensor name and shape against
    /// the manifest implied by the stored config.
    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let body =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let file: CheckpointFile = serde_json::from_str(&body).map_err(|e| Error::Serialize {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        file.config.validate()?;
        let expected = manifest(&file.config, file.n_users, file.n_items);
        if file.tensors.len() != expected.len() {
            return Err(Error::Serialize {
                path: path.display().to_string(),
                reason: format!(
                    "checkpoint has {} tensors, architecture needs {}",
                    file.tensors.len(),
                    expected.len()
                ),
            });
        }
        let mut names = Vec::new();
        let mut tensors = HashMap::new();
        for ((name, tensor), (want_name, want_shape, _)) in file.tensors.into_iter().zip(expected) {
            if name != want_name {
                return Err(Error::Serialize {
                    path: path.display().to_string(),
                    reason: format!("unexpected tensor {:?}, want {:?}", name, want_name),
                });
            }
            if tensor.shape() != want_shape.as_slice() {
                return Err(Error::Serialize {
                    path: path.display().to_string(),
                    reason: format!(
                        "tensor {:?} has shape {:?}, want {:?}",
                        name,
                        tensor.shape(),
                        want_shape
                    ),
                });
            }
            names.push(name.clone());
            tensors.insert(name, tensor);
        }
        Ok((
            ModelParameters {
                config: file.config,
                n_users: file.n_users,
                n_items: file.n_items,
                names,
                tensors,
            },
            file.meta,
        ))
    }
}

/// Parameter leaves registered on one tape, addressable by name.
pub struct ModelVars {
    vars: HashMap<String, Var>,
}

impl ModelVars {
    /// Leaf for a named tensor.
    pub fn get(&self, name: &str) -> Var {
        self.vars[name]
    }
}

/// One forward-graph builder: a fresh tape with all parameters registered
/// as leaves. Build whatever scores a batch needs, call `backward`, then
/// read gradients by parameter name.
pub struct Forward<'p> {
    pub tape: Tape,
    params: &'p ModelParameters,
    vars: ModelVars,
}

impl<'p> Forward<'p> {
    pub fn new(params: &'p ModelParameters) -> Self {
        let mut tape = Tape::new();
        let mut vars = HashMap::new();
        for name in params.names() {
            vars.insert(name.clone(), tape.leaf(params.get(name).clone()));
        }
        Forward {
            tape,
            params,
            vars: ModelVars { vars },
        }
    }

    /// Leaf for a named parameter tensor.
    pub fn var(&self, name: &str) -> Var {
        self.vars.get(name)
    }

    /// Gradient of a named parameter after `backward`.
    pub fn grad(&self, name: &str) -> Option<&[f64]> {
        self.tape.grad(self.vars.get(name))
    }

    /// Embedding rows for a member list, shape [m, d].
    pub fn members_matrix(&mut self, members: &[usize]) -> Result<Var> {
        let table = self.var("user_embeddings");
        self.tape.embedding_lookup(table, members)
    }

    /// One user embedding as a [d] vector.
    pub fn user_vec(&mut self, user: usize) -> Result<Var> {
        let table = self.var("user_embeddings");
        let row = self.tape.embedding_lookup(table, &[user])?;
        self.tape.row(row, 0)
    }

    /// One item embedding as a [d] vector.
    pub fn item_vec(&mut self, item: usize) -> Result<Var> {
        let table = self.var("item_embeddings");
        let row = self.tape.embedding_lookup(table, &[item])?;
        self.tape.row(row, 0)
    }

    /// Per-member attention weights for a (members, item) pair.
    pub fn attention_alpha(&mut self, members_mat: Var, item_vec: Var) -> Result<Var> {
        let mask = vec![true; self.tape.value(members_mat).rows()];
        let (h_v, h_u, b, a) = (
            self.var("attention.h_v"),
            self.var("attention.h_u"),
            self.var("attention.b"),
            self.var("attention.a"),
        );
        attention::attention_weights(&mut self.tape, members_mat, item_vec, h_v, h_u, b, a, &mask)
    }

    fn encoder_layer_vars(&self, layer: usize) -> encoder::LayerVars {
        let p = |suffix: &str| self.var(&format!("encoder.layer{}.{}", layer, suffix));
        encoder::LayerVars {
            ln1_gain: p("ln1_gain"),
            ln1_bias: p("ln1_bias"),
            wq: p("wq"),
            wk: p("wk"),
            wv: p("wv"),
            wo: p("wo"),
            ln2_gain: p("ln2_gain"),
            ln2_bias: p("ln2_bias"),
            ff_w1: p("ff_w1"),
            ff_b1: p("ff_b1"),
            ff_w2: p("ff_w2"),
            ff_b2: p("ff_b2"),
        }
    }

    /// Set-encoder summary of a member matrix (item-independent).
    pub fn encoder_vec(&mut self, members_mat: Var) -> Result<Var> {
        let layers: Vec<encoder::LayerVars> = (0..self.params.config.encoder_layers)
            .map(|l| self.encoder_layer_vars(l))
            .collect();
        let mask = vec![true; self.tape.value(members_mat).rows()];
        let summary = self.var("encoder.summary_token");
        encoder::encode_group(
            &mut self.tape,
            members_mat,
            &mask,
            summary,
            &layers,
            self.params.config.encoder_heads,
        )
    }

    /// Item-conditioned group profile g(t) under a scoring mode.
    ///
    /// `encoder_cache` lets callers reuse the item-independent encoder
    /// output across many items for the same group.
    pub fn group_profile(
        &mut self,
        members: &[usize],
        item_vec: Var,
        mode: ScoreMode,
        encoder_cache: &mut Option<Var>,
    ) -> Result<Var> {
        if members.is_empty() {
            return Err(Error::Invalid("cannot profile an empty group".into()));
        }
        let members_mat = self.members_matrix(members)?;
        let maven = |fwd: &mut Self, mat: Var| -> Result<Var> {
            let alpha = fwd.attention_alpha(mat, item_vec)?;
            attention::maven_vector(&mut fwd.tape, alpha, mat)
        };
        match mode {
            ScoreMode::MavenOnly => maven(self, members_mat),
            ScoreMode::EncoderOnly => match *encoder_cache {
                Some(v) => Ok(v),
                None => {
                    let v = self.encoder_vec(members_mat)?;
                    *encoder_cache = Some(v);
                    Ok(v)
                }
            },
            ScoreMode::Full => {
                let m = maven(self, members_mat)?;
                let e = match *encoder_cache {
                    Some(v) => v,
                    None => {
                        let v = self.encoder_vec(members_mat)?;
                        *encoder_cache = Some(v);
                        v
                    }
                };
                ncf::aggregate_group(&mut self.tape, m, e)
            }
        }
    }

    /// Pool + hidden stack + prediction readout for any entity vector.
    pub fn score_vec(&mut self, entity_vec: Var, item_vec: Var) -> Result<Var> {
        let e0 = ncf::pool(&mut self.tape, entity_vec, item_vec)?;
        let layers: Vec<(Var, Var)> = (0..self.params.config.hidden_widths.len())
            .map(|n| {
                (
                    self.var(&format!("hidden.layer{}.w", n)),
                    self.var(&format!("hidden.layer{}.b", n)),
                )
            })
            .collect();
        let e_n = ncf::hidden_forward(&mut self.tape, e0, &layers)?;
        self.tape.dot(self.var("predict.w"), e_n)
    }

    /// User-tower score for a (user, item) pair.
    pub fn score_user(&mut self, user: usize, item: usize) -> Result<Var> {
        let u = self.user_vec(user)?;
        let v = self.item_vec(item)?;
        self.score_vec(u, v)
    }

    /// Group-tower score for a (members, item) pair.
    pub fn score_group(&mut self, members: &[usize], item: usize, mode: ScoreMode) -> Result<Var> {
        let mut cache = None;
        self.score_group_cached(members, item, mode, &mut cache)
    }

    /// Group-tower score reusing a cached encoder output across items.
    pub fn score_group_cached(
        &mut self,
        members: &[usize],
        item: usize,
        mode: ScoreMode,
        encoder_cache: &mut Option<Var>,
    ) -> Result<Var> {
        let v = self.item_vec(item)?;
        let profile = self.group_profile(members, v, mode, encoder_cache)?;
        self.score_vec(profile, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            embedding_dim: 4,
            attention_dim: 4,
            hidden_widths: vec![12, 5],
            encoder_layers: 1,
            encoder_heads: 2,
        }
    }

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn heads_must_divide_embedding_dim() {
        let mut c = tiny_config();
        c.encoder_heads = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let a = ModelParameters::init(tiny_config(), 5, 7, 42).unwrap();
        let b = ModelParameters::init(tiny_config(), 5, 7, 42).unwrap();
        assert_eq!(a, b);
        let c = ModelParameters::init(tiny_config(), 5, 7, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn manifest_covers_expected_shapes() {
        let p = ModelParameters::init(tiny_config(), 5, 7, 1).unwrap();
        assert_eq!(p.get("user_embeddings").shape(), &[5, 4]);
        assert_eq!(p.get("item_embeddings").shape(), &[7, 4]);
        assert_eq!(p.get("attention.h_v").shape(), &[4, 4]);
        assert_eq!(p.get("encoder.summary_token").shape(), &[4]);
        assert_eq!(p.get("encoder.layer0.ff_w1").shape(), &[16, 4]);
        assert_eq!(p.get("encoder.layer0.ff_w2").shape(), &[4, 16]);
        // prediction stack: 3d = 12 input
        assert_eq!(p.get("hidden.layer0.w").shape(), &[12, 12]);
        assert_eq!(p.get("hidden.layer1.w").shape(), &[5, 12]);
        assert_eq!(p.get("predict.w").shape(), &[5]);
        assert!(p.all_finite());
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let p = ModelParameters::init(tiny_config(), 5, 7, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let meta = CheckpointMeta {
            seed: 123,
            epochs_trained: 4,
        };
        p.save(&path, meta).unwrap();
        let (loaded, loaded_meta) = ModelParameters::load(&path).unwrap();
        assert_eq!(loaded, p);
        assert_eq!(loaded_meta, meta);

        // Bitwise: identical predictions on random pairs.
        let mut fa = Forward::new(&p);
        let mut fb = Forward::new(&loaded);
        for k in 0..100 {
            let (u, i) = (k % 5, (k * 3) % 7);
            let sa = fa.score_user(u, i).unwrap();
            let sb = fb.score_user(u, i).unwrap();
            assert_eq!(
                fa.tape.scalar_value(sa).to_bits(),
                fb.tape.scalar_value(sb).to_bits()
            );
        }
    }

    #[test]
    fn load_rejects_shape_mismatch() {
        let p = ModelParameters::init(tiny_config(), 5, 7, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        p.save(
            &path,
            CheckpointMeta {
                seed: 0,
                epochs_trained: 0,
            },
        )
        .unwrap();
        // Corrupt the stored user table shape.
        let body = std::fs::read_to_string(&path).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&body).unwrap();
        v["tensors"][0][1]["shape"] = serde_json::json!([4, 5]);
        std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
        let err = ModelParameters::load(&path).unwrap_err();
        assert!(err.to_string().contains("user_embeddings"), "got: {}", err);
    }

    #[test]
    fn load_rejects_renamed_tensor() {
        let p = ModelParameters::init(tiny_config(), 5, 7, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        p.save(
            &path,
            CheckpointMeta {
                seed: 0,
                epochs_trained: 0,
            },
        )
        .unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&body).unwrap();
        v["tensors"][0][0] = serde_json::json!("user_embedding");
        std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
        assert!(ModelParameters::load(&path).is_err());
    }

    #[test]
    fn singleton_maven_only_group_equals_user_tower() {
        let p = ModelParameters::init(tiny_config(), 5, 7, 3).unwrap();
        let mut f = Forward::new(&p);
        for item in 0..7 {
            let su = f.score_user(2, item).unwrap();
            let sg = f.score_group(&[2], item, ScoreMode::MavenOnly).unwrap();
            assert_eq!(
                f.tape.scalar_value(su).to_bits(),
                f.tape.scalar_value(sg).to_bits(),
                "singleton maven-only group must reduce to the user tower"
            );
        }
    }

    #[test]
    fn ablation_modes_isolate_parameter_dependence() {
        let base = ModelParameters::init(tiny_config(), 5, 7, 3).unwrap();
        let members = [1usize, 3, 4];

        // EncoderOnly must ignore attention parameters entirely.
        let mut perturbed = base.clone();
        perturbed.get_mut("attention.h_v").data_mut()[0] += 10.0;
        perturbed.get_mut("attention.a").data_mut()[1] -= 3.0;
        let mut fa = Forward::new(&base);
        let mut fb = Forward::new(&perturbed);
        for item in 0..7 {
            let a = fa
                .score_group(&members, item, ScoreMode::EncoderOnly)
                .unwrap();
            let b = fb
                .score_group(&members, item, ScoreMode::EncoderOnly)
                .unwrap();
            assert_eq!(fa.tape.scalar_value(a), fb.tape.scalar_value(b));
        }

        // MavenOnly must ignore encoder parameters entirely.
        let mut perturbed = base.clone();
        perturbed.get_mut("encoder.summary_token").data_mut()[0] += 5.0;
        perturbed.get_mut("encoder.layer0.wq").data_mut()[3] += 2.0;
        let mut fa = Forward::new(&base);
        let mut fb = Forward::new(&perturbed);
        for item in 0..7 {
            let a = fa
                .score_group(&members, item, ScoreMode::MavenOnly)
                .unwrap();
            let b = fb
                .score_group(&members, item, ScoreMode::MavenOnly)
                .unwrap();
            assert_eq!(fa.tape.scalar_value(a), fb.tape.scalar_value(b));
        }

        // Full mode must depend on both.
        let mut perturbed = base.clone();
        perturbed.get_mut("attention.h_v").data_mut()[0] += 10.0;
        let mut fa = Forward::new(&base);
        let mut fb = Forward::new(&perturbed);
        let a = fa.score_group(&members, 0, ScoreMode::Full).unwrap();
        let b = fb.score_group(&members, 0, ScoreMode::Full).unwrap();
        assert_ne!(fa.tape.scalar_value(a), fb.tape.scalar_value(b));
    }

    #[test]
    fn scores_are_finite_for_random_parameters() {
        let p = ModelParameters::init(tiny_config(), 8, 9, 17).unwrap();
        let mut f = Forward::new(&p);
        for item in 0..9 {
            for mode in [
                ScoreMode::Full,
                ScoreMode::EncoderOnly,
                ScoreMode::MavenOnly,
            ] {
                let s = f.score_group(&[0, 2, 5, 7], item, mode).unwrap();
                assert!(f.tape.scalar_value(s).is_finite());
            }
        }
    }

    #[test]
    fn empty_group_is_rejected() {
        let p = ModelParameters::init(tiny_config(), 5, 7, 3).unwrap();
        let mut f = Forward::new(&p);
        assert!(f.score_group(&[], 0, ScoreMode::Full).is_err());
    }

    #[test]
    fn out_of_range_ids_are_rejected() {
        let p = ModelParameters::init(tiny_config(), 5, 7, 3).unwrap();
        let mut f = Forward::new(&p);
        assert!(f.score_user(5, 0).is_err());
        assert!(f.score_user(0, 7).is_err());
        assert!(f.score_group(&[0, 9], 0, ScoreMode::Full).is_err());
    }
}
