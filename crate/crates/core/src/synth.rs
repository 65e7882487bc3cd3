//! Synthetic population generator with planted opinion leaders.
//!
//! The generative story is deliberately simple: every user and item gets a
//! seeded Gaussian latent vector, a user's item-choice distribution is the
//! softmax of their latent dot products, and each group delegates its
//! choices to an influence-weighted mixture of member distributions. One
//! member per group — the maven — carries `maven_weight` of that mixture
//! while the rest split the remainder evenly. Because the ground truth
//! (latents, maven identity, influence vector) is written alongside the
//! interaction CSVs, downstream attention weights can be scored against a
//! known answer instead of eyeballed.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Interaction, InteractionStore};
use crate::error::{Error, Result};
use crate::seeds;

/// Knobs for [`generate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_groups: usize,
    /// Inclusive [min, max] group size.
    pub group_size_range: [usize; 2],
    pub latent_dim: usize,
    /// Mixture share of the planted maven, in (1/group_size, 1).
    pub maven_weight: f64,
    pub interactions_per_user: usize,
    pub interactions_per_group: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 500,
            n_items: 300,
            n_groups: 200,
            group_size_range: [2, 8],
            latent_dim: 8,
            maven_weight: 0.8,
            interactions_per_user: 15,
            interactions_per_group: 24,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Validates counts, ranges, and the maven-weight dominance condition.
    pub fn validate(&self) -> Result<()> {
        for (label, v) in [
            ("n_users", self.n_users),
            ("n_items", self.n_items),
            ("n_groups", self.n_groups),
            ("latent_dim", self.latent_dim),
            ("interactions_per_user", self.interactions_per_user),
            ("interactions_per_group", self.interactions_per_group),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{} must be positive", label)));
            }
        }
        let [min, max] = self.group_size_range;
        if min == 0 || min > max {
            return Err(Error::Config(format!(
                "group_size_range [{}, {}] must satisfy 1 <= min <= max",
                min, max
            )));
        }
        if max > self.n_users {
            return Err(Error::Config(format!(
                "group_size_range max {} exceeds n_users {}",
                max, self.n_users
            )));
        }
        if !(self.maven_weight > 0.0 && self.maven_weight < 1.0) {
            return Err(Error::Config(format!(
                "maven_weight {} must lie strictly inside (0, 1)",
                self.maven_weight
            )));
        }
        // For any realized multi-member group of size m the maven must beat
        // the uniform share 1/m; the binding case is the smallest m >= 2.
        if max >= 2 {
            let binding = min.max(2);
            if self.maven_weight <= 1.0 / binding as f64 {
                return Err(Error::Config(format!(
                    "maven_weight {} must strictly exceed the uniform share 1/{}",
                    self.maven_weight, binding
                )));
            }
        }
        if self.interactions_per_user > self.n_items {
            return Err(Error::Config(format!(
                "interactions_per_user {} exceeds n_items {}",
                self.interactions_per_user, self.n_items
            )));
        }
        if self.interactions_per_group > self.n_items {
            return Err(Error::Config(format!(
                "interactions_per_group {} exceeds n_items {}",
                self.interactions_per_group, self.n_items
            )));
        }
        Ok(())
    }
}

/// Planted truth for one group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupTruth {
    pub maven: String,
    pub influence: BTreeMap<String, f64>,
}

/// Everything the generator knows that the model has to rediscover.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub user_latents: BTreeMap<String, Vec<f64>>,
    pub item_latents: BTreeMap<String, Vec<f64>>,
    pub groups: BTreeMap<String, GroupTruth>,
}

impl GroundTruth {
    /// Writes the per-group truth as `{group_id: {maven, influence}}`.
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(&self.groups).map_err(|e| Error::Serialize {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        std::fs::write(path, body + "\n").map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Reads the per-group truth back.
    pub fn load_json(path: &Path) -> Result<BTreeMap<String, GroupTruth>> {
        let body =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&body).map_err(|e| Error::Serialize {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

/// External-id formats; zero-padded so lexicographic order equals numeric.
fn user_name(u: usize) -> String {
    format!("u{:05}", u)
}
fn item_name(i: usize) -> String {
    format!("i{:05}", i)
}
fn group_name(g: usize) -> String {
    format!("g{:05}", g)
}

/// Standard deviation of every latent coordinate. Sharper-than-unit latents
/// concentrate each user's choice distribution on their characteristic
/// items, which keeps the planted maven identifiable from a group's history
/// instead of drowned in sampling noise.
const LATENT_SCALE: f64 = 1.5;

// Phase salts for deriving independent child streams from one seed.
const SALT_USER_LATENTS: u64 = 0x01;
const SALT_ITEM_LATENTS: u64 = 0x02;
const SALT_MEMBERSHIP: u64 = 0x03;
const SALT_MAVEN: u64 = 0x04;
const SALT_USER_DRAWS: u64 = 0x05;
const SALT_GROUP_DRAWS: u64 = 0x06;
const SALT_BACKSTOP: u64 = 0x07;

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| LATENT_SCALE * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

/// Softmax over an item catalog of one user's latent dot products.
fn preference(user: &[f64], items: &[Vec<f64>]) -> Vec<f64> {
    let logits: Vec<f64> = items
        .iter()
        .map(|v| user.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Draws one item from `probs` restricted to indices outside `taken`,
/// by inverse-CDF scan over the renormalized remainder.
fn draw_excluding(probs: &[f64], taken: &HashSet<usize>, rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = probs
        .iter()
        .enumerate()
        .filter(|(i, _)| !taken.contains(i))
        .map(|(_, p)| p)
        .sum();
    let x = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (i, &p) in probs.iter().enumerate() {
        if taken.contains(&i) {
            continue;
        }
        acc += p;
        last = Some(i);
        if acc >= x {
            return i;
        }
    }
    // Rounding can leave the scan a hair short of x; the final unchosen
    // index is the correct pick in that case.
    last.expect("at least one item remains")
}

/// Generates a population and its planted ground truth.
///
/// Deterministic in the config (including its seed): two calls produce
/// byte-identical CSVs and ground-truth JSON. Timestamps record global draw
/// order, so leave-one-out splits hold out each entity's final draw. Items
/// that no draw touched each receive one backstop user-item row so the
/// generated catalog always contains exactly `n_items` items on reload.
pub fn generate(config: &SynthConfig) -> Result<(InteractionStore, GroundTruth)> {
    config.validate()?;
    let seed = config.seed;

    let mut rng_u = ChaCha8Rng::seed_from_u64(seeds::mix(seed, SALT_USER_LATENTS));
    let user_latents = gaussian_matrix(config.n_users, config.latent_dim, &mut rng_u);
    let mut rng_i = ChaCha8Rng::seed_from_u64(seeds::mix(seed, SALT_ITEM_LATENTS));
    let item_latents = gaussian_matrix(config.n_items, config.latent_dim, &mut rng_i);

    let prefs: Vec<Vec<f64>> = user_latents
        .iter()
        .map(|u| preference(u, &item_latents))
        .collect();

    // Membership: a partial shuffle of the user range per group.
    let [min_size, max_size] = config.group_size_range;
    let mut membership = Vec::with_capacity(config.n_groups);
    let mut mavens = Vec::with_capacity(config.n_groups);
    for g in 0..config.n_groups {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeds::mix(seeds::mix(seed, SALT_MEMBERSHIP), g as u64));
        let size = rng.random_range(min_size..=max_size);
        let mut pool: Vec<usize> = (0..config.n_users).collect();
        for k in 0..size {
            let j = rng.random_range(k..pool.len());
            pool.swap(k, j);
        }
        pool.truncate(size);
        let mut rng_m =
            ChaCha8Rng::seed_from_u64(seeds::mix(seeds::mix(seed, SALT_MAVEN), g as u64));
        let maven = pool[rng_m.random_range(0..pool.len())];
        membership.push(pool);
        mavens.push(maven);
    }

    let mut timestamp: i64 = 0;
    let mut covered = vec![false; config.n_items];

    let mut user_item = Vec::with_capacity(config.n_users * config.interactions_per_user);
    for u in 0..config.n_users {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeds::mix(seeds::mix(seed, SALT_USER_DRAWS), u as u64));
        let mut taken = HashSet::new();
        for _ in 0..config.interactions_per_user {
            let item = draw_excluding(&prefs[u], &taken, &mut rng);
            taken.insert(item);
            covered[item] = true;
            user_item.push(Interaction {
                entity: u,
                item,
                timestamp: Some(timestamp),
            });
            timestamp += 1;
        }
    }

    let mut group_item = Vec::with_capacity(config.n_groups * config.interactions_per_group);
    let mut influences = Vec::with_capacity(config.n_groups);
    for g in 0..config.n_groups {
        let members = &membership[g];
        let m = members.len();
        let share = if m == 1 {
            Vec::from([1.0])
        } else {
            members
                .iter()
                .map(|&u| {
                    if u == mavens[g] {
                        config.maven_weight
                    } else {
                        (1.0 - config.maven_weight) / (m - 1) as f64
                    }
                })
                .collect()
        };
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeds::mix(seeds::mix(seed, SALT_GROUP_DRAWS), g as u64));
        let mut taken = HashSet::new();
        for _ in 0..config.interactions_per_group {
            // Mixture draw: pick the deciding member by influence, then an
            // item from their preference restricted to unchosen items.
            let x = rng.random::<f64>();
            let mut acc = 0.0;
            let mut deciding = members[m - 1];
            for (j, &u) in members.iter().enumerate() {
                acc += share[j];
                if acc >= x {
                    deciding = u;
                    break;
                }
            }
            let item = draw_excluding(&prefs[deciding], &taken, &mut rng);
            taken.insert(item);
            covered[item] = true;
            group_item.push(Interaction {
                entity: g,
                item,
                timestamp: Some(timestamp),
            });
            timestamp += 1;
        }
        influences.push(share);
    }

    // Backstop: give every untouched item a single interaction so the
    // reloaded catalog has exactly n_items entries.
    let mut rng_b = ChaCha8Rng::seed_from_u64(seeds::mix(seed, SALT_BACKSTOP));
    for (item, was_covered) in covered.iter().enumerate() {
        if !was_covered {
            user_item.push(Interaction {
                entity: rng_b.random_range(0..config.n_users),
                item,
                timestamp: Some(timestamp),
            });
            timestamp += 1;
        }
    }

    let store = InteractionStore::from_parts(
        (0..config.n_users).map(user_name).collect(),
        (0..config.n_items).map(item_name).collect(),
        (0..config.n_groups).map(group_name).collect(),
        user_item,
        group_item,
        membership.clone(),
    )?;

    let truth = GroundTruth {
        user_latents: user_latents
            .iter()
            .enumerate()
            .map(|(u, v)| (user_name(u), v.clone()))
            .collect(),
        item_latents: item_latents
            .iter()
            .enumerate()
            .map(|(i, v)| (item_name(i), v.clone()))
            .collect(),
        groups: (0..config.n_groups)
            .map(|g| {
                (
                    group_name(g),
                    GroupTruth {
                        maven: user_name(mavens[g]),
                        influence: membership[g]
                            .iter()
                            .zip(&influences[g])
                            .map(|(&u, &w)| (user_name(u), w))
                            .collect(),
                    },
                )
            })
            .collect(),
    };
    Ok((store, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SynthConfig {
        SynthConfig {
            n_users: 40,
            n_items: 60,
            n_groups: 15,
            group_size_range: [2, 5],
            latent_dim: 4,
            maven_weight: 0.8,
            interactions_per_user: 6,
            interactions_per_group: 5,
            seed: 11,
        }
    }

    #[test]
    fn default_config_is_valid() {
        SynthConfig::default().validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut c = small_config();
        c.n_items = 0;
        assert!(c.validate().is_err());

        let mut c = small_config();
        c.group_size_range = [6, 3];
        assert!(c.validate().is_err());

        let mut c = small_config();
        c.group_size_range = [2, 100];
        assert!(c.validate().is_err(), "range max beyond n_users");

        let mut c = small_config();
        c.maven_weight = 1.0;
        assert!(c.validate().is_err());

        // size-2 groups possible, so 0.5 is exactly the uniform share
        let mut c = small_config();
        c.maven_weight = 0.5;
        assert!(c.validate().is_err());

        // with min size 4, anything above 0.25 dominates
        let mut c = small_config();
        c.group_size_range = [4, 5];
        c.maven_weight = 0.3;
        c.validate().unwrap();

        let mut c = small_config();
        c.interactions_per_user = 61;
        assert!(c.validate().is_err());
    }

    #[test]
    fn singleton_groups_have_unit_influence() {
        let mut c = small_config();
        c.group_size_range = [1, 1];
        let (_, truth) = generate(&c).unwrap();
        for g in truth.groups.values() {
            assert_eq!(g.influence.len(), 1);
            let (member, weight) = g.influence.iter().next().unwrap();
            assert_eq!(*weight, 1.0);
            assert_eq!(member, &g.maven);
        }
    }

    #[test]
    fn influence_shares_match_maven_weight_arithmetic() {
        let mut c = small_config();
        c.group_size_range = [5, 5];
        let (_, truth) = generate(&c).unwrap();
        for g in truth.groups.values() {
            assert_eq!(g.influence.len(), 5);
            let sum: f64 = g.influence.values().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for (member, &w) in &g.influence {
                if member == &g.maven {
                    assert_eq!(w, 0.8);
                } else {
                    assert_eq!(w, (1.0 - 0.8) / 4.0);
                }
            }
        }
    }

    #[test]
    fn maven_is_influence_argmax() {
        let (_, truth) = generate(&small_config()).unwrap();
        for g in truth.groups.values() {
            let argmax = g
                .influence
                .iter()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, &g.maven);
        }
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let c = small_config();
        let (store_a, truth_a) = generate(&c).unwrap();
        let (store_b, truth_b) = generate(&c).unwrap();
        assert_eq!(store_a, store_b);
        assert_eq!(truth_a, truth_b);

        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        store_a.write_csvs(dir_a.path()).unwrap();
        truth_a
            .write_json(&dir_a.path().join("ground_truth.json"))
            .unwrap();
        store_b.write_csvs(dir_b.path()).unwrap();
        truth_b
            .write_json(&dir_b.path().join("ground_truth.json"))
            .unwrap();
        for name in [
            "user_item.csv",
            "group_item.csv",
            "membership.csv",
            "ground_truth.json",
        ] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{} differs between identical runs", name);
        }
    }

    #[test]
    fn different_seeds_differ() {
        let mut c = small_config();
        let (store_a, _) = generate(&c).unwrap();
        c.seed = 12;
        let (store_b, _) = generate(&c).unwrap();
        assert_ne!(store_a, store_b);
    }

    #[test]
    fn round_trip_preserves_counts_and_ids() {
        let c = small_config();
        let (store, truth) = generate(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        store.write_csvs(dir.path()).unwrap();
        let reloaded = InteractionStore::load(dir.path()).unwrap();
        assert_eq!(reloaded, store);
        assert_eq!(reloaded.n_users(), c.n_users);
        assert_eq!(
            reloaded.n_items(),
            c.n_items,
            "backstop must cover every item"
        );
        assert_eq!(reloaded.n_groups(), c.n_groups);
        // every maven is a member of its group
        for (gname, g) in &truth.groups {
            let gid = reloaded.groups().dense(gname).unwrap();
            let maven = reloaded.users().dense(&g.maven).unwrap();
            assert!(reloaded.members(gid).contains(&maven));
        }
    }

    #[test]
    fn ground_truth_json_round_trips() {
        let (_, truth) = generate(&small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ground_truth.json");
        truth.write_json(&path).unwrap();
        let loaded = GroundTruth::load_json(&path).unwrap();
        assert_eq!(loaded, truth.groups);
    }

    /// Top-10 items of a user by planted preference probability.
    fn top10(prefs: &[f64]) -> HashSet<usize> {
        let mut idx: Vec<usize> = (0..prefs.len()).collect();
        idx.sort_by(|&a, &b| prefs[b].partial_cmp(&prefs[a]).unwrap());
        idx.into_iter().take(10).collect()
    }

    #[test]
    fn maven_top_items_dominate_group_choices() {
        // 250 groups x 40 draws = 10^4 group interactions at weight 0.9:
        // counted against each group's planted preferences, draws landing in
        // the maven's top-10 must outnumber draws landing in the top-10 of
        // the best-placed non-maven.
        let c = SynthConfig {
            n_users: 80,
            n_items: 100,
            n_groups: 250,
            group_size_range: [3, 5],
            latent_dim: 8,
            maven_weight: 0.9,
            interactions_per_user: 5,
            interactions_per_group: 40,
            seed: 3,
        };
        let (store, truth) = generate(&c).unwrap();
        let item_latents: Vec<Vec<f64>> = (0..c.n_items)
            .map(|i| truth.item_latents[&item_name(i)].clone())
            .collect();
        let mut maven_hits = 0usize;
        let mut rival_hits = 0usize;
        for g in 0..c.n_groups {
            let gt = &truth.groups[&group_name(g)];
            let maven_dense = store.users().dense(&gt.maven).unwrap();
            let maven_top = top10(&preference(&truth.user_latents[&gt.maven], &item_latents));
            let draws: Vec<usize> = store
                .group_item()
                .iter()
                .filter(|r| r.entity == g)
                .map(|r| r.item)
                .collect();
            maven_hits += draws.iter().filter(|i| maven_top.contains(i)).count();
            let mut best_rival = 0usize;
            for &u in store.members(g) {
                if u == maven_dense {
                    continue;
                }
                let top = top10(&preference(
                    &truth.user_latents[&user_name(u)],
                    &item_latents,
                ));
                let hits = draws.iter().filter(|i| top.contains(i)).count();
                best_rival = best_rival.max(hits);
            }
            rival_hits += best_rival;
        }
        assert!(
            maven_hits > rival_hits,
            "maven top-10 hits {} should exceed best-rival hits {}",
            maven_hits,
            rival_hits
        );
    }

    /// Mean over groups of the total-variation distance between the group's
    /// empirical choice distribution and its maven's planted preference.
    fn mean_tv(maven_weight: f64, seed: u64) -> f64 {
        let c = SynthConfig {
            n_users: 60,
            n_items: 100,
            n_groups: 40,
            group_size_range: [3, 5],
            latent_dim: 4,
            maven_weight,
            interactions_per_user: 5,
            interactions_per_group: 40,
            seed,
        };
        let (store, truth) = generate(&c).unwrap();
        let item_latents: Vec<Vec<f64>> = (0..c.n_items)
            .map(|i| truth.item_latents[&item_name(i)].clone())
            .collect();
        let mut total = 0.0;
        for g in 0..c.n_groups {
            let gt = &truth.groups[&group_name(g)];
            let maven_pref = preference(&truth.user_latents[&gt.maven], &item_latents);
            let mut empirical = vec![0.0; c.n_items];
            let mut n = 0usize;
            for r in store.group_item().iter().filter(|r| r.entity == g) {
                empirical[r.item] += 1.0;
                n += 1;
            }
            let tv: f64 = empirical
                .iter()
                .zip(&maven_pref)
                .map(|(&e, &p)| (e / n as f64 - p).abs())
                .sum::<f64>()
                / 2.0;
            total += tv;
        }
        total / c.n_groups as f64
    }

    #[test]
    fn group_distribution_approaches_maven_as_weight_rises() {
        let weights = [0.5, 0.7, 0.9, 0.99];
        let mut avg = [0.0f64; 4];
        for seed in 0..5 {
            for (k, &w) in weights.iter().enumerate() {
                avg[k] += mean_tv(w, seed) / 5.0;
            }
        }
        for k in 1..4 {
            assert!(
                avg[k] < avg[k - 1],
                "mean TV must fall as maven weight rises: {:?}",
                avg
            );
        }
    }
}
