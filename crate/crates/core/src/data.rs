//! Interaction data: loading, canonicalization, splitting, and sampling.
//!
//! The on-disk format is three CSV files:
//!
//! * `user_item.csv` — `user_id,item_id[,timestamp]`
//! * `group_item.csv` — `group_id,item_id[,timestamp]`
//! * `membership.csv` — `group_id,user_id`
//!
//! Headers are mandatory and closed: unknown extra columns are rejected so
//! a column-order mistake fails loudly instead of silently training on the
//! wrong field. Internally every id becomes a dense integer assigned in
//! sorted order of the external ids, which makes the store independent of
//! input row order: shuffling the files yields an identical store.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

/// Bidirectional mapping between external string ids and dense indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMap {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    /// Builds a map from a sorted set; dense ids follow the sorted order.
    fn from_set(set: BTreeSet<String>) -> Self {
        let names: Vec<String> = set.into_iter().collect();
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        IdMap { names, index }
    }

    /// Number of ids.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    /// Whether the map is empty.
    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Dense id for an external id.
    pub fn dense(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// External id for a dense id.
    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    /// All external ids in dense order.
    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// A single (entity, item) interaction with an optional timestamp.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub entity: usize,
    pub item: usize,
    pub timestamp: Option<i64>,
}

/// Either side of the two-tower model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Entity {
    User(usize),
    Group(usize),
}

/// One held-out evaluation case.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TestCase {
    pub entity: Entity,
    pub held_out: usize,
}

/// One pairwise training example: for `entity`, `positive` should outrank
/// `negative`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triple {
    pub entity: Entity,
    pub positive: usize,
    pub negative: usize,
}

/// Row-count diagnostics from a load.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadSummary {
    /// Duplicate interaction rows dropped (keeping the latest timestamp).
    pub duplicate_interactions: usize,
    /// Duplicate membership rows dropped.
    pub duplicate_memberships: usize,
}

/// In-memory interaction data with dense ids.
///
/// Invariants, enforced at construction: every interaction references ids
/// inside the maps, every group has at least one member, member lists are
/// sorted and duplicate-free, and interactions are deduplicated and stored
/// in (entity, item) order.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionStore {
    users: IdMap,
    items: IdMap,
    groups: IdMap,
    user_item: Vec<Interaction>,
    group_item: Vec<Interaction>,
    membership: Vec<Vec<usize>>,
    user_positives: Vec<Vec<usize>>,
    group_positives: Vec<Vec<usize>>,
}

impl fmt::Display for InteractionStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} users, {} items, {} groups, {} user-item rows, {} group-item rows",
            self.users.len(),
            self.items.len(),
            self.groups.len(),
            self.user_item.len(),
            self.group_item.len()
        )
    }
}

const USER_ITEM_FILE: &str = "user_item.csv";
const GROUP_ITEM_FILE: &str = "group_item.csv";
const MEMBERSHIP_FILE: &str = "membership.csv";

/// Raw parsed rows before id canonicalization.
struct RawRows {
    user_item: Vec<(String, String, Option<i64>)>,
    group_item: Vec<(String, String, Option<i64>)>,
    membership: Vec<(String, String)>,
}

fn read_csv(
    path: &Path,
    expected: &[&str],
    optional_last: Option<&str>,
) -> Result<Vec<Vec<String>>> {
    let display = path.display().to_string();
    let metadata = std::fs::metadata(path).map_err(|e| Error::io(&display, e))?;
    if metadata.len() == 0 {
        // A zero-byte file is an empty relation, not a malformed one.
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse {
            file: display.clone(),
            line: 0,
            reason: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            file: display.clone(),
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let header_fields: Vec<&str> = headers.iter().collect();
    let with_optional: Vec<&str> = expected.iter().copied().chain(optional_last).collect();
    if header_fields != expected && header_fields != with_optional.as_slice() {
        return Err(Error::Parse {
            file: display,
            line: 1,
            reason: format!(
                "unexpected header {:?}; want {:?} (optionally with {:?})",
                header_fields, expected, optional_last
            ),
        });
    }
    let ncols = header_fields.len();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Parse {
                file: display.clone(),
                line,
                reason: e.to_string(),
            }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != ncols {
            return Err(Error::Parse {
                file: display.clone(),
                line,
                reason: format!("expected {} fields, got {}", ncols, record.len()),
            });
        }
        let mut fields: Vec<String> = record.iter().map(str::to_owned).collect();
        for (i, f) in fields.iter().enumerate().take(expected.len()) {
            if f.is_empty() {
                return Err(Error::Parse {
                    file: display.clone(),
                    line,
                    reason: format!("empty {} field", expected[i]),
                });
            }
        }
        // Record the source line so id/timestamp errors can point at it.
        fields.push(line.to_string());
        rows.push(fields);
    }
    Ok(rows)
}

fn parse_timestamp(field: Option<&String>, file: &str, line: &str) -> Result<Option<i64>> {
    match field {
        None => Ok(None),
        Some(s) if s.is_empty() => Ok(None),
        Some(s) => s.parse::<i64>().map(Some).map_err(|_| Error::Parse {
            file: file.to_string(),
            line: line.parse().unwrap_or(0),
            reason: format!("malformed timestamp {:?}", s),
        }),
    }
}

fn read_raw(dir: &Path) -> Result<RawRows> {
    let ui_path = dir.join(USER_ITEM_FILE);
    let gi_path = dir.join(GROUP_ITEM_FILE);
    let mb_path = dir.join(MEMBERSHIP_FILE);

    let ui_name = ui_path.display().to_string();
    let mut user_item = Vec::new();
    for row in read_csv(&ui_path, &["user_id", "item_id"], Some("timestamp"))? {
        let ts = parse_timestamp(
            row.get(2).filter(|_| row.len() == 4),
            &ui_name,
            row.last().unwrap(),
        )?;
        user_item.push((row[0].clone(), row[1].clone(), ts));
    }

    let gi_name = gi_path.display().to_string();
    let mut group_item = Vec::new();
    for row in read_csv(&gi_path, &["group_id", "item_id"], Some("timestamp"))? {
        let ts = parse_timestamp(
            row.get(2).filter(|_| row.len() == 4),
            &gi_name,
            row.last().unwrap(),
        )?;
        group_item.push((row[0].clone(), row[1].clone(), ts));
    }

    let mut membership = Vec::new();
    for row in read_csv(&mb_path, &["group_id", "user_id"], None)? {
        membership.push((row[0].clone(), row[1].clone()));
    }

    Ok(RawRows {
        user_item,
        group_item,
        membership,
    })
}

/// Deduplicates (entity, item) pairs keeping the latest timestamp; a known
/// timestamp beats an unknown one. Returns rows in (entity, item) order.
fn dedup_interactions(
    rows: impl Iterator<Item = (usize, usize, Option<i64>)>,
) -> (Vec<Interaction>, usize) {
    let mut merged: BTreeMap<(usize, usize), Option<i64>> = BTreeMap::new();
    let mut total = 0usize;
    for (entity, item, ts) in rows {
        total += 1;
        merged
            .entry((entity, item))
            .and_modify(|old| *old = (*old).max(ts))
            .or_insert(ts);
    }
    let dropped = total - merged.len();
    let out = merged
        .into_iter()
        .map(|((entity, item), timestamp)| Interaction {
            entity,
            item,
            timestamp,
        })
        .collect();
    (out, dropped)
}

fn positives_by_entity(n: usize, rows: &[Interaction]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); n];
    for r in rows {
        out[r.entity].push(r.item);
    }
    // rows are (entity, item)-sorted, so each list is already ascending
    out
}

impl InteractionStore {
    /// Loads the three CSV files from a directory.
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self::load_with_summary(dir)?.0)
    }

    /// Loads and additionally reports deduplication counts.
    pub fn load_with_summary(dir: &Path) -> Result<(Self, LoadSummary)> {
        let raw = read_raw(dir)?;

        let mut user_names = BTreeSet::new();
        let mut item_names = BTreeSet::new();
        let mut group_names = BTreeSet::new();
        for (u, i, _) in &raw.user_item {
            user_names.insert(u.clone());
            item_names.insert(i.clone());
        }
        for (g, i, _) in &raw.group_item {
            group_names.insert(g.clone());
            item_names.insert(i.clone());
        }
        for (g, u) in &raw.membership {
            group_names.insert(g.clone());
            user_names.insert(u.clone());
        }

        let users = IdMap::from_set(user_names);
        let items = IdMap::from_set(item_names);
        let groups = IdMap::from_set(group_names);

        let (user_item, dup_ui) = dedup_interactions(raw.user_item.iter().map(|(u, i, ts)| {
            (
                users.dense(u).expect("collected above"),
                items.dense(i).expect("collected above"),
                *ts,
            )
        }));
        let (group_item, dup_gi) = dedup_interactions(raw.group_item.iter().map(|(g, i, ts)| {
            (
                groups.dense(g).expect("collected above"),
                items.dense(i).expect("collected above"),
                *ts,
            )
        }));

        let mut member_set: BTreeSet<(usize, usize)> = BTreeSet::new();
        let mut raw_members = 0usize;
        for (g, u) in &raw.membership {
            raw_members += 1;
            member_set.insert((
                groups.dense(g).expect("collected above"),
                users.dense(u).expect("collected above"),
            ));
        }
        let dup_mb = raw_members - member_set.len();
        let mut membership = vec![Vec::new(); groups.len()];
        for (g, u) in member_set {
            membership[g].push(u);
        }
        for (g, members) in membership.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::Invalid(format!(
                    "group {:?} has interactions but no membership rows",
                    groups.name(g)
                )));
            }
        }

        let summary = LoadSummary {
            duplicate_interactions: dup_ui + dup_gi,
            duplicate_memberships: dup_mb,
        };
        if summary.duplicate_interactions > 0 {
            log::warn!(
                "dropped {} duplicate interaction rows",
                summary.duplicate_interactions
            );
        }
        if summary.duplicate_memberships > 0 {
            log::warn!(
                "dropped {} duplicate membership rows",
                summary.duplicate_memberships
            );
        }

        let user_positives = positives_by_entity(users.len(), &user_item);
        let group_positives = positives_by_entity(groups.len(), &group_item);
        Ok((
            InteractionStore {
                users,
                items,
                groups,
                user_item,
                group_item,
                membership,
                user_positives,
                group_positives,
            },
            summary,
        ))
    }

    /// Builds a store from already-dense parts.
    ///
    /// Name vectors must be sorted and unique (dense ids are positions in
    /// them); interactions are deduplicated here, and membership lists are
    /// sorted and deduplicated. Used by the synthetic generator and tests.
    pub fn from_parts(
        user_names: Vec<String>,
        item_names: Vec<String>,
        group_names: Vec<String>,
        user_item: Vec<Interaction>,
        group_item: Vec<Interaction>,
        membership: Vec<Vec<usize>>,
    ) -> Result<Self> {
        for (label, names) in [
            ("user", &user_names),
            ("item", &item_names),
            ("group", &group_names),
        ] {
            if names.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Invalid(format!(
                    "{} names must be sorted and unique",
                    label
                )));
            }
        }
        if membership.len() != group_names.len() {
            return Err(Error::Invalid(format!(
                "membership has {} entries for {} groups",
                membership.len(),
                group_names.len()
            )));
        }
        let (n_users, n_items, n_groups) = (user_names.len(), item_names.len(), group_names.len());
        for r in &user_item {
            if r.entity >= n_users || r.item >= n_items {
                return Err(Error::Invalid(format!(
                    "user-item interaction ({}, {}) out of range",
                    r.entity, r.item
                )));
            }
        }
        for r in &group_item {
            if r.entity >= n_groups || r.item >= n_items {
                return Err(Error::Invalid(format!(
                    "group-item interaction ({}, {}) out of range",
                    r.entity, r.item
                )));
            }
        }
        let mut sorted_membership = Vec::with_capacity(membership.len());
        for (g, members) in membership.into_iter().enumerate() {
            let set: BTreeSet<usize> = members.into_iter().collect();
            if set.is_empty() {
                return Err(Error::Invalid(format!("group {} has no members", g)));
            }
            if let Some(&bad) = set.iter().find(|&&u| u >= n_users) {
                return Err(Error::Invalid(format!(
                    "group {} member {} out of range",
                    g, bad
                )));
            }
            sorted_membership.push(set.into_iter().collect::<Vec<_>>());
        }
        let (user_item, _) = dedup_interactions(
            user_item
                .into_iter()
                .map(|r| (r.entity, r.item, r.timestamp)),
        );
        let (group_item, _) = dedup_interactions(
            group_item
                .into_iter()
                .map(|r| (r.entity, r.item, r.timestamp)),
        );
        let user_positives = positives_by_entity(n_users, &user_item);
        let group_positives = positives_by_entity(n_groups, &group_item);
        Ok(InteractionStore {
            users: IdMap::from_set(user_names.into_iter().collect()),
            items: IdMap::from_set(item_names.into_iter().collect()),
            groups: IdMap::from_set(group_names.into_iter().collect()),
            user_item,
            group_item,
            membership: sorted_membership,
            user_positives,
            group_positives,
        })
    }

    /// Writes the three CSV files into a directory.
    ///
    /// Rows are emitted in canonical (entity, item) order with external ids,
    /// so two identical stores serialize byte-for-byte identically. The
    /// timestamp column appears whenever any interaction in that file
    /// carries one.
    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        self.write_interactions(
            &dir.join(USER_ITEM_FILE),
            "user_id",
            &self.users,
            &self.user_item,
        )?;
        self.write_interactions(
            &dir.join(GROUP_ITEM_FILE),
            "group_id",
            &self.groups,
            &self.group_item,
        )?;
        let mb_path = dir.join(MEMBERSHIP_FILE);
        let mut w = csv::Writer::from_path(&mb_path).map_err(|e| Error::Serialize {
            path: mb_path.display().to_string(),
            reason: e.to_string(),
        })?;
        w.write_record(["group_id", "user_id"])
            .map_err(|e| Error::Serialize {
                path: mb_path.display().to_string(),
                reason: e.to_string(),
            })?;
        for (g, members) in self.membership.iter().enumerate() {
            for &u in members {
                w.write_record([self.groups.name(g), self.users.name(u)])
                    .map_err(|e| Error::Serialize {
                        path: mb_path.display().to_string(),
                        reason: e.to_string(),
                    })?;
            }
        }
        w.flush()
            .map_err(|e| Error::io(mb_path.display().to_string(), e))?;
        Ok(())
    }

    fn write_interactions(
        &self,
        path: &Path,
        entity_col: &str,
        entities: &IdMap,
        rows: &[Interaction],
    ) -> Result<()> {
        let display = path.display().to_string();
        let with_ts = rows.iter().any(|r| r.timestamp.is_some());
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serialize {
            path: display.clone(),
            reason: e.to_string(),
        })?;
        let fail = |e: csv::Error| Error::Serialize {
            path: display.clone(),
            reason: e.to_string(),
        };
        if with_ts {
            w.write_record([entity_col, "item_id", "timestamp"])
                .map_err(fail)?;
        } else {
            w.write_record([entity_col, "item_id"]).map_err(fail)?;
        }
        for r in rows {
            let entity = entities.name(r.entity);
            let item = self.items.name(r.item);
            if with_ts {
                let ts = r.timestamp.map(|t| t.to_string()).unwrap_or_default();
                w.write_record([entity, item, &ts])
                    .map_err(|e| Error::Serialize {
                        path: display.clone(),
                        reason: e.to_string(),
                    })?;
            } else {
                w.write_record([entity, item])
                    .map_err(|e| Error::Serialize {
                        path: display.clone(),
                        reason: e.to_string(),
                    })?;
            }
        }
        w.flush().map_err(|e| Error::io(display.clone(), e))?;
        Ok(())
    }

    /// User id map.
    pub fn users(&self) -> &IdMap {
        &self.users
    }

    /// Item id map.
    pub fn items(&self) -> &IdMap {
        &self.items
    }

    /// Group id map.
    pub fn groups(&self) -> &IdMap {
        &self.groups
    }

    /// Number of users.
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    /// Number of items.
    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Number of groups.
    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// All user-item interactions in canonical order.
    pub fn user_item(&self) -> &[Interaction] {
        &self.user_item
    }

    /// All group-item interactions in canonical order.
    pub fn group_item(&self) -> &[Interaction] {
        &self.group_item
    }

    /// Sorted member list of a group.
    pub fn members(&self, group: usize) -> &[usize] {
        &self.membership[group]
    }

    /// Ascending item ids a user interacted with.
    pub fn user_positives(&self, user: usize) -> &[usize] {
        &self.user_positives[user]
    }

    /// Ascending item ids a group interacted with.
    pub fn group_positives(&self, group: usize) -> &[usize] {
        &self.group_positives[group]
    }

    fn positives(&self, entity: Entity) -> &[usize] {
        match entity {
            Entity::User(u) => &self.user_positives[u],
            Entity::Group(g) => &self.group_positives[g],
        }
    }

    /// Leave-one-out split.
    ///
    /// For every user and every group with at least two interactions, one
    /// interaction is held out: the latest by timestamp when all rows carry
    /// timestamps (ties broken toward the larger item id), otherwise a
    /// seeded-uniform pick. Entities with a single interaction stay in the
    /// training store untouched. The returned test cases are ordered groups
    /// first, then users, each ascending by dense id.
    pub fn split_leave_one_out(&self, seed: u64) -> (InteractionStore, Vec<TestCase>) {
        let mut held: HashSet<(bool, usize, usize)> = HashSet::new();
        let mut cases = Vec::new();

        let pick = |entity: Entity, rows: &[Interaction]| -> Option<usize> {
            if rows.len() < 2 {
                return None;
            }
            let all_stamped = rows.iter().all(|r| r.timestamp.is_some());
            if all_stamped {
                rows.iter()
                    .map(|r| (r.timestamp.unwrap(), r.item))
                    .max()
                    .map(|(_, item)| item)
            } else {
                let salt = match entity {
                    Entity::User(u) => u as u64 * 2 + 1,
                    Entity::Group(g) => g as u64 * 2,
                };
                let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix(seed, salt));
                Some(rows[rng.random_range(0..rows.len())].item)
            }
        };

        let mut group_rows: Vec<Vec<Interaction>> = vec![Vec::new(); self.groups.len()];
        for r in &self.group_item {
            group_rows[r.entity].push(*r);
        }
        for (g, rows) in group_rows.iter().enumerate() {
            if let Some(item) = pick(Entity::Group(g), rows) {
                held.insert((true, g, item));
                cases.push(TestCase {
                    entity: Entity::Group(g),
                    held_out: item,
                });
            }
        }
        let mut user_rows: Vec<Vec<Interaction>> = vec![Vec::new(); self.users.len()];
        for r in &self.user_item {
            user_rows[r.entity].push(*r);
        }
        for (u, rows) in user_rows.iter().enumerate() {
            if let Some(item) = pick(Entity::User(u), rows) {
                held.insert((false, u, item));
                cases.push(TestCase {
                    entity: Entity::User(u),
                    held_out: item,
                });
            }
        }

        let user_item: Vec<Interaction> = self
            .user_item
            .iter()
            .filter(|r| !held.contains(&(false, r.entity, r.item)))
            .copied()
            .collect();
        let group_item: Vec<Interaction> = self
            .group_item
            .iter()
            .filter(|r| !held.contains(&(true, r.entity, r.item)))
            .copied()
            .collect();
        let user_positives = positives_by_entity(self.users.len(), &user_item);
        let group_positives = positives_by_entity(self.groups.len(), &group_item);
        let train = InteractionStore {
            users: self.users.clone(),
            items: self.items.clone(),
            groups: self.groups.clone(),
            user_item,
            group_item,
            membership: self.membership.clone(),
            user_positives,
            group_positives,
        };
        (train, cases)
    }

    /// Samples `k` negative items for an entity, seeded and replayable.
    ///
    /// Negatives are drawn uniformly from the items the entity has not
    /// interacted with. Draws within one call are distinct while the pool
    /// allows; if `k` exceeds the pool, every eligible item is returned once
    /// plus uniform repeats (with a warning). Errors when the entity has
    /// interacted with the entire catalog.
    pub fn sample_negatives(&self, entity: Entity, k: usize, seed: u64) -> Result<Vec<usize>> {
        let positives = self.positives(entity);
        let eligible = self.items.len() - positives.len();
        if eligible == 0 {
            return Err(Error::Invalid(format!(
                "no eligible negatives: {:?} interacted with all {} items",
                entity,
                self.items.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos: HashSet<usize> = positives.iter().copied().collect();
        if k <= eligible {
            // Sparse regime: rejection-sample distinct items. Dense regime
            // (k close to the pool): enumerate and partially shuffle, which
            // cannot stall.
            if k * 3 <= eligible {
                let mut drawn = Vec::with_capacity(k);
                let mut seen = HashSet::with_capacity(k * 2);
                while drawn.len() < k {
                    let item = rng.random_range(0..self.items.len());
                    if pos.contains(&item) || !seen.insert(item) {
                        continue;
                    }
                    drawn.push(item);
                }
                Ok(drawn)
            } else {
                let mut pool: Vec<usize> =
                    (0..self.items.len()).filter(|i| !pos.contains(i)).collect();
                for i in 0..k {
                    let j = rng.random_range(i..pool.len());
                    pool.swap(i, j);
                }
                pool.truncate(k);
                Ok(pool)
            }
        } else {
            log::warn!(
                "{:?}: requested {} negatives but only {} are eligible; padding with repeats",
                entity,
                k,
                eligible
            );
            let pool: Vec<usize> = (0..self.items.len()).filter(|i| !pos.contains(i)).collect();
            let mut out = pool.clone();
            while out.len() < k {
                out.push(pool[rng.random_range(0..pool.len())]);
            }
            Ok(out)
        }
    }

    /// Expands every positive interaction into `ratio` pairwise triples.
    ///
    /// Each (entity, positive) draws its negatives from its own derived
    /// seed, and the combined list is shuffled by another derived seed, so
    /// the result depends only on `(store, ratio, seed)`. A ratio of zero
    /// yields an empty list.
    pub fn make_train_triples(&self, ratio: usize, seed: u64) -> Result<Vec<Triple>> {
        let mut triples = Vec::new();
        if ratio == 0 {
            return Ok(triples);
        }
        for g in 0..self.groups.len() {
            for &positive in &self.group_positives[g] {
                let entity = Entity::Group(g);
                let child = seeds::mix(seed, (g as u64) << 32 | positive as u64 | 1 << 63);
                for negative in self.sample_negatives(entity, ratio, child)? {
                    triples.push(Triple {
                        entity,
                        positive,
                        negative,
                    });
                }
            }
        }
        for u in 0..self.users.len() {
            for &positive in &self.user_positives[u] {
                let entity = Entity::User(u);
                let child = seeds::mix(seed, (u as u64) << 32 | positive as u64);
                for negative in self.sample_negatives(entity, ratio, child)? {
                    triples.push(Triple {
                        entity,
                        positive,
                        negative,
                    });
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix(seed, u64::MAX));
        // Fisher-Yates, explicit for a stable shuffle across dependency bumps.
        for i in (1..triples.len()).rev() {
            let j = rng.random_range(0..=i);
            triples.swap(i, j);
        }
        Ok(triples)
    }
}

/// Writes raw CSV content to a file, for tests and small tools.
pub fn write_raw_csv(path: &Path, content: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(content.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}
