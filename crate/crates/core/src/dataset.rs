//! Interaction data model, TSV ingestion, per-user splits and negative sampling.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("dataset is empty")]
    Empty,
    #[error("line {line}: duplicate interaction ({user}, {item})")]
    Duplicate { line: usize, user: String, item: String },
    #[error("user {user} has interacted with every item; no negative exists")]
    NoNegative { user: usize },
    #[error("split ratios {0:?} must be non-negative and sum to 1")]
    BadRatios([f64; 3]),
    #[error("feature error ({modality}): {msg}")]
    Feature { modality: String, msg: String },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Which portion of the data an interaction belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitTag {
    Train,
    Valid,
    Test,
    /// Removed from evaluation by an OOD filter; kept so the tagging stays a partition.
    Dropped,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Valid => "valid",
            SplitTag::Test => "test",
            SplitTag::Dropped => "dropped",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitTag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitTag::Train),
            "valid" => Ok(SplitTag::Valid),
            "test" => Ok(SplitTag::Test),
            "dropped" => Ok(SplitTag::Dropped),
            other => Err(format!("unknown split tag `{other}`")),
        }
    }
}

/// Bijection between external string ids and contiguous indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ids<I: IntoIterator<Item = String>>(ids: I) -> Self {
        let mut map = Self::new();
        for id in ids {
            map.intern(&id);
        }
        map
    }

    /// Index of `id`, assigning the next free index on first sight.
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
}

/// Users, items and tagged positive interactions.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    pub users: IdMap,
    pub items: IdMap,
    pub interactions: Vec<Interaction>,
    pub tags: Vec<SplitTag>,
}

/// One BPR training example: `pos_item` observed for `user`, `neg_item` not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainTriple {
    pub user: usize,
    pub pos_item: usize,
    pub neg_item: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Drop repeated (user, item) lines with a warning instead of failing.
    pub dedup: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { dedup: true }
    }
}

impl InteractionDataset {
    /// Builds a dataset, checking index bounds and rejecting duplicate pairs.
    pub fn new(
        users: IdMap,
        items: IdMap,
        interactions: Vec<Interaction>,
        tags: Vec<SplitTag>,
    ) -> Result<Self, DataError> {
        assert_eq!(interactions.len(), tags.len(), "one tag per interaction");
        let mut seen = std::collections::HashSet::with_capacity(interactions.len());
        for (line, it) in interactions.iter().enumerate() {
            if it.user >= users.len() || it.item >= items.len() {
                return Err(DataError::Parse {
                    line: line + 1,
                    msg: format!("index out of range ({}, {})", it.user, it.item),
                });
            }
            if !seen.insert(*it) {
                return Err(DataError::Duplicate {
                    line: line + 1,
                    user: users.id(it.user).to_owned(),
                    item: items.id(it.item).to_owned(),
                });
            }
        }
        Ok(Self {
            users,
            items,
            interactions,
            tags,
        })
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn count(&self, tag: SplitTag) -> usize {
        self.tags.iter().filter(|&&t| t == tag).count()
    }

    pub fn tagged(&self, tag: SplitTag) -> impl Iterator<Item = Interaction> + '_ {
        self.interactions
            .iter()
            .zip(&self.tags)
            .filter(move |(_, &t)| t == tag)
            .map(|(it, _)| *it)
    }

    /// Per-user sorted item lists restricted to the given tags.
    pub fn user_items(&self, tags: &[SplitTag]) -> UserItems {
        let mut lists = vec![Vec::new(); self.num_users()];
        for (it, t) in self.interactions.iter().zip(&self.tags) {
            if tags.contains(t) {
                lists[it.user].push(it.item);
            }
        }
        for l in &mut lists {
            l.sort_unstable();
        }
        UserItems { lists }
    }

    /// Items with at least one training interaction, ascending.
    pub fn train_items(&self) -> Vec<usize> {
        let mut seen = vec![false; self.num_items()];
        for it in self.tagged(SplitTag::Train) {
            seen[it.item] = true;
        }
        (0..self.num_items()).filter(|&i| seen[i]).collect()
    }

    /// Writes `user_id\titem_id\ttag` lines in interaction order.
    pub fn write_tagged<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (it, t) in self.interactions.iter().zip(&self.tags) {
            writeln!(out, "{}\t{}\t{}", self.users.id(it.user), self.items.id(it.item), t)?;
        }
        Ok(())
    }

    /// Writes plain `user_id\titem_id` lines (tags discarded).
    pub fn write_pairs<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for it in &self.interactions {
            writeln!(out, "{}\t{}", self.users.id(it.user), self.items.id(it.item))?;
        }
        Ok(())
    }
}

/// Sorted per-user item lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserItems {
    lists: Vec<Vec<usize>>,
}

impl UserItems {
    pub fn items(&self, user: usize) -> &[usize] {
        &self.lists[user]
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.lists[user].binary_search(&item).is_ok()
    }

    pub fn num_users(&self) -> usize {
        self.lists.len()
    }
}

/// Reads a UTF-8 TSV of `user_id\titem_id` or `user_id\titem_id\ttag` lines.
///
/// Indices are assigned in first-appearance order. Two-column files are tagged
/// entirely as train.
pub fn load_interactions(path: &Path, opts: LoadOptions) -> Result<InteractionDataset, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    parse_interactions(BufReader::new(file), opts).map_err(|e| match e {
        DataError::Io { source, .. } => DataError::io(path, source),
        other => other,
    })
}

pub fn parse_interactions<R: BufRead>(reader: R, opts: LoadOptions) -> Result<InteractionDataset, DataError> {
    let mut users = IdMap::new();
    let mut items = IdMap::new();
    let mut interactions = Vec::new();
    let mut tags = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut dups = 0usize;
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| DataError::Io {
            path: "<reader>".into(),
            source: e,
        })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let (u, i, tag) = match fields.as_slice() {
            [u, i] => (*u, *i, SplitTag::Train),
            [u, i, t] => {
                let tag = t.parse().map_err(|msg| DataError::Parse { line: line_no, msg })?;
                (*u, *i, tag)
            }
            _ => {
                return Err(DataError::Parse {
                    line: line_no,
                    msg: format!("expected 2 or 3 tab-separated fields, got {}", fields.len()),
                })
            }
        };
        if u.is_empty() || i.is_empty() {
            return Err(DataError::Parse {
                line: line_no,
                msg: "empty id".into(),
            });
        }
        let it = Interaction {
            user: users.intern(u),
            item: items.intern(i),
        };
        if !seen.insert(it) {
            if opts.dedup {
                dups += 1;
                continue;
            }
            return Err(DataError::Duplicate {
                line: line_no,
                user: u.to_owned(),
                item: i.to_owned(),
            });
        }
        interactions.push(it);
        tags.push(tag);
    }
    if interactions.is_empty() {
        return Err(DataError::Empty);
    }
    if dups > 0 {
        warn!("dropped {dups} duplicate interaction line(s)");
    }
    Ok(InteractionDataset {
        users,
        items,
        interactions,
        tags,
    })
}

/// Train/valid/test proportions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const RANDOM: SplitRatios = SplitRatios {
        train: 0.8,
        valid: 0.1,
        test: 0.1,
    };

    pub fn new(train: f64, valid: f64, test: f64) -> Result<Self, DataError> {
        let r = [train, valid, test];
        if r.iter().any(|x| !x.is_finite() || *x < 0.0) || (train + valid + test - 1.0).abs() > 1e-6 {
            return Err(DataError::BadRatios(r));
        }
        Ok(Self { train, valid, test })
    }

    /// Per-user counts for `k` interactions.
    ///
    /// `train = max(1, floor(train_ratio * k))`; the remainder goes to valid
    /// and test in proportion, valid rounded up. With 0.8/0.1/0.1 this gives
    /// 5 -> 4/1/0 and 10 -> 8/1/1.
    pub fn counts(&self, k: usize) -> (usize, usize, usize) {
        const EPS: f64 = 1e-9;
        if k == 0 {
            return (0, 0, 0);
        }
        let held = self.valid + self.test;
        if held <= 0.0 {
            return (k, 0, 0);
        }
        let train = ((self.train * k as f64 + EPS).floor() as usize).clamp(1, k);
        let rem = k - train;
        let valid = ((rem as f64 * self.valid / held - EPS).ceil().max(0.0) as usize).min(rem);
        (train, valid, rem - valid)
    }
}

/// Minimum per-user interactions for the user to be split at all.
pub const MIN_SPLIT_INTERACTIONS: usize = 3;

/// Per-user random split; deterministic in `seed`. Existing tags are discarded.
pub fn random_split(ds: &InteractionDataset, ratios: SplitRatios, seed: u64) -> InteractionDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); ds.num_users()];
    for (idx, it) in ds.interactions.iter().enumerate() {
        by_user[it.user].push(idx);
    }
    let mut tags = vec![SplitTag::Train; ds.len()];
    let mut skipped = 0usize;
    for idxs in &mut by_user {
        if idxs.len() < MIN_SPLIT_INTERACTIONS {
            skipped += usize::from(!idxs.is_empty());
            continue;
        }
        idxs.shuffle(&mut rng);
        let (train, valid, _) = ratios.counts(idxs.len());
        for (pos, &idx) in idxs.iter().enumerate() {
            tags[idx] = if pos < train {
                SplitTag::Train
            } else if pos < train + valid {
                SplitTag::Valid
            } else {
                SplitTag::Test
            };
        }
    }
    if skipped > 0 {
        warn!("{skipped} user(s) with fewer than {MIN_SPLIT_INTERACTIONS} interactions kept entirely in train");
    }
    InteractionDataset { tags, ..ds.clone() }
}

/// Which known positives a negative must avoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegExclude {
    Train,
    #[default]
    All,
}

impl FromStr for NegExclude {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(NegExclude::Train),
            "all" => Ok(NegExclude::All),
            other => Err(format!("unknown negative-exclusion mode `{other}`")),
        }
    }
}

impl fmt::Display for NegExclude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NegExclude::Train => "train",
            NegExclude::All => "all",
        })
    }
}

/// Uniform sampler over the items a user has not interacted with.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    positives: UserItems,
    num_items: usize,
}

const REJECTION_TRIES: usize = 100;

impl NegativeSampler {
    pub fn new(ds: &InteractionDataset, exclude: NegExclude) -> Self {
        let tags: &[SplitTag] = match exclude {
            NegExclude::Train => &[SplitTag::Train],
            NegExclude::All => &[SplitTag::Train, SplitTag::Valid, SplitTag::Test, SplitTag::Dropped],
        };
        Self {
            positives: ds.user_items(tags),
            num_items: ds.num_items(),
        }
    }

    pub fn positives(&self) -> &UserItems {
        &self.positives
    }

    /// Rejection sampling, then an exact scan of the complement if that fails.
    pub fn sample<R: Rng + ?Sized>(&self, user: usize, rng: &mut R) -> Result<usize, DataError> {
        let pos = self.positives.items(user);
        if pos.len() >= self.num_items {
            return Err(DataError::NoNegative { user });
        }
        for _ in 0..REJECTION_TRIES {
            let j = rng.random_range(0..self.num_items);
            if pos.binary_search(&j).is_err() {
                return Ok(j);
            }
        }
        let complement: Vec<usize> = (0..self.num_items).filter(|j| pos.binary_search(j).is_err()).collect();
        Ok(complement[rng.random_range(0..complement.len())])
    }
}

pub fn sample_negative<R: Rng + ?Sized>(
    ds: &InteractionDataset,
    user: usize,
    exclude: NegExclude,
    rng: &mut R,
) -> Result<usize, DataError> {
    NegativeSampler::new(ds, exclude).sample(user, rng)
}
