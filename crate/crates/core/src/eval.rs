//! Full-ranking top-K evaluation.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use log::warn;
use thiserror::Error;

use crate::backbone::{score, BackboneParams, ScoringView, SharedFeatures};
use crate::dataset::{InteractionDataset, SplitTag};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("no user has a relevant item in the {0} split")]
    NoEligibleUsers(SplitTag),
    #[error("K must be at least 1")]
    ZeroK,
}

/// Which of a user's known positives are removed from the candidate list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExcludeMode {
    None,
    #[default]
    Train,
    TrainValid,
}

impl ExcludeMode {
    pub fn tags(self) -> &'static [SplitTag] {
        match self {
            ExcludeMode::None => &[],
            ExcludeMode::Train => &[SplitTag::Train],
            ExcludeMode::TrainValid => &[SplitTag::Train, SplitTag::Valid],
        }
    }
}

impl FromStr for ExcludeMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(ExcludeMode::None),
            "train" => Ok(ExcludeMode::Train),
            "train+valid" => Ok(ExcludeMode::TrainValid),
            other => Err(format!("unknown exclusion `{other}` (none, train, train+valid)")),
        }
    }
}

impl fmt::Display for ExcludeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExcludeMode::None => "none",
            ExcludeMode::Train => "train",
            ExcludeMode::TrainValid => "train+valid",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserMetrics {
    pub user: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub precision: f64,
    pub num_users: usize,
    pub per_user: Option<Vec<UserMetrics>>,
}

impl MetricsReport {
    pub const TSV_HEADER: &'static str = "k\trecall\tndcg\tprecision\tusers";

    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}",
            self.k, self.recall, self.ndcg, self.precision, self.num_users
        )
    }
}

/// Writes the summary TSV (header plus one row per K).
pub fn write_reports<W: Write>(reports: &[MetricsReport], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", MetricsReport::TSV_HEADER)?;
    for r in reports {
        writeln!(out, "{}", r.tsv_row())?;
    }
    Ok(())
}

/// Writes `user_id\tk\trecall\tndcg\tprecision` rows.
pub fn write_per_user<W: Write>(reports: &[MetricsReport], ds: &InteractionDataset, mut out: W) -> std::io::Result<()> {
    writeln!(out, "user\tk\trecall\tndcg\tprecision")?;
    for r in reports {
        for u in r.per_user.iter().flatten() {
            writeln!(
                out,
                "{}\t{}\t{:.6}\t{:.6}\t{:.6}",
                ds.users.id(u.user),
                r.k,
                u.recall,
                u.ndcg,
                u.precision
            )?;
        }
    }
    Ok(())
}

/// Human-readable table.
pub fn format_table(reports: &[MetricsReport]) -> String {
    let mut s = format!(
        "{:>4}  {:>9}  {:>9}  {:>9}  {:>6}\n",
        "K", "Recall", "NDCG", "Precision", "users"
    );
    for r in reports {
        s.push_str(&format!(
            "{:>4}  {:>9.4}  {:>9.4}  {:>9.4}  {:>6}\n",
            r.k, r.recall, r.ndcg, r.precision, r.num_users
        ));
    }
    s
}

/// Indices of the `k` highest scores, ties by ascending index, skipping the
/// sorted `exclude` list. Shorter than `k` when too few candidates remain.
pub fn top_k<T: Scalar>(scores: &[T], exclude: &[usize], k: usize) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..scores.len())
        .filter(|i| exclude.binary_search(i).is_err())
        .collect();
    let order = |a: &usize, b: &usize| -> Ordering {
        scores[*b]
            .partial_cmp(&scores[*a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(b))
    };
    if k == 0 {
        return Vec::new();
    }
    if cand.len() > k {
        cand.select_nth_unstable_by(k - 1, order);
        cand.truncate(k);
    }
    cand.sort_unstable_by(order);
    cand
}

/// Top-K items for one user under the current parameters.
pub fn rank_items<T: Scalar>(
    params: &BackboneParams<T>,
    shared: &SharedFeatures<T>,
    user: usize,
    exclude: &[usize],
    k: usize,
) -> Vec<usize> {
    let scores: Vec<T> = (0..params.num_items())
        .map(|i| score(params, shared, user, i))
        .collect();
    let out = top_k(&scores, exclude, k);
    if out.len() < k {
        warn!("user {user}: only {} candidate item(s) for K={k}", out.len());
    }
    out
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// Metrics of one ranked list against a sorted relevant set (relevant nonempty).
pub fn user_metrics(user: usize, ranked: &[usize], relevant: &[usize], k: usize) -> UserMetrics {
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (pos, item) in ranked.iter().take(k).enumerate() {
        if relevant.binary_search(item).is_ok() {
            hits += 1;
            dcg += discount(pos + 1);
        }
    }
    let idcg: f64 = (1..=k.min(relevant.len())).map(discount).sum();
    UserMetrics {
        user,
        recall: hits as f64 / relevant.len() as f64,
        ndcg: dcg / idcg,
        precision: hits as f64 / k as f64,
    }
}

const USER_BLOCK: usize = 256;

/// Recall/NDCG/Precision at each K in `ks`, averaged over users with at least
/// one `split` interaction.
pub fn evaluate_topk<T: Scalar>(
    params: &BackboneParams<T>,
    shared: &SharedFeatures<T>,
    ds: &InteractionDataset,
    split: SplitTag,
    ks: &[usize],
    exclude: ExcludeMode,
    keep_per_user: bool,
) -> Result<Vec<MetricsReport>, EvalError> {
    let view = ScoringView::new(params, shared);
    evaluate_view(&view, ds, split, ks, exclude, keep_per_user)
}

pub fn evaluate_view<T: Scalar>(
    view: &ScoringView<T>,
    ds: &InteractionDataset,
    split: SplitTag,
    ks: &[usize],
    exclude: ExcludeMode,
    keep_per_user: bool,
) -> Result<Vec<MetricsReport>, EvalError> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(EvalError::ZeroK);
    }
    let relevant = ds.user_items(&[split]);
    let excluded = ds.user_items(exclude.tags());
    let eligible: Vec<usize> = (0..ds.num_users()).filter(|&u| !relevant.items(u).is_empty()).collect();
    if eligible.is_empty() {
        return Err(EvalError::NoEligibleUsers(split));
    }
    let kmax = *ks.iter().max().expect("nonempty");
    let mut per_k: Vec<Vec<UserMetrics>> = vec![Vec::with_capacity(eligible.len()); ks.len()];
    let mut short = 0usize;
    for block in eligible.chunks(USER_BLOCK) {
        let (lo, hi) = (block[0], block[block.len() - 1] + 1);
        let scores = view.block(lo..hi);
        for &u in block {
            let row = scores.row(u - lo);
            let row = row.as_slice().expect("contiguous rows");
            let ranked = top_k(row, excluded.items(u), kmax);
            short += usize::from(ranked.len() < kmax);
            for (slot, &k) in ks.iter().enumerate() {
                per_k[slot].push(user_metrics(u, &ranked, relevant.items(u), k));
            }
        }
    }
    if short > 0 {
        warn!("{short} user(s) had fewer than {kmax} candidate items");
    }
    let n = eligible.len() as f64;
    Ok(ks
        .iter()
        .zip(per_k)
        .map(|(&k, users)| MetricsReport {
            k,
            recall: users.iter().map(|m| m.recall).sum::<f64>() / n,
            ndcg: users.iter().map(|m| m.ndcg).sum::<f64>() / n,
            precision: users.iter().map(|m| m.precision).sum::<f64>() / n,
            num_users: users.len(),
            per_user: keep_per_user.then_some(users),
        })
        .collect())
}
