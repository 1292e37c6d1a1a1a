//! Evaluation: accuracy, rating error, exposure and aggregate diversity,
//! distributional inequality, group visibility shift, calibration,
//! disparity and user-profile diagnostics.
//!
//! Logarithms are natural throughout. Values that are undefined for the
//! input (an empty long tail, a one-element Gini) are returned as `None`
//! and left out of reports.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, GenreMap, PopularityProfile, SupplierMap};
use crate::error::{Error, Result};
use crate::recommend::{RecBatch, RecList};

/// Non-negative weights over a dense key space (item or supplier ordinals).
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    weights: Vec<f64>,
}

impl Distribution {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
            return Err(Error::domain(format!("negative or NaN weight {w}")));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Weights divided by their total; an all-zero distribution stays zero.
    pub fn normalized(&self) -> Distribution {
        let total = self.total();
        if total == 0.0 {
            return self.clone();
        }
        Distribution {
            weights: self.weights.iter().map(|w| w / total).collect(),
        }
    }
}

/// Partition of a key domain into labelled groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAssignment {
    pub groups: Vec<Vec<usize>>,
}

impl GroupAssignment {
    /// Fails unless every key in `0..domain` appears in exactly one group.
    pub fn partition(groups: Vec<Vec<usize>>, domain: usize) -> Result<Self> {
        let mut seen = vec![false; domain];
        for &k in groups.iter().flatten() {
            if k >= domain || seen[k] {
                return Err(Error::domain(format!(
                    "key {k} is out of range or repeated"
                )));
            }
            seen[k] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::domain("groups do not cover the domain"));
        }
        Ok(Self { groups })
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Item,
    Supplier,
}

fn hits(list: &RecList, test: &Dataset) -> usize {
    list.items()
        .filter(|&i| test.contains(list.user, i))
        .count()
}

fn non_empty(batch: &RecBatch) -> impl Iterator<Item = &RecList> {
    batch.lists().iter().filter(|l| !l.is_empty())
}

/// Mean precision over users with a non-empty list and mean recall over
/// those of them with a non-empty test profile.
pub fn precision_recall(batch: &RecBatch, test: &Dataset) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(Error::domain("precision against an empty test set"));
    }
    let (mut p_sum, mut p_n, mut r_sum, mut r_n) = (0.0, 0usize, 0.0, 0usize);
    for list in non_empty(batch) {
        let h = hits(list, test) as f64;
        p_sum += h / list.len() as f64;
        p_n += 1;
        let relevant = test.user_profile(list.user).len();
        if relevant > 0 {
            r_sum += h / relevant as f64;
            r_n += 1;
        }
    }
    let avg = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok((avg(p_sum, p_n), avg(r_sum, r_n)))
}

/// Per-user precision `hits / |list|` for every non-empty list.
pub fn user_precision(batch: &RecBatch, test: &Dataset) -> Vec<(usize, f64)> {
    non_empty(batch)
        .map(|l| (l.user, hits(l, test) as f64 / l.len() as f64))
        .collect()
}

/// Total hits across all lists.
pub fn total_hits(batch: &RecBatch, test: &Dataset) -> usize {
    batch.lists().iter().map(|l| hits(l, test)).sum()
}

/// nDCG with binary gains `2^hit - 1` and discount `ln(rank + 1)`,
/// averaged over users with a non-empty list and test profile.
pub fn ndcg(batch: &RecBatch, test: &Dataset) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for list in non_empty(batch) {
        let relevant = test.user_profile(list.user).len();
        if relevant == 0 {
            continue;
        }
        let dcg: f64 = list
            .items()
            .enumerate()
            .filter(|&(_, i)| test.contains(list.user, i))
            .map(|(pos, _)| 1.0 / ((pos + 2) as f64).ln())
            .sum();
        let ideal: f64 = (0..list.len().min(relevant))
            .map(|pos| 1.0 / ((pos + 2) as f64).ln())
            .sum();
        sum += dcg / ideal;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// Mean over users of each user's MAE.
    pub umae: f64,
}

pub fn error_metrics(
    predictions: &HashMap<(usize, usize), f64>,
    test: &Dataset,
) -> Result<ErrorMetrics> {
    if test.is_empty() {
        return Err(Error::domain("error metrics against an empty test set"));
    }
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut per_user: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for it in test.interactions() {
        let p = predictions
            .get(&(it.user, it.item))
            .ok_or_else(|| Error::MissingPrediction {
                user: test.users().name(it.user).to_string(),
                item: test.items().name(it.item).to_string(),
            })?;
        let e = (p - it.rating).abs();
        abs_sum += e;
        sq_sum += e * e;
        let slot = per_user.entry(it.user).or_default();
        slot.0 += e;
        slot.1 += 1;
    }
    let n = test.len() as f64;
    let umae = per_user.values().map(|(s, c)| s / *c as f64).sum::<f64>() / per_user.len() as f64;
    Ok(ErrorMetrics {
        mae: abs_sum / n,
        rmse: (sq_sum / n).sqrt(),
        umae,
    })
}

/// Number of lists each item appears in.
pub fn item_counts(batch: &RecBatch) -> Vec<usize> {
    let mut counts = vec![0; batch.items().len()];
    for list in batch.lists() {
        for i in list.items() {
            counts[i] += 1;
        }
    }
    counts
}

fn scoped_counts(
    batch: &RecBatch,
    scope: Scope,
    suppliers: Option<&SupplierMap>,
) -> Result<Vec<usize>> {
    let counts = item_counts(batch);
    match scope {
        Scope::Item => Ok(counts),
        Scope::Supplier => {
            let sm = require_suppliers(suppliers)?;
            let mut out = vec![0; sm.num_suppliers()];
            for (i, c) in counts.into_iter().enumerate() {
                out[sm.supplier_of(i)] += c;
            }
            Ok(out)
        }
    }
}

fn require_suppliers(suppliers: Option<&SupplierMap>) -> Result<&SupplierMap> {
    suppliers.ok_or_else(|| Error::domain("supplier scope requires a supplier map"))
}

/// User-fraction visibility: `IV(i) = lists containing i / |U|`, and for
/// suppliers the sum of their items' IV. Call
/// [`Distribution::normalized`] for the share form.
pub fn visibility(
    batch: &RecBatch,
    scope: Scope,
    suppliers: Option<&SupplierMap>,
) -> Result<Distribution> {
    let counts = scoped_counts(batch, scope, suppliers)?;
    let users = batch.num_lists().max(1) as f64;
    Distribution::new(counts.into_iter().map(|c| c as f64 / users).collect())
}

/// Fraction of the catalog (items or suppliers) recommended at least
/// `alpha` times across all lists.
pub fn aggregate_diversity(
    batch: &RecBatch,
    alpha: usize,
    scope: Scope,
    suppliers: Option<&SupplierMap>,
) -> Result<f64> {
    if alpha == 0 {
        return Err(Error::domain("alpha must be at least 1"));
    }
    let counts = scoped_counts(batch, scope, suppliers)?;
    if counts.is_empty() {
        return Ok(0.0);
    }
    Ok(counts.iter().filter(|&&c| c >= alpha).count() as f64 / counts.len() as f64)
}

/// Share of long-tail items recommended at least once.
pub fn longtail_coverage(batch: &RecBatch, profile: &PopularityProfile) -> Option<f64> {
    let longtail = profile.longtail();
    if longtail.is_empty() {
        return None;
    }
    let counts = item_counts(batch);
    let covered = longtail.iter().filter(|&&i| counts[i] > 0).count();
    Some(covered as f64 / longtail.len() as f64)
}

/// `1/(N-1) * Σ_k (2k - N - 1) w_k` over the normalized weights sorted
/// ascending, zero-weight keys included.
pub fn gini(dist: &Distribution) -> Option<f64> {
    let n = dist.len();
    if n < 2 || dist.total() == 0.0 {
        return None;
    }
    let mut w = dist.normalized().weights;
    w.sort_by(f64::total_cmp);
    let nf = n as f64;
    let s: f64 = w
        .iter()
        .enumerate()
        .map(|(k, &x)| (2.0 * (k + 1) as f64 - nf - 1.0) * x)
        .sum();
    Some(s / (nf - 1.0))
}

/// Shannon entropy of the normalized weights, `0 ln 0 = 0`.
pub fn entropy(dist: &Distribution) -> f64 {
    dist.normalized()
        .weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| -w * w.ln())
        .sum()
}

/// Result of comparing group visibility before and after re-ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityShift {
    /// Groups in order of descending base visibility.
    pub bins: GroupAssignment,
    pub base: Vec<f64>,
    pub reranked: Vec<f64>,
    /// `(reranked - base) / base` per group; `None` when the base is zero.
    pub shift: Vec<Option<f64>>,
}

/// Sizes of `bins` near-equal bins over `len` keys, remainder to the first bins.
fn bin_sizes(len: usize, bins: usize) -> Vec<usize> {
    let (q, r) = (len / bins, len % bins);
    (0..bins).map(|b| q + usize::from(b < r)).collect()
}

/// Groups the keys seen in the base long lists into `bins` equal bins by
/// descending long-list visibility, then compares each group's mean
/// visibility in the base top-`n` against the re-ranked lists, `n` being
/// the re-ranked list size.
pub fn visibility_shift(
    base: &RecBatch,
    reranked: &RecBatch,
    scope: Scope,
    suppliers: Option<&SupplierMap>,
    bins: usize,
) -> Result<VisibilityShift> {
    if bins == 0 {
        return Err(Error::domain("visibility shift needs at least one bin"));
    }
    let long = scoped_counts(base, scope, suppliers)?;
    let present: Vec<usize> = match scope {
        Scope::Item => (0..long.len()).filter(|&i| long[i] > 0).collect(),
        Scope::Supplier => (0..long.len()).filter(|&s| long[s] > 0).collect(),
    };
    let mut order = present;
    order.sort_by(|&a, &b| long[b].cmp(&long[a]).then(a.cmp(&b)));

    let n = reranked.list_size();
    let before = visibility(&base.truncated(n), scope, suppliers)?;
    let after = visibility(reranked, scope, suppliers)?;

    let mut groups = Vec::with_capacity(bins);
    let mut start = 0;
    for size in bin_sizes(order.len(), bins) {
        groups.push(order[start..start + size].to_vec());
        start += size;
    }
    let group_mean = |d: &Distribution, g: &[usize]| {
        if g.is_empty() {
            0.0
        } else {
            g.iter().map(|&k| d.weights()[k]).sum::<f64>() / g.len() as f64
        }
    };
    let base_gv: Vec<f64> = groups.iter().map(|g| group_mean(&before, g)).collect();
    let rer_gv: Vec<f64> = groups.iter().map(|g| group_mean(&after, g)).collect();
    let shift = base_gv
        .iter()
        .zip(&rer_gv)
        .map(|(&b, &r)| (b > 0.0).then(|| (r - b) / b))
        .collect();
    Ok(VisibilityShift {
        bins: GroupAssignment { groups },
        base: base_gv,
        reranked: rer_gv,
        shift,
    })
}

/// `Σ p ln(p / q̃)` with `q̃ = (1 - α) q + α p`.
pub fn kld(p: &[f64], q: &[f64], smooth_alpha: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::domain(format!(
            "distributions over {} and {} keys",
            p.len(),
            q.len()
        )));
    }
    if !(0.0..=1.0).contains(&smooth_alpha) {
        return Err(Error::domain(format!(
            "smoothing {smooth_alpha} outside [0, 1]"
        )));
    }
    let mut sum = 0.0;
    for (&pk, &qk) in p.iter().zip(q) {
        if pk <= 0.0 {
            continue;
        }
        let smoothed = qk + smooth_alpha * (pk - qk);
        if smoothed <= 0.0 {
            return Err(Error::domain("p has mass where the smoothed q is zero"));
        }
        sum += pk * (pk / smoothed).ln();
    }
    // Rounding can leave a tiny negative value when p == q̃.
    Ok(sum.max(0.0))
}

/// Per-user values and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct UserScores {
    pub per_user: Vec<(usize, f64)>,
    pub mean: Option<f64>,
}

impl UserScores {
    fn from_pairs(per_user: Vec<(usize, f64)>) -> Self {
        let mean = (!per_user.is_empty())
            .then(|| per_user.iter().map(|&(_, v)| v).sum::<f64>() / per_user.len() as f64);
        Self { per_user, mean }
    }
}

/// KLD between each user's train-profile genre mix and the genre mix of
/// their list. Users with an empty list or profile are skipped.
pub fn miscalibration(
    train: &Dataset,
    batch: &RecBatch,
    genres: &GenreMap,
    smooth_alpha: f64,
) -> Result<UserScores> {
    let mut out = Vec::new();
    for list in non_empty(batch) {
        let profile = train.user_profile(list.user);
        if profile.is_empty() {
            continue;
        }
        let p = genres.distribution(profile.iter().map(|&(i, _)| i));
        let q = genres.distribution(list.items());
        out.push((list.user, kld(&p, &q, smooth_alpha)?));
    }
    Ok(UserScores::from_pairs(out))
}

/// KLD between head/mid/tail shares of each user's profile and list.
pub fn upd(
    train: &Dataset,
    batch: &RecBatch,
    profile: &PopularityProfile,
    smooth_alpha: f64,
) -> Result<UserScores> {
    let mut out = Vec::new();
    for list in non_empty(batch) {
        let items = train.user_profile(list.user);
        if items.is_empty() {
            continue;
        }
        let p = profile.shares(items.iter().map(|&(i, _)| i));
        let q = profile.shares(list.items());
        out.push((list.user, kld(&p, &q, smooth_alpha)?));
    }
    Ok(UserScores::from_pairs(out))
}

/// Mean precision of the unprotected group minus that of the protected
/// group; only users with a non-empty list count.
pub fn spd(
    batch: &RecBatch,
    test: &Dataset,
    unprotected: &BTreeSet<usize>,
    protected: &BTreeSet<usize>,
) -> Result<f64> {
    let per_user = user_precision(batch, test);
    let group_mean = |g: &BTreeSet<usize>, name: &str| {
        let vals: Vec<f64> = per_user
            .iter()
            .filter(|(u, _)| g.contains(u))
            .map(|&(_, p)| p)
            .collect();
        if vals.is_empty() {
            Err(Error::domain(format!(
                "{name} group has no recommended users"
            )))
        } else {
            Ok(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    Ok(group_mean(unprotected, "unprotected")? - group_mean(protected, "protected")?)
}

/// Share of a group's (binarized) interactions falling in `category`.
fn preference_ratio<'a>(
    entries: impl Iterator<Item = (usize, usize)> + 'a,
    group: &BTreeSet<usize>,
    category: &BTreeSet<usize>,
) -> Option<f64> {
    let (mut inside, mut total) = (0usize, 0usize);
    for (u, i) in entries {
        if group.contains(&u) {
            total += 1;
            inside += usize::from(category.contains(&i));
        }
    }
    (total > 0).then(|| inside as f64 / total as f64)
}

fn batch_pairs(batch: &RecBatch) -> impl Iterator<Item = (usize, usize)> + '_ {
    batch
        .lists()
        .iter()
        .flat_map(|l| l.items().map(move |i| (l.user, i)))
}

fn train_pairs(train: &Dataset) -> impl Iterator<Item = (usize, usize)> + '_ {
    train.interactions().iter().map(|it| (it.user, it.item))
}

/// Relative change of the group's bias towards `category` from training
/// data to recommendations: `(B_R - B_T) / B_T` with `B = PR / P(C)`.
pub fn bias_disparity(
    train: &Dataset,
    batch: &RecBatch,
    group: &BTreeSet<usize>,
    category: &BTreeSet<usize>,
    catalog_size: usize,
) -> Result<Option<f64>> {
    if category.is_empty() || catalog_size == 0 {
        return Err(Error::domain("bias disparity needs a non-empty category"));
    }
    let prior = category.len() as f64 / catalog_size as f64;
    let b_t = preference_ratio(train_pairs(train), group, category).map(|pr| pr / prior);
    let b_r = preference_ratio(batch_pairs(batch), group, category).map(|pr| pr / prior);
    Ok(match (b_t, b_r) {
        (Some(t), Some(r)) if t > 0.0 => Some((r - t) / t),
        _ => None,
    })
}

fn category_count(
    pairs: impl Iterator<Item = (usize, usize)>,
    group: &BTreeSet<usize>,
    category: &BTreeSet<usize>,
) -> f64 {
    pairs
        .filter(|(u, i)| group.contains(u) && category.contains(i))
        .count() as f64
}

/// `1/|C| Σ_c |(N_R(U,c) - N_T(U,c)) - (N_R(P,c) - N_T(P,c))|` on raw counts.
pub fn average_disparity(
    train: &Dataset,
    batch: &RecBatch,
    unprotected: &BTreeSet<usize>,
    protected: &BTreeSet<usize>,
    categories: &[BTreeSet<usize>],
) -> Result<f64> {
    if categories.is_empty() {
        return Err(Error::domain(
            "average disparity needs at least one category",
        ));
    }
    let total: f64 = categories
        .iter()
        .map(|c| {
            let gain = |g| {
                category_count(batch_pairs(batch), g, c) - category_count(train_pairs(train), g, c)
            };
            (gain(unprotected) - gain(protected)).abs()
        })
        .sum();
    Ok(total / categories.len() as f64)
}

/// Mean absolute deviation of the user's ratings from the item means.
pub fn profile_anomaly(train: &Dataset, user: usize) -> Option<f64> {
    let profile = train.user_profile(user);
    if profile.is_empty() {
        return None;
    }
    let sum: f64 = profile
        .iter()
        .map(|&(i, r)| (r - train.item_mean(i).unwrap_or(r)).abs())
        .sum();
    Some(sum / profile.len() as f64)
}

/// Entropy of the empirical distribution of the user's distinct rating values.
pub fn profile_entropy(train: &Dataset, user: usize) -> Option<f64> {
    let profile = train.user_profile(user);
    if profile.is_empty() {
        return None;
    }
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for &(_, r) in profile {
        *counts.entry(r.to_bits()).or_default() += 1;
    }
    let weights = counts.into_values().map(|c| c as f64).collect();
    Distribution::new(weights).ok().map(|d| entropy(&d))
}

/// Named metric values keyed by `(scope, metric)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    records: BTreeMap<(String, String), f64>,
}

impl MetricsReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a value; `None` (undefined) is skipped.
    pub fn set(&mut self, scope: &str, metric: &str, value: impl Into<Option<f64>>) {
        if let Some(v) = value.into() {
            self.records
                .insert((scope.to_string(), metric.to_string()), v);
        }
    }

    pub fn get(&self, scope: &str, metric: &str) -> Option<f64> {
        self.records
            .get(&(scope.to_string(), metric.to_string()))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.records
            .iter()
            .map(|((s, m), &v)| (s.as_str(), m.as_str(), v))
    }

    /// `scope\tmetric\tvalue`, sorted by scope then metric.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (s, m, v) in self.iter() {
            let _ = writeln!(out, "{s}\t{m}\t{v:.6}");
        }
        out
    }

    /// `{"scope": {"metric": value}}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut root = serde_json::Map::new();
        for (s, m, v) in self.iter() {
            let entry = root
                .entry(s.to_string())
                .or_insert_with(|| serde_json::Value::Object(Default::default()));
            if let serde_json::Value::Object(obj) = entry {
                obj.insert(m.to_string(), serde_json::json!(v));
            }
        }
        serde_json::Value::Object(root)
    }

    pub fn write(&self, tsv: &Path, json: &Path) -> Result<()> {
        std::fs::write(tsv, self.to_tsv()).map_err(|e| Error::io(tsv, e))?;
        let text = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(json, text + "\n").map_err(|e| Error::io(json, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Thresholds for α-IA / α-SA.
    pub alphas: Vec<usize>,
    pub smoothing: f64,
    pub bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            alphas: vec![1],
            smoothing: 0.01,
            bins: 10,
        }
    }
}

/// Everything the report builder may look at. `base` is the long-list
/// batch the final lists were derived from.
pub struct EvalInput<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub base: Option<&'a RecBatch>,
    pub lists: &'a RecBatch,
    pub suppliers: Option<&'a SupplierMap>,
    pub genres: Option<&'a GenreMap>,
}

/// Full metric suite for one final batch.
pub fn evaluate(input: &EvalInput<'_>, config: &EvalConfig) -> Result<MetricsReport> {
    let mut report = MetricsReport::new();
    let lists = input.lists;
    let (p, r) = precision_recall(lists, input.test)?;
    report.set("accuracy", "precision", p);
    report.set("accuracy", "recall", r);
    report.set("accuracy", "ndcg", ndcg(lists, input.test));

    let mut scopes = vec![(Scope::Item, "item")];
    if input.suppliers.is_some() {
        scopes.push((Scope::Supplier, "supplier"));
    }
    for (scope, name) in scopes {
        let short = if scope == Scope::Item { "IA" } else { "SA" };
        for &alpha in &config.alphas {
            let ad = aggregate_diversity(lists, alpha, scope, input.suppliers)?;
            report.set(name, &format!("{alpha}-{short}"), ad);
        }
        let vis = visibility(lists, scope, input.suppliers)?;
        report.set(name, "gini", gini(&vis));
        report.set(name, "entropy", entropy(&vis));
        if let Some(base) = input.base {
            let vs = visibility_shift(base, lists, scope, input.suppliers, config.bins)?;
            let tag = if scope == Scope::Item { "ivs" } else { "svs" };
            for (g, s) in vs.shift.iter().enumerate() {
                report.set(name, &format!("{tag}_g{:02}", g + 1), *s);
            }
        }
    }

    let profile = crate::dataset::popularity_profile(input.train)?;
    report.set("item", "lt_coverage", longtail_coverage(lists, &profile));
    report.set(
        "user",
        "upd",
        upd(input.train, lists, &profile, config.smoothing)?.mean,
    );
    if let Some(genres) = input.genres {
        let cal = miscalibration(input.train, lists, genres, config.smoothing)?;
        report.set("user", "miscalibration", cal.mean);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Interaction, Vocab};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn vocab(prefix: &str, n: usize) -> Arc<Vocab> {
        Arc::new(Vocab::from_names((0..n).map(|k| format!("{prefix}{k}"))))
    }

    fn batch(num_items: usize, lists: &[Vec<usize>]) -> RecBatch {
        RecBatch::from_item_lists(vocab("u", lists.len()), vocab("i", num_items), lists)
    }

    fn dataset(num_users: usize, num_items: usize, triples: &[(usize, usize, f64)]) -> Dataset {
        let interactions = triples
            .iter()
            .map(|&(user, item, rating)| Interaction {
                user,
                item,
                rating,
                timestamp: None,
            })
            .collect();
        Dataset::new(
            vocab("u", num_users),
            vocab("i", num_items),
            interactions,
            (1.0, 5.0),
        )
        .unwrap()
    }

    fn dist(w: &[f64]) -> Distribution {
        Distribution::new(w.to_vec()).unwrap()
    }

    #[test]
    fn precision_and_recall_examples() {
        let test = dataset(1, 10, &[(0, 0, 5.0)]);
        let b = batch(10, &[(0..10).collect()]);
        assert_eq!(precision_recall(&b, &test).unwrap(), (0.1, 1.0));

        let test = dataset(1, 10, &[(0, 0, 5.0), (0, 1, 5.0)]);
        let b = batch(10, &[vec![0, 1]]);
        assert_eq!(precision_recall(&b, &test).unwrap().0, 1.0);
        let b = batch(10, &[vec![5, 6]]);
        assert_eq!(precision_recall(&b, &test).unwrap(), (0.0, 0.0));

        let empty = dataset(1, 10, &[]);
        assert!(precision_recall(&b, &empty).is_err());
    }

    #[test]
    fn ndcg_examples() {
        let test = dataset(1, 10, &[(0, 0, 5.0)]);
        let first = batch(10, &[(0..10).collect()]);
        let last = batch(10, &[(1..10).chain([0]).collect()]);
        assert_abs_diff_eq!(ndcg(&first, &test), 1.0);
        // single hit at rank 10: (1 / ln 11) / (1 / ln 2)
        let expected = 2f64.ln() / 11f64.ln();
        assert_abs_diff_eq!(ndcg(&last, &test), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(ndcg(&last, &test), 0.289064826317888, epsilon = 1e-12);
        let none = batch(10, &[vec![4, 5]]);
        assert_eq!(ndcg(&none, &test), 0.0);
    }

    #[test]
    fn error_metric_examples() {
        let test = dataset(2, 2, &[(0, 0, 3.0), (1, 1, 3.0)]);
        let exact: HashMap<_, _> = [((0, 0), 3.0), ((1, 1), 3.0)].into();
        let e = error_metrics(&exact, &test).unwrap();
        assert_eq!((e.mae, e.rmse, e.umae), (0.0, 0.0, 0.0));

        let off: HashMap<_, _> = [((0, 0), 4.0), ((1, 1), 2.0)].into();
        let e = error_metrics(&off, &test).unwrap();
        assert_eq!((e.mae, e.rmse, e.umae), (1.0, 1.0, 1.0));

        let mixed: HashMap<_, _> = [((0, 0), 3.0), ((1, 1), 5.0)].into();
        let e = error_metrics(&mixed, &test).unwrap();
        assert_abs_diff_eq!(e.mae, 1.0);
        assert_abs_diff_eq!(e.rmse, 2f64.sqrt(), epsilon = 1e-12);

        let partial: HashMap<_, _> = [((0, 0), 3.0)].into();
        assert!(matches!(
            error_metrics(&partial, &test),
            Err(Error::MissingPrediction { .. })
        ));
    }

    #[test]
    fn visibility_examples() {
        let b = batch(3, &[vec![0, 1], vec![0, 2]]);
        let iv = visibility(&b, Scope::Item, None).unwrap();
        assert_eq!(iv.weights(), &[1.0, 0.5, 0.5]);
        assert_abs_diff_eq!(iv.normalized().total(), 1.0);

        let sm = SupplierMap::from_assignment(&["s", "s", "t"]);
        let sv = visibility(&b, Scope::Supplier, Some(&sm)).unwrap();
        assert_eq!(sv.weights(), &[1.5, 0.5]);
        assert!(visibility(&b, Scope::Supplier, None).is_err());
    }

    #[test]
    fn aggregate_diversity_examples() {
        let b = batch(3, &[vec![0, 1], vec![0]]);
        assert_abs_diff_eq!(
            aggregate_diversity(&b, 1, Scope::Item, None).unwrap(),
            2.0 / 3.0
        );
        assert_abs_diff_eq!(
            aggregate_diversity(&b, 2, Scope::Item, None).unwrap(),
            1.0 / 3.0
        );
        assert_eq!(aggregate_diversity(&b, 3, Scope::Item, None).unwrap(), 0.0);
        assert!(aggregate_diversity(&b, 0, Scope::Item, None).is_err());
    }

    #[test]
    fn longtail_coverage_examples() {
        // counts 10,4,3,2,1,1 (21): head {0} covers 10/21, mid {1,2}, tail {3,4,5}
        let mut triples = Vec::new();
        let counts = [10, 4, 3, 2, 1, 1];
        for (i, &c) in counts.iter().enumerate() {
            for u in 0..c {
                triples.push((u, i, 3.0));
            }
        }
        let train = dataset(10, 6, &triples);
        let profile = crate::dataset::popularity_profile(&train).unwrap();
        assert_eq!(profile.longtail().len(), 5);
        assert_eq!(
            longtail_coverage(&batch(6, &[vec![0]]), &profile),
            Some(0.0)
        );
        assert_eq!(
            longtail_coverage(&batch(6, &[vec![1, 2, 3], vec![0]]), &profile),
            Some(0.6)
        );
        assert_eq!(
            longtail_coverage(&batch(6, &[vec![1, 2, 3], vec![4, 5]]), &profile),
            Some(1.0)
        );
    }

    #[test]
    fn gini_and_entropy_examples() {
        assert_abs_diff_eq!(gini(&dist(&[0.25; 4])).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            gini(&dist(&[0.0, 0.0, 1.0, 0.0])).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            gini(&dist(&[0.4, 0.1, 0.3, 0.2])).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-12
        );
        assert_eq!(gini(&dist(&[1.0])), None);

        assert_abs_diff_eq!(entropy(&dist(&[0.25; 4])), 4f64.ln(), epsilon = 1e-12);
        assert_eq!(entropy(&dist(&[0.0, 1.0])), 0.0);
        assert_abs_diff_eq!(
            entropy(&dist(&[0.5, 0.5, 0.0, 0.0])),
            2f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn kld_examples() {
        assert_eq!(kld(&[0.3, 0.7], &[0.3, 0.7], 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            kld(&[1.0, 0.0], &[0.5, 0.5], 0.0).unwrap(),
            2f64.ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            kld(&[1.0, 0.0], &[0.0, 1.0], 0.01).unwrap(),
            100f64.ln(),
            epsilon = 1e-12
        );
        assert!(kld(&[1.0, 0.0], &[0.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn visibility_shift_identity_and_fixture() {
        // base long lists over 4 items; long-list counts 0:3 1:2 2:2 3:1
        let base = batch(4, &[vec![0, 1, 2], vec![0, 2, 3], vec![1, 0]]);
        let id = visibility_shift(&base, &base.truncated(2), Scope::Item, None, 2).unwrap();
        assert!(id.shift.iter().flatten().all(|&s| s == 0.0));

        // bins: {0, 1} and {2, 3}; base top-2 counts 0:3 1:2 2:1 3:0
        let rer = batch(4, &[vec![2, 3], vec![3, 1], vec![0, 2]]);
        let vs = visibility_shift(&base, &rer, Scope::Item, None, 2).unwrap();
        assert_eq!(vs.bins.groups, vec![vec![0, 1], vec![2, 3]]);
        // GV base: (1 + 2/3) / 2 and (1/3 + 0) / 2; reranked: (1/3 + 1/3) / 2, (2/3 + 2/3) / 2
        assert_abs_diff_eq!(
            vs.shift[0].unwrap(),
            (1.0 / 3.0 - 5.0 / 6.0) / (5.0 / 6.0),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            vs.shift[1].unwrap(),
            (2.0 / 3.0 - 1.0 / 6.0) / (1.0 / 6.0),
            epsilon = 1e-12
        );

        // a group never shown in the base prefix has no defined shift
        let base = batch(4, &[vec![0, 3]]);
        let rer = batch(4, &[vec![3]]);
        let vs = visibility_shift(&base, &rer, Scope::Item, None, 2).unwrap();
        assert_eq!(vs.shift, vec![Some(-1.0), None]);
    }

    #[test]
    fn bin_sizes_give_remainder_to_early_bins() {
        assert_eq!(bin_sizes(23, 10), vec![3, 3, 3, 2, 2, 2, 2, 2, 2, 2]);
        assert_eq!(bin_sizes(3, 5), vec![1, 1, 1, 0, 0]);
    }

    #[test]
    fn miscalibration_examples() {
        let genres = GenreMap::from_assignment(&[vec!["a"], vec!["b"], vec!["a", "b"]]).unwrap();
        let train = dataset(1, 3, &[(0, 0, 4.0)]);
        let same = batch(3, &[vec![0]]);
        let cal = miscalibration(&train, &same, &genres, 0.01).unwrap();
        assert_eq!(cal.mean, Some(0.0));
        let other = batch(3, &[vec![1]]);
        let cal = miscalibration(&train, &other, &genres, 0.01).unwrap();
        assert_abs_diff_eq!(cal.mean.unwrap(), 100f64.ln(), epsilon = 1e-12);
        assert_eq!(genres.distribution([2]), vec![0.5, 0.5]);
    }

    #[test]
    fn upd_examples() {
        // counts 0:6 1:2 2:1 3:1 → head {0}, mid {1}, tail {2, 3}
        let mut triples: Vec<(usize, usize, f64)> = (0..6).map(|u| (u, 0, 3.0)).collect();
        triples.extend([(6, 1, 3.0), (7, 1, 3.0), (6, 2, 3.0), (7, 3, 3.0)]);
        let train = dataset(8, 4, &triples);
        let profile = crate::dataset::popularity_profile(&train).unwrap();
        assert_eq!(profile.tail, vec![2, 3]);

        // user 6 profile {1, 2}: (0, 0.5, 0.5); list {0, 1}: (0.5, 0.5, 0)
        let recs = RecBatch::new(
            train.users().clone(),
            train.items().clone(),
            vec![RecList {
                user: 6,
                entries: vec![(0, 2.0), (1, 1.0)],
            }],
            2,
        );
        let got = upd(&train, &recs, &profile, 0.01).unwrap();
        let q_mid: f64 = 0.99 * 0.5 + 0.01 * 0.5;
        let q_tail: f64 = 0.01 * 0.5;
        let expected = 0.5 * (0.5 / q_mid).ln() + 0.5 * (0.5 / q_tail).ln();
        assert_abs_diff_eq!(got.per_user[0].1, expected, epsilon = 1e-12);
        // q̃_mid = 0.5 exactly, so only the tail term survives: 0.5 ln 100
        assert_abs_diff_eq!(expected, 0.5 * 100f64.ln(), epsilon = 1e-12);

        let same = RecBatch::new(
            train.users().clone(),
            train.items().clone(),
            vec![RecList {
                user: 6,
                entries: vec![(1, 2.0), (2, 1.0)],
            }],
            2,
        );
        assert_eq!(upd(&train, &same, &profile, 0.01).unwrap().mean, Some(0.0));
    }

    #[test]
    fn spd_examples() {
        // users 0,1 unprotected; 2,3 protected
        let test = dataset(
            4,
            10,
            &[
                (0, 0, 5.0),
                (0, 1, 5.0),
                (1, 0, 5.0),
                (2, 0, 5.0),
                (3, 9, 5.0),
            ],
        );
        let b = batch(
            10,
            &[
                vec![0, 1, 2, 3, 4],
                vec![0, 5, 6, 7, 8],
                vec![1, 2, 3, 4, 5],
                vec![0, 1, 2, 3, 9],
            ],
        );
        let g1: BTreeSet<usize> = [0, 1].into();
        let g2: BTreeSet<usize> = [2, 3].into();
        // unprotected precision (0.4 + 0.2) / 2 = 0.3, protected (0 + 0.2) / 2 = 0.1
        assert_abs_diff_eq!(spd(&b, &test, &g1, &g2).unwrap(), 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(spd(&b, &test, &g2, &g1).unwrap(), -0.2, epsilon = 1e-12);
        assert_eq!(spd(&b, &test, &g1, &g1).unwrap(), 0.0);
        assert!(spd(&b, &test, &g1, &BTreeSet::new()).is_err());
    }

    #[test]
    fn bias_disparity_fixture() {
        // 4 items; category {0, 1} so P(C) = 0.5
        // group {0}: train items {0, 2, 3} → PR_T = 1/3, B_T = 2/3
        // recs {0, 1, 2} → PR_R = 2/3, B_R = 4/3, BD = 1
        let train = dataset(2, 4, &[(0, 0, 4.0), (0, 2, 4.0), (0, 3, 4.0), (1, 1, 4.0)]);
        let b = batch(4, &[vec![0, 1, 2], vec![3]]);
        let group: BTreeSet<usize> = [0].into();
        let cat: BTreeSet<usize> = [0, 1].into();
        let bd = bias_disparity(&train, &b, &group, &cat, 4)
            .unwrap()
            .unwrap();
        assert_abs_diff_eq!(bd, 1.0, epsilon = 1e-12);

        let same = batch(4, &[vec![0, 2, 3], vec![3]]);
        let bd = bias_disparity(&train, &same, &group, &cat, 4)
            .unwrap()
            .unwrap();
        assert_abs_diff_eq!(bd, 0.0, epsilon = 1e-12);

        let never: BTreeSet<usize> = [1].into();
        let train = dataset(2, 4, &[(0, 0, 4.0)]);
        assert_eq!(bias_disparity(&train, &b, &group, &never, 4).unwrap(), None);
        assert!(bias_disparity(&train, &b, &group, &BTreeSet::new(), 4).is_err());
    }

    #[test]
    fn average_disparity_examples() {
        let train = dataset(2, 4, &[(0, 0, 4.0), (1, 2, 4.0)]);
        let g_u: BTreeSet<usize> = [0].into();
        let g_p: BTreeSet<usize> = [1].into();
        let cats: Vec<BTreeSet<usize>> = vec![[0, 1].into(), [2, 3].into()];
        let same = batch(4, &[vec![0], vec![2]]);
        assert_eq!(
            average_disparity(&train, &same, &g_u, &g_p, &cats).unwrap(),
            0.0
        );

        // unprotected gains two entries on category 0, protected unchanged
        let gain = same.with_lists(
            vec![
                RecList {
                    user: 0,
                    entries: vec![(0, 3.0), (1, 2.0), (1, 1.0)],
                },
                RecList {
                    user: 1,
                    entries: vec![(2, 1.0)],
                },
            ],
            3,
        );
        assert_eq!(
            average_disparity(&train, &gain, &g_u, &g_p, &cats).unwrap(),
            1.0
        );
        assert_eq!(
            average_disparity(&train, &gain, &g_p, &g_u, &cats).unwrap(),
            1.0
        );
    }

    #[test]
    fn profile_anomaly_examples() {
        // item 0: ratings 1, 3 (mean 2); item 1: ratings 1, 5, 5, 5 (mean 4)
        let train = dataset(
            4,
            3,
            &[
                (0, 0, 1.0),
                (1, 0, 3.0),
                (0, 1, 1.0),
                (1, 1, 5.0),
                (2, 1, 5.0),
                (3, 1, 5.0),
            ],
        );
        assert_abs_diff_eq!(profile_anomaly(&train, 0).unwrap(), 2.0, epsilon = 1e-12);

        let at_mean = dataset(2, 1, &[(0, 0, 2.0), (1, 0, 2.0)]);
        assert_eq!(profile_anomaly(&at_mean, 0), Some(0.0));
        let single = dataset(1, 2, &[(0, 0, 1.0), (0, 1, 5.0)]);
        assert_eq!(profile_anomaly(&single, 0), Some(0.0));
    }

    #[test]
    fn profile_entropy_examples() {
        let p = dataset(1, 4, &[(0, 0, 4.0), (0, 1, 5.0), (0, 2, 4.0), (0, 3, 5.0)]);
        assert_abs_diff_eq!(profile_entropy(&p, 0).unwrap(), 2f64.ln(), epsilon = 1e-12);
        let flat = dataset(1, 2, &[(0, 0, 3.0), (0, 1, 3.0)]);
        assert_eq!(profile_entropy(&flat, 0), Some(0.0));
        let spread = dataset(
            1,
            5,
            &[
                (0, 0, 1.0),
                (0, 1, 2.0),
                (0, 2, 3.0),
                (0, 3, 4.0),
                (0, 4, 5.0),
            ],
        );
        assert_abs_diff_eq!(
            profile_entropy(&spread, 0).unwrap(),
            5f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn report_formats() {
        let mut r = MetricsReport::new();
        r.set("item", "gini", 0.5);
        r.set("accuracy", "precision", 0.25);
        r.set("item", "lt_coverage", None);
        assert_eq!(
            r.to_tsv(),
            "accuracy\tprecision\t0.250000\nitem\tgini\t0.500000\n"
        );
        assert_eq!(
            r.to_json(),
            serde_json::json!({"accuracy": {"precision": 0.25}, "item": {"gini": 0.5}})
        );
    }

    fn random_batch() -> impl Strategy<Value = (Vec<Vec<usize>>, usize)> {
        (3usize..15, 1usize..6).prop_flat_map(|(num_items, n)| {
            let n = n.min(num_items);
            let list = Just((0..num_items).collect::<Vec<_>>())
                .prop_shuffle()
                .prop_map(move |v| v[..n].to_vec());
            (prop::collection::vec(list, 1..12), Just(num_items))
        })
    }

    proptest! {
        #[test]
        fn gini_entropy_kld_bounds(w in prop::collection::vec(0.0f64..10.0, 2..20),
                                   v in prop::collection::vec(0.01f64..10.0, 2..20)) {
            let d = dist(&w);
            if let Some(g) = gini(&d) {
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&g));
            }
            prop_assert!(entropy(&d) <= (w.len() as f64).ln() + 1e-12);
            let k = w.len().min(v.len());
            if d.total() > 0.0 {
                let p = Distribution::new(w[..k].to_vec()).unwrap().normalized();
                let q = Distribution::new(v[..k].to_vec()).unwrap().normalized();
                if p.total() > 0.0 {
                    prop_assert!(kld(p.weights(), q.weights(), 0.01).unwrap() >= 0.0);
                    prop_assert!(kld(p.weights(), p.weights(), 0.01).unwrap() < 1e-12);
                }
            }
        }

        #[test]
        fn diversity_monotone_and_hit_identity((lists, num_items) in random_batch(), seed in 0u64..1000) {
            let b = batch(num_items, &lists);
            let mut prev = 1.0;
            for alpha in 1..=lists.len() + 1 {
                let ad = aggregate_diversity(&b, alpha, Scope::Item, None).unwrap();
                prop_assert!(ad <= prev);
                prev = ad;
            }
            // deterministic pseudo-random test set
            let triples: Vec<(usize, usize, f64)> = (0..lists.len())
                .flat_map(|u| (0..num_items).map(move |i| (u, i)))
                .filter(|&(u, i)| crate::seed::derive(&[seed, u as u64, i as u64]).is_multiple_of(3))
                .map(|(u, i)| (u, i, 3.0))
                .collect();
            let test = dataset(lists.len(), num_items, &triples);
            if !test.is_empty() {
                let (p, _) = precision_recall(&b, &test).unwrap();
                let n = lists[0].len() as f64;
                let total = total_hits(&b, &test) as f64;
                prop_assert!((p * n * lists.len() as f64 - total).abs() < 1e-9);
                let v = ndcg(&b, &test);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
        }
    }
}
