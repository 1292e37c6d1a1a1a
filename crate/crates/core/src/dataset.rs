//! Rating data: loading, indexing, holdout splits, supplier/genre side
//! information and the head/mid/tail popularity partition.
//!
//! Users and items are interned into dense ordinals in order of first
//! appearance. Splits and simulation rounds derived from one source keep
//! sharing its [`Vocab`]s, so ordinals stay comparable across stages.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::seed;

/// Bidirectional map between external identifiers and dense ordinals.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self::new();
        for name in names {
            vocab.intern(&name.into());
        }
        vocab
    }

    /// Returns the ordinal for `name`, assigning the next one if unseen.
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&ix) = self.lookup.get(name) {
            return ix;
        }
        let ix = self.names.len();
        self.names.push(name.to_owned());
        self.lookup.insert(name.to_owned(), ix);
        ix
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.lookup.get(name).copied()
    }

    pub fn name(&self, ix: usize) -> &str {
        &self.names[ix]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
    /// Carried through IO untouched; no algorithm reads it.
    pub timestamp: Option<i64>,
}

/// Immutable collection of explicit ratings over shared user/item vocabularies.
#[derive(Debug, Clone)]
pub struct Dataset {
    users: Arc<Vocab>,
    items: Arc<Vocab>,
    interactions: Vec<Interaction>,
    scale: (f64, f64),
    by_user: Vec<Vec<(usize, f64)>>,
    by_item: Vec<Vec<(usize, f64)>>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.users == other.users
            && self.items == other.items
            && self.scale == other.scale
            && self.interactions == other.interactions
    }
}

impl Dataset {
    /// Builds a dataset, rejecting duplicate pairs and out-of-scale ratings.
    pub fn new(
        users: Arc<Vocab>,
        items: Arc<Vocab>,
        interactions: Vec<Interaction>,
        scale: (f64, f64),
    ) -> Result<Self> {
        let (low, high) = scale;
        if !(low <= high) {
            return Err(Error::domain(format!(
                "invalid rating scale [{low}, {high}]"
            )));
        }
        for it in &interactions {
            if it.user >= users.len() || it.item >= items.len() {
                return Err(Error::domain(
                    "interaction refers to an ordinal outside the index",
                ));
            }
            if !(it.rating >= low && it.rating <= high) {
                return Err(Error::domain(format!(
                    "rating {} of ({}, {}) outside scale [{low}, {high}]",
                    it.rating,
                    users.name(it.user),
                    items.name(it.item)
                )));
            }
        }
        let mut by_user = vec![Vec::new(); users.len()];
        let mut by_item = vec![Vec::new(); items.len()];
        for it in &interactions {
            by_user[it.user].push((it.item, it.rating));
            by_item[it.item].push((it.user, it.rating));
        }
        for (u, row) in by_user.iter_mut().enumerate() {
            row.sort_by_key(|&(i, _)| i);
            if let Some(w) = row.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(Error::domain(format!(
                    "duplicate (user, item) pair ({}, {})",
                    users.name(u),
                    items.name(w[0].0)
                )));
            }
        }
        for col in &mut by_item {
            col.sort_by_key(|&(u, _)| u);
        }
        Ok(Self {
            users,
            items,
            interactions,
            scale,
            by_user,
            by_item,
        })
    }

    /// Convenience constructor from `(user, item, rating)` triples; ordinals
    /// follow first appearance.
    pub fn from_triples<U, I>(
        triples: impl IntoIterator<Item = (U, I, f64)>,
        scale: (f64, f64),
    ) -> Result<Self>
    where
        U: AsRef<str>,
        I: AsRef<str>,
    {
        let mut users = Vocab::new();
        let mut items = Vocab::new();
        let interactions = triples
            .into_iter()
            .map(|(u, i, rating)| Interaction {
                user: users.intern(u.as_ref()),
                item: items.intern(i.as_ref()),
                rating,
                timestamp: None,
            })
            .collect();
        Self::new(Arc::new(users), Arc::new(items), interactions, scale)
    }

    pub fn users(&self) -> &Arc<Vocab> {
        &self.users
    }

    pub fn items(&self) -> &Arc<Vocab> {
        &self.items
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

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn rating_scale(&self) -> (f64, f64) {
        self.scale
    }

    /// The user's `(item, rating)` pairs, sorted by item ordinal.
    pub fn user_profile(&self, user: usize) -> &[(usize, f64)] {
        &self.by_user[user]
    }

    /// The item's `(user, rating)` pairs, sorted by user ordinal.
    pub fn item_profile(&self, item: usize) -> &[(usize, f64)] {
        &self.by_item[item]
    }

    pub fn rating(&self, user: usize, item: usize) -> Option<f64> {
        let row = &self.by_user[user];
        row.binary_search_by_key(&item, |&(i, _)| i)
            .ok()
            .map(|ix| row[ix].1)
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.rating(user, item).is_some()
    }

    /// Per-item interaction counts over the whole catalog.
    pub fn item_counts(&self) -> Vec<usize> {
        self.by_item.iter().map(Vec::len).collect()
    }

    pub fn user_mean(&self, user: usize) -> Option<f64> {
        mean(self.by_user[user].iter().map(|&(_, r)| r))
    }

    pub fn item_mean(&self, item: usize) -> Option<f64> {
        mean(self.by_item[item].iter().map(|&(_, r)| r))
    }

    pub fn global_mean(&self) -> Option<f64> {
        mean(self.interactions.iter().map(|it| it.rating))
    }

    /// Same structure with every rating replaced; `ratings` is aligned with
    /// [`Dataset::interactions`].
    pub fn with_ratings(&self, ratings: &[f64], scale: (f64, f64)) -> Result<Self> {
        assert_eq!(ratings.len(), self.interactions.len());
        let interactions = self
            .interactions
            .iter()
            .zip(ratings)
            .map(|(it, &rating)| Interaction { rating, ..*it })
            .collect();
        Self::new(self.users.clone(), self.items.clone(), interactions, scale)
    }

    /// Keeps the interactions whose position satisfies `keep`, sharing vocabularies.
    pub fn filter(&self, mut keep: impl FnMut(usize) -> bool) -> Self {
        let interactions: Vec<_> = self
            .interactions
            .iter()
            .enumerate()
            .filter(|(ix, _)| keep(*ix))
            .map(|(_, it)| *it)
            .collect();
        Self::new(
            self.users.clone(),
            self.items.clone(),
            interactions,
            self.scale,
        )
        .expect("subset of a valid dataset is valid")
    }

    /// Appends interactions over the same vocabularies.
    pub fn extend(&self, extra: impl IntoIterator<Item = Interaction>) -> Result<Self> {
        let mut interactions = self.interactions.clone();
        interactions.extend(extra);
        Self::new(
            self.users.clone(),
            self.items.clone(),
            interactions,
            self.scale,
        )
    }

    /// Same interactions expressed over other vocabularies, e.g. a split
    /// file reloaded against the full catalog. Unknown identifiers fail.
    pub fn reindexed(&self, users: &Arc<Vocab>, items: &Arc<Vocab>) -> Result<Self> {
        let lookup = |vocab: &Vocab, kind: &'static str, name: &str| {
            vocab.get(name).ok_or_else(|| Error::UnknownId {
                kind,
                id: name.to_owned(),
            })
        };
        let interactions = self
            .interactions
            .iter()
            .map(|it| {
                Ok(Interaction {
                    user: lookup(users, "user", self.users.name(it.user))?,
                    item: lookup(items, "item", self.items.name(it.item))?,
                    ..*it
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(users.clone(), items.clone(), interactions, self.scale)
    }

    /// Canonical TSV rendering; ratings use the shortest round-trip form.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for it in &self.interactions {
            let _ = write!(
                out,
                "{}\t{}\t{}",
                self.users.name(it.user),
                self.items.name(it.item),
                it.rating
            );
            if let Some(ts) = it.timestamp {
                let _ = write!(out, "\t{ts}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Population standard deviation.
pub(crate) fn std_dev(values: &[f64]) -> Option<f64> {
    let m = mean(values.iter().copied())?;
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64;
    Some(var.sqrt())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_owned(),
        line,
        message: message.into(),
    }
}

/// Loads a `user\titem\trating[\ttimestamp]` file.
pub fn load_ratings(path: impl AsRef<Path>, scale: (f64, f64)) -> Result<Dataset> {
    let path = path.as_ref();
    parse_ratings(open(path)?, path, scale)
}

/// Parses ratings from any reader; `source` only labels error messages.
pub fn parse_ratings(reader: impl BufRead, source: &Path, scale: (f64, f64)) -> Result<Dataset> {
    let (low, high) = scale;
    let mut users = Vocab::new();
    let mut items = Vocab::new();
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
    let mut interactions = Vec::new();
    for (ix, line) in reader.lines().enumerate() {
        let lineno = ix + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(parse_err(
                source,
                lineno,
                format!(
                    "expected 3 or 4 tab-separated fields, found {}",
                    fields.len()
                ),
            ));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(parse_err(source, lineno, "empty user or item identifier"));
        }
        let rating: f64 = fields[2]
            .parse()
            .map_err(|_| parse_err(source, lineno, format!("bad rating {:?}", fields[2])))?;
        let timestamp = match fields.get(3) {
            Some(ts) => Some(
                ts.parse::<i64>()
                    .map_err(|_| parse_err(source, lineno, format!("bad timestamp {ts:?}")))?,
            ),
            None => None,
        };
        if !(rating >= low && rating <= high) {
            return Err(Error::Range {
                path: source.to_owned(),
                line: lineno,
                rating,
                low,
                high,
            });
        }
        let user = users.intern(fields[0]);
        let item = items.intern(fields[1]);
        if seen.insert((user, item), lineno).is_some() {
            return Err(Error::Duplicate {
                path: source.to_owned(),
                line: lineno,
                user: fields[0].to_owned(),
                item: fields[1].to_owned(),
            });
        }
        interactions.push(Interaction {
            user,
            item,
            rating,
            timestamp,
        });
    }
    Dataset::new(Arc::new(users), Arc::new(items), interactions, scale)
}

/// Item → supplier association and its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct SupplierMap {
    suppliers: Vocab,
    item_to_supplier: Vec<usize>,
    supplier_to_items: Vec<Vec<usize>>,
}

impl SupplierMap {
    /// `assignment[i]` is the supplier name of catalog item ordinal `i`.
    pub fn from_assignment<S: AsRef<str>>(assignment: &[S]) -> Self {
        let mut suppliers = Vocab::new();
        let item_to_supplier: Vec<usize> = assignment
            .iter()
            .map(|s| suppliers.intern(s.as_ref()))
            .collect();
        let mut supplier_to_items = vec![Vec::new(); suppliers.len()];
        for (item, &s) in item_to_supplier.iter().enumerate() {
            supplier_to_items[s].push(item);
        }
        Self {
            suppliers,
            item_to_supplier,
            supplier_to_items,
        }
    }

    pub fn supplier_of(&self, item: usize) -> usize {
        self.item_to_supplier[item]
    }

    pub fn items_of(&self, supplier: usize) -> &[usize] {
        &self.supplier_to_items[supplier]
    }

    pub fn suppliers(&self) -> &Vocab {
        &self.suppliers
    }

    pub fn num_suppliers(&self) -> usize {
        self.suppliers.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_to_supplier.len()
    }
}

/// Loads an `item\tsupplier` file covering every catalog item of `dataset`.
pub fn load_supplier_map(path: impl AsRef<Path>, dataset: &Dataset) -> Result<SupplierMap> {
    let path = path.as_ref();
    parse_supplier_map(open(path)?, path, dataset)
}

pub fn parse_supplier_map(
    reader: impl BufRead,
    source: &Path,
    dataset: &Dataset,
) -> Result<SupplierMap> {
    let items = dataset.items();
    let mut assigned: Vec<Option<String>> = vec![None; items.len()];
    for (ix, line) in reader.lines().enumerate() {
        let lineno = ix + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.is_empty() {
            continue;
        }
        let (item, supplier) = match line.split_once('\t') {
            Some((i, s)) if !i.is_empty() && !s.is_empty() && !s.contains('\t') => (i, s),
            _ => return Err(parse_err(source, lineno, "expected `item<TAB>supplier`")),
        };
        let Some(ordinal) = items.get(item) else {
            log::debug!(
                "{}:{lineno}: item {item} not in catalog, ignored",
                source.display()
            );
            continue;
        };
        match &assigned[ordinal] {
            Some(prev) if prev != supplier => {
                return Err(Error::Conflict {
                    item: item.to_owned(),
                    first: prev.clone(),
                    second: supplier.to_owned(),
                })
            }
            _ => assigned[ordinal] = Some(supplier.to_owned()),
        }
    }
    let missing: Vec<String> = assigned
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_none())
        .map(|(ix, _)| items.name(ix).to_owned())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Coverage { missing });
    }
    let names: Vec<String> = assigned.into_iter().map(Option::unwrap).collect();
    Ok(SupplierMap::from_assignment(&names))
}

/// Item → non-empty set of category labels, each weighted `1/|genres|`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenreMap {
    genres: Vocab,
    item_to_genres: Vec<Vec<usize>>,
}

impl GenreMap {
    /// `assignment[i]` lists the genres of catalog item ordinal `i`.
    pub fn from_assignment<S: AsRef<str>>(assignment: &[Vec<S>]) -> Result<Self> {
        let mut genres = Vocab::new();
        let mut item_to_genres = Vec::with_capacity(assignment.len());
        for (item, labels) in assignment.iter().enumerate() {
            if labels.is_empty() {
                return Err(Error::domain(format!("item ordinal {item} has no genre")));
            }
            let mut ids: Vec<usize> = labels.iter().map(|g| genres.intern(g.as_ref())).collect();
            ids.sort_unstable();
            ids.dedup();
            item_to_genres.push(ids);
        }
        Ok(Self {
            genres,
            item_to_genres,
        })
    }

    pub fn genres(&self) -> &Vocab {
        &self.genres
    }

    pub fn num_genres(&self) -> usize {
        self.genres.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_to_genres.len()
    }

    pub fn genres_of(&self, item: usize) -> &[usize] {
        &self.item_to_genres[item]
    }

    /// Normalized genre distribution of a bag of items; all zeros when empty.
    pub fn distribution(&self, items: impl IntoIterator<Item = usize>) -> Vec<f64> {
        let mut weights = vec![0.0; self.genres.len()];
        let mut total = 0.0;
        for item in items {
            let gs = &self.item_to_genres[item];
            let share = 1.0 / gs.len() as f64;
            for &g in gs {
                weights[g] += share;
            }
            total += 1.0;
        }
        if total > 0.0 {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        weights
    }
}

/// Loads an `item\tgenre1|genre2|...` file covering every catalog item.
pub fn load_genre_map(path: impl AsRef<Path>, dataset: &Dataset) -> Result<GenreMap> {
    let path = path.as_ref();
    parse_genre_map(open(path)?, path, dataset)
}

pub fn parse_genre_map(reader: impl BufRead, source: &Path, dataset: &Dataset) -> Result<GenreMap> {
    let items = dataset.items();
    let mut assigned: Vec<Option<Vec<String>>> = vec![None; items.len()];
    for (ix, line) in reader.lines().enumerate() {
        let lineno = ix + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.is_empty() {
            continue;
        }
        let Some((item, genres)) = line.split_once('\t') else {
            return Err(parse_err(
                source,
                lineno,
                "expected `item<TAB>genre|genre...`",
            ));
        };
        let labels: Vec<String> = genres
            .split('|')
            .filter(|g| !g.is_empty())
            .map(str::to_owned)
            .collect();
        if labels.is_empty() {
            return Err(parse_err(source, lineno, "item has no genre"));
        }
        if let Some(ordinal) = items.get(item) {
            assigned[ordinal] = Some(labels);
        }
    }
    let missing: Vec<String> = assigned
        .iter()
        .enumerate()
        .filter(|(_, g)| g.is_none())
        .map(|(ix, _)| items.name(ix).to_owned())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Coverage { missing });
    }
    let labels: Vec<Vec<String>> = assigned.into_iter().map(Option::unwrap).collect();
    GenreMap::from_assignment(&labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair {
    pub train: Dataset,
    pub test: Dataset,
    pub seed: u64,
}

/// Per-user random holdout.
///
/// Each user contributes `floor(test_fraction * |profile|)` ratings to the
/// test side (at least one once the profile has five or more ratings, and
/// never the whole profile). Draws come from a stream keyed by
/// `(seed, user ordinal)`.
pub fn split_holdout(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<SplitPair> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::domain(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    // Interaction positions per user, in stored order.
    let mut positions: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_users()];
    for (ix, it) in dataset.interactions().iter().enumerate() {
        positions[it.user].push(ix);
    }
    let mut is_test = vec![false; dataset.len()];
    for (user, pos) in positions.iter().enumerate() {
        let size = pos.len();
        if size == 0 {
            continue;
        }
        if size < 2 {
            log::warn!(
                "user {} has a single rating; kept entirely in train",
                dataset.users().name(user)
            );
            continue;
        }
        let mut count = (test_fraction * size as f64 + 1e-9).floor() as usize;
        if size >= 5 {
            count = count.max(1);
        }
        count = count.min(size - 1);
        let mut rng = seed::stream(&[seed, user as u64]);
        for k in index::sample(&mut rng, size, count) {
            is_test[pos[k]] = true;
        }
    }
    let train = dataset.filter(|ix| !is_test[ix]);
    let test = dataset.filter(|ix| is_test[ix]);
    Ok(SplitPair { train, test, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PopularityGroup {
    Head,
    Mid,
    Tail,
}

/// Head/mid/tail partition of the catalog by training interaction counts.
#[derive(Debug, Clone, PartialEq)]
pub struct PopularityProfile {
    pub item_counts: Vec<usize>,
    pub head: Vec<usize>,
    pub mid: Vec<usize>,
    pub tail: Vec<usize>,
    group: Vec<PopularityGroup>,
}

impl PopularityProfile {
    pub fn group_of(&self, item: usize) -> PopularityGroup {
        self.group[item]
    }

    pub fn is_longtail(&self, item: usize) -> bool {
        self.group[item] != PopularityGroup::Head
    }

    /// `mid ∪ tail`, in descending-count order.
    pub fn longtail(&self) -> Vec<usize> {
        self.mid.iter().chain(&self.tail).copied().collect()
    }

    /// `(head, mid, tail)` shares of a bag of items; zeros when empty.
    pub fn shares(&self, items: impl IntoIterator<Item = usize>) -> [f64; 3] {
        let mut counts = [0.0; 3];
        let mut total = 0.0;
        for item in items {
            let slot = match self.group[item] {
                PopularityGroup::Head => 0,
                PopularityGroup::Mid => 1,
                PopularityGroup::Tail => 2,
            };
            counts[slot] += 1.0;
            total += 1.0;
        }
        if total > 0.0 {
            counts.iter_mut().for_each(|c| *c /= total);
        }
        counts
    }
}

/// Items sorted by descending count, ties by ascending ordinal.
pub fn popularity_order(counts: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order
}

/// Head is the shortest prefix (by popularity order) covering at least 20%
/// of training interactions, mid extends coverage to 80%, tail is the rest.
pub fn popularity_profile(train: &Dataset) -> Result<PopularityProfile> {
    if train.is_empty() {
        return Err(Error::domain("popularity profile of an empty dataset"));
    }
    let counts = train.item_counts();
    let total: usize = counts.iter().sum();
    let order = popularity_order(&counts);
    let mut group = vec![PopularityGroup::Tail; counts.len()];
    let (mut head, mut mid, mut tail) = (Vec::new(), Vec::new(), Vec::new());
    let mut covered = 0usize;
    for &item in &order {
        // Integer comparisons: covered/total >= 1/5 and >= 4/5.
        if covered * 5 < total {
            head.push(item);
            group[item] = PopularityGroup::Head;
        } else if covered * 5 < total * 4 {
            mid.push(item);
            group[item] = PopularityGroup::Mid;
        } else {
            tail.push(item);
        }
        covered += counts[item];
    }
    Ok(PopularityProfile {
        item_counts: counts,
        head,
        mid,
        tail,
        group,
    })
}
