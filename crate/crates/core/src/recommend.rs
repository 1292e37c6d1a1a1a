//! Baseline recommenders and the ranked-list types they produce.
//!
//! Every model scores `(user, item)` pairs; [`recommend_topk`] turns
//! scores into a ranked list of unseen items with the ordering rule used
//! throughout the crate: descending score, ties by ascending item ordinal.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Vocab};
use crate::error::{Error, Result};
use crate::seed;

/// One user's ranked list: `(item, score)` in rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct RecList {
    pub user: usize,
    pub entries: Vec<(usize, f64)>,
}

impl RecList {
    pub fn items(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|&(i, _)| i)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn truncated(&self, n: usize) -> RecList {
        RecList {
            user: self.user,
            entries: self.entries.iter().take(n).copied().collect(),
        }
    }
}

/// Ranked lists for a set of users, sorted by user ordinal.
#[derive(Debug, Clone, PartialEq)]
pub struct RecBatch {
    users: Arc<Vocab>,
    items: Arc<Vocab>,
    lists: Vec<RecList>,
    list_size: usize,
}

impl RecBatch {
    pub fn new(
        users: Arc<Vocab>,
        items: Arc<Vocab>,
        mut lists: Vec<RecList>,
        list_size: usize,
    ) -> Self {
        lists.sort_by_key(|l| l.user);
        Self {
            users,
            items,
            lists,
            list_size,
        }
    }

    pub fn lists(&self) -> &[RecList] {
        &self.lists
    }

    pub fn list_size(&self) -> usize {
        self.list_size
    }

    pub fn users(&self) -> &Arc<Vocab> {
        &self.users
    }

    pub fn items(&self) -> &Arc<Vocab> {
        &self.items
    }

    pub fn num_lists(&self) -> usize {
        self.lists.len()
    }

    pub fn list_for(&self, user: usize) -> Option<&RecList> {
        self.lists
            .binary_search_by_key(&user, |l| l.user)
            .ok()
            .map(|ix| &self.lists[ix])
    }

    /// Every list cut to its top-`n` prefix.
    pub fn truncated(&self, n: usize) -> RecBatch {
        RecBatch {
            users: self.users.clone(),
            items: self.items.clone(),
            lists: self.lists.iter().map(|l| l.truncated(n)).collect(),
            list_size: n.min(self.list_size),
        }
    }

    /// Batch from plain item lists, list `u` belonging to user ordinal `u`;
    /// scores descend with rank (`len - position`).
    pub fn from_item_lists(users: Arc<Vocab>, items: Arc<Vocab>, lists: &[Vec<usize>]) -> Self {
        let size = lists.iter().map(Vec::len).max().unwrap_or(0);
        let lists = lists
            .iter()
            .enumerate()
            .map(|(u, l)| RecList {
                user: u,
                entries: l
                    .iter()
                    .enumerate()
                    .map(|(pos, &i)| (i, (l.len() - pos) as f64))
                    .collect(),
            })
            .collect();
        RecBatch::new(users, items, lists, size)
    }

    /// Same users and vocabularies, different lists.
    pub fn with_lists(&self, lists: Vec<RecList>, list_size: usize) -> RecBatch {
        RecBatch::new(self.users.clone(), self.items.clone(), lists, list_size)
    }

    /// `user\titem\trank\tscore`, rank 1-based, score with six decimals.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for list in &self.lists {
            for (rank, &(item, score)) in list.entries.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{:.6}",
                    self.users.name(list.user),
                    self.items.name(item),
                    rank + 1,
                    score
                );
            }
        }
        out
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    /// Reads a batch whose identifiers must all exist in `dataset`.
    pub fn read_tsv(path: impl AsRef<Path>, dataset: &Dataset) -> Result<RecBatch> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(BufReader::new(file), path, dataset)
    }

    pub fn parse_tsv(reader: impl BufRead, source: &Path, dataset: &Dataset) -> Result<RecBatch> {
        let err = |line: usize, message: String| Error::Parse {
            path: source.to_owned(),
            line,
            message,
        };
        let mut lists: Vec<RecList> = Vec::new();
        for (ix, line) in reader.lines().enumerate() {
            let lineno = ix + 1;
            let line = line.map_err(|e| Error::io(source, e))?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(err(
                    lineno,
                    format!("expected 4 fields, found {}", fields.len()),
                ));
            }
            let user = dataset
                .users()
                .get(fields[0])
                .ok_or_else(|| Error::UnknownId {
                    kind: "user",
                    id: fields[0].to_owned(),
                })?;
            let item = dataset
                .items()
                .get(fields[1])
                .ok_or_else(|| Error::UnknownId {
                    kind: "item",
                    id: fields[1].to_owned(),
                })?;
            let rank: usize = fields[2]
                .parse()
                .map_err(|_| err(lineno, format!("bad rank {:?}", fields[2])))?;
            let score: f64 = fields[3]
                .parse()
                .map_err(|_| err(lineno, format!("bad score {:?}", fields[3])))?;
            let start_new = lists.last().is_none_or(|l| l.user != user);
            if start_new {
                if lists.iter().any(|l| l.user == user) {
                    return Err(err(
                        lineno,
                        format!("rows of user {} are not contiguous", fields[0]),
                    ));
                }
                lists.push(RecList {
                    user,
                    entries: Vec::new(),
                });
            }
            let list = lists.last_mut().expect("pushed above");
            if rank != list.entries.len() + 1 {
                return Err(err(lineno, format!("rank {rank} out of sequence")));
            }
            if list.entries.iter().any(|&(i, _)| i == item) {
                return Err(err(lineno, format!("item {} repeated in list", fields[1])));
            }
            list.entries.push((item, score));
        }
        let list_size = lists.iter().map(RecList::len).max().unwrap_or(0);
        Ok(RecBatch::new(
            dataset.users().clone(),
            dataset.items().clone(),
            lists,
            list_size,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Pearson,
    #[default]
    Cosine,
}

/// A rating prediction; `fallback` marks predictions that had no usable
/// neighbor and fell back to the baseline mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub value: f64,
    pub fallback: bool,
}

/// Scores every item by its training interaction count.
#[derive(Debug, Clone, PartialEq)]
pub struct MostPopular {
    pub counts: Vec<usize>,
}

pub fn train_mostpopular(train: &Dataset) -> Result<MostPopular> {
    if train.is_empty() {
        return Err(Error::domain("cannot train on an empty dataset"));
    }
    Ok(MostPopular {
        counts: train.item_counts(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Rows are users, neighbors are similar users who rated the item.
    User,
    /// Rows are items, neighbors are similar items the user rated.
    Item,
}

/// Mean-centered k-nearest-neighbor predictor.
///
/// Works on an abstract `rows × cols` matrix so that the item-based model
/// is literally the user-based one on the transposed ratings.
#[derive(Debug, Clone)]
pub struct Knn {
    orientation: Orientation,
    k: usize,
    similarity: Similarity,
    cols: usize,
    /// Dense `rows × cols`, NaN where unrated.
    matrix: Vec<f64>,
    row_means: Vec<f64>,
    /// Positive-similarity neighbors per row, descending similarity, ties by ordinal.
    neighbors: Vec<Vec<(usize, f64)>>,
}

/// Minimum number of co-rated entries for a non-zero similarity.
pub const MIN_CO_RATED: usize = 2;

/// Similarity of two sparse vectors (sorted by index) over their common support.
pub fn co_rated_similarity(a: &[(usize, f64)], b: &[(usize, f64)], kind: Similarity) -> f64 {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                xs.push(a[i].1);
                ys.push(b[j].1);
                i += 1;
                j += 1;
            }
        }
    }
    if xs.len() < MIN_CO_RATED {
        return 0.0;
    }
    let (num, dx, dy) = match kind {
        Similarity::Cosine => xs
            .iter()
            .zip(&ys)
            .fold((0.0, 0.0, 0.0), |(n, dx, dy), (x, y)| {
                (n + x * y, dx + x * x, dy + y * y)
            }),
        Similarity::Pearson => {
            let mx = xs.iter().sum::<f64>() / xs.len() as f64;
            let my = ys.iter().sum::<f64>() / ys.len() as f64;
            xs.iter()
                .zip(&ys)
                .fold((0.0, 0.0, 0.0), |(n, dx, dy), (x, y)| {
                    let (x, y) = (x - mx, y - my);
                    (n + x * y, dx + x * x, dy + y * y)
                })
        }
    };
    let den = (dx * dy).sqrt();
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn train_knn(
    train: &Dataset,
    k: usize,
    similarity: Similarity,
    orientation: Orientation,
) -> Result<Knn> {
    if k == 0 {
        return Err(Error::domain("k must be at least 1"));
    }
    if train.is_empty() {
        return Err(Error::domain("cannot train on an empty dataset"));
    }
    let (rows, cols) = match orientation {
        Orientation::User => (train.num_users(), train.num_items()),
        Orientation::Item => (train.num_items(), train.num_users()),
    };
    let profile = |r: usize| match orientation {
        Orientation::User => train.user_profile(r),
        Orientation::Item => train.item_profile(r),
    };
    let mut matrix = vec![f64::NAN; rows * cols];
    for r in 0..rows {
        for &(c, v) in profile(r) {
            matrix[r * cols + c] = v;
        }
    }
    let global = train.global_mean().unwrap_or(0.0);
    let row_means: Vec<f64> = (0..rows)
        .map(|r| crate::dataset::mean(profile(r).iter().map(|&(_, v)| v)).unwrap_or(global))
        .collect();
    let neighbors: Vec<Vec<(usize, f64)>> = (0..rows)
        .into_par_iter()
        .map(|r| {
            let mut out: Vec<(usize, f64)> = (0..rows)
                .filter(|&o| o != r)
                .map(|o| (o, co_rated_similarity(profile(r), profile(o), similarity)))
                .filter(|&(_, s)| s > 0.0)
                .collect();
            out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            out
        })
        .collect();
    Ok(Knn {
        orientation,
        k,
        similarity,
        cols,
        matrix,
        row_means,
        neighbors,
    })
}

pub fn train_userknn(train: &Dataset, k: usize, similarity: Similarity) -> Result<Knn> {
    train_knn(train, k, similarity, Orientation::User)
}

pub fn train_itemknn(train: &Dataset, k: usize, similarity: Similarity) -> Result<Knn> {
    train_knn(train, k, similarity, Orientation::Item)
}

impl Knn {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn similarity_kind(&self) -> Similarity {
        self.similarity
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    fn cell(&self, user: usize, item: usize) -> (usize, usize) {
        match self.orientation {
            Orientation::User => (user, item),
            Orientation::Item => (item, user),
        }
    }

    fn value(&self, row: usize, col: usize) -> Option<f64> {
        let v = self.matrix[row * self.cols + col];
        (!v.is_nan()).then_some(v)
    }

    /// Similarity between two rows (users or items depending on orientation).
    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        self.neighbors[a]
            .iter()
            .find(|&&(o, _)| o == b)
            .map_or(0.0, |&(_, s)| s)
    }

    /// The neighbors (row ordinals) that enter the prediction for `(user, item)`.
    pub fn neighborhood(&self, user: usize, item: usize) -> Vec<usize> {
        let (row, col) = self.cell(user, item);
        self.neighbors[row]
            .iter()
            .filter(|&&(o, _)| self.value(o, col).is_some())
            .take(self.k)
            .map(|&(o, _)| o)
            .collect()
    }

    pub fn predict(&self, user: usize, item: usize) -> Prediction {
        let (row, col) = self.cell(user, item);
        let mut num = 0.0;
        let mut den = 0.0;
        let mut used = 0;
        for &(o, sim) in &self.neighbors[row] {
            if used == self.k {
                break;
            }
            if let Some(v) = self.value(o, col) {
                num += (v - self.row_means[o]) * sim;
                den += sim;
                used += 1;
            }
        }
        let base = self.row_means[row];
        if used == 0 {
            Prediction {
                value: base,
                fallback: true,
            }
        } else {
            Prediction {
                value: base + num / den,
                fallback: false,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfConfig {
    pub factors: usize,
    pub epochs: usize,
    pub learn_rate: f64,
    pub reg: f64,
}

impl Default for MfConfig {
    fn default() -> Self {
        Self {
            factors: 50,
            epochs: 30,
            learn_rate: 0.01,
            reg: 0.05,
        }
    }
}

/// `r̂ = μ + b_u + b_i + p_u·q_i`, fit by SGD on
/// `Σ ½(r − r̂)² + ½·reg·(b_u² + b_i² + |p_u|² + |q_i|²)` over observed ratings.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasedMf {
    pub global_mean: f64,
    pub user_bias: Vec<f64>,
    pub item_bias: Vec<f64>,
    /// Row-major `users × factors`.
    pub user_factors: Vec<f64>,
    /// Row-major `items × factors`.
    pub item_factors: Vec<f64>,
    pub factors: usize,
    pub reg: f64,
    /// Objective before training followed by one value per epoch.
    pub loss_history: Vec<f64>,
}

impl BiasedMf {
    /// Zero-initialized model (every prediction equals the global mean).
    pub fn zeros(train: &Dataset, factors: usize, reg: f64) -> Self {
        Self {
            global_mean: train.global_mean().unwrap_or(0.0),
            user_bias: vec![0.0; train.num_users()],
            item_bias: vec![0.0; train.num_items()],
            user_factors: vec![0.0; train.num_users() * factors],
            item_factors: vec![0.0; train.num_items() * factors],
            factors,
            reg,
            loss_history: Vec::new(),
        }
    }

    fn user_vec(&self, u: usize) -> &[f64] {
        &self.user_factors[u * self.factors..(u + 1) * self.factors]
    }

    fn item_vec(&self, i: usize) -> &[f64] {
        &self.item_factors[i * self.factors..(i + 1) * self.factors]
    }

    pub fn predict(&self, user: usize, item: usize) -> f64 {
        let dot: f64 = self
            .user_vec(user)
            .iter()
            .zip(self.item_vec(item))
            .map(|(a, b)| a * b)
            .sum();
        self.global_mean + self.user_bias[user] + self.item_bias[item] + dot
    }

    pub fn objective(&self, train: &Dataset) -> f64 {
        train
            .interactions()
            .iter()
            .map(|it| {
                let e = it.rating - self.predict(it.user, it.item);
                let norm: f64 = self.user_bias[it.user].powi(2)
                    + self.item_bias[it.item].powi(2)
                    + self.user_vec(it.user).iter().map(|v| v * v).sum::<f64>()
                    + self.item_vec(it.item).iter().map(|v| v * v).sum::<f64>();
                0.5 * e * e + 0.5 * self.reg * norm
            })
            .sum()
    }

    /// Flattened parameters: user biases, item biases, user factors, item factors.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = self.user_bias.clone();
        out.extend(&self.item_bias);
        out.extend(&self.user_factors);
        out.extend(&self.item_factors);
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) {
        let nu = self.user_bias.len();
        let ni = self.item_bias.len();
        let f = self.factors;
        assert_eq!(params.len(), nu + ni + (nu + ni) * f);
        let (bu, rest) = params.split_at(nu);
        let (bi, rest) = rest.split_at(ni);
        let (pu, qi) = rest.split_at(nu * f);
        self.user_bias.copy_from_slice(bu);
        self.item_bias.copy_from_slice(bi);
        self.user_factors.copy_from_slice(pu);
        self.item_factors.copy_from_slice(qi);
    }

    /// Gradient of the per-observation objective term for `(user, item, rating)`.
    /// Returns `(d b_u, d b_i, d p_u, d q_i)`.
    fn observation_gradient(
        &self,
        user: usize,
        item: usize,
        rating: f64,
    ) -> (f64, f64, Vec<f64>, Vec<f64>) {
        let e = rating - self.predict(user, item);
        let pu = self.user_vec(user);
        let qi = self.item_vec(item);
        let d_bu = -e + self.reg * self.user_bias[user];
        let d_bi = -e + self.reg * self.item_bias[item];
        let d_pu = qi
            .iter()
            .zip(pu)
            .map(|(q, p)| -e * q + self.reg * p)
            .collect();
        let d_qi = pu
            .iter()
            .zip(qi)
            .map(|(p, q)| -e * p + self.reg * q)
            .collect();
        (d_bu, d_bi, d_pu, d_qi)
    }

    /// Full-batch analytic gradient of [`BiasedMf::objective`], laid out as
    /// [`BiasedMf::parameters`].
    pub fn gradient(&self, train: &Dataset) -> Vec<f64> {
        let nu = self.user_bias.len();
        let ni = self.item_bias.len();
        let f = self.factors;
        let mut g = vec![0.0; nu + ni + (nu + ni) * f];
        for it in train.interactions() {
            let (d_bu, d_bi, d_pu, d_qi) = self.observation_gradient(it.user, it.item, it.rating);
            g[it.user] += d_bu;
            g[nu + it.item] += d_bi;
            let pu_off = nu + ni + it.user * f;
            let qi_off = nu + ni + nu * f + it.item * f;
            for k in 0..f {
                g[pu_off + k] += d_pu[k];
                g[qi_off + k] += d_qi[k];
            }
        }
        g
    }

    fn sgd_step(&mut self, user: usize, item: usize, rating: f64, lr: f64) {
        let (d_bu, d_bi, d_pu, d_qi) = self.observation_gradient(user, item, rating);
        let f = self.factors;
        self.user_bias[user] -= lr * d_bu;
        self.item_bias[item] -= lr * d_bi;
        for k in 0..f {
            self.user_factors[user * f + k] -= lr * d_pu[k];
            self.item_factors[item * f + k] -= lr * d_qi[k];
        }
    }
}

pub fn train_biasedmf(train: &Dataset, config: &MfConfig, seed: u64) -> Result<BiasedMf> {
    if config.factors == 0 {
        return Err(Error::domain("factors must be at least 1"));
    }
    if !(config.learn_rate > 0.0) || !(config.reg >= 0.0) {
        return Err(Error::domain(
            "learn_rate must be positive and reg non-negative",
        ));
    }
    if train.is_empty() {
        return Err(Error::domain("cannot train on an empty dataset"));
    }
    let mut model = BiasedMf::zeros(train, config.factors, config.reg);
    let mut rng = seed::stream(&[seed, u64::MAX]);
    let mut init = |v: &mut Vec<f64>| {
        v.iter_mut()
            .for_each(|x| *x = rng.random_range(-0.01..0.01))
    };
    init(&mut model.user_bias);
    init(&mut model.item_bias);
    init(&mut model.user_factors);
    init(&mut model.item_factors);

    let initial = model.objective(train);
    if !initial.is_finite() {
        return Err(Error::Divergence { epoch: 0 });
    }
    model.loss_history.push(initial);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::stream(&[seed, epoch as u64]));
        for &ix in &order {
            let it = train.interactions()[ix];
            model.sgd_step(it.user, it.item, it.rating, config.learn_rate);
        }
        let loss = model.objective(train);
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        model.loss_history.push(loss);
    }
    Ok(model)
}

/// Which recommender to train, with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "lowercase")]
pub enum RecommenderConfig {
    #[default]
    #[serde(rename = "mostpopular")]
    MostPopular,
    #[serde(rename = "userknn")]
    UserKnn {
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default)]
        similarity: Similarity,
    },
    #[serde(rename = "itemknn")]
    ItemKnn {
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default)]
        similarity: Similarity,
    },
    #[serde(rename = "biasedmf")]
    BiasedMf(MfConfig),
}

fn default_k() -> usize {
    50
}

#[derive(Debug, Clone)]
pub enum Model {
    MostPopular(MostPopular),
    Knn(Knn),
    BiasedMf(BiasedMf),
}

impl Model {
    pub fn train(config: &RecommenderConfig, train: &Dataset, seed: u64) -> Result<Model> {
        Ok(match *config {
            RecommenderConfig::MostPopular => Model::MostPopular(train_mostpopular(train)?),
            RecommenderConfig::UserKnn { k, similarity } => {
                Model::Knn(train_userknn(train, k, similarity)?)
            }
            RecommenderConfig::ItemKnn { k, similarity } => {
                Model::Knn(train_itemknn(train, k, similarity)?)
            }
            RecommenderConfig::BiasedMf(cfg) => Model::BiasedMf(train_biasedmf(train, &cfg, seed)?),
        })
    }

    /// Ranking score; rating predictions are used unclamped.
    pub fn score(&self, user: usize, item: usize) -> f64 {
        match self {
            Model::MostPopular(m) => m.counts[item] as f64,
            Model::Knn(m) => m.predict(user, item).value,
            Model::BiasedMf(m) => m.predict(user, item),
        }
    }

    /// Rating prediction clamped to `scale`, for error metrics.
    pub fn predict_rating(&self, user: usize, item: usize, scale: (f64, f64)) -> f64 {
        self.score(user, item).clamp(scale.0, scale.1)
    }
}

/// Top-`t` unseen items for `user`, descending score, ties by ascending ordinal.
pub fn recommend_topk(model: &Model, train: &Dataset, user: usize, t: usize) -> RecList {
    let seen = train.user_profile(user);
    let mut scored: Vec<(usize, f64)> = (0..train.num_items())
        .filter(|&i| seen.binary_search_by_key(&i, |&(j, _)| j).is_err())
        .map(|i| (i, model.score(user, i)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(t);
    RecList {
        user,
        entries: scored,
    }
}

/// Lists for every user with at least one training interaction.
pub fn recommend_all(model: &Model, train: &Dataset, t: usize) -> RecBatch {
    let lists: Vec<RecList> = (0..train.num_users())
        .into_par_iter()
        .filter(|&u| !train.user_profile(u).is_empty())
        .map(|u| recommend_topk(model, train, u, t))
        .collect();
    RecBatch::new(train.users().clone(), train.items().clone(), lists, t)
}
