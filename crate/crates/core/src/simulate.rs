//! Offline feedback loop: each round splits the current rating data, trains
//! a recommender, lets every user accept one recommended item with a
//! rank-discounted probability, synthesizes a rating for it and appends the
//! new interaction before the next round.
//!
//! Popularity of an item is its interaction count in the current data
//! divided by the number of users. Genre distributions give each genre of
//! a multi-genre item an equal share.

use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_holdout, std_dev, Dataset, GenreMap, Interaction};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_diversity, kld, GroupAssignment, Scope};
use crate::recommend::{recommend_all, Model, RecList, RecommenderConfig};
use crate::seed;

const SPLIT_KEY: u64 = 0x5911;
const TRAIN_KEY: u64 = 0x7a1e;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub iterations: usize,
    pub list_size: usize,
    /// Negative rate of the rank discount in acceptance probabilities.
    pub acceptance_exponent: f64,
    pub recommender: RecommenderConfig,
    pub seed: u64,
    /// Rating scale for synthesized ratings; the source scale when absent.
    pub scale: Option<(f64, f64)>,
    pub test_fraction: f64,
    /// Smoothing for every genre KLD in the log.
    pub smoothing: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            list_size: 10,
            acceptance_exponent: -0.5,
            recommender: RecommenderConfig::MostPopular,
            seed: 42,
            scale: None,
            test_fraction: 0.2,
            smoothing: 0.01,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config(
                "simulation needs at least one iteration".into(),
            ));
        }
        if self.list_size == 0 {
            return Err(Error::Config(
                "simulation list size must be positive".into(),
            ));
        }
        if !(self.acceptance_exponent < 0.0) {
            return Err(Error::Config(format!(
                "acceptance exponent {} must be negative",
                self.acceptance_exponent
            )));
        }
        if let Some((a, b)) = self.scale {
            if !(a <= b) {
                return Err(Error::Config(format!("rating scale ({a}, {b}) is empty")));
            }
        }
        Ok(())
    }
}

/// Selection probabilities `∝ exp(exponent · rank)` for ranks `1..=len`.
pub fn acceptance_probabilities(len: usize, exponent: f64) -> Vec<f64> {
    // exp(exponent) is a common factor, so ranks are counted from zero here.
    let raw: Vec<f64> = (0..len).map(|k| (exponent * k as f64).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// One item drawn from `list` with rank-discounted probability.
pub fn acceptance_select(list: &RecList, exponent: f64, rng: &mut impl Rng) -> Option<usize> {
    if list.is_empty() {
        return None;
    }
    let probs = acceptance_probabilities(list.len(), exponent);
    let dist = WeightedIndex::new(&probs).expect("probabilities are positive");
    Some(list.entries[dist.sample(rng)].0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingEstimate {
    pub rating: f64,
    /// Set when the user or item had no ratings and the global mean was used.
    pub fallback: bool,
}

/// `user mean + user sd · item mean + noise`, rounded and clamped to the
/// scale. Unseen users or items get the rounded global mean.
pub fn rating_with_noise(
    data: &Dataset,
    user: usize,
    item: usize,
    scale: (f64, f64),
    noise: f64,
) -> RatingEstimate {
    let clamp = |w: f64| w.round().min(scale.1).max(scale.0);
    let profile: Vec<f64> = data.user_profile(user).iter().map(|&(_, r)| r).collect();
    match (
        std_dev(&profile),
        data.user_mean(user),
        data.item_mean(item),
    ) {
        (Some(sd), Some(mu), Some(mi)) => RatingEstimate {
            rating: clamp(mu + sd * mi + noise),
            fallback: false,
        },
        _ => RatingEstimate {
            rating: clamp(data.global_mean().unwrap_or(scale.0)),
            fallback: true,
        },
    }
}

/// [`rating_with_noise`] with standard normal noise drawn from `rng`.
pub fn estimate_rating(
    data: &Dataset,
    user: usize,
    item: usize,
    scale: (f64, f64),
    rng: &mut impl Rng,
) -> RatingEstimate {
    let noise: f64 = rng.sample(StandardNormal);
    rating_with_noise(data, user, item, scale, noise)
}

/// Measurements taken on the data of one round, before its accepted
/// interactions are appended.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub dataset_size: usize,
    /// Mean popularity over the interactions of the data.
    pub data_popularity: f64,
    /// Mean popularity over all recommended entries.
    pub rec_popularity: f64,
    /// Fraction of the catalog recommended at least once.
    pub coverage: f64,
    /// Interactions appended to form the next round's data.
    pub accepted: usize,
    /// Mean data popularity after the accepted interactions are appended,
    /// with popularity recounted on the grown data.
    pub next_data_popularity: f64,
    /// Ratings synthesized from the global mean.
    pub fallback_ratings: usize,
    /// Mean over users of KLD(first-round genre profile ‖ current one).
    pub taste_shift: Option<f64>,
    pub group_taste_shift: Vec<Option<f64>>,
    /// KLD(first group ‖ second group); absent with fewer than two groups.
    pub inter_group_kld: Option<f64>,
    /// KLD(first-round population ‖ group), per group.
    pub population_kld: Vec<Option<f64>>,
}

impl IterationRecord {
    pub fn theta(&self) -> f64 {
        self.rec_popularity - self.data_popularity
    }

    /// Increase of the data's mean popularity expected when `accepted`
    /// interactions carry the recommendations' mean popularity.
    pub fn predicted_increment(&self) -> f64 {
        let k = self.accepted as f64;
        k * self.theta() / (self.dataset_size as f64 + k)
    }

    /// Observed change of the data's mean popularity from this round to
    /// the next.
    pub fn realized_increment(&self) -> f64 {
        self.next_data_popularity - self.data_popularity
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub records: Vec<IterationRecord>,
    pub num_groups: usize,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

impl IterationLog {
    pub fn header(&self) -> Vec<String> {
        let mut cols: Vec<String> = [
            "iteration",
            "dataset_size",
            "data_popularity",
            "rec_popularity",
            "theta",
            "coverage",
            "accepted",
            "predicted_increment",
            "realized_increment",
            "fallback_ratings",
            "taste_shift",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        cols.extend((0..self.num_groups).map(|g| format!("taste_shift_g{g}")));
        cols.push("inter_group_kld".into());
        cols.extend((0..self.num_groups).map(|g| format!("population_kld_g{g}")));
        cols
    }

    /// One row per iteration under [`IterationLog::header`]; undefined
    /// values are left empty.
    pub fn to_tsv(&self) -> String {
        let mut out = self.header().join("\t");
        out.push('\n');
        for r in &self.records {
            let mut row = vec![
                r.iteration.to_string(),
                r.dataset_size.to_string(),
                format!("{:.6}", r.data_popularity),
                format!("{:.6}", r.rec_popularity),
                format!("{:.6}", r.theta()),
                format!("{:.6}", r.coverage),
                r.accepted.to_string(),
                format!("{:.6}", r.predicted_increment()),
                format!("{:.6}", r.realized_increment()),
                r.fallback_ratings.to_string(),
                fmt_opt(r.taste_shift),
            ];
            row.extend(r.group_taste_shift.iter().map(|&v| fmt_opt(v)));
            row.push(fmt_opt(r.inter_group_kld));
            row.extend(r.population_kld.iter().map(|&v| fmt_opt(v)));
            let _ = writeln!(out, "{}", row.join("\t"));
        }
        out
    }

    pub fn write_tsv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Data popularity, recommendation popularity and the gap between them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplificationPoint {
    pub iteration: usize,
    pub data_popularity: f64,
    pub rec_popularity: f64,
    pub theta: f64,
    pub predicted_increment: f64,
}

pub fn amplification_curve(log: &IterationLog) -> Vec<AmplificationPoint> {
    log.records
        .iter()
        .map(|r| AmplificationPoint {
            iteration: r.iteration,
            data_popularity: r.data_popularity,
            rec_popularity: r.rec_popularity,
            theta: r.theta(),
            predicted_increment: r.predicted_increment(),
        })
        .collect()
}

fn profile_items(data: &Dataset, user: usize) -> impl Iterator<Item = usize> + '_ {
    data.user_profile(user).iter().map(|&(i, _)| i)
}

fn group_distribution(data: &Dataset, genres: &GenreMap, users: &[usize]) -> Vec<f64> {
    genres.distribution(users.iter().flat_map(|&u| profile_items(data, u)))
}

/// Mean over interactions of the interacted item's popularity.
pub fn mean_data_popularity(data: &Dataset) -> Option<f64> {
    let popularity = item_popularity(data);
    mean_of(data.interactions().iter().map(|it| popularity[it.item]))
}

fn item_popularity(data: &Dataset) -> Vec<f64> {
    let users = data.num_users().max(1) as f64;
    data.item_counts()
        .into_iter()
        .map(|c| c as f64 / users)
        .collect()
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Runs `config.iterations` rounds starting from `source`.
pub fn run_feedback_loop(
    source: &Dataset,
    genres: &GenreMap,
    groups: &GroupAssignment,
    config: &SimConfig,
) -> Result<IterationLog> {
    config.validate()?;
    if genres.num_items() != source.num_items() {
        return Err(Error::domain("genre map does not match the catalog"));
    }
    let scale = config.scale.unwrap_or(source.rating_scale());
    let smoothing = config.smoothing;

    let initial_users: Vec<Option<Vec<f64>>> = (0..source.num_users())
        .map(|u| {
            (!source.user_profile(u).is_empty())
                .then(|| genres.distribution(profile_items(source, u)))
        })
        .collect();
    let all_users: Vec<usize> = (0..source.num_users()).collect();
    let initial_population = group_distribution(source, genres, &all_users);

    let mut data = source.clone();
    let mut records = Vec::with_capacity(config.iterations);
    for t in 1..=config.iterations {
        let wrap = |e: Error| Error::Simulation {
            iteration: t,
            source: Box::new(e),
        };
        let split = split_holdout(
            &data,
            config.test_fraction,
            seed::derive(&[config.seed, t as u64, SPLIT_KEY]),
        )
        .map_err(wrap)?;
        let model = Model::train(
            &config.recommender,
            &split.train,
            seed::derive(&[config.seed, t as u64, TRAIN_KEY]),
        )
        .map_err(wrap)?;
        let batch = recommend_all(&model, &split.train, config.list_size);

        let popularity = item_popularity(&data);
        let data_popularity = mean_data_popularity(&data)
            .ok_or_else(|| wrap(Error::domain("rating data is empty")))?;
        let rec_popularity = mean_of(
            batch
                .lists()
                .iter()
                .flat_map(|l| l.items())
                .map(|i| popularity[i]),
        )
        .ok_or_else(|| wrap(Error::domain("recommender produced no entries")))?;
        let coverage = aggregate_diversity(&batch, 1, Scope::Item, None).map_err(wrap)?;

        let choices: Vec<(Interaction, bool)> = batch
            .lists()
            .par_iter()
            .filter_map(|list| {
                let mut rng = seed::stream(&[config.seed, t as u64, list.user as u64]);
                let item = acceptance_select(list, config.acceptance_exponent, &mut rng)?;
                if data.contains(list.user, item) {
                    return None;
                }
                let est = estimate_rating(&data, list.user, item, scale, &mut rng);
                Some((
                    Interaction {
                        user: list.user,
                        item,
                        rating: est.rating,
                        timestamp: None,
                    },
                    est.fallback,
                ))
            })
            .collect();

        let shifts: Vec<Option<f64>> = initial_users
            .iter()
            .enumerate()
            .map(|(u, init)| {
                init.as_ref()
                    .map(|p| kld(p, &genres.distribution(profile_items(&data, u)), smoothing))
                    .transpose()
            })
            .collect::<Result<_>>()
            .map_err(wrap)?;
        let group_taste_shift = groups
            .groups
            .iter()
            .map(|g| mean_of(g.iter().filter_map(|&u| shifts.get(u).copied().flatten())))
            .collect();
        let group_dists: Vec<Vec<f64>> = groups
            .groups
            .iter()
            .map(|g| group_distribution(&data, genres, g))
            .collect();
        let inter_group_kld = match group_dists.as_slice() {
            [a, b, ..] if a.iter().sum::<f64>() > 0.0 => Some(kld(a, b, smoothing).map_err(wrap)?),
            _ => None,
        };
        let population_kld = group_dists
            .iter()
            .map(|g| kld(&initial_population, g, smoothing).map(Some))
            .collect::<Result<_>>()
            .map_err(wrap)?;

        let accepted = choices.len();
        let fallback_ratings = choices.iter().filter(|(_, f)| *f).count();
        let next = data
            .extend(choices.into_iter().map(|(it, _)| it))
            .map_err(wrap)?;
        records.push(IterationRecord {
            iteration: t,
            dataset_size: data.len(),
            data_popularity,
            rec_popularity,
            coverage,
            accepted,
            next_data_popularity: mean_data_popularity(&next).unwrap_or(data_popularity),
            fallback_ratings,
            taste_shift: mean_of(shifts.iter().flatten().copied()),
            group_taste_shift,
            inter_group_kld,
            population_kld,
        });
        log::info!(
            "iteration {t}: {} interactions, rec popularity {rec_popularity:.4}",
            data.len()
        );
        data = next;
    }
    Ok(IterationLog {
        records,
        num_groups: groups.num_groups(),
    })
}
