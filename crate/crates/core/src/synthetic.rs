//! Seeded synthetic data with a Zipf-shaped popularity curve: rating
//! datasets, ranked long lists with a held-out relevance set, supplier and
//! genre assignments.
//!
//! Item ordinal `k` always has popularity weight `1 / (k + 1)^s`, so item
//! `i0` is the most popular.

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::seq::index;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::dataset::{popularity_profile, Dataset, GenreMap, Interaction, SupplierMap, Vocab};
use crate::error::{Error, Result};
use crate::recommend::{RecBatch, RecList};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZipfConfig {
    pub users: usize,
    pub items: usize,
    pub exponent: f64,
    pub min_profile: usize,
    pub max_profile: usize,
    pub seed: u64,
}

impl Default for ZipfConfig {
    fn default() -> Self {
        Self {
            users: 200,
            items: 100,
            exponent: 1.2,
            min_profile: 10,
            max_profile: 30,
            seed: 42,
        }
    }
}

pub fn zipf_weights(items: usize, exponent: f64) -> Vec<f64> {
    (0..items)
        .map(|k| ((k + 1) as f64).powf(-exponent))
        .collect()
}

fn vocab(prefix: &str, n: usize) -> Arc<Vocab> {
    Arc::new(Vocab::from_names((0..n).map(|k| format!("{prefix}{k}"))))
}

/// Draws `amount` distinct indices, each draw proportional to the remaining
/// weights; the result is in draw order.
fn draw_without_replacement(
    rng: &mut impl Rng,
    weights: &[f64],
    amount: usize,
    exclude: &[usize],
) -> Vec<usize> {
    let mut w = weights.to_vec();
    for &e in exclude {
        w[e] = 0.0;
    }
    let available = w.iter().filter(|&&x| x > 0.0).count();
    let mut out = Vec::with_capacity(amount.min(available));
    while out.len() < amount.min(available) {
        let dist = WeightedIndex::new(&w).expect("positive weights remain");
        let k = dist.sample(rng);
        out.push(k);
        w[k] = 0.0;
    }
    out
}

/// Integer rating from an item-quality term, a user bias and noise.
fn synth_rating(rng: &mut impl Rng, quality: f64, bias: f64) -> f64 {
    let noise: f64 = rng.sample(Normal::new(0.0, 0.8).expect("valid sd"));
    (quality + bias + noise).round().clamp(1.0, 5.0)
}

fn item_qualities(items: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed::stream(&[seed, 0x9a11]);
    let normal = Normal::new(0.0, 0.5).expect("valid sd");
    (0..items)
        .map(|k| 3.0 + (1.0 - k as f64 / items.max(1) as f64) + rng.sample(normal))
        .collect()
}

/// Rating dataset whose item popularity follows the Zipf curve.
pub fn zipf_ratings(config: &ZipfConfig) -> Result<Dataset> {
    if config.items == 0 || config.users == 0 {
        return Err(Error::domain("synthetic dataset needs users and items"));
    }
    if config.min_profile > config.max_profile || config.max_profile > config.items {
        return Err(Error::domain("profile size range must fit the catalog"));
    }
    let weights = zipf_weights(config.items, config.exponent);
    let quality = item_qualities(config.items, config.seed);
    let mut interactions = Vec::new();
    for u in 0..config.users {
        let mut rng = seed::stream(&[config.seed, 0x5a7e, u as u64]);
        let size = rng.random_range(config.min_profile..=config.max_profile);
        let bias: f64 = rng.sample(Normal::new(0.0, 0.5).expect("valid sd"));
        for item in draw_without_replacement(&mut rng, &weights, size, &[]) {
            interactions.push(Interaction {
                user: u,
                item,
                rating: synth_rating(&mut rng, quality[item], bias),
                timestamp: None,
            });
        }
    }
    Dataset::new(
        vocab("u", config.users),
        vocab("i", config.items),
        interactions,
        (1.0, 5.0),
    )
}

/// Long lists ranked by Zipf draw order, plus a train/test split of each
/// user's Zipf-drawn interactions. Lists exclude training items only, so
/// held-out items can appear in them.
#[derive(Debug, Clone)]
pub struct RecFixture {
    pub train: Dataset,
    pub test: Dataset,
    pub long: RecBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecFixtureConfig {
    pub users: usize,
    pub items: usize,
    pub long_list_size: usize,
    /// Interactions drawn per user before the split.
    pub profile_size: usize,
    pub test_fraction: f64,
    pub exponent: f64,
    pub seed: u64,
}

impl Default for RecFixtureConfig {
    fn default() -> Self {
        Self {
            users: 10,
            items: 100,
            long_list_size: 30,
            profile_size: 25,
            test_fraction: 0.2,
            exponent: 1.2,
            seed: 7,
        }
    }
}

pub fn zipf_rec_fixture(config: &RecFixtureConfig) -> Result<RecFixture> {
    let t = config.long_list_size;
    if config.profile_size + t > config.items {
        return Err(Error::domain("profile and long list must fit the catalog"));
    }
    if !(0.0..1.0).contains(&config.test_fraction) {
        return Err(Error::domain("test fraction must lie in [0, 1)"));
    }
    let weights = zipf_weights(config.items, config.exponent);
    let held_out = (config.profile_size as f64 * config.test_fraction).round() as usize;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut lists = Vec::new();
    for u in 0..config.users {
        let mut rng = seed::stream(&[config.seed, 0x115f, u as u64]);
        let drawn = draw_without_replacement(&mut rng, &weights, config.profile_size, &[]);
        let test_pos: Vec<usize> = index::sample(&mut rng, drawn.len(), held_out).into_vec();
        let mut profile = Vec::new();
        for (pos, &item) in drawn.iter().enumerate() {
            let interaction = Interaction {
                user: u,
                item,
                rating: f64::from(rng.random_range(1u8..=5)),
                timestamp: None,
            };
            if test_pos.contains(&pos) {
                test.push(interaction);
            } else {
                profile.push(item);
                train.push(interaction);
            }
        }
        let long = draw_without_replacement(&mut rng, &weights, t, &profile);
        lists.push(RecList {
            user: u,
            entries: long
                .iter()
                .enumerate()
                .map(|(pos, &i)| (i, (t - pos) as f64))
                .collect(),
        });
    }
    let users = vocab("u", config.users);
    let items = vocab("i", config.items);
    Ok(RecFixture {
        train: Dataset::new(users.clone(), items.clone(), train, (1.0, 5.0))?,
        test: Dataset::new(users.clone(), items.clone(), test, (1.0, 5.0))?,
        long: RecBatch::new(users, items, lists, t),
    })
}

/// One supplier owns every head item of `train`; the remaining items are
/// dealt round-robin to `others` further suppliers.
pub fn head_owner_suppliers(train: &Dataset, others: usize) -> Result<SupplierMap> {
    let profile = popularity_profile(train)?;
    let mut names = vec![String::new(); train.num_items()];
    for &i in &profile.head {
        names[i] = "s0".to_string();
    }
    let rest = profile.longtail();
    for (k, &i) in rest.iter().enumerate() {
        names[i] = format!("s{}", 1 + k % others.max(1));
    }
    Ok(SupplierMap::from_assignment(&names))
}

/// Deterministic genre labels: item `k` belongs to `g{k mod n}`, and every
/// third item also to a second genre.
pub fn cyclic_genres(items: usize, genres: usize) -> Result<GenreMap> {
    let genres = genres.max(1);
    let labels: Vec<Vec<String>> = (0..items)
        .map(|k| {
            let mut l = vec![format!("g{}", k % genres)];
            if k % 3 == 0 && genres > 1 {
                l.push(format!("g{}", (k * 7 + 3) % genres));
            }
            l
        })
        .collect();
    GenreMap::from_assignment(&labels)
}

/// Splits users into a mainstream group (mean profile item count at or
/// above the median) and a niche group.
pub fn mainstream_split(data: &Dataset) -> [Vec<usize>; 2] {
    let counts = data.item_counts();
    let mut scored: Vec<(usize, f64)> = (0..data.num_users())
        .filter_map(|u| {
            let p = data.user_profile(u);
            (!p.is_empty()).then(|| {
                let m = p.iter().map(|&(i, _)| counts[i] as f64).sum::<f64>() / p.len() as f64;
                (u, m)
            })
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let half = scored.len().div_ceil(2);
    let mut mainstream: Vec<usize> = scored[..half].iter().map(|&(u, _)| u).collect();
    let mut niche: Vec<usize> = scored[half..].iter().map(|&(u, _)| u).collect();
    mainstream.sort_unstable();
    niche.sort_unstable();
    [mainstream, niche]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zipf_dataset_is_skewed_and_reproducible() {
        let cfg = ZipfConfig::default();
        let a = zipf_ratings(&cfg).unwrap();
        assert_eq!(a, zipf_ratings(&cfg).unwrap());
        assert_eq!(a.num_users(), 200);
        let counts = a.item_counts();
        assert!(counts[0] > 5 * counts[50].max(1));
        assert!(a.interactions().iter().all(|i| i.rating.fract() == 0.0));
        for u in 0..a.num_users() {
            let n = a.user_profile(u).len();
            assert!((10..=30).contains(&n));
        }
    }

    #[test]
    fn rec_fixture_shapes() {
        let f = zipf_rec_fixture(&RecFixtureConfig::default()).unwrap();
        assert_eq!(f.long.num_lists(), 10);
        for list in f.long.lists() {
            assert_eq!(list.len(), 30);
            assert!(list.items().all(|i| !f.train.contains(list.user, i)));
        }
        for u in 0..10 {
            assert_eq!(f.train.user_profile(u).len(), 20);
            assert_eq!(f.test.user_profile(u).len(), 5);
        }
    }

    #[test]
    fn head_owner_takes_all_head_items() {
        let f = zipf_rec_fixture(&RecFixtureConfig::default()).unwrap();
        let sm = head_owner_suppliers(&f.train, 9).unwrap();
        let profile = popularity_profile(&f.train).unwrap();
        let owner = sm.supplier_of(profile.head[0]);
        assert!(profile.head.iter().all(|&i| sm.supplier_of(i) == owner));
        assert_eq!(sm.num_suppliers(), 10);
    }

    #[test]
    fn cyclic_genres_cover_catalog() {
        let g = cyclic_genres(10, 4).unwrap();
        assert_eq!(g.num_genres(), 4);
        assert_eq!(g.genres_of(3).len(), 2);
        assert_eq!(g.genres_of(1).len(), 1);
    }
}
