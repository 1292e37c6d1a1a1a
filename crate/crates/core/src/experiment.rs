//! Experiment configuration and the file-based stage runners behind the
//! command-line front end.
//!
//! Every stage reads and writes fixed file names inside the output
//! directory, so stages compose across separate invocations. Split files
//! are reloaded against the vocabularies of the full ratings file, which
//! keeps ordinals stable between stages.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    load_genre_map, load_ratings, load_supplier_map, split_holdout, Dataset, GenreMap, SupplierMap,
};
use crate::error::{Error, Result};
use crate::fairmatch::{fairmatch, FairMatchConfig, Variant};
use crate::metrics::{evaluate, EvalConfig, EvalInput, GroupAssignment, MetricsReport};
use crate::recommend::{recommend_all, Model, RecBatch, RecommenderConfig};
use crate::rerank::{rerank_random, rerank_reverse};
use crate::seed;
use crate::simulate::{run_feedback_loop, SimConfig};
use crate::synthetic::mainstream_split;
use crate::transform::{self, TransformConfig, TransformKind};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const TRAIN_FILE: &str = "train.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const TRANSFORMED_FILE: &str = "train_transformed.tsv";
pub const LONG_FILE: &str = "long.tsv";
pub const FINAL_FILE: &str = "final.tsv";
pub const METRICS_TSV: &str = "metrics.tsv";
pub const METRICS_JSON: &str = "metrics.json";
pub const SIMULATION_FILE: &str = "simulation.tsv";
pub const LEADERBOARD_FILE: &str = "leaderboard.tsv";
pub const MANIFEST_FILE: &str = "manifest.json";

const SPLIT_KEY: u64 = 1;
const TRAIN_KEY: u64 = 2;
const RERANK_KEY: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub ratings: Option<PathBuf>,
    pub suppliers: Option<PathBuf>,
    pub genres: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            ratings: None,
            suppliers: None,
            genres: None,
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitStage {
    pub test_fraction: f64,
}

impl Default for SplitStage {
    fn default() -> Self {
        Self { test_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecommendStage {
    pub model: RecommenderConfig,
    pub long_list_size: usize,
}

impl Default for RecommendStage {
    fn default() -> Self {
        Self {
            model: RecommenderConfig::MostPopular,
            long_list_size: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RerankMethod {
    /// Plain truncation of the long lists.
    Top,
    FairmatchItem,
    FairmatchSup,
    Random,
    Reverse,
}

impl RerankMethod {
    pub fn name(self) -> &'static str {
        match self {
            RerankMethod::Top => "top",
            RerankMethod::FairmatchItem => "fairmatch-item",
            RerankMethod::FairmatchSup => "fairmatch-sup",
            RerankMethod::Random => "random",
            RerankMethod::Reverse => "reverse",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankStage {
    pub method: RerankMethod,
    pub lambda: f64,
    pub beta: f64,
    pub final_size: usize,
}

impl Default for RerankStage {
    fn default() -> Self {
        Self {
            method: RerankMethod::FairmatchItem,
            lambda: 0.5,
            beta: 1.0,
            final_size: 10,
        }
    }
}

/// Hyperparameter lists whose cartesian product the grid search visits.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridStage {
    pub lambda: Vec<f64>,
    pub beta: Vec<f64>,
}

impl GridStage {
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.lambda
            .iter()
            .flat_map(|&l| self.beta.iter().map(move |&b| (l, b)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paths: PathsConfig,
    pub scale: (f64, f64),
    pub split: SplitStage,
    pub transform: TransformConfig,
    pub recommend: RecommendStage,
    pub rerank: RerankStage,
    pub eval: EvalConfig,
    /// The master seed replaces `simulate.seed` at run time.
    pub simulate: SimConfig,
    pub grid: GridStage,
    pub seed: u64,
    /// Worker threads; left out of manifests because outputs do not depend on it.
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            paths: PathsConfig::default(),
            scale: (1.0, 5.0),
            split: SplitStage::default(),
            transform: TransformConfig::default(),
            recommend: RecommendStage::default(),
            rerank: RerankStage::default(),
            eval: EvalConfig::default(),
            simulate: SimConfig::default(),
            grid: GridStage::default(),
            seed: 42,
            threads: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn ratings_path(&self) -> Result<&Path> {
        let path = self
            .paths
            .ratings
            .as_deref()
            .ok_or_else(|| Error::Config("paths.ratings is required".into()))?;
        if !path.is_file() {
            return Err(Error::Config(format!(
                "paths.ratings: {} does not exist",
                path.display()
            )));
        }
        Ok(path)
    }

    fn fairmatch_config(&self, variant: Variant, lambda: f64, beta: f64) -> FairMatchConfig {
        FairMatchConfig {
            variant,
            lambda,
            beta,
            long_list_size: self.recommend.long_list_size,
            final_size: self.rerank.final_size,
        }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.paths.out.join(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Split,
    Transform,
    Recommend,
    Rerank,
    Eval,
    Simulate,
    Gridsearch,
    /// Split through eval in one go.
    Pipeline,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Split => "split",
            Stage::Transform => "transform",
            Stage::Recommend => "recommend",
            Stage::Rerank => "rerank",
            Stage::Eval => "eval",
            Stage::Simulate => "simulate",
            Stage::Gridsearch => "gridsearch",
            Stage::Pipeline => "pipeline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// SHA-256 of each input file, keyed by config field.
    pub inputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_manifest(config: &ExperimentConfig, stage: Stage) -> Result<()> {
    let mut inputs = BTreeMap::new();
    for (field, path) in [
        ("ratings", &config.paths.ratings),
        ("suppliers", &config.paths.suppliers),
        ("genres", &config.paths.genres),
    ] {
        if let Some(p) = path {
            if p.is_file() {
                inputs.insert(field.to_string(), sha256_file(p)?);
            }
        }
    }
    let manifest = Manifest {
        version: VERSION.to_string(),
        command: stage.name().to_string(),
        seed: config.seed,
        config: config.clone(),
        inputs,
    };
    let path = config.out(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}

/// Loaded inputs shared by the stages.
struct Context<'a> {
    config: &'a ExperimentConfig,
    ratings: Dataset,
}

impl<'a> Context<'a> {
    fn new(config: &'a ExperimentConfig) -> Result<Self> {
        let ratings = load_ratings(config.ratings_path()?, config.scale)?;
        Ok(Self { config, ratings })
    }

    fn load_split(&self, name: &str, scale: (f64, f64)) -> Result<Dataset> {
        load_ratings(self.config.out(name), scale)?
            .reindexed(self.ratings.users(), self.ratings.items())
    }

    fn train(&self) -> Result<Dataset> {
        self.load_split(TRAIN_FILE, self.config.scale)
    }

    fn test(&self) -> Result<Dataset> {
        self.load_split(TEST_FILE, self.config.scale)
    }

    /// Training data as seen by the recommender.
    fn model_train(&self) -> Result<Dataset> {
        match self.config.transform.kind {
            TransformKind::Identity => self.train(),
            TransformKind::Percentile => self.load_split(TRANSFORMED_FILE, (0.0, 100.0)),
            TransformKind::Zscore => {
                self.load_split(TRANSFORMED_FILE, (f64::NEG_INFINITY, f64::INFINITY))
            }
        }
    }

    fn suppliers(&self) -> Result<Option<SupplierMap>> {
        self.config
            .paths
            .suppliers
            .as_ref()
            .map(|p| load_supplier_map(p, &self.ratings))
            .transpose()
    }

    fn genres(&self) -> Result<Option<GenreMap>> {
        self.config
            .paths
            .genres
            .as_ref()
            .map(|p| load_genre_map(p, &self.ratings))
            .transpose()
    }

    fn batch(&self, name: &str) -> Result<RecBatch> {
        RecBatch::read_tsv(self.config.out(name), &self.ratings)
    }

    fn split(&self) -> Result<()> {
        let c = self.config;
        let pair = split_holdout(
            &self.ratings,
            c.split.test_fraction,
            seed::derive(&[c.seed, SPLIT_KEY]),
        )?;
        pair.train.write_tsv(c.out(TRAIN_FILE))?;
        pair.test.write_tsv(c.out(TEST_FILE))
    }

    fn transform(&self) -> Result<()> {
        let out = transform::apply(&self.train()?, &self.config.transform)?;
        out.write_tsv(self.config.out(TRANSFORMED_FILE))
    }

    fn recommend(&self) -> Result<()> {
        let c = self.config;
        let train = self.model_train()?;
        let model = Model::train(
            &c.recommend.model,
            &train,
            seed::derive(&[c.seed, TRAIN_KEY]),
        )?;
        recommend_all(&model, &train, c.recommend.long_list_size).write_tsv(c.out(LONG_FILE))
    }

    fn rerank_with(
        &self,
        long: &RecBatch,
        suppliers: Option<&SupplierMap>,
        lambda: f64,
        beta: f64,
    ) -> Result<RecBatch> {
        let c = self.config;
        let n = c.rerank.final_size;
        match c.rerank.method {
            RerankMethod::Top => Ok(long.truncated(n)),
            RerankMethod::FairmatchItem => fairmatch(
                long,
                suppliers,
                &c.fairmatch_config(Variant::Item, lambda, beta),
            ),
            RerankMethod::FairmatchSup => fairmatch(
                long,
                suppliers,
                &c.fairmatch_config(Variant::Supplier, lambda, beta),
            ),
            RerankMethod::Random => Ok(rerank_random(long, n, seed::derive(&[c.seed, RERANK_KEY]))),
            RerankMethod::Reverse => Ok(rerank_reverse(long, n)),
        }
    }

    fn rerank(&self) -> Result<()> {
        let c = self.config;
        let long = self.batch(LONG_FILE)?;
        let suppliers = self.suppliers()?;
        self.rerank_with(&long, suppliers.as_ref(), c.rerank.lambda, c.rerank.beta)?
            .write_tsv(c.out(FINAL_FILE))
    }

    fn report(
        &self,
        train: &Dataset,
        test: &Dataset,
        long: &RecBatch,
        lists: &RecBatch,
        suppliers: Option<&SupplierMap>,
        genres: Option<&GenreMap>,
    ) -> Result<MetricsReport> {
        evaluate(
            &EvalInput {
                train,
                test,
                base: Some(long),
                lists,
                suppliers,
                genres,
            },
            &self.config.eval,
        )
    }

    fn eval(&self) -> Result<()> {
        let c = self.config;
        let (train, test) = (self.train()?, self.test()?);
        let (long, lists) = (self.batch(LONG_FILE)?, self.batch(FINAL_FILE)?);
        let (suppliers, genres) = (self.suppliers()?, self.genres()?);
        let report = self.report(
            &train,
            &test,
            &long,
            &lists,
            suppliers.as_ref(),
            genres.as_ref(),
        )?;
        report.write(&c.out(METRICS_TSV), &c.out(METRICS_JSON))
    }

    fn simulate(&self) -> Result<()> {
        let c = self.config;
        let genres = self
            .genres()?
            .ok_or_else(|| Error::Config("paths.genres is required for simulate".into()))?;
        let groups = GroupAssignment::partition(
            mainstream_split(&self.ratings).to_vec(),
            self.ratings.num_users(),
        )?;
        let sim = SimConfig {
            seed: c.seed,
            ..c.simulate.clone()
        };
        run_feedback_loop(&self.ratings, &genres, &groups, &sim)?.write_tsv(c.out(SIMULATION_FILE))
    }

    fn gridsearch(&self) -> Result<()> {
        let c = self.config;
        let points = c.grid.points();
        if points.is_empty() {
            return Err(Error::Config(
                "grid has no points (grid.lambda and grid.beta must be non-empty)".into(),
            ));
        }
        let (train, test) = (self.train()?, self.test()?);
        let long = self.batch(LONG_FILE)?;
        let (suppliers, genres) = (self.suppliers()?, self.genres()?);
        let rows = points
            .par_iter()
            .map(|&(lambda, beta)| {
                let lists = self.rerank_with(&long, suppliers.as_ref(), lambda, beta)?;
                let report = self.report(
                    &train,
                    &test,
                    &long,
                    &lists,
                    suppliers.as_ref(),
                    genres.as_ref(),
                )?;
                Ok(GridRow {
                    lambda,
                    beta,
                    report,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        std::fs::write(
            c.out(LEADERBOARD_FILE),
            leaderboard_tsv(rows, c.rerank.method),
        )
        .map_err(|e| Error::io(c.out(LEADERBOARD_FILE), e))
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub lambda: f64,
    pub beta: f64,
    pub report: MetricsReport,
}

impl GridRow {
    fn metric(&self, scope: &str, name: &str) -> Option<f64> {
        self.report.get(scope, name)
    }
}

/// Rows ordered by precision (descending), then item Gini (ascending),
/// then grid order.
pub fn rank_rows(mut rows: Vec<GridRow>) -> Vec<GridRow> {
    let key = |r: &GridRow, s: &str, m: &str| r.metric(s, m).unwrap_or(f64::NAN);
    // Stable sort keeps grid order among exact ties.
    rows.sort_by(|a, b| {
        key(b, "accuracy", "precision")
            .total_cmp(&key(a, "accuracy", "precision"))
            .then(key(a, "item", "gini").total_cmp(&key(b, "item", "gini")))
    });
    rows
}

pub fn leaderboard_tsv(rows: Vec<GridRow>, method: RerankMethod) -> String {
    let columns = [
        ("accuracy", "precision"),
        ("accuracy", "recall"),
        ("accuracy", "ndcg"),
        ("item", "gini"),
        ("item", "1-IA"),
    ];
    let mut out = String::from("rank\tmethod\tlambda\tbeta");
    for (s, m) in columns {
        let _ = write!(out, "\t{s}_{m}");
    }
    out.push('\n');
    for (ix, row) in rank_rows(rows).iter().enumerate() {
        let _ = write!(
            out,
            "{}\t{}\t{}\t{}",
            ix + 1,
            method.name(),
            row.lambda,
            row.beta
        );
        for (s, m) in columns {
            match row.metric(s, m) {
                Some(v) => {
                    let _ = write!(out, "\t{v:.6}");
                }
                None => out.push('\t'),
            }
        }
        out.push('\n');
    }
    out
}

/// Runs `stage` inside a pool of `config.threads` workers (the global pool
/// when unset) and records a manifest next to the outputs.
pub fn run_stage(config: &ExperimentConfig, stage: Stage) -> Result<()> {
    let run = || -> Result<()> {
        std::fs::create_dir_all(&config.paths.out).map_err(|e| Error::io(&config.paths.out, e))?;
        let ctx = Context::new(config)?;
        match stage {
            Stage::Split => ctx.split()?,
            Stage::Transform => ctx.transform()?,
            Stage::Recommend => ctx.recommend()?,
            Stage::Rerank => ctx.rerank()?,
            Stage::Eval => ctx.eval()?,
            Stage::Simulate => ctx.simulate()?,
            Stage::Gridsearch => ctx.gridsearch()?,
            Stage::Pipeline => {
                ctx.split()?;
                if config.transform.kind != TransformKind::Identity {
                    ctx.transform()?;
                }
                ctx.recommend()?;
                ctx.rerank()?;
                ctx.eval()?;
            }
        }
        write_manifest(config, stage)
    };
    match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("threads: {e}")))?
            .install(run),
        None => run(),
    }
}
