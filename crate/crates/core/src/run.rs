//! The commands behind the `deuq` binary: search, select, eval and curve
//! export over a run directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::arch::{decode, ArchGenome};
use crate::data::{load_csv, make_splits, toy_sine_generate, SplitSpec, Splits, Standardizer};
use crate::ensemble::{diversity_score, greedy_select, predict_ensemble, Candidate};
use crate::error::{Error, Result};
use crate::metrics::{nll_score, rmse_score, ScoreReport};
use crate::nn::{Matrix, Predictions};
use crate::search::{run_search, Catalog, SearchConfig};

pub const CONFIG_FILE: &str = "config.json";
pub const META_FILE: &str = "search_meta.json";
pub const ENSEMBLE_FILE: &str = "ensemble.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const CURVES_HEADER: &str = "x,mu,var_total,var_aleatoric,var_epistemic";
pub const THREADS_ENV: &str = "DEUQ_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Toy {
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
        target: String,
    },
}

impl DatasetSource {
    pub fn name(&self) -> String {
        match self {
            DatasetSource::Toy { .. } => "toy".into(),
            DatasetSource::Csv { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "csv".into()),
        }
    }

    /// Train/valid/test splits. The toy problem has fixed splits and ignores
    /// `split`.
    pub fn load(&self, split: &SplitSpec) -> Result<Splits> {
        match self {
            DatasetSource::Toy { seed } => Ok(toy_sine_generate(*seed)),
            DatasetSource::Csv { path, target } => {
                let mut ds = load_csv(path, target)?;
                ds.name = self.name();
                make_splits(&ds, split)
            }
        }
    }
}

fn default_k() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub split: SplitSpec,
    pub search: SearchConfig,
    #[serde(default = "default_k")]
    pub k: usize,
    pub epochs: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            Error::json(format!("run config field `{field}`"), e.into_inner())
        })
    }

    /// Reads a config file. Relative dataset paths resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::from_json(&text)?;
        if let DatasetSource::Csv { path: data, .. } = &mut cfg.dataset {
            if data.is_relative() {
                if let Some(base) = path.parent() {
                    *data = base.join(&*data);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        if !matches!(self.dataset, DatasetSource::Toy { .. }) {
            self.split.validate()?;
        }
        self.search.validate()
    }

    /// Lowers the worker thread count to `cap` if it is smaller.
    pub fn cap_threads(&mut self, cap: usize) {
        let current = self.search.threads.unwrap_or(self.search.workers);
        self.search.threads = Some(current.min(cap).max(1));
    }
}

/// Thread cap from the `DEUQ_THREADS` environment variable, if set.
pub fn env_thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .map(Some)
            .ok_or_else(|| {
                Error::Config(format!(
                    "{THREADS_ENV} must be a positive integer, got `{v}`"
                ))
            }),
        Err(_) => Ok(None),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchMeta {
    pub seed: u64,
    pub budget: usize,
    pub epochs: usize,
    pub wall_seconds: f64,
    pub num_ok: usize,
    pub num_failed: usize,
    pub final_digest: String,
}

/// Data, statistics and catalog of a finished search.
pub struct RunContext {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub splits: Splits,
    pub standardizer: Standardizer,
    pub catalog: Catalog,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

/// Runs the search and writes `catalog.jsonl`, the weight files,
/// `search_meta.json` and a resolved copy of the config into `out`.
pub fn cmd_search(config: &RunConfig, out: &Path) -> Result<SearchMeta> {
    config.validate()?;
    let splits = config.dataset.load(&config.split)?;
    let standardizer = Standardizer::fit(&splits.train)?;
    let data = standardizer.train_data(&splits)?;

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut stored = config.clone();
    stored.output_dir = Some(out.to_path_buf());
    if let DatasetSource::Csv { path, .. } = &mut stored.dataset {
        *path = fs::canonicalize(&*path).map_err(|e| Error::io(&*path, e))?;
    }
    write_json(&out.join(CONFIG_FILE), &stored)?;

    let start = Instant::now();
    let outcome = run_search(&config.search, config.epochs, &data, Some(out))?;
    let num_ok = outcome.catalog.ok_entries().count();
    let meta = SearchMeta {
        seed: config.search.rng_seed,
        budget: config.search.total_budget,
        epochs: config.epochs,
        wall_seconds: start.elapsed().as_secs_f64(),
        num_ok,
        num_failed: outcome.catalog.len() - num_ok,
        final_digest: outcome.trace.final_digest,
    };
    write_json(&out.join(META_FILE), &meta)?;
    Ok(meta)
}

/// Reloads config, data and catalog from a run directory.
pub fn open_run(dir: &Path) -> Result<RunContext> {
    let config: RunConfig = read_json(&dir.join(CONFIG_FILE))?;
    let splits = config.dataset.load(&config.split)?;
    let standardizer = Standardizer::fit(&splits.train)?;
    let catalog = Catalog::load(dir)?;
    Ok(RunContext {
        dir: dir.to_path_buf(),
        config,
        splits,
        standardizer,
        catalog,
    })
}

impl RunContext {
    /// Standardized predictions of catalog model `id` on raw inputs `x`.
    pub fn predict(&self, id: usize, x: &Matrix) -> Result<Predictions> {
        let entry = self.catalog.get(id)?;
        let weights = self.catalog.weights(id)?;
        let graph = decode(
            &entry.genome,
            &self.config.search.arch,
            self.standardizer.input_dim(),
            self.standardizer.y_mean.len(),
        )?;
        graph.forward(&weights, &self.standardizer.apply_x(x)?)
    }

    pub fn ensemble(&self) -> Result<EnsembleManifest> {
        read_json(&self.dir.join(ENSEMBLE_FILE))
    }

    /// Ensemble mixture moments in original units at raw inputs `x`.
    pub fn predict_ensemble(&self, member_ids: &[usize], x: &Matrix) -> Result<OriginalPrediction> {
        let preds = member_ids
            .iter()
            .map(|&id| self.predict(id, x))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Predictions> = preds.iter().collect();
        let e = predict_ensemble(&refs)?;
        let (mu, var_total) = self
            .standardizer
            .destandardize_prediction(&e.mu, &e.var_total);
        let scale_var = |v: &Matrix| self.standardizer.destandardize_prediction(&e.mu, v).1;
        Ok(OriginalPrediction {
            mu,
            var_total,
            var_aleatoric: scale_var(&e.var_aleatoric),
            var_epistemic: scale_var(&e.var_epistemic),
        })
    }
}

/// Ensemble moments in the target's original units.
#[derive(Clone, Debug, PartialEq)]
pub struct OriginalPrediction {
    pub mu: Matrix,
    pub var_total: Matrix,
    pub var_aleatoric: Matrix,
    pub var_epistemic: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    /// Greedy picks in order, with repeats.
    pub member_ids: Vec<usize>,
    pub unique_ids: Vec<usize>,
    pub k: usize,
    /// Validation NLL in standardized units.
    pub valid_nll: f64,
    pub accepted_nll: Vec<f64>,
    pub diversity: f64,
}

/// Greedy selection of at most `k` distinct catalog models on the
/// validation split; writes `ensemble.json`.
pub fn cmd_select(dir: &Path, k: Option<usize>) -> Result<EnsembleManifest> {
    let ctx = open_run(dir)?;
    let k = k.unwrap_or(ctx.config.k);
    let y_valid = ctx.standardizer.apply_y(&ctx.splits.valid.y)?;
    let candidates = ctx
        .catalog
        .ok_entries()
        .filter(|e| e.valid_nll.is_finite())
        .map(|e| {
            Ok(Candidate {
                id: e.id,
                valid_nll: e.valid_nll,
                predictions: ctx.predict(e.id, &ctx.splits.valid.x)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let outcome = greedy_select(&candidates, &y_valid, k)?;
    let unique_ids = outcome.ensemble.unique_ids();
    let genomes: Vec<ArchGenome> = unique_ids
        .iter()
        .map(|&id| ctx.catalog.get(id).map(|e| e.genome.clone()))
        .collect::<Result<_>>()?;
    let diversity = if genomes.len() > 1 {
        diversity_score(&genomes.iter().collect::<Vec<_>>())?
    } else {
        0.0
    };
    let manifest = EnsembleManifest {
        valid_nll: outcome.valid_nll(),
        member_ids: outcome.ensemble.member_ids,
        unique_ids,
        k,
        accepted_nll: outcome.accepted_nll,
        diversity,
    };
    write_json(&dir.join(ENSEMBLE_FILE), &manifest)?;
    Ok(manifest)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSplit {
    Valid,
    Test,
}

impl EvalSplit {
    pub fn name(self) -> &'static str {
        match self {
            EvalSplit::Valid => "valid",
            EvalSplit::Test => "test",
        }
    }
}

impl std::str::FromStr for EvalSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "valid" => Ok(EvalSplit::Valid),
            "test" => Ok(EvalSplit::Test),
            other => Err(Error::Config(format!(
                "unknown split `{other}`, expected valid or test"
            ))),
        }
    }
}

/// Scores of the selected ensemble and of the catalog's best single model.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub ensemble: ScoreReport,
    pub best_single: ScoreReport,
    pub best_single_id: usize,
}

fn score(
    ctx: &RunContext,
    ids: &[usize],
    x: &Matrix,
    y: &Matrix,
    label: String,
) -> Result<ScoreReport> {
    let p = ctx.predict_ensemble(ids, x)?;
    Ok(ScoreReport {
        nll: nll_score(p.mu.data(), p.var_total.data(), y.data())?,
        rmse: rmse_score(p.mu.data(), y.data())?,
        n: y.rows(),
        dataset: label,
        seed: ctx.config.search.rng_seed,
    })
}

/// NLL and RMSE in original units of the ensemble in `ensemble.json` and
/// of the lowest-validation-NLL catalog model; writes `eval_<split>.jsonl`.
pub fn cmd_eval(dir: &Path, split: EvalSplit) -> Result<Evaluation> {
    let ctx = open_run(dir)?;
    let manifest = ctx.ensemble()?;
    let data = match split {
        EvalSplit::Valid => &ctx.splits.valid,
        EvalSplit::Test => &ctx.splits.test,
    };
    let best_single_id = ctx
        .catalog
        .ok_entries()
        .filter(|e| e.valid_nll.is_finite())
        .min_by(|a, b| a.valid_nll.total_cmp(&b.valid_nll))
        .map(|e| e.id)
        .ok_or(Error::EmptyCatalog)?;
    let name = ctx.config.dataset.name();
    let ensemble = score(
        &ctx,
        &manifest.member_ids,
        &data.x,
        &data.y,
        format!("{name}/ensemble"),
    )?;
    let best_single = score(
        &ctx,
        &[best_single_id],
        &data.x,
        &data.y,
        format!("{name}/model_{best_single_id}"),
    )?;
    let path = dir.join(format!("eval_{}.jsonl", split.name()));
    let text = format!(
        "{}\n{}\n",
        ensemble.to_json_line(),
        best_single.to_json_line()
    );
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(Evaluation {
        ensemble,
        best_single,
        best_single_id,
    })
}

/// One row of `curves.csv`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub x: f64,
    pub mu: f64,
    pub var_total: f64,
    pub var_aleatoric: f64,
    pub var_epistemic: f64,
}

/// Evenly spaced grid over the training and validation x-range, widened by
/// a quarter of its span on each side.
pub fn curve_grid(splits: &Splits, points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::Config("points must be at least 2".into()));
    }
    let xs = splits.train_valid().x.column(0);
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.25 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    Ok((0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect())
}

/// Ensemble mean and variance components on a 1-D grid; writes `curves.csv`.
pub fn cmd_export_curves(dir: &Path, points: usize) -> Result<Vec<CurvePoint>> {
    let ctx = open_run(dir)?;
    let d = ctx.splits.train.x.cols();
    if d != 1 || ctx.splits.train.y.cols() != 1 {
        return Err(Error::Unsupported(format!(
            "curve export needs one input and one target column, dataset has {d} inputs"
        )));
    }
    let manifest = ctx.ensemble()?;
    let grid = curve_grid(&ctx.splits, points)?;
    let p = ctx.predict_ensemble(&manifest.member_ids, &Matrix::column_vector(grid.clone()))?;
    let rows: Vec<CurvePoint> = grid
        .iter()
        .enumerate()
        .map(|(i, &x)| CurvePoint {
            x,
            mu: p.mu.get(i, 0),
            var_total: p.var_total.get(i, 0),
            var_aleatoric: p.var_aleatoric.get(i, 0),
            var_epistemic: p.var_epistemic.get(i, 0),
        })
        .collect();
    let mut text = String::from(CURVES_HEADER);
    text.push('\n');
    for r in &rows {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.x, r.mu, r.var_total, r.var_aleatoric, r.var_epistemic
        ));
    }
    let path = dir.join(CURVES_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
