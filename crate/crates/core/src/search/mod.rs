//! Joint architecture/hyperparameter search: aging evolution over genomes
//! while a bagged-tree Bayesian optimizer proposes training
//! hyperparameters, with trainings dispatched to a worker pool.

mod catalog;
mod population;
mod surrogate;

use std::collections::{BTreeMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::mpsc;
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use catalog::{state_digest, weights_file_name, Catalog, CatalogEntry, Status, CATALOG_FILE};
pub use population::{Member, Population};
pub use surrogate::{Surrogate, CANDIDATE_POOL, DEFAULT_TREES, FAILURE_MARGIN};

use crate::arch::{decode, mutate, random_genome, ArchGenome, ArchSpaceConfig};
use crate::error::{Error, Result};
use crate::hp::{sample_hp, HpConfig, HpSpace};
use crate::nn::{train, ModelWeights, TrainData};

pub const DEFAULT_KAPPA: f64 = 1.96;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub population_size: usize,
    pub sample_size: usize,
    pub workers: usize,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    pub total_budget: usize,
    pub rng_seed: u64,
    pub arch: ArchSpaceConfig,
    pub hp: HpSpace,
    /// Consume results strictly in submission order, for reproducible runs.
    #[serde(default)]
    pub deterministic: bool,
    /// Caps OS threads; `None` uses one thread per worker.
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_kappa() -> f64 {
    DEFAULT_KAPPA
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("search.{m}")));
        if self.population_size == 0 {
            return fail("population_size must be positive");
        }
        if self.sample_size == 0 || self.sample_size > self.population_size {
            return fail("sample_size must be in [1, population_size]");
        }
        if self.workers == 0 {
            return fail("workers must be at least 1");
        }
        if self.total_budget < self.workers {
            return fail("total_budget must be at least workers");
        }
        if !(self.kappa >= 0.0) {
            return fail("kappa must be non-negative");
        }
        if self.threads == Some(0) {
            return fail("threads must be positive");
        }
        self.arch.validate()?;
        self.hp.validate()
    }
}

/// How a submitted genome came about.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Random,
    Mutation {
        parent_id: usize,
        /// Population genomes at the time the child was created.
        population: Vec<ArchGenome>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub id: usize,
    pub genome: ArchGenome,
    pub hp: HpConfig,
    pub origin: Origin,
}

/// Bookkeeping of a finished search, for inspection and tests.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub submissions: Vec<Submission>,
    pub max_population: usize,
    pub max_in_flight: usize,
    /// Sizes of the result batches the manager processed.
    pub batches: Vec<usize>,
    pub final_digest: String,
}

pub struct SearchOutcome {
    pub catalog: Catalog,
    pub trace: SearchTrace,
}

struct Task {
    id: usize,
    genome: ArchGenome,
    hp: HpConfig,
    seed: u64,
}

struct Finished {
    id: usize,
    genome: ArchGenome,
    hp: HpConfig,
    valid_nll: f64,
    weights: Option<ModelWeights>,
    wall_seconds: f64,
}

/// Training seed for task `id`.
pub fn task_seed(search_seed: u64, id: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = search_seed
        ^ (id as u64)
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn run_task(task: Task, cfg: &SearchConfig, epochs: usize, data: &TrainData) -> Finished {
    let start = Instant::now();
    let attempt = catch_unwind(AssertUnwindSafe(|| {
        let graph = decode(
            &task.genome,
            &cfg.arch,
            data.x_train.cols(),
            data.y_train.cols(),
        )?;
        train(&graph, &task.hp.train_config(epochs, task.seed), data)
    }));
    let (valid_nll, weights) = match attempt {
        Ok(Ok(out)) if !out.failed => (out.valid_nll, Some(out.weights)),
        _ => (f64::INFINITY, None),
    };
    Finished {
        id: task.id,
        genome: task.genome,
        hp: task.hp,
        valid_nll,
        weights,
        wall_seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs the search until `total_budget` models have been evaluated.
///
/// The first `workers` submissions are random in both spaces. Each batch of
/// completed results is appended to the catalog, pushed into the aging
/// population and told to the surrogate; then one child per result is
/// submitted, pairing hyperparameters from the surrogate (in ask order) with
/// a mutated tournament winner, or a random genome while the population is
/// still filling.
pub fn run_search(
    cfg: &SearchConfig,
    epochs: usize,
    data: &TrainData,
    out_dir: Option<&Path>,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    let mut catalog = match out_dir {
        Some(dir) => Catalog::create(dir)?,
        None => Catalog::in_memory(),
    };
    let threads = cfg.threads.unwrap_or(cfg.workers).min(cfg.workers).max(1);

    let (task_tx, task_rx) = mpsc::channel::<Task>();
    let (done_tx, done_rx) = mpsc::channel::<Finished>();
    let task_rx = Mutex::new(task_rx);

    std::thread::scope(|scope| -> Result<SearchOutcome> {
        for _ in 0..threads {
            let done_tx = done_tx.clone();
            let task_rx = &task_rx;
            scope.spawn(move || loop {
                let next = task_rx.lock().map(|rx| rx.recv());
                let Ok(Ok(task)) = next else { break };
                if done_tx.send(run_task(task, cfg, epochs, data)).is_err() {
                    break;
                }
            });
        }
        drop(done_tx);

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let mut population = Population::new(cfg.population_size);
        let mut surrogate = Surrogate::new(cfg.hp.clone(), cfg.rng_seed);
        let mut trace = SearchTrace::default();
        let mut pending: VecDeque<usize> = VecDeque::new();
        let mut arrived: BTreeMap<usize, Finished> = BTreeMap::new();
        let mut completed = 0usize;

        let submit = |genome: ArchGenome,
                      hp: HpConfig,
                      origin: Origin,
                      pending: &mut VecDeque<usize>,
                      trace: &mut SearchTrace|
         -> Result<()> {
            let id = trace.submissions.len();
            trace.submissions.push(Submission {
                id,
                genome: genome.clone(),
                hp: hp.clone(),
                origin,
            });
            pending.push_back(id);
            trace.max_in_flight = trace.max_in_flight.max(pending.len());
            task_tx
                .send(Task {
                    id,
                    genome,
                    hp,
                    seed: task_seed(cfg.rng_seed, id),
                })
                .map_err(|_| Error::Config("worker pool shut down".into()))
        };

        for _ in 0..cfg.workers {
            let genome = random_genome(&cfg.arch, &mut rng);
            let hp = sample_hp(&cfg.hp, &mut rng);
            submit(genome, hp, Origin::Random, &mut pending, &mut trace)?;
        }

        while completed < cfg.total_budget {
            let mut results = Vec::new();
            if cfg.deterministic {
                let head = *pending.front().expect("work is in flight");
                while !arrived.contains_key(&head) {
                    let f = done_rx
                        .recv()
                        .map_err(|_| Error::Config("worker pool stopped".into()))?;
                    arrived.insert(f.id, f);
                }
                results.push(arrived.remove(&head).expect("just checked"));
            } else {
                results.push(
                    done_rx
                        .recv()
                        .map_err(|_| Error::Config("worker pool stopped".into()))?,
                );
                results.extend(done_rx.try_iter());
            }
            for r in &results {
                pending.retain(|id| *id != r.id);
            }
            completed += results.len();
            trace.batches.push(results.len());

            let mut told = Vec::with_capacity(results.len());
            for r in results {
                let status = if r.weights.is_some() {
                    Status::Ok
                } else {
                    Status::Failed
                };
                population.push(Member {
                    id: r.id,
                    genome: r.genome.clone(),
                    score: r.valid_nll,
                });
                trace.max_population = trace.max_population.max(population.len());
                told.push((r.hp.clone(), r.valid_nll));
                catalog.append(
                    CatalogEntry {
                        id: r.id,
                        status,
                        genome: r.genome,
                        hp: r.hp,
                        valid_nll: r.valid_nll,
                        weights_path: None,
                        wall_seconds: r.wall_seconds,
                    },
                    r.weights,
                )?;
            }
            let n_new = told.len().min(cfg.total_budget - trace.submissions.len());
            surrogate.tell_many(told);
            if n_new == 0 {
                continue;
            }
            let next = surrogate.ask(n_new, cfg.kappa, &mut rng);
            for hp in next {
                let (genome, origin) = if population.is_full() {
                    let parent = population.select_parent(cfg.sample_size, &mut rng)?;
                    let child = mutate(&parent.genome, &cfg.arch, &mut rng)?;
                    let origin = Origin::Mutation {
                        parent_id: parent.id,
                        population: population.members().map(|m| m.genome.clone()).collect(),
                    };
                    (child, origin)
                } else {
                    (random_genome(&cfg.arch, &mut rng), Origin::Random)
                };
                submit(genome, hp, origin, &mut pending, &mut trace)?;
            }
        }
        drop(task_tx);
        trace.final_digest = state_digest(&population, surrogate.observations());
        Ok(SearchOutcome { catalog, trace })
    })
}
