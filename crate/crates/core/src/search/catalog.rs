use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::population::{Member, Population};
use crate::arch::ArchGenome;
use crate::error::{Error, Result};
use crate::hp::HpConfig;
use crate::nn::ModelWeights;

pub const CATALOG_FILE: &str = "catalog.jsonl";

pub fn weights_file_name(id: usize) -> String {
    format!("model_{id}.json")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

/// One line of `catalog.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: usize,
    pub status: Status,
    pub genome: ArchGenome,
    pub hp: HpConfig,
    #[serde(with = "crate::serde_f64")]
    pub valid_nll: f64,
    pub weights_path: Option<String>,
    pub wall_seconds: f64,
}

impl CatalogEntry {
    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }
}

/// Append-only record of every evaluated model, in completion order.
///
/// With a directory attached, each append writes the weights file and one
/// JSON line before returning.
#[derive(Debug, Default)]
pub struct Catalog {
    dir: Option<PathBuf>,
    entries: Vec<CatalogEntry>,
    weights: Vec<Option<ModelWeights>>,
}

impl Catalog {
    pub fn in_memory() -> Self {
        Catalog::default()
    }

    /// Starts a fresh catalog in `dir`, truncating any previous one.
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CATALOG_FILE);
        File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Catalog {
            dir: Some(dir.to_path_buf()),
            ..Catalog::default()
        })
    }

    /// Reads `catalog.jsonl` from `dir`. Weights are loaded on demand.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CATALOG_FILE);
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CatalogEntry = serde_json::from_str(&line)
                .map_err(|e| Error::json(format!("{} line {}", path.display(), i + 1), e))?;
            entries.push(entry);
        }
        let weights = vec![None; entries.len()];
        Ok(Catalog {
            dir: Some(dir.to_path_buf()),
            entries,
            weights,
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: usize) -> Result<&CatalogEntry> {
        self.entries
            .iter()
            .find(|e| e.id == id)
            .ok_or(Error::UnknownModel(id))
    }

    pub fn ok_entries(&self) -> impl Iterator<Item = &CatalogEntry> {
        self.entries.iter().filter(|e| e.is_ok())
    }

    pub fn append(&mut self, mut entry: CatalogEntry, weights: Option<ModelWeights>) -> Result<()> {
        let weights = weights.filter(|_| entry.is_ok());
        if let Some(dir) = &self.dir {
            entry.weights_path = None;
            if let Some(w) = &weights {
                let name = weights_file_name(entry.id);
                let path = dir.join(&name);
                fs::write(&path, w.to_json()?).map_err(|e| Error::io(&path, e))?;
                entry.weights_path = Some(name);
            }
            let path = dir.join(CATALOG_FILE);
            let mut f = OpenOptions::new()
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            let line =
                serde_json::to_string(&entry).map_err(|e| Error::json("catalog entry", e))?;
            writeln!(f, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        self.entries.push(entry);
        self.weights.push(weights);
        Ok(())
    }

    /// Weights of a trained model, from memory or its file.
    pub fn weights(&self, id: usize) -> Result<ModelWeights> {
        let pos = self
            .entries
            .iter()
            .position(|e| e.id == id)
            .ok_or(Error::UnknownModel(id))?;
        if let Some(w) = &self.weights[pos] {
            return Ok(w.clone());
        }
        let entry = &self.entries[pos];
        let (Some(dir), Some(name)) = (&self.dir, &entry.weights_path) else {
            return Err(Error::Config(format!("model {id} has no stored weights")));
        };
        let path = dir.join(name);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        ModelWeights::from_json(&text)
    }

    /// Digest of the search state implied by this catalog: the aging
    /// population of capacity `population_size` and the surrogate's
    /// observation list.
    pub fn replay_digest(&self, population_size: usize) -> String {
        let mut population = Population::new(population_size);
        let mut observations = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            population.push(Member {
                id: e.id,
                genome: e.genome.clone(),
                score: e.valid_nll,
            });
            observations.push((e.hp.clone(), e.valid_nll));
        }
        state_digest(&population, &observations)
    }
}

pub fn state_digest(population: &Population, observations: &[(HpConfig, f64)]) -> String {
    #[derive(Serialize)]
    struct Obs<'a> {
        hp: &'a HpConfig,
        #[serde(with = "crate::serde_f64")]
        score: f64,
    }
    let members: Vec<&Member> = population.members().collect();
    let obs: Vec<Obs> = observations
        .iter()
        .map(|(hp, score)| Obs { hp, score: *score })
        .collect();
    let text = serde_json::to_string(&(members, obs)).expect("plain data serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Optimizer;

    fn entry(id: usize, ok: bool) -> CatalogEntry {
        CatalogEntry {
            id,
            status: if ok { Status::Ok } else { Status::Failed },
            genome: ArchGenome(vec![id, 0, 1, 0]),
            hp: HpConfig {
                lr: 0.01,
                batch_size: 4,
                optimizer: Optimizer::Adam,
                patience_reduce_lr: 10,
                patience_early_stop: 20,
            },
            valid_nll: if ok { id as f64 } else { f64::INFINITY },
            weights_path: None,
            wall_seconds: 0.5,
        }
    }

    #[test]
    fn failed_entries_persist_null_score() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Catalog::create(dir.path()).unwrap();
        c.append(entry(0, true), None).unwrap();
        c.append(entry(1, false), None).unwrap();
        let text = fs::read_to_string(dir.path().join(CATALOG_FILE)).unwrap();
        assert_eq!(text.lines().count(), 2);
        let v: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
        assert!(v["valid_nll"].is_null());
        assert_eq!(v["status"], "failed");
        for key in ["id", "genome", "hp", "weights_path", "wall_seconds"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let back = Catalog::load(dir.path()).unwrap();
        assert_eq!(back.entries(), c.entries());
        assert_eq!(back.get(1).unwrap().valid_nll, f64::INFINITY);
        assert!(matches!(back.get(9), Err(Error::UnknownModel(9))));
    }

    #[test]
    fn replay_digest_matches_after_reload() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Catalog::create(dir.path()).unwrap();
        for i in 0..6 {
            c.append(entry(i, i != 3), None).unwrap();
        }
        let back = Catalog::load(dir.path()).unwrap();
        assert_eq!(back.replay_digest(4), c.replay_digest(4));
        assert_ne!(back.replay_digest(3), c.replay_digest(4));
    }
}
