use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{ImageFeature, SceneEncoder, FEATURE_DIM};
use super::grammar::realize_captions;
use super::scene::Scene;
use super::vocab::Vocab;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionedExample {
    pub scene: Scene,
    pub feature: ImageFeature,
    pub references: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub vocab: Vocab,
    pub train: Vec<CaptionedExample>,
    pub val: Vec<CaptionedExample>,
    pub test: Vec<CaptionedExample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub encoder_seed: u64,
    pub grammar_seed: u64,
    pub feature_dim: usize,
    /// Standard deviation of optional feature noise; 0 disables it.
    pub feature_noise: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train: 3000,
            n_val: 100,
            n_test: 100,
            encoder_seed: 17,
            grammar_seed: 23,
            feature_dim: FEATURE_DIM,
            feature_noise: 0.0,
        }
    }
}

impl DataConfig {
    pub fn encoder(&self) -> SceneEncoder {
        let enc = SceneEncoder::new(self.encoder_seed, self.feature_dim);
        if self.feature_noise > 0.0 {
            enc.with_noise(self.feature_noise)
        } else {
            enc
        }
    }

    /// Builds the three splits. Scenes are distinct across all of them.
    pub fn generate(&self) -> Result<Dataset> {
        let counts = [self.n_train, self.n_val, self.n_test];
        if counts.contains(&0) {
            return Err(Error::InvalidArgument("every split needs at least one example".into()));
        }
        let total: usize = counts.iter().sum();
        let capacity = Scene::capacity();
        if total as u64 > capacity {
            return Err(Error::CapacityExceeded {
                requested: total as u64,
                capacity,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut seen = HashSet::with_capacity(total);
        let mut scenes = Vec::with_capacity(total);
        let mut attempts = 0usize;
        while scenes.len() < total {
            attempts += 1;
            if attempts > 1000 * total + 100_000 {
                return Err(Error::CapacityExceeded {
                    requested: total as u64,
                    capacity: seen.len() as u64,
                });
            }
            let s = Scene::random(&mut rng);
            if seen.insert(s.scene_id) {
                scenes.push(s);
            }
        }
        let vocab = Vocab::standard();
        let encoder = self.encoder();
        let mut examples = scenes.into_iter().map(|scene| {
            let references = realize_captions(&scene, self.grammar_seed)
                .iter()
                .map(|r| vocab.encode(r))
                .collect::<Result<Vec<_>>>()?;
            Ok(CaptionedExample {
                feature: encoder.encode(&scene),
                scene,
                references,
            })
        });
        let mut take = |n: usize| examples.by_ref().take(n).collect::<Result<Vec<_>>>();
        let train = take(self.n_train)?;
        let val = take(self.n_val)?;
        let test = take(self.n_test)?;
        Ok(Dataset {
            vocab,
            train,
            val,
            test,
        })
    }
}

/// Generates splits with the default encoder and grammar seeds.
pub fn generate_dataset(seed: u64, n_train: usize, n_val: usize, n_test: usize) -> Result<Dataset> {
    DataConfig {
        seed,
        n_train,
        n_val,
        n_test,
        ..DataConfig::default()
    }
    .generate()
}

#[derive(Serialize, Deserialize)]
struct ExampleRecord {
    scene: Scene,
    features: Vec<f64>,
    captions: Vec<Vec<String>>,
}

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

impl Dataset {
    pub fn split(&self, name: &str) -> Result<&[CaptionedExample]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }

    /// Longest reference over all splits, in tokens.
    pub fn max_reference_len(&self) -> usize {
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .flat_map(|e| e.references.iter().map(Vec::len))
            .max()
            .unwrap_or(0)
    }

    /// Writes `vocab.json` and `{train,val,test}.jsonl` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("vocab.json"), vocab_to_json(&self.vocab)?)?;
        for name in SPLITS {
            let f = File::create(dir.join(format!("{name}.jsonl")))?;
            let mut w = BufWriter::new(f);
            write_jsonl(&mut w, self.split(name)?, &self.vocab)?;
            w.flush()?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let vocab_path = dir.join("vocab.json");
        if !vocab_path.exists() {
            return Err(Error::MissingCheckpoint(vocab_path));
        }
        let vocab = vocab_from_json(&fs::read_to_string(vocab_path)?)?;
        let read = |name: &str| -> Result<Vec<CaptionedExample>> {
            let path = dir.join(format!("{name}.jsonl"));
            if !path.exists() {
                return Err(Error::MissingCheckpoint(path));
            }
            read_jsonl(BufReader::new(File::open(path)?), &vocab)
        };
        let train = read("train")?;
        let val = read("val")?;
        let test = read("test")?;
        Ok(Self {
            vocab,
            train,
            val,
            test,
        })
    }
}

pub fn vocab_to_json(vocab: &Vocab) -> Result<String> {
    Ok(serde_json::to_string_pretty(&vocab.to_map())?)
}

pub fn vocab_from_json(text: &str) -> Result<Vocab> {
    let map: BTreeMap<String, usize> = serde_json::from_str(text)?;
    Vocab::from_map(&map)
}

/// One JSON object per line: `scene`, `features`, `captions`.
pub fn write_jsonl(w: &mut impl Write, examples: &[CaptionedExample], vocab: &Vocab) -> Result<()> {
    for e in examples {
        let rec = ExampleRecord {
            scene: e.scene.clone(),
            features: e.feature.0.clone(),
            captions: e.references.iter().map(|r| vocab.decode(r)).collect(),
        };
        serde_json::to_writer(&mut *w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(r: impl BufRead, vocab: &Vocab) -> Result<Vec<CaptionedExample>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExampleRecord = serde_json::from_str(&line)?;
        rec.scene.validate()?;
        let references = rec
            .captions
            .iter()
            .map(|c| vocab.encode(c))
            .collect::<Result<Vec<_>>>()?;
        out.push(CaptionedExample {
            scene: rec.scene,
            feature: ImageFeature(rec.features),
            references,
        });
    }
    Ok(out)
}
