//! Finite-difference checks of every model's analytic gradients on small
//! randomly initialized instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cells::{check_gradients, GradCheck, GruCell, LstmCell, LstmState, Mlp, ParamStore};
use crate::critic::{self, ValueConfig, ValueNet, ValueSample, ValueVariant};
use crate::embedder::{EmbedConfig, EmbedModel};
use crate::error::Result;
use crate::numcore::{dot, Tape, Tensor};
use crate::policy::{PolicyConfig, PolicyNet};
use crate::sceneworld::{CaptionedExample, ImageFeature, Scene, EOS};

const VOCAB: usize = 7;
const FEATURE: usize = 5;
/// Initial weights are redrawn from `±INIT` so that no gate saturates.
const INIT: f64 = 0.5;

pub const MODELS: [&str; 8] = [
    "lstm",
    "gru",
    "mlp",
    "policy-xent",
    "value-full",
    "value-hid-VN",
    "value-hid-Im-VN",
    "embed-ranking",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteRow {
    pub model: String,
    pub seeds: usize,
    pub max_relative_error: f64,
}

fn vector(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn sentence(rng: &mut impl Rng) -> Vec<usize> {
    let len = rng.random_range(1..4);
    let mut s: Vec<usize> = (0..len).map(|_| rng.random_range(3..VOCAB)).collect();
    s.push(EOS);
    s
}

fn lstm(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let (n, m) = (3, 4);
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, "lstm", n, m, rng)?;
    store.reinit_uniform(INIT, rng);
    let xs: Vec<Vec<f64>> = (0..3).map(|_| vector(rng, n)).collect();
    let coef: Vec<Vec<f64>> = (0..4).map(|_| vector(rng, m)).collect();
    check_gradients(
        &mut store,
        |st| {
            let mut tape = Tape::new();
            let b = cell.bind(&mut tape, st);
            let mut h = tape.constant(Tensor::zeros(&[m]));
            let mut c = h;
            let mut terms = Vec::new();
            for (x, k) in xs.iter().zip(&coef) {
                let x = tape.constant(Tensor::vector(x.clone()));
                (h, c) = b.step(&mut tape, h, c, x)?;
                let k = tape.constant(Tensor::vector(k.clone()));
                terms.push(tape.dot(h, k)?);
            }
            let k = tape.constant(Tensor::vector(coef[3].clone()));
            terms.push(tape.dot(c, k)?);
            let loss = tape.add_all(&terms)?.expect("non-empty");
            st.accumulate(&tape.backward(loss)?, 1.0)
        },
        |st| {
            let mut s = LstmState::zeros(m);
            let mut total = 0.0;
            for (x, k) in xs.iter().zip(&coef) {
                s = cell.step_values(st, &s, x)?;
                total += dot(&s.h, k);
            }
            Ok(total + dot(&s.c, &coef[3]))
        },
    )
}

fn gru(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let (n, m) = (3, 4);
    let mut store = ParamStore::new();
    let cell = GruCell::new(&mut store, "gru", n, m, rng)?;
    store.reinit_uniform(INIT, rng);
    let xs: Vec<Vec<f64>> = (0..3).map(|_| vector(rng, n)).collect();
    let coef: Vec<Vec<f64>> = (0..3).map(|_| vector(rng, m)).collect();
    check_gradients(
        &mut store,
        |st| {
            let mut tape = Tape::new();
            let b = cell.bind(&mut tape, st);
            let mut h = tape.constant(Tensor::zeros(&[m]));
            let mut terms = Vec::new();
            for (x, k) in xs.iter().zip(&coef) {
                let x = tape.constant(Tensor::vector(x.clone()));
                h = b.step(&mut tape, h, x)?;
                let k = tape.constant(Tensor::vector(k.clone()));
                terms.push(tape.dot(h, k)?);
            }
            let loss = tape.add_all(&terms)?.expect("non-empty");
            st.accumulate(&tape.backward(loss)?, 1.0)
        },
        |st| {
            let mut h = vec![0.0; m];
            let mut total = 0.0;
            for (x, k) in xs.iter().zip(&coef) {
                h = cell.step_values(st, &h, x)?;
                total += dot(&h, k);
            }
            Ok(total)
        },
    )
}

fn mlp(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let dims = [4, 5, 3, 2];
    let mut store = ParamStore::new();
    let net = Mlp::new(&mut store, "mlp", &dims, rng)?;
    store.reinit_uniform(INIT, rng);
    let x = vector(rng, dims[0]);
    let k = vector(rng, dims[3]);
    check_gradients(
        &mut store,
        |st| {
            let mut tape = Tape::new();
            let b = net.bind(&mut tape, st);
            let xv = tape.constant(Tensor::vector(x.clone()));
            let y = b.forward(&mut tape, xv)?;
            let kv = tape.constant(Tensor::vector(k.clone()));
            let loss = tape.dot(y, kv)?;
            st.accumulate(&tape.backward(loss)?, 1.0)
        },
        |st| Ok(dot(&net.forward_values(st, &x)?, &k)),
    )
}

fn policy(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let cfg = PolicyConfig {
        vocab_len: VOCAB,
        feature_dim: FEATURE,
        hidden: 3,
    };
    let mut p = PolicyNet::new(cfg.clone(), rng)?;
    p.store.reinit_uniform(INIT, rng);
    let feats: Vec<Vec<f64>> = (0..2).map(|_| vector(rng, FEATURE)).collect();
    let sents: Vec<Vec<usize>> = (0..2).map(|_| sentence(rng)).collect();
    let batch: Vec<(&[f64], &[usize])> = feats.iter().zip(&sents).map(|(f, s)| (f.as_slice(), s.as_slice())).collect();
    let mut store = p.store.clone();
    check_gradients(
        &mut store,
        |st| {
            std::mem::swap(&mut p.store, st);
            let r = p.accumulate_xent(&batch, 1.0);
            std::mem::swap(&mut p.store, st);
            r.map(|_| ())
        },
        |st| {
            let q = PolicyNet::from_store(cfg.clone(), st.clone())?;
            let mut total = 0.0;
            for (f, s) in &batch {
                total -= q.sequence_logprob(f, s)?;
            }
            Ok(total)
        },
    )
}

fn value(rng: &mut ChaCha8Rng, variant: ValueVariant) -> Result<GradCheck> {
    let p = PolicyNet::new(
        PolicyConfig {
            vocab_len: VOCAB,
            feature_dim: FEATURE,
            hidden: 3,
        },
        rng,
    )?;
    let cfg = ValueConfig {
        variant,
        vocab_len: VOCAB,
        feature_dim: FEATURE,
        visual_dim: 3,
        hidden: 3,
        mlp_hidden: vec![4, 3],
    };
    let mut v = ValueNet::new(cfg.clone(), rng)?;
    v.store.reinit_uniform(INIT, rng);
    let examples: Vec<CaptionedExample> = (0..2)
        .map(|_| CaptionedExample {
            scene: Scene::random(rng),
            feature: ImageFeature(vector(rng, FEATURE)),
            references: vec![sentence(rng)],
        })
        .collect();
    let samples: Vec<ValueSample> = (0..3)
        .map(|i| {
            let tokens = sentence(rng);
            ValueSample {
                example: i % 2,
                position: rng.random_range(0..=tokens.len()),
                tokens,
                reward: rng.random_range(-1.0..1.0),
            }
        })
        .collect();
    let mut store = v.store.clone();
    check_gradients(
        &mut store,
        |st| {
            std::mem::swap(&mut v.store, st);
            let r = critic::accumulate_value_grad(&mut v, &p, &examples, &samples, 1.0);
            std::mem::swap(&mut v.store, st);
            r.map(|_| ())
        },
        |st| {
            let w = ValueNet::from_store(cfg.clone(), st.clone())?;
            Ok(0.5 * critic::mse(&w, &p, &examples, &samples)? * samples.len() as f64)
        },
    )
}

fn embed(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let cfg = EmbedConfig {
        vocab_len: VOCAB,
        feature_dim: FEATURE,
        word_dim: 3,
        embed_dim: 4,
        margin: 0.2,
    };
    let mut m = EmbedModel::new(cfg.clone(), rng)?;
    m.store.reinit_uniform(INIT, rng);
    let feats: Vec<Vec<f64>> = (0..3).map(|_| vector(rng, FEATURE)).collect();
    let sents: Vec<Vec<usize>> = (0..3).map(|_| sentence(rng)).collect();
    let batch: Vec<(&[f64], &[usize])> = feats.iter().zip(&sents).map(|(f, s)| (f.as_slice(), s.as_slice())).collect();
    let mut store = m.store.clone();
    check_gradients(
        &mut store,
        |st| {
            std::mem::swap(&mut m.store, st);
            let r = m.accumulate_ranking_grad(&batch);
            std::mem::swap(&mut m.store, st);
            r.map(|_| ())
        },
        |st| EmbedModel::from_store(cfg.clone(), st.clone())?.ranking_loss(&batch),
    )
}

/// Runs the check for one entry of [`MODELS`] on one seed.
pub fn check_model(model: &str, seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match model {
        "lstm" => lstm(&mut rng),
        "gru" => gru(&mut rng),
        "mlp" => mlp(&mut rng),
        "policy-xent" => policy(&mut rng),
        "value-full" => value(&mut rng, ValueVariant::Full),
        "value-hid-VN" => value(&mut rng, ValueVariant::HidVn),
        "value-hid-Im-VN" => value(&mut rng, ValueVariant::HidImVn),
        "embed-ranking" => embed(&mut rng),
        other => Err(crate::Error::InvalidArgument(format!("no gradient check named {other}"))),
    }
}

/// Worst relative error of every model over seeds `0..seeds`.
pub fn run_suite(seeds: u64) -> Result<Vec<SuiteRow>> {
    MODELS
        .iter()
        .map(|&model| {
            let mut worst = 0.0f64;
            for seed in 0..seeds {
                worst = worst.max(check_model(model, seed)?.max_relative_error());
            }
            Ok(SuiteRow {
                model: model.to_string(),
                seeds: seeds as usize,
                max_relative_error: worst,
            })
        })
        .collect()
}
