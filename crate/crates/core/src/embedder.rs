//! Visual-semantic embedding: a GRU sentence encoder and a linear image map
//! into one unit sphere, trained with a bidirectional hinge ranking loss.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{Adam, GruCell, Linear, ParamStore};
use crate::error::{Error, Result};
use crate::numcore::{dot, norm, ParamId, Tape, Var};
use crate::sceneworld::CaptionedExample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedConfig {
    pub vocab_len: usize,
    pub feature_dim: usize,
    pub word_dim: usize,
    pub embed_dim: usize,
    pub margin: f64,
}

impl EmbedConfig {
    pub fn new(vocab_len: usize, feature_dim: usize) -> Self {
        Self {
            vocab_len,
            feature_dim,
            word_dim: 32,
            embed_dim: 64,
            margin: 0.2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EmbedModel {
    pub config: EmbedConfig,
    pub store: ParamStore,
    words: ParamId,
    gru: GruCell,
    f_e: Linear,
}

fn unit(v: Vec<f64>) -> Result<Vec<f64>> {
    let n = norm(&v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateEmbedding);
    }
    Ok(v.into_iter().map(|x| x / n).collect())
}

impl EmbedModel {
    pub fn new(config: EmbedConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.margin <= 0.0 {
            return Err(Error::InvalidArgument("margin must be positive".into()));
        }
        let mut store = ParamStore::new();
        store.add_uniform("embed.words", &[config.vocab_len, config.word_dim], rng)?;
        GruCell::new(&mut store, "embed.gru", config.word_dim, config.embed_dim, rng)?;
        Linear::new(&mut store, "embed.f_e", config.feature_dim, config.embed_dim, false, rng)?;
        Self::from_store(config, store)
    }

    pub fn from_store(config: EmbedConfig, store: ParamStore) -> Result<Self> {
        let words = store.id("embed.words")?;
        let gru = GruCell::from_store(&store, "embed.gru")?;
        let f_e = Linear::from_store(&store, "embed.f_e")?;
        if f_e.bias_id().is_some() {
            return Err(Error::InvalidArgument("image map must not carry a bias".into()));
        }
        Ok(Self {
            config,
            store,
            words,
            gru,
            f_e,
        })
    }

    fn check_sentence(&self, sentence: &[usize]) -> Result<()> {
        if sentence.is_empty() {
            return Err(Error::EmptySentence);
        }
        if let Some(&id) = sentence.iter().find(|&&w| w >= self.config.vocab_len) {
            return Err(Error::TokenOutOfRange {
                id,
                len: self.config.vocab_len,
            });
        }
        Ok(())
    }

    /// Last GRU hidden state before normalization.
    pub fn sentence_hidden(&self, sentence: &[usize]) -> Result<Vec<f64>> {
        self.check_sentence(sentence)?;
        let table = self.store.value(self.words);
        let mut h = vec![0.0; self.config.embed_dim];
        for &w in sentence {
            h = self.gru.step_values(&self.store, &h, table.row(w))?;
        }
        Ok(h)
    }

    pub fn embed_sentence(&self, sentence: &[usize]) -> Result<Vec<f64>> {
        unit(self.sentence_hidden(sentence)?)
    }

    pub fn embed_image(&self, feature: &[f64]) -> Result<Vec<f64>> {
        unit(self.f_e.forward_values(&self.store, feature)?)
    }

    /// Cosine similarity between the image and sentence embeddings.
    pub fn reward(&self, feature: &[f64], sentence: &[usize]) -> Result<f64> {
        let v = self.embed_image(feature)?;
        let s = self.embed_sentence(sentence)?;
        Ok(dot(&v, &s))
    }

    /// Reward against a precomputed unit image embedding.
    pub fn reward_with_image(&self, image: &[f64], sentence: &[usize]) -> Result<f64> {
        Ok(dot(image, &self.embed_sentence(sentence)?))
    }

    /// Ranking loss of a batch, evaluated without a tape.
    pub fn ranking_loss(&self, batch: &[(&[f64], &[usize])]) -> Result<f64> {
        check_batch(batch.len())?;
        let imgs = batch
            .iter()
            .map(|(f, _)| self.embed_image(f))
            .collect::<Result<Vec<_>>>()?;
        let sens = batch
            .iter()
            .map(|(_, s)| self.embed_sentence(s))
            .collect::<Result<Vec<_>>>()?;
        let scores: Vec<Vec<f64>> = imgs.iter().map(|v| sens.iter().map(|s| dot(v, s)).collect()).collect();
        Ok(bidirectional_hinge(&scores, self.config.margin))
    }

    /// Records the ranking loss on `tape` and returns its scalar node.
    pub fn ranking_loss_tape(&self, tape: &mut Tape, batch: &[(&[f64], &[usize])]) -> Result<Var> {
        check_batch(batch.len())?;
        let words = self.store.bind(tape, self.words);
        let gru = self.gru.bind(tape, &self.store);
        let f_e = self.f_e.bind(tape, &self.store);
        let mut imgs = Vec::with_capacity(batch.len());
        let mut sens = Vec::with_capacity(batch.len());
        for (feature, sentence) in batch {
            self.check_sentence(sentence)?;
            let x = tape.constant(crate::numcore::Tensor::vector(feature.to_vec()));
            let v = f_e.forward(tape, x)?;
            imgs.push(tape.normalize(v)?);
            let mut h = tape.constant(crate::numcore::Tensor::zeros(&[self.config.embed_dim]));
            for &w in sentence.iter() {
                let x = tape.row(words, w)?;
                h = gru.step(tape, h, x)?;
            }
            sens.push(tape.normalize(h)?);
        }
        let n = batch.len();
        let mut scores = vec![Vec::with_capacity(n); n];
        for (i, &v) in imgs.iter().enumerate() {
            for &s in &sens {
                let d = tape.dot(v, s)?;
                scores[i].push(d);
            }
        }
        let mut diffs = Vec::with_capacity(2 * n * (n - 1));
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    diffs.push(tape.sub(scores[i][j], scores[i][i])?);
                    diffs.push(tape.sub(scores[i][j], scores[j][j])?);
                }
            }
        }
        let d = tape.concat(&diffs)?;
        let m = tape.constant(crate::numcore::Tensor::vector(vec![self.config.margin; diffs.len()]));
        let t = tape.add(d, m)?;
        let t = tape.hinge(t)?;
        tape.sum(t)
    }

    /// Loss and parameter gradients of one batch, accumulated into the store.
    pub fn accumulate_ranking_grad(&mut self, batch: &[(&[f64], &[usize])]) -> Result<f64> {
        let mut tape = Tape::new();
        let loss = self.ranking_loss_tape(&mut tape, batch)?;
        let grads = tape.backward(loss)?;
        self.store.accumulate(&grads, 1.0)?;
        Ok(tape.scalar(loss))
    }

    /// Trainable parameter handles, for callers that need to address them.
    pub fn word_table(&self) -> ParamId {
        self.words
    }
}

fn check_batch(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    Ok(())
}

/// Bidirectional hinge loss over an image × sentence score matrix whose
/// diagonal holds the positive pairs.
pub fn bidirectional_hinge(scores: &[Vec<f64>], margin: f64) -> f64 {
    let n = scores.len();
    let mut loss = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                loss += (margin - scores[i][i] + scores[i][j]).max(0.0);
                loss += (margin - scores[j][j] + scores[i][j]).max(0.0);
            }
        }
    }
    loss
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for EmbedTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 32,
            lr: 2e-3,
        }
    }
}

/// Per-epoch training and held-out ranking loss, each a mean over batches.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbedCurve {
    pub train_loss: Vec<f64>,
    pub heldout_loss: Vec<f64>,
}

/// Held-out loss over consecutive fixed batches using each scene's first
/// reference.
pub fn heldout_ranking_loss(model: &EmbedModel, examples: &[CaptionedExample], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for chunk in examples.chunks(batch_size) {
        if chunk.len() < 2 {
            continue;
        }
        let batch: Vec<(&[f64], &[usize])> = chunk
            .iter()
            .map(|e| (e.feature.as_slice(), e.references[0].as_slice()))
            .collect();
        total += model.ranking_loss(&batch)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::BatchTooSmall(examples.len()));
    }
    Ok(total / count as f64)
}

/// Trains with shuffled batches of distinct scenes, drawing one reference
/// per scene per epoch.
pub fn train_embedding(
    model: &mut EmbedModel,
    train: &[CaptionedExample],
    heldout: &[CaptionedExample],
    cfg: &EmbedTrainConfig,
    rng: &mut impl Rng,
) -> Result<EmbedCurve> {
    let adam = Adam::with_lr(cfg.lr);
    let mut curve = EmbedCurve::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<(&[f64], &[usize])> = chunk
                .iter()
                .map(|&i| {
                    let e = &train[i];
                    let r = rng.random_range(0..e.references.len());
                    (e.feature.as_slice(), e.references[r].as_slice())
                })
                .collect();
            model.store.zero_grads();
            total += model.accumulate_ranking_grad(&batch)?;
            model.store.adam_update(&adam)?;
            batches += 1;
        }
        curve.train_loss.push(total / batches.max(1) as f64);
        if heldout.len() >= 2 {
            curve.heldout_loss.push(heldout_ranking_loss(model, heldout, cfg.batch_size)?);
        }
    }
    Ok(curve)
}

/// Fraction of scenes whose first reference retrieves its own image as the
/// best match among all images in `examples`.
pub fn recall_at_1(model: &EmbedModel, examples: &[CaptionedExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("recall over no examples".into()));
    }
    let imgs = examples
        .iter()
        .map(|e| model.embed_image(&e.feature))
        .collect::<Result<Vec<_>>>()?;
    let mut hits = 0;
    for (i, e) in examples.iter().enumerate() {
        let s = model.embed_sentence(&e.references[0])?;
        let best = imgs
            .iter()
            .enumerate()
            .map(|(j, v)| (j, dot(v, &s)))
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, (j, d)| if d > acc.1 { (j, d) } else { acc });
        if best.0 == i {
            hits += 1;
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}

/// Fraction of scenes whose first reference out-rewards the first reference
/// of another scene. The other scene is the next one in a random cyclic
/// shift, so no scene is paired with itself.
pub fn paired_preference(model: &EmbedModel, examples: &[CaptionedExample], rng: &mut impl Rng) -> Result<f64> {
    let n = examples.len();
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    let shift = rng.random_range(1..n);
    let mut wins = 0;
    for (i, e) in examples.iter().enumerate() {
        let other = &examples[(i + shift) % n];
        let v = model.embed_image(&e.feature)?;
        let own = model.reward_with_image(&v, &e.references[0])?;
        let foreign = model.reward_with_image(&v, &other.references[0])?;
        if own > foreign {
            wins += 1;
        }
    }
    Ok(wins as f64 / n as f64)
}
