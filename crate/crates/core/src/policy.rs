//! The captioning policy: an image-primed LSTM that predicts the next word.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{Adam, BoundLinear, BoundLstm, Linear, LstmCell, LstmState, ParamStore};
use crate::error::{Error, Result};
use crate::numcore::{masked_log_softmax, ParamId, Tape, Tensor, Var};
use crate::sceneworld::{is_action, CaptionedExample, EOS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub vocab_len: usize,
    pub feature_dim: usize,
    /// Word-input and hidden width, which are equal.
    pub hidden: usize,
}

impl PolicyConfig {
    pub fn new(vocab_len: usize, feature_dim: usize) -> Self {
        Self {
            vocab_len,
            feature_dim,
            hidden: 64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PolicyNet {
    pub config: PolicyConfig,
    pub store: ParamStore,
    img: Linear,
    words: ParamId,
    lstm: LstmCell,
    out: Linear,
}

/// Recurrent state after the image step and `t` words.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub t: usize,
}

/// A sampled or forced caption with the log-probability of every token.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub tokens: Vec<usize>,
    pub logps: Vec<f64>,
    /// Number of leading tokens that were forced rather than sampled.
    pub forced: usize,
}

/// Draws an index from log-probabilities by inverting the cumulative sum.
/// Entries at negative infinity are never chosen.
pub fn sample_categorical(logp: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (i, &l) in logp.iter().enumerate() {
        if l == f64::NEG_INFINITY {
            continue;
        }
        acc += l.exp();
        last = Some(i);
        if u < acc {
            return i;
        }
    }
    last.expect("at least one legal entry")
}

impl PolicyNet {
    pub fn new(config: PolicyConfig, rng: &mut impl Rng) -> Result<Self> {
        let n = config.hidden;
        let mut store = ParamStore::new();
        Linear::new(&mut store, "policy.img", config.feature_dim, n, false, rng)?;
        store.add_uniform("policy.words", &[config.vocab_len, n], rng)?;
        LstmCell::new(&mut store, "policy.lstm", n, n, rng)?;
        Linear::new(&mut store, "policy.out", n, config.vocab_len, true, rng)?;
        Self::from_store(config, store)
    }

    pub fn from_store(config: PolicyConfig, store: ParamStore) -> Result<Self> {
        Ok(Self {
            img: Linear::from_store(&store, "policy.img")?,
            words: store.id("policy.words")?,
            lstm: LstmCell::from_store(&store, "policy.lstm")?,
            out: Linear::from_store(&store, "policy.out")?,
            config,
            store,
        })
    }

    pub fn vocab_len(&self) -> usize {
        self.config.vocab_len
    }

    pub fn lstm(&self) -> &LstmCell {
        &self.lstm
    }

    fn check_word(&self, w: usize) -> Result<()> {
        if w >= self.config.vocab_len {
            return Err(Error::TokenOutOfRange {
                id: w,
                len: self.config.vocab_len,
            });
        }
        Ok(())
    }

    /// The visual input `x₀` fed to the first LSTM step.
    pub fn image_input(&self, feature: &[f64]) -> Result<Vec<f64>> {
        self.img.forward_values(&self.store, feature)
    }

    pub fn init_state(&self, feature: &[f64]) -> Result<PolicyState> {
        let x0 = self.image_input(feature)?;
        self.init_from_input(&x0)
    }

    pub fn init_from_input(&self, x0: &[f64]) -> Result<PolicyState> {
        let s = self
            .lstm
            .step_values(&self.store, &LstmState::zeros(self.config.hidden), x0)?;
        Ok(PolicyState { h: s.h, c: s.c, t: 0 })
    }

    /// `W_x·φ(w) + b` for one word.
    pub fn word_projection(&self, w: usize) -> Result<Vec<f64>> {
        self.check_word(w)?;
        self.lstm
            .input_projection(&self.store, self.store.value(self.words).row(w))
    }

    /// Input projections of every word, indexed by token id.
    pub fn projection_table(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.config.vocab_len).map(|w| self.word_projection(w)).collect()
    }

    /// Consumes `word` without computing output probabilities.
    pub fn advance(&self, state: &PolicyState, word: usize) -> Result<PolicyState> {
        let zx = self.word_projection(word)?;
        Ok(self.advance_projected(state, &zx))
    }

    pub fn advance_projected(&self, state: &PolicyState, zx: &[f64]) -> PolicyState {
        let zh = self
            .lstm
            .hidden_projection(&self.store, &state.h)
            .expect("state width fixed by construction");
        let s = self.lstm.combine(zx, &zh, &state.c);
        PolicyState {
            h: s.h,
            c: s.c,
            t: state.t + 1,
        }
    }

    pub fn logits(&self, state: &PolicyState) -> Result<Vec<f64>> {
        self.out.forward_values(&self.store, &state.h)
    }

    /// Log-probabilities of the next word. Non-actions come back as `-inf`.
    pub fn log_probs(&self, state: &PolicyState) -> Result<Vec<f64>> {
        Ok(masked_log_softmax(&self.logits(state)?, is_action))
    }

    pub fn step(&self, state: &PolicyState, word: usize) -> Result<(PolicyState, Vec<f64>)> {
        let next = self.advance(state, word)?;
        let lp = self.log_probs(&next)?;
        Ok((next, lp))
    }

    /// Log-probability of each token of `sentence` given its predecessors.
    pub fn step_logprobs(&self, feature: &[f64], sentence: &[usize]) -> Result<Vec<f64>> {
        if sentence.is_empty() {
            return Err(Error::EmptySentence);
        }
        let mut state = self.init_state(feature)?;
        let mut out = Vec::with_capacity(sentence.len());
        for (t, &w) in sentence.iter().enumerate() {
            self.check_word(w)?;
            let lp = self.log_probs(&state)?[w];
            if lp == f64::NEG_INFINITY {
                return Err(Error::IllegalAction(w));
            }
            out.push(lp);
            if t + 1 < sentence.len() {
                state = self.advance(&state, w)?;
            }
        }
        Ok(out)
    }

    pub fn sequence_logprob(&self, feature: &[f64], sentence: &[usize]) -> Result<f64> {
        Ok(self.step_logprobs(feature, sentence)?.iter().sum())
    }

    /// Forces `prefix`, then samples until `<eos>` or `max_len` tokens.
    pub fn rollout(&self, feature: &[f64], rng: &mut impl Rng, max_len: usize, prefix: &[usize]) -> Result<Rollout> {
        if max_len == 0 {
            return Err(Error::InvalidArgument("max_len must be at least 1".into()));
        }
        let mut state = self.init_state(feature)?;
        let mut tokens = Vec::new();
        let mut logps = Vec::new();
        loop {
            let lp = self.log_probs(&state)?;
            let forcing = tokens.len() < prefix.len();
            let w = if forcing {
                let w = prefix[tokens.len()];
                self.check_word(w)?;
                w
            } else {
                sample_categorical(&lp, rng)
            };
            if lp[w] == f64::NEG_INFINITY {
                return Err(Error::IllegalAction(w));
            }
            tokens.push(w);
            logps.push(lp[w]);
            if w == EOS || tokens.len() >= max_len.max(prefix.len()) {
                break;
            }
            state = self.advance(&state, w)?;
        }
        Ok(Rollout {
            forced: prefix.len().min(tokens.len()),
            tokens,
            logps,
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundPolicy {
        BoundPolicy {
            img: self.img.bind(tape, &self.store),
            words: self.store.bind(tape, self.words),
            lstm: self.lstm.bind(tape, &self.store),
            out: self.out.bind(tape, &self.store),
            hidden: self.config.hidden,
            vocab_len: self.config.vocab_len,
        }
    }

    /// Teacher-forced cross-entropy summed over a batch, scaled by
    /// `scale`, with gradients added to the store. Returns the unscaled sum.
    pub fn accumulate_xent(&mut self, batch: &[(&[f64], &[usize])], scale: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let mut terms = Vec::with_capacity(batch.len());
        for (feature, sentence) in batch {
            let weights = vec![1.0; sentence.len()];
            if let Some(l) = bound.weighted_xent(&mut tape, feature, sentence, &weights)? {
                terms.push(l);
            }
        }
        let Some(total) = tape.add_all(&terms)? else {
            return Ok(0.0);
        };
        let loss = tape.scale(total, scale)?;
        let grads = tape.backward(loss)?;
        self.store.accumulate(&grads, 1.0)?;
        Ok(tape.scalar(total))
    }

    /// Mean per-sentence cross-entropy over every reference of `examples`.
    pub fn mean_xent(&self, examples: &[CaptionedExample]) -> Result<f64> {
        let mut total = 0.0;
        let mut n = 0;
        for e in examples {
            for r in &e.references {
                total -= self.sequence_logprob(&e.feature, r)?;
                n += 1;
            }
        }
        Ok(total / n.max(1) as f64)
    }
}

/// A [`PolicyNet`] whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundPolicy {
    img: BoundLinear,
    words: Var,
    lstm: BoundLstm,
    out: BoundLinear,
    hidden: usize,
    vocab_len: usize,
}

impl BoundPolicy {
    pub fn init(&self, tape: &mut Tape, feature: &[f64]) -> Result<(Var, Var)> {
        let f = tape.constant(Tensor::vector(feature.to_vec()));
        let x0 = self.img.forward(tape, f)?;
        let zero = tape.constant(Tensor::zeros(&[self.hidden]));
        self.lstm.step(tape, zero, zero, x0)
    }

    pub fn advance(&self, tape: &mut Tape, h: Var, c: Var, word: usize) -> Result<(Var, Var)> {
        if word >= self.vocab_len {
            return Err(Error::TokenOutOfRange {
                id: word,
                len: self.vocab_len,
            });
        }
        let x = tape.row(self.words, word)?;
        self.lstm.step(tape, h, c, x)
    }

    pub fn logits(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        self.out.forward(tape, h)
    }

    /// `Σ_t weight_t · (−log p(w_t | w_<t, image))`, skipping zero weights.
    pub fn weighted_xent(
        &self,
        tape: &mut Tape,
        feature: &[f64],
        sentence: &[usize],
        weights: &[f64],
    ) -> Result<Option<Var>> {
        if sentence.is_empty() {
            return Err(Error::EmptySentence);
        }
        let (mut h, mut c) = self.init(tape, feature)?;
        let mut terms = Vec::with_capacity(sentence.len());
        for (t, (&w, &k)) in sentence.iter().zip(weights).enumerate() {
            if k != 0.0 {
                let logits = self.logits(tape, h)?;
                let (xent, _) = tape.softmax_xent_masked(logits, w, is_action)?;
                terms.push(if k == 1.0 { xent } else { tape.scale(xent, k)? });
            }
            if t + 1 < sentence.len() && weights[t + 1..].iter().any(|&k| k != 0.0) {
                (h, c) = self.advance(tape, h, c, w)?;
            } else {
                break;
            }
        }
        tape.add_all(&terms)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for PolicyTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            batch_size: 32,
            lr: 3e-3,
        }
    }
}

/// Teacher-forced training on every (feature, reference) pair. Returns the
/// mean per-sentence loss of each epoch.
pub fn pretrain_policy(
    policy: &mut PolicyNet,
    train: &[CaptionedExample],
    cfg: &PolicyTrainConfig,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let pairs: Vec<(usize, usize)> = train
        .iter()
        .enumerate()
        .flat_map(|(i, e)| (0..e.references.len()).map(move |r| (i, r)))
        .collect();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let adam = Adam::with_lr(cfg.lr);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<(&[f64], &[usize])> = chunk
                .iter()
                .map(|&k| {
                    let (i, r) = pairs[k];
                    (train[i].feature.as_slice(), train[i].references[r].as_slice())
                })
                .collect();
            policy.store.zero_grads();
            total += policy.accumulate_xent(&batch, 1.0 / batch.len() as f64)?;
            policy.store.adam_update(&adam)?;
        }
        curve.push(total / pairs.len().max(1) as f64);
    }
    Ok(curve)
}
