//! Caption search: greedy decoding, standard beam search, lookahead beam
//! search mixing policy log-probabilities with value estimates, and
//! embedding-based reranking of finished candidates.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::cells::LstmState;
use crate::critic::{ValueNet, ValueVariant};
use crate::embedder::EmbedModel;
use crate::error::{Error, Result};
use crate::numcore::dot;
use crate::policy::{PolicyNet, PolicyState};
use crate::sceneworld::EOS;

/// What a search needs from the models for one image. A word is a legal
/// extension exactly when its log-probability is finite.
pub trait SearchModel {
    type State: Clone;

    fn initial(&self) -> Result<Self::State>;
    fn log_probs(&self, state: &Self::State) -> Result<Vec<f64>>;
    fn advance(&self, state: &Self::State, word: usize) -> Result<Self::State>;
    /// `v` of each state reached by appending one of `words` to `state`.
    fn extension_values(&self, state: &Self::State, words: &[usize]) -> Result<Vec<f64>>;
}

/// One decoding step along a hypothesis path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub word: usize,
    pub logp: f64,
    /// Value of the extended state; absent when the value was not consulted.
    pub value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub score: f64,
    pub steps: Vec<TraceStep>,
}

impl Hypothesis {
    pub fn is_complete(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }

    pub fn logprob(&self) -> f64 {
        self.steps.iter().map(|s| s.logp).sum()
    }
}

/// A candidate kept at one step, as `(prefix, score)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Selected {
    pub tokens: Vec<usize>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutput {
    /// Finished captions, best first. When nothing finished this holds the
    /// best unfinished hypothesis and `truncated` is set.
    pub ranked: Vec<Hypothesis>,
    pub truncated: bool,
    /// The extensions kept at every step.
    pub history: Vec<Vec<Selected>>,
}

impl SearchOutput {
    pub fn best(&self) -> &Hypothesis {
        &self.ranked[0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    pub beam: usize,
    pub lambda: f64,
    pub max_len: usize,
    /// Rank finished captions by score per token instead of raw score.
    #[serde(default)]
    pub length_norm: bool,
}

impl BeamConfig {
    pub fn new(beam: usize, lambda: f64, max_len: usize) -> Self {
        Self {
            beam,
            lambda,
            max_len,
            length_norm: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::InvalidArgument("beam width must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.max_len == 0 {
            return Err(Error::InvalidArgument("max_len must be at least 1".into()));
        }
        Ok(())
    }
}

struct Live<S> {
    hyp: Hypothesis,
    state: S,
}

struct Candidate {
    score: f64,
    parent: usize,
    word: usize,
    logp: f64,
    value: Option<f64>,
}

fn by_rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.parent.cmp(&b.parent))
        .then(a.word.cmp(&b.word))
}

fn final_key(h: &Hypothesis, length_norm: bool) -> f64 {
    if length_norm {
        h.score / h.tokens.len() as f64
    } else {
        h.score
    }
}

fn rank_completed(mut done: Vec<Hypothesis>, length_norm: bool) -> Vec<Hypothesis> {
    done.sort_by(|a, b| {
        final_key(b, length_norm)
            .total_cmp(&final_key(a, length_norm))
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    done
}

fn legal(lp: &[f64]) -> Vec<usize> {
    (0..lp.len()).filter(|&w| lp[w].is_finite()).collect()
}

/// Beam search scoring each extension by
/// `S + λ·log p(w | s) + (1 − λ)·v(s, w)`.
///
/// The `B` best extensions over all live hypotheses are kept each step,
/// ties going to the earlier parent and then the smaller word id. Kept
/// extensions ending in `<eos>` are finished and stop accumulating score.
/// Search ends once `B` captions are finished, no hypothesis is live, or
/// `max_len` tokens have been emitted. With `λ = 1` the value is never
/// evaluated.
pub fn lookahead_beam_search<M: SearchModel>(model: &M, cfg: &BeamConfig) -> Result<SearchOutput> {
    cfg.validate()?;
    let lambda = cfg.lambda;
    let use_value = lambda < 1.0;
    let mut live = vec![Live {
        hyp: Hypothesis {
            tokens: Vec::new(),
            score: 0.0,
            steps: Vec::new(),
        },
        state: model.initial()?,
    }];
    let mut done = Vec::new();
    let mut history = Vec::new();
    for _ in 0..cfg.max_len {
        let mut cands = Vec::new();
        for (parent, l) in live.iter().enumerate() {
            let lp = model.log_probs(&l.state)?;
            let words = legal(&lp);
            let values = if use_value {
                Some(model.extension_values(&l.state, &words)?)
            } else {
                None
            };
            for (k, &w) in words.iter().enumerate() {
                let mut score = l.hyp.score + lambda * lp[w];
                let value = values.as_ref().map(|v| v[k]);
                if let Some(v) = value {
                    score += (1.0 - lambda) * v;
                }
                if !score.is_finite() {
                    return Err(Error::NonFinite("beam score"));
                }
                cands.push(Candidate {
                    score,
                    parent,
                    word: w,
                    logp: lp[w],
                    value,
                });
            }
        }
        cands.sort_by(by_rank);
        cands.truncate(cfg.beam);
        let mut next = Vec::with_capacity(cands.len());
        let mut kept = Vec::with_capacity(cands.len());
        for c in cands {
            let parent = &live[c.parent];
            let mut hyp = parent.hyp.clone();
            hyp.tokens.push(c.word);
            hyp.score = c.score;
            hyp.steps.push(TraceStep {
                word: c.word,
                logp: c.logp,
                value: c.value,
            });
            kept.push(Selected {
                tokens: hyp.tokens.clone(),
                score: hyp.score,
            });
            if c.word == EOS {
                done.push(hyp);
            } else {
                let state = model.advance(&parent.state, c.word)?;
                next.push(Live { hyp, state });
            }
        }
        history.push(kept);
        live = next;
        if done.len() >= cfg.beam || live.is_empty() {
            break;
        }
    }
    finish(done, live.into_iter().map(|l| l.hyp).collect(), history, cfg.length_norm)
}

fn finish(
    done: Vec<Hypothesis>,
    live: Vec<Hypothesis>,
    history: Vec<Vec<Selected>>,
    length_norm: bool,
) -> Result<SearchOutput> {
    if done.is_empty() {
        let best = live.into_iter().next().ok_or(Error::EmptyCandidates)?;
        return Ok(SearchOutput {
            ranked: vec![best],
            truncated: true,
            history,
        });
    }
    Ok(SearchOutput {
        ranked: rank_completed(done, length_norm),
        truncated: false,
        history,
    })
}

/// Plain log-probability beam search with the same selection and stopping
/// rules as [`lookahead_beam_search`].
pub fn beam_search<M: SearchModel>(model: &M, beam: usize, max_len: usize) -> Result<SearchOutput> {
    BeamConfig::new(beam, 1.0, max_len).validate()?;
    let mut live: Vec<(Vec<usize>, f64, Vec<TraceStep>, M::State)> =
        vec![(Vec::new(), 0.0, Vec::new(), model.initial()?)];
    let mut done = Vec::new();
    let mut history = Vec::new();
    for _ in 0..max_len {
        let mut scored: Vec<(f64, usize, usize, f64)> = Vec::new();
        for (i, (_, s, _, state)) in live.iter().enumerate() {
            let lp = model.log_probs(state)?;
            for w in legal(&lp) {
                scored.push((s + lp[w], i, w, lp[w]));
            }
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        scored.truncate(beam);
        let mut next = Vec::new();
        let mut kept = Vec::new();
        for (score, i, w, logp) in scored {
            let (tokens, _, steps, state) = &live[i];
            let mut tokens = tokens.clone();
            tokens.push(w);
            let mut steps = steps.clone();
            steps.push(TraceStep { word: w, logp, value: None });
            kept.push(Selected {
                tokens: tokens.clone(),
                score,
            });
            if w == EOS {
                done.push(Hypothesis { tokens, score, steps });
            } else {
                let st = model.advance(state, w)?;
                next.push((tokens, score, steps, st));
            }
        }
        history.push(kept);
        live = next;
        if done.len() >= beam || live.is_empty() {
            break;
        }
    }
    let live = live
        .into_iter()
        .map(|(tokens, score, steps, _)| Hypothesis { tokens, score, steps })
        .collect();
    finish(done, live, history, false)
}

/// Most probable word at every step, ties to the smaller id.
pub fn greedy_decode<M: SearchModel>(model: &M, max_len: usize) -> Result<SearchOutput> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let mut state = model.initial()?;
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        steps: Vec::new(),
    };
    let mut history = Vec::new();
    for _ in 0..max_len {
        let lp = model.log_probs(&state)?;
        let mut best: Option<usize> = None;
        for w in legal(&lp) {
            if best.is_none_or(|b| lp[w] > lp[b]) {
                best = Some(w);
            }
        }
        let w = best.ok_or(Error::EmptyCandidates)?;
        hyp.tokens.push(w);
        hyp.score += lp[w];
        hyp.steps.push(TraceStep {
            word: w,
            logp: lp[w],
            value: None,
        });
        history.push(vec![Selected {
            tokens: hyp.tokens.clone(),
            score: hyp.score,
        }]);
        if w == EOS {
            return Ok(SearchOutput {
                ranked: vec![hyp],
                truncated: false,
                history,
            });
        }
        state = model.advance(&state, w)?;
    }
    Ok(SearchOutput {
        ranked: vec![hyp],
        truncated: true,
        history,
    })
}

/// Picks the candidate with the highest embedding reward for `feature`.
/// Ties go to the higher search score, then the smaller token sequence.
pub fn embed_rerank<'a>(candidates: &'a [Hypothesis], embed: &EmbedModel, feature: &[f64]) -> Result<&'a Hypothesis> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let image = embed.embed_image(feature)?;
    let mut best: Option<(f64, &Hypothesis)> = None;
    for c in candidates {
        let r = embed.reward_with_image(&image, &c.tokens)?;
        let better = match best {
            None => true,
            Some((br, b)) => r
                .total_cmp(&br)
                .then(c.score.total_cmp(&b.score))
                .then(b.tokens.cmp(&c.tokens))
                .is_gt(),
        };
        if better {
            best = Some((r, c));
        }
    }
    Ok(best.expect("nonempty").1)
}

/// Policy and optional value network with per-word input projections
/// precomputed, ready to search many images.
pub struct DecodeModels<'a> {
    pub policy: &'a PolicyNet,
    pub value: Option<&'a ValueNet>,
    policy_table: Vec<Vec<f64>>,
    value_table: Vec<Vec<f64>>,
}

impl<'a> DecodeModels<'a> {
    pub fn new(policy: &'a PolicyNet, value: Option<&'a ValueNet>) -> Result<Self> {
        let value_table = match value {
            Some(v) if v.variant() == ValueVariant::Full => v.projection_table()?,
            _ => Vec::new(),
        };
        Ok(Self {
            policy,
            value,
            policy_table: policy.projection_table()?,
            value_table,
        })
    }

    pub fn for_image(&self, feature: &[f64]) -> Result<ImageSearch<'_>> {
        let x0 = self.policy.image_input(feature)?;
        let value_image = match self.value {
            None => None,
            Some(v) => Some(match v.variant() {
                ValueVariant::Full => v.image_part(feature, None)?,
                _ => {
                    let ctx = crate::critic::PolicyContext {
                        hidden: Vec::new(),
                        image_input: Some(x0.clone()),
                    };
                    v.image_part(feature, Some(&ctx))?
                }
            }),
        };
        Ok(ImageSearch {
            models: self,
            x0,
            value_image,
        })
    }
}

/// Search state: the policy state plus, for the full value variant, the
/// value network's own recurrent state.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionState {
    pub policy: PolicyState,
    pub value: Option<LstmState>,
}

/// [`SearchModel`] for one image.
pub struct ImageSearch<'m> {
    models: &'m DecodeModels<'m>,
    x0: Vec<f64>,
    value_image: Option<Vec<f64>>,
}

impl ImageSearch<'_> {
    fn value_net(&self) -> Result<(&ValueNet, &[f64])> {
        match (self.models.value, &self.value_image) {
            (Some(v), Some(img)) => Ok((v, img)),
            _ => Err(Error::InvalidArgument("lookahead search needs a value network".into())),
        }
    }

    fn check_word(&self, w: usize) -> Result<()> {
        let len = self.models.policy_table.len();
        if w >= len {
            return Err(Error::TokenOutOfRange { id: w, len });
        }
        Ok(())
    }
}

impl SearchModel for ImageSearch<'_> {
    type State = CaptionState;

    fn initial(&self) -> Result<CaptionState> {
        let value = match self.models.value {
            Some(v) if v.variant() == ValueVariant::Full => Some(LstmState::zeros(v.config.hidden)),
            _ => None,
        };
        Ok(CaptionState {
            policy: self.models.policy.init_from_input(&self.x0)?,
            value,
        })
    }

    fn log_probs(&self, state: &CaptionState) -> Result<Vec<f64>> {
        self.models.policy.log_probs(&state.policy)
    }

    fn advance(&self, state: &CaptionState, word: usize) -> Result<CaptionState> {
        self.check_word(word)?;
        let policy = self
            .models
            .policy
            .advance_projected(&state.policy, &self.models.policy_table[word]);
        let value = match (&state.value, self.models.value) {
            (Some(s), Some(v)) => {
                let (lstm, _) = v.own_rnn()?;
                let zh = lstm.hidden_projection(&v.store, &s.h)?;
                Some(lstm.combine(&self.models.value_table[word], &zh, &s.c))
            }
            _ => None,
        };
        Ok(CaptionState { policy, value })
    }

    fn extension_values(&self, state: &CaptionState, words: &[usize]) -> Result<Vec<f64>> {
        let (v, img) = self.value_net()?;
        let (lstm, table, h, c) = match &state.value {
            Some(s) => (v.own_rnn()?.0, &self.models.value_table, &s.h, &s.c),
            None => (
                self.models.policy.lstm(),
                &self.models.policy_table,
                &state.policy.h,
                &state.policy.c,
            ),
        };
        let store = if state.value.is_some() {
            &v.store
        } else {
            &self.models.policy.store
        };
        let zh = lstm.hidden_projection(store, h)?;
        words
            .iter()
            .map(|&w| {
                self.check_word(w)?;
                let next = lstm.combine(&table[w], &zh, c);
                v.value_from_hidden(img, &next.h)
            })
            .collect()
    }
}

/// `Σ_t [λ·log p + (1 − λ)·v]` along a hypothesis, recomputed from its
/// trace in the same order the search accumulates it.
pub fn rescore(h: &Hypothesis, lambda: f64) -> f64 {
    h.steps.iter().fold(0.0, |s, st| {
        let s = s + lambda * st.logp;
        match st.value {
            Some(v) => s + (1.0 - lambda) * v,
            None => s,
        }
    })
}

/// Cosine reward of the best caption, for convenience in reports.
pub fn caption_reward(embed: &EmbedModel, feature: &[f64], tokens: &[usize]) -> Result<f64> {
    let image = embed.embed_image(feature)?;
    Ok(dot(&image, &embed.embed_sentence(tokens)?))
}
