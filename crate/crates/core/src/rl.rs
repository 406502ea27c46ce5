//! Actor-critic fine-tuning with an embedding reward and a curriculum that
//! hands the end of each caption over to sampling a few words at a time.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cells::Adam;
use crate::critic::{RewardModel, ValueNet, ValueVariant};
use crate::decode::{greedy_decode, DecodeModels};
use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor};
use crate::policy::PolicyNet;
use crate::sceneworld::{CaptionedExample, MAX_CAPTION_LEN};

/// Stage `i` of the curriculum: the last `i·Δ` words of a reference are
/// left to the policy, the rest are teacher-forced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumStage {
    pub index: usize,
    pub delta: usize,
}

impl CurriculumStage {
    pub fn new(index: usize, delta: usize) -> Result<Self> {
        if index == 0 || delta == 0 {
            return Err(Error::InvalidStage { stage: index, delta });
        }
        Ok(Self { index, delta })
    }

    fn span(&self) -> usize {
        self.index.saturating_mul(self.delta)
    }

    /// Number of teacher-forced words of a length-`t` sentence.
    pub fn forced_len(&self, t: usize) -> usize {
        t.saturating_sub(self.span())
    }

    /// Number of sampled words of a length-`t` sentence.
    pub fn rl_len(&self, t: usize) -> usize {
        self.span().min(t)
    }

    pub fn is_full_rl(&self, t: usize) -> bool {
        self.span() >= t
    }
}

/// Stages needed before every sentence of length `max_len` is fully sampled.
pub fn num_stages(max_len: usize, delta: usize) -> usize {
    max_len.div_ceil(delta.max(1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlConfig {
    pub policy_lr: f64,
    pub value_lr: f64,
    pub delta: usize,
    pub epochs_per_stage: usize,
    pub full_rl_epochs: usize,
    pub batch_size: usize,
    pub max_len: usize,
    /// Stop after this many curriculum stages; `Some(0)` skips RL.
    pub max_stages: Option<usize>,
    pub normalize_advantage: bool,
    /// Regress the value of one random RL state per sentence instead of all.
    pub value_one_state: bool,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            policy_lr: 2e-4,
            value_lr: 1e-3,
            delta: 2,
            epochs_per_stage: 1,
            full_rl_epochs: 2,
            batch_size: 32,
            max_len: MAX_CAPTION_LEN,
            max_stages: None,
            normalize_advantage: false,
            value_one_state: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlBatchStats {
    pub mean_reward: f64,
    pub mean_advantage: f64,
    pub policy_grad_norm: f64,
    pub value_loss: f64,
    /// Share of the batch's tokens that were sampled.
    pub rl_fraction: f64,
}

struct Episode {
    example: usize,
    tokens: Vec<usize>,
    forced: usize,
    reward: f64,
}

/// One joint update of policy and value on a batch of `(feature,
/// reference)` pairs.
///
/// Forced steps contribute cross-entropy; sampled steps contribute
/// `(r − v(s_t))·(−log p(a_t | s_t))` with the value held fixed. The value
/// regresses `½(v(s_t) − r)²` on the sampled states. Both gradients are
/// averaged over the batch and applied with Adam.
pub fn actor_critic_step(
    policy: &mut PolicyNet,
    value: &mut ValueNet,
    reward: &dyn RewardModel,
    batch: &[(&[f64], &[usize])],
    stage: CurriculumStage,
    rng: &mut impl Rng,
    cfg: &RlConfig,
) -> Result<RlBatchStats> {
    CurriculumStage::new(stage.index, stage.delta)?;
    if value.variant() != ValueVariant::Full {
        return Err(Error::InvalidArgument(
            "joint training uses the full value network".into(),
        ));
    }
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut episodes = Vec::with_capacity(batch.len());
    for (i, (feature, reference)) in batch.iter().enumerate() {
        let forced = stage.forced_len(reference.len());
        let r = policy.rollout(feature, rng, cfg.max_len, &reference[..forced])?;
        let rew = reward.reward(feature, &r.tokens)?;
        episodes.push(Episode {
            example: i,
            forced: r.forced,
            tokens: r.tokens,
            reward: rew,
        });
    }

    // Value side: one tape, also supplying the baselines.
    let mut vtape = Tape::new();
    let bound_v = value.bind(&mut vtape);
    let mut baselines = Vec::with_capacity(episodes.len());
    let mut vterms = Vec::new();
    let mut vloss = 0.0;
    let mut vcount = 0usize;
    let scale = 1.0 / batch.len() as f64;
    for ep in &episodes {
        let positions: Vec<usize> = (ep.forced..ep.tokens.len()).collect();
        let feature = batch[ep.example].0;
        let vars = bound_v.values_along(&mut vtape, feature, &ep.tokens, &positions)?;
        baselines.push(vars.iter().map(|&v| vtape.scalar(v)).collect::<Vec<f64>>());
        let chosen: Vec<_> = if cfg.value_one_state && !vars.is_empty() {
            vec![vars[rng.random_range(0..vars.len())]]
        } else {
            vars
        };
        for v in chosen {
            let r = vtape.constant(Tensor::scalar(ep.reward));
            let d = vtape.sub(v, r)?;
            vloss += 0.5 * vtape.scalar(d).powi(2);
            vcount += 1;
            let d2 = vtape.mul(d, d)?;
            vterms.push(vtape.scale(d2, 0.5 * scale)?);
        }
    }

    let mut advantages: Vec<Vec<f64>> = episodes
        .iter()
        .zip(&baselines)
        .map(|(ep, b)| b.iter().map(|v| ep.reward - v).collect())
        .collect();
    if cfg.normalize_advantage {
        let all: Vec<f64> = advantages.iter().flatten().copied().collect();
        if all.len() > 1 {
            let mean = all.iter().sum::<f64>() / all.len() as f64;
            let var = all.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / all.len() as f64;
            let sd = var.sqrt().max(1e-8);
            advantages
                .iter_mut()
                .flatten()
                .for_each(|a| *a = (*a - mean) / sd);
        }
    }

    // Policy side.
    let mut ptape = Tape::new();
    let bound_p = policy.bind(&mut ptape);
    let mut pterms = Vec::new();
    let mut sampled = 0usize;
    let mut total = 0usize;
    for (ep, adv) in episodes.iter().zip(&advantages) {
        let mut weights = vec![1.0; ep.forced];
        weights.extend(adv);
        sampled += adv.len();
        total += ep.tokens.len();
        let feature = batch[ep.example].0;
        if let Some(l) = bound_p.weighted_xent(&mut ptape, feature, &ep.tokens, &weights)? {
            pterms.push(l);
        }
    }

    policy.store.zero_grads();
    if let Some(loss) = ptape.add_all(&pterms)? {
        let loss = ptape.scale(loss, scale)?;
        policy.store.accumulate(&ptape.backward(loss)?, 1.0)?;
    }
    let grad_norm = policy.store.grad_norm();
    policy.store.adam_update(&Adam::with_lr(cfg.policy_lr))?;

    value.store.zero_grads();
    if let Some(loss) = vtape.add_all(&vterms)? {
        value.store.accumulate(&vtape.backward(loss)?, 1.0)?;
    }
    value.store.adam_update(&Adam::with_lr(cfg.value_lr))?;

    let n_adv = advantages.iter().map(Vec::len).sum::<usize>().max(1);
    Ok(RlBatchStats {
        mean_reward: episodes.iter().map(|e| e.reward).sum::<f64>() * scale,
        mean_advantage: advantages.iter().flatten().sum::<f64>() / n_adv as f64,
        policy_grad_norm: grad_norm,
        value_loss: vloss / vcount.max(1) as f64,
        rl_fraction: sampled as f64 / total.max(1) as f64,
    })
}

/// Gradient of `Σ_t weight_t · log p(w_t | s_t)` with respect to every policy
/// parameter, flattened in store order. Steps with weight zero are skipped.
pub fn policy_gradient(policy: &PolicyNet, feature: &[f64], tokens: &[usize], weights: &[f64]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = policy.bind(&mut tape);
    let mut out = vec![0.0; policy.store.num_params()];
    let Some(loss) = bound.weighted_xent(&mut tape, feature, tokens, weights)? else {
        return Ok(out);
    };
    let grads = tape.backward(loss)?;
    let offsets: Vec<usize> = policy
        .store
        .entries()
        .iter()
        .scan(0, |acc, e| {
            let start = *acc;
            *acc += e.value().numel();
            Some(start)
        })
        .collect();
    for (id, g) in grads.params() {
        let o = offsets[id.index()];
        for (slot, &x) in out[o..o + g.len()].iter_mut().zip(g) {
            *slot -= x;
        }
    }
    Ok(out)
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlLogRow {
    pub stage: usize,
    pub epoch: usize,
    pub mean_reward: f64,
    pub value_mse: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CurriculumReport {
    pub log: Vec<RlLogRow>,
    /// Mean held-out reward of greedy captions after each stage, starting
    /// with the value before any RL.
    pub stage_rewards: Vec<f64>,
    pub stages_run: usize,
}

pub fn write_log_csv(path: &Path, rows: &[RlLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean reward of greedy captions over `examples`.
pub fn greedy_reward(
    policy: &PolicyNet,
    reward: &dyn RewardModel,
    examples: &[CaptionedExample],
    max_len: usize,
) -> Result<f64> {
    let models = DecodeModels::new(policy, None)?;
    let mut total = 0.0;
    for e in examples {
        let out = greedy_decode(&models.for_image(&e.feature)?, max_len)?;
        total += reward.reward(&e.feature, &out.best().tokens)?;
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Runs stages `1, 2, …` until every training reference is fully sampled,
/// then `full_rl_epochs` more epochs at the last stage. `on_stage` sees
/// the models after every stage, for checkpointing.
#[allow(clippy::too_many_arguments)]
pub fn run_curriculum(
    policy: &mut PolicyNet,
    value: &mut ValueNet,
    reward: &dyn RewardModel,
    train: &[CaptionedExample],
    heldout: &[CaptionedExample],
    cfg: &RlConfig,
    rng: &mut impl Rng,
    mut on_stage: impl FnMut(usize, &PolicyNet, &ValueNet) -> Result<()>,
) -> Result<CurriculumReport> {
    let max_ref = train
        .iter()
        .flat_map(|e| e.references.iter().map(Vec::len))
        .max()
        .unwrap_or(0);
    let mut n = num_stages(max_ref, cfg.delta);
    if let Some(m) = cfg.max_stages {
        n = n.min(m);
    }
    let mut report = CurriculumReport::default();
    if !heldout.is_empty() {
        report
            .stage_rewards
            .push(greedy_reward(policy, reward, heldout, cfg.max_len)?);
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    for i in 1..=n {
        let stage = CurriculumStage::new(i, cfg.delta)?;
        let epochs = cfg.epochs_per_stage + if i == n { cfg.full_rl_epochs } else { 0 };
        for epoch in 0..epochs {
            order.shuffle(rng);
            let (mut rew, mut vmse, mut gn, mut batches) = (0.0, 0.0, 0.0, 0usize);
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let batch: Vec<(&[f64], &[usize])> = chunk
                    .iter()
                    .map(|&k| {
                        let e = &train[k];
                        let r = rng.random_range(0..e.references.len());
                        (e.feature.as_slice(), e.references[r].as_slice())
                    })
                    .collect();
                let s = actor_critic_step(policy, value, reward, &batch, stage, rng, cfg)?;
                rew += s.mean_reward;
                vmse += 2.0 * s.value_loss;
                gn += s.policy_grad_norm;
                batches += 1;
            }
            let b = batches.max(1) as f64;
            report.log.push(RlLogRow {
                stage: i,
                epoch,
                mean_reward: rew / b,
                value_mse: vmse / b,
                grad_norm: gn / b,
            });
        }
        if !heldout.is_empty() {
            report
                .stage_rewards
                .push(greedy_reward(policy, reward, heldout, cfg.max_len)?);
        }
        report.stages_run = i;
        on_stage(i, policy, value)?;
    }
    Ok(report)
}
