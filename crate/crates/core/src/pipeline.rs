//! The training stages, each a pure function of the run config and its
//! upstream artifacts. Every stage draws from its own seeded stream, so
//! re-running one stage reproduces its output exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::critic::{self, ValueConfig, ValueCurve, ValueNet, ValueVariant};
use crate::embedder::{self, EmbedConfig, EmbedCurve, EmbedModel};
use crate::error::Result;
use crate::evalkit::ModelSet;
use crate::policy::{self, PolicyConfig, PolicyNet};
use crate::rl::{self, CurriculumReport};
use crate::sceneworld::Dataset;

/// Independent random stream for one named stage of a run.
pub fn stage_rng(seed: u64, stage: &str) -> ChaCha8Rng {
    // FNV-1a over the stage name, folded into the run seed.
    let h = stage
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    ChaCha8Rng::seed_from_u64(seed.rotate_left(17) ^ h)
}

fn feature_dim(data: &Dataset) -> usize {
    data.train
        .first()
        .map_or(crate::sceneworld::FEATURE_DIM, |e| e.feature.dim())
}

pub fn generate_data(cfg: &RunConfig) -> Result<Dataset> {
    cfg.data.generate()
}

pub fn train_embed(cfg: &RunConfig, data: &Dataset) -> Result<(EmbedModel, EmbedCurve)> {
    let mut rng = stage_rng(cfg.seed, "train-embed");
    let ec = EmbedConfig {
        vocab_len: data.vocab.len(),
        feature_dim: feature_dim(data),
        word_dim: cfg.model.embed_word_dim,
        embed_dim: cfg.model.embed_dim,
        margin: cfg.model.margin,
    };
    let mut model = EmbedModel::new(ec, &mut rng)?;
    let curve = embedder::train_embedding(&mut model, &data.train, &data.val, &cfg.embed, &mut rng)?;
    Ok((model, curve))
}

pub fn new_policy(cfg: &RunConfig, data: &Dataset, rng: &mut ChaCha8Rng) -> Result<PolicyNet> {
    let pc = PolicyConfig {
        vocab_len: data.vocab.len(),
        feature_dim: feature_dim(data),
        hidden: cfg.model.hidden,
    };
    PolicyNet::new(pc, rng)
}

pub fn pretrain_policy(cfg: &RunConfig, data: &Dataset) -> Result<(PolicyNet, Vec<f64>)> {
    let mut rng = stage_rng(cfg.seed, "pretrain-policy");
    let mut p = new_policy(cfg, data, &mut rng)?;
    let curve = policy::pretrain_policy(&mut p, &data.train, &cfg.policy, &mut rng)?;
    Ok((p, curve))
}

pub fn value_config(cfg: &RunConfig, data: &Dataset, variant: ValueVariant) -> ValueConfig {
    let hidden = if variant == ValueVariant::Full {
        cfg.model.value_hidden
    } else {
        cfg.model.hidden
    };
    let visual_dim = if variant == ValueVariant::HidImVn {
        cfg.model.hidden
    } else {
        cfg.model.value_visual_dim
    };
    ValueConfig {
        variant,
        vocab_len: data.vocab.len(),
        feature_dim: feature_dim(data),
        visual_dim,
        hidden,
        mlp_hidden: cfg.model.value_mlp.clone(),
    }
}

pub fn pretrain_value(
    cfg: &RunConfig,
    data: &Dataset,
    policy: &PolicyNet,
    embed: &EmbedModel,
    variant: ValueVariant,
) -> Result<(ValueNet, ValueCurve)> {
    let mut rng = stage_rng(cfg.seed, &format!("pretrain-value-{variant}"));
    let mut v = ValueNet::new(value_config(cfg, data, variant), &mut rng)?;
    let curve = critic::pretrain_value(&mut v, policy, embed, &data.train, &data.val, &cfg.value, &mut rng)?;
    Ok((v, curve))
}

pub fn train_rl(
    cfg: &RunConfig,
    data: &Dataset,
    policy: &PolicyNet,
    value: &ValueNet,
    embed: &EmbedModel,
    on_stage: impl FnMut(usize, &PolicyNet, &ValueNet) -> Result<()>,
) -> Result<(PolicyNet, ValueNet, CurriculumReport)> {
    let mut rng = stage_rng(cfg.seed, "train-rl");
    let (mut p, mut v) = (policy.clone(), value.clone());
    let report = rl::run_curriculum(&mut p, &mut v, embed, &data.train, &data.val, &cfg.rl, &mut rng, on_stage)?;
    Ok((p, v, report))
}

/// Every artifact of a complete run.
pub struct Trained {
    pub data: Dataset,
    pub models: ModelSet,
    pub embed_curve: EmbedCurve,
    pub policy_curve: Vec<f64>,
    pub value_curve: ValueCurve,
    pub rl_report: CurriculumReport,
}

/// Runs every stage in order. The policy-context value variants are only
/// trained when `with_hidden_variants` is set.
pub fn train_all(cfg: &RunConfig, with_hidden_variants: bool) -> Result<Trained> {
    cfg.validate()?;
    let data = generate_data(cfg)?;
    let (embed, embed_curve) = train_embed(cfg, &data)?;
    let (sl, policy_curve) = pretrain_policy(cfg, &data)?;
    let (raw, value_curve) = pretrain_value(cfg, &data, &sl, &embed, ValueVariant::Full)?;
    let (rlp, rlv, rl_report) = train_rl(cfg, &data, &sl, &raw, &embed, |_, _, _| Ok(()))?;
    let (hid_vn, hid_im_vn) = if with_hidden_variants {
        (
            Some(pretrain_value(cfg, &data, &sl, &embed, ValueVariant::HidVn)?.0),
            Some(pretrain_value(cfg, &data, &sl, &embed, ValueVariant::HidImVn)?.0),
        )
    } else {
        (None, None)
    };
    Ok(Trained {
        data,
        models: ModelSet {
            embed,
            sl_policy: sl,
            raw_value: Some(raw),
            rl_policy: Some(rlp),
            rl_value: Some(rlv),
            hid_vn,
            hid_im_vn,
        },
        embed_curve,
        policy_curve,
        value_curve,
        rl_report,
    })
}
