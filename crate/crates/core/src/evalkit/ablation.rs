use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{corpus_bleu, rouge_l};
use crate::critic::ValueNet;
use crate::decode::{embed_rerank, lookahead_beam_search, BeamConfig, DecodeModels, Hypothesis};
use crate::embedder::EmbedModel;
use crate::error::{Error, Result};
use crate::policy::PolicyNet;
use crate::sceneworld::{CaptionedExample, EOS};

/// The λ grid `0, 0.1, …, 1`.
pub fn lambda_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

pub const BEAM_GRID: [usize; 5] = [1, 3, 5, 10, 25];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "SL")]
    Sl,
    #[serde(rename = "SL-Embed")]
    SlEmbed,
    #[serde(rename = "SL-RawVN")]
    SlRawVn,
    #[serde(rename = "Full-model")]
    FullModel,
    #[serde(rename = "hid-VN")]
    HidVn,
    #[serde(rename = "hid-Im-VN")]
    HidImVn,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Sl,
        Variant::SlEmbed,
        Variant::SlRawVn,
        Variant::FullModel,
        Variant::HidVn,
        Variant::HidImVn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Sl => "SL",
            Variant::SlEmbed => "SL-Embed",
            Variant::SlRawVn => "SL-RawVN",
            Variant::FullModel => "Full-model",
            Variant::HidVn => "hid-VN",
            Variant::HidImVn => "hid-Im-VN",
        }
    }

    /// Whether the variant searches with a value network.
    pub fn uses_value(self) -> bool {
        !matches!(self, Variant::Sl | Variant::SlEmbed)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub variant: Variant,
    pub lambda: f64,
    pub beam: usize,
    pub seed: u64,
}

impl AblationConfig {
    /// Builds a config, forcing `λ = 1` for the variants without a value.
    pub fn new(variant: Variant, lambda: f64, beam: usize, seed: u64) -> Self {
        let lambda = if variant.uses_value() { lambda } else { 1.0 };
        Self {
            variant,
            lambda,
            beam,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.variant.uses_value() && self.lambda != 1.0 {
            return Err(Error::InvalidArgument(format!(
                "{} searches without a value network and needs lambda = 1",
                self.variant
            )));
        }
        BeamConfig::new(self.beam, self.lambda, 1).validate()
    }
}

/// Every trained model the ablation can draw on. Absent models are only an
/// error when a requested variant needs them.
pub struct ModelSet {
    pub embed: EmbedModel,
    pub sl_policy: PolicyNet,
    pub raw_value: Option<ValueNet>,
    pub rl_policy: Option<PolicyNet>,
    pub rl_value: Option<ValueNet>,
    pub hid_vn: Option<ValueNet>,
    pub hid_im_vn: Option<ValueNet>,
}

fn need<'a, T>(m: &'a Option<T>, name: &str) -> Result<&'a T> {
    m.as_ref().ok_or_else(|| Error::MissingCheckpoint(PathBuf::from(name)))
}

impl ModelSet {
    pub fn models_for(&self, variant: Variant) -> Result<(&PolicyNet, Option<&ValueNet>)> {
        Ok(match variant {
            Variant::Sl | Variant::SlEmbed => (&self.sl_policy, None),
            Variant::SlRawVn => (&self.sl_policy, Some(need(&self.raw_value, "value.lacp")?)),
            Variant::FullModel => (
                need(&self.rl_policy, "rl_policy.lacp")?,
                Some(need(&self.rl_value, "rl_value.lacp")?),
            ),
            Variant::HidVn => (&self.sl_policy, Some(need(&self.hid_vn, "value_hid_vn.lacp")?)),
            Variant::HidImVn => (&self.sl_policy, Some(need(&self.hid_im_vn, "value_hid_im_vn.lacp")?)),
        })
    }
}

/// A decoded caption for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Caption {
    pub scene_id: u64,
    pub hypothesis: Hypothesis,
    pub truncated: bool,
}

/// Decodes every example under `cfg`.
pub fn caption_examples(
    models: &ModelSet,
    cfg: &AblationConfig,
    examples: &[CaptionedExample],
    max_len: usize,
) -> Result<Vec<Caption>> {
    cfg.validate()?;
    let (policy, value) = models.models_for(cfg.variant)?;
    let dm = DecodeModels::new(policy, value)?;
    let beam = BeamConfig::new(cfg.beam, cfg.lambda, max_len);
    examples
        .iter()
        .map(|e| {
            let out = lookahead_beam_search(&dm.for_image(&e.feature)?, &beam)?;
            let hypothesis = if cfg.variant == Variant::SlEmbed && !out.truncated {
                embed_rerank(&out.ranked, &models.embed, &e.feature)?.clone()
            } else {
                out.best().clone()
            };
            Ok(Caption {
                scene_id: e.scene.scene_id,
                hypothesis,
                truncated: out.truncated,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub scene_id: u64,
    pub reward: f64,
    pub rouge_l: f64,
    pub truncated: bool,
}

/// BLEU-1..4, ROUGE-L and mean embedding reward of a captioned test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub mean_reward: f64,
    pub per_image: Vec<ImageScore>,
}

fn strip_eos(t: &[usize]) -> Vec<usize> {
    t.iter().copied().filter(|&w| w != EOS).collect()
}

pub fn score_captions(embed: &EmbedModel, examples: &[CaptionedExample], captions: &[Caption]) -> Result<MetricReport> {
    if captions.len() != examples.len() || captions.is_empty() {
        return Err(Error::InvalidArgument("one caption per example required".into()));
    }
    let cands: Vec<Vec<usize>> = captions.iter().map(|c| strip_eos(&c.hypothesis.tokens)).collect();
    let refs: Vec<Vec<Vec<usize>>> = examples
        .iter()
        .map(|e| e.references.iter().map(|r| strip_eos(r)).collect())
        .collect();
    let mut bleu = [0.0; 4];
    for (n, b) in bleu.iter_mut().enumerate() {
        *b = corpus_bleu(&cands, &refs, n + 1)?;
    }
    let mut per_image = Vec::with_capacity(captions.len());
    for ((c, e), (cand, r)) in captions.iter().zip(examples).zip(cands.iter().zip(&refs)) {
        per_image.push(ImageScore {
            scene_id: c.scene_id,
            reward: embed.reward(&e.feature, &c.hypothesis.tokens)?,
            rouge_l: rouge_l(std::slice::from_ref(cand), std::slice::from_ref(r))?,
            truncated: c.truncated,
        });
    }
    Ok(MetricReport {
        bleu,
        rouge_l: rouge_l(&cands, &refs)?,
        mean_reward: per_image.iter().map(|s| s.reward).sum::<f64>() / per_image.len() as f64,
        per_image,
    })
}

pub fn evaluate_config(
    models: &ModelSet,
    cfg: &AblationConfig,
    examples: &[CaptionedExample],
    max_len: usize,
) -> Result<MetricReport> {
    let caps = caption_examples(models, cfg, examples, max_len)?;
    score_captions(&models.embed, examples, &caps)
}

/// One line of a comparison table or sweep curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: Variant,
    pub lambda: f64,
    pub beam: usize,
    pub seed: u64,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub mean_reward: f64,
}

impl ReportRow {
    pub fn new(cfg: &AblationConfig, r: &MetricReport) -> Self {
        Self {
            variant: cfg.variant,
            lambda: cfg.lambda,
            beam: cfg.beam,
            seed: cfg.seed,
            bleu1: r.bleu[0],
            bleu2: r.bleu[1],
            bleu3: r.bleu[2],
            bleu4: r.bleu[3],
            rouge_l: r.rouge_l,
            mean_reward: r.mean_reward,
        }
    }
}

pub fn run_ablation(
    models: &ModelSet,
    configs: &[AblationConfig],
    examples: &[CaptionedExample],
    max_len: usize,
) -> Result<Vec<ReportRow>> {
    for c in configs {
        c.validate()?;
        models.models_for(c.variant)?;
    }
    configs
        .iter()
        .map(|c| Ok(ReportRow::new(c, &evaluate_config(models, c, examples, max_len)?)))
        .collect()
}

pub fn lambda_sweep(
    models: &ModelSet,
    variant: Variant,
    beam: usize,
    seed: u64,
    examples: &[CaptionedExample],
    max_len: usize,
) -> Result<Vec<ReportRow>> {
    let configs: Vec<_> = lambda_grid()
        .into_iter()
        .map(|l| AblationConfig::new(variant, l, beam, seed))
        .collect();
    run_ablation(models, &configs, examples, max_len)
}

pub fn beam_sweep(
    models: &ModelSet,
    variant: Variant,
    lambda: f64,
    seed: u64,
    examples: &[CaptionedExample],
    max_len: usize,
) -> Result<Vec<ReportRow>> {
    let configs: Vec<_> = BEAM_GRID
        .iter()
        .map(|&b| AblationConfig::new(variant, lambda, b, seed))
        .collect();
    run_ablation(models, &configs, examples, max_len)
}

pub fn write_rows_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn markdown_table(rows: &[ReportRow]) -> String {
    let mut s = String::from(
        "| variant | λ | B | seed | BLEU-1 | BLEU-2 | BLEU-3 | BLEU-4 | ROUGE-L | reward |\n\
         |---|---|---|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        s.push_str(&format!(
            "| {} | {:.1} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
            r.variant, r.lambda, r.beam, r.seed, r.bleu1, r.bleu2, r.bleu3, r.bleu4, r.rouge_l, r.mean_reward
        ));
    }
    s
}
