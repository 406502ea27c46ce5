use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use lookahead_caption::checkpoint::Persist;
use lookahead_caption::config::RunConfig;
use lookahead_caption::critic::{self, ValueNet, ValueVariant};
use lookahead_caption::decode::{greedy_decode, DecodeModels, Hypothesis};
use lookahead_caption::embedder::{self, EmbedModel};
use lookahead_caption::evalkit::{
    self, AblationConfig, Caption, ModelSet, ReportRow, Variant,
};
use lookahead_caption::gradsuite;
use lookahead_caption::pipeline::{self, stage_rng};
use lookahead_caption::policy::PolicyNet;
use lookahead_caption::rl;
use lookahead_caption::sceneworld::{CaptionedExample, Dataset, Vocab};
use lookahead_caption::Error;

const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Parser)]
#[command(name = "lacap", version, about = "Policy/value image captioning on a synthetic scene world")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults are used for absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory holding data, checkpoints and reports.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Overrides the config's training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the decoder's policy weight λ.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Overrides the decoder's beam width.
    #[arg(long, global = true)]
    beam: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and vocabulary.
    GenData,
    /// Train the visual-semantic embedding that supplies rewards.
    TrainEmbed,
    /// Supervised cross-entropy pretraining of the policy.
    PretrainPolicy,
    /// Regress rollout rewards with a value network.
    PretrainValue {
        #[arg(long, default_value = "full")]
        variant: ValueVariant,
    },
    /// Actor-critic fine-tuning of policy and value with the curriculum.
    TrainRl,
    /// Caption a split and write JSON Lines.
    Caption {
        #[arg(long, default_value = "Full-model")]
        variant: Variant,
        #[arg(long, default_value = "test")]
        split: String,
        /// Greedy decoding with the variant's policy.
        #[arg(long)]
        greedy: bool,
        /// Include per-step log-probabilities and values.
        #[arg(long)]
        trace: bool,
    },
    /// Score every available variant on the test split.
    Evaluate {
        /// Restrict the report to one variant.
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// λ and beam-width sweeps for one variant.
    Sweep {
        #[arg(long, default_value = "Full-model")]
        variant: Variant,
    },
    /// Finite-difference check of every model's gradients.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainEmbed => "train-embed",
            Command::PretrainPolicy => "pretrain-policy",
            Command::PretrainValue { .. } => "pretrain-value",
            Command::TrainRl => "train-rl",
            Command::Caption { .. } => "caption",
            Command::Evaluate { .. } => "evaluate",
            Command::Sweep { .. } => "sweep",
            Command::Gradcheck { .. } => "gradcheck",
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    git_describe: String,
    config: &'a RunConfig,
    metrics: Value,
    artifacts: Vec<String>,
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

fn producer(file: &str) -> &'static str {
    match file {
        "vocab.json" | "train.jsonl" | "val.jsonl" | "test.jsonl" => "gen-data",
        "embed.lacp" => "train-embed",
        "policy.lacp" => "pretrain-policy",
        "value.lacp" => "pretrain-value",
        "value_hid_vn.lacp" => "pretrain-value --variant hid-VN",
        "value_hid_im_vn.lacp" => "pretrain-value --variant hid-Im-VN",
        "rl_policy.lacp" | "rl_value.lacp" => "train-rl",
        _ => "the upstream stage",
    }
}

/// Adds the command that produces a missing input to the error.
fn explain(e: Error) -> anyhow::Error {
    if let Error::MissingCheckpoint(p) = &e {
        let file = p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        return anyhow::anyhow!("{e}; run `lacap {}` first with the same --out", producer(&file));
    }
    e.into()
}

struct Run {
    cfg: RunConfig,
    out: PathBuf,
    artifacts: Vec<String>,
}

impl Run {
    fn new(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = common.seed {
            cfg.seed = s;
        }
        if let Some(l) = common.lambda {
            cfg.decode.lambda = l;
        }
        if let Some(b) = common.beam {
            cfg.decode.beam = b;
        }
        cfg.validate()?;
        fs::create_dir_all(&common.out).with_context(|| format!("cannot create {}", common.out.display()))?;
        Ok(Self {
            cfg,
            out: common.out.clone(),
            artifacts: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn record(&mut self, p: &Path) {
        self.artifacts.push(p.display().to_string());
    }

    fn data(&self) -> Result<Dataset> {
        Dataset::load(&self.path("data")).map_err(explain)
    }

    /// Header snapshot stored in every checkpoint. It carries nothing that
    /// varies between identical runs.
    fn snapshot(&self, command: &str) -> Result<Value> {
        Ok(json!({ "command": command, "seed": self.cfg.seed, "config": serde_json::to_value(&self.cfg)? }))
    }

    fn save<M: Persist>(&mut self, m: &M, name: &str, command: &str) -> Result<()> {
        let p = self.path(name);
        m.save_checkpoint(&p, self.snapshot(command)?)?;
        self.record(&p);
        Ok(())
    }

    fn load<M: Persist>(&self, name: &str) -> Result<M> {
        M::load_checkpoint(&self.path(name)).map_err(explain)
    }

    fn load_optional<M: Persist>(&self, name: &str) -> Result<Option<M>> {
        match M::load_checkpoint(&self.path(name)) {
            Ok(m) => Ok(Some(m)),
            Err(Error::MissingCheckpoint(_)) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn models(&self) -> Result<ModelSet> {
        Ok(ModelSet {
            embed: self.load("embed.lacp")?,
            sl_policy: self.load("policy.lacp")?,
            raw_value: self.load_optional("value.lacp")?,
            rl_policy: self.load_optional("rl_policy.lacp")?,
            rl_value: self.load_optional("rl_value.lacp")?,
            hid_vn: self.load_optional("value_hid_vn.lacp")?,
            hid_im_vn: self.load_optional("value_hid_im_vn.lacp")?,
        })
    }

    fn finish(mut self, command: &str, metrics: Value) -> Result<()> {
        let dir = self.path("manifests");
        fs::create_dir_all(&dir)?;
        let p = dir.join(format!("{command}.json"));
        self.artifacts.push(p.display().to_string());
        let m = Manifest {
            command,
            seed: self.cfg.seed,
            git_describe: git_describe(),
            config: &self.cfg,
            metrics,
            artifacts: self.artifacts.clone(),
        };
        fs::write(&p, serde_json::to_string_pretty(&m)?)?;
        Ok(())
    }
}

fn value_file(v: ValueVariant) -> &'static str {
    match v {
        ValueVariant::Full => "value.lacp",
        ValueVariant::HidVn => "value_hid_vn.lacp",
        ValueVariant::HidImVn => "value_hid_im_vn.lacp",
    }
}

fn last(xs: &[f64]) -> Option<f64> {
    xs.last().copied()
}

fn gen_data(run: &mut Run) -> Result<Value> {
    let data = pipeline::generate_data(&run.cfg)?;
    let dir = run.path("data");
    data.save(&dir)?;
    run.record(&dir);
    println!(
        "{} train / {} val / {} test scenes, vocabulary of {}",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        data.vocab.len()
    );
    Ok(json!({
        "train": data.train.len(), "val": data.val.len(), "test": data.test.len(),
        "vocab": data.vocab.len(), "max_reference_len": data.max_reference_len(),
    }))
}

fn train_embed(run: &mut Run) -> Result<Value> {
    let data = run.data()?;
    let (model, curve) = pipeline::train_embed(&run.cfg, &data)?;
    run.save(&model, "embed.lacp", "train-embed")?;
    let recall = embedder::recall_at_1(&model, &data.test)?;
    let pref = embedder::paired_preference(&model, &data.test, &mut stage_rng(run.cfg.seed, "embed-eval"))?;
    println!("test recall@1 {recall:.3}, ground truth preferred on {:.1}% of images", 100.0 * pref);
    Ok(json!({
        "train_loss": curve.train_loss, "heldout_loss": curve.heldout_loss,
        "test_recall_at_1": recall, "test_paired_preference": pref,
    }))
}

fn pretrain_policy(run: &mut Run) -> Result<Value> {
    let data = run.data()?;
    let (policy, curve) = pipeline::pretrain_policy(&run.cfg, &data)?;
    run.save(&policy, "policy.lacp", "pretrain-policy")?;
    let val = policy.mean_xent(&data.val)?;
    println!("final train cross-entropy {:.3}, validation {val:.3}", last(&curve).unwrap_or(f64::NAN));
    Ok(json!({ "train_xent": curve, "val_xent": val }))
}

fn pretrain_value(run: &mut Run, variant: ValueVariant) -> Result<Value> {
    let data = run.data()?;
    let policy: PolicyNet = run.load("policy.lacp")?;
    let embed: EmbedModel = run.load("embed.lacp")?;
    let (value, curve) = pipeline::pretrain_value(&run.cfg, &data, &policy, &embed, variant)?;
    run.save(&value, value_file(variant), "pretrain-value")?;
    let mut rng = stage_rng(run.cfg.seed, "value-eval");
    let (pred, real) = critic::penultimate_pairs(&value, &policy, &embed, &data.val, 2, run.cfg.value.max_len, &mut rng)?;
    let rho = evalkit::spearman(&pred, &real)?;
    println!(
        "{variant}: held-out MSE {:.4} (zero predictor {:.4}), penultimate-step Spearman {rho:.3}",
        last(&curve.heldout_mse).unwrap_or(f64::NAN),
        curve.zero_mse
    );
    Ok(json!({
        "variant": variant.as_str(), "train_mse": curve.train_mse, "heldout_mse": curve.heldout_mse,
        "zero_mse": curve.zero_mse, "penultimate_spearman": rho,
    }))
}

fn train_rl(run: &mut Run) -> Result<Value> {
    let data = run.data()?;
    let policy: PolicyNet = run.load("policy.lacp")?;
    let value: ValueNet = run.load("value.lacp")?;
    let embed: EmbedModel = run.load("embed.lacp")?;
    let stage_dir = run.path("rl");
    fs::create_dir_all(&stage_dir)?;
    let snapshot = run.snapshot("train-rl")?;
    let mut stage_files = Vec::new();
    let (p, v, report) = pipeline::train_rl(&run.cfg, &data, &policy, &value, &embed, |i, p, v| {
        let pp = stage_dir.join(format!("stage_{i:02}_policy.lacp"));
        let vp = stage_dir.join(format!("stage_{i:02}_value.lacp"));
        p.save_checkpoint(&pp, snapshot.clone())?;
        v.save_checkpoint(&vp, snapshot.clone())?;
        stage_files.extend([pp, vp]);
        Ok(())
    })?;
    for f in &stage_files {
        run.record(f);
    }
    run.save(&p, "rl_policy.lacp", "train-rl")?;
    run.save(&v, "rl_value.lacp", "train-rl")?;
    let log = run.path("rl_log.csv");
    rl::write_log_csv(&log, &report.log)?;
    run.record(&log);
    for (i, r) in report.stage_rewards.iter().enumerate() {
        println!("after stage {i}: greedy validation reward {r:.4}");
    }
    Ok(json!({ "stages_run": report.stages_run, "greedy_val_reward_by_stage": report.stage_rewards }))
}

#[derive(Serialize)]
struct TraceRecord {
    word: String,
    logp: f64,
    value: Option<f64>,
}

#[derive(Serialize)]
struct CaptionRecord {
    scene_id: u64,
    caption: Vec<String>,
    score: f64,
    truncated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<Vec<TraceRecord>>,
}

fn words(vocab: &Vocab, tokens: &[usize]) -> Vec<String> {
    tokens.iter().map(|&t| vocab.token(t).unwrap_or("<?>").to_string()).collect()
}

fn record(vocab: &Vocab, scene_id: u64, h: &Hypothesis, truncated: bool, trace: bool) -> CaptionRecord {
    CaptionRecord {
        scene_id,
        caption: words(vocab, &h.tokens),
        score: h.score,
        truncated,
        trace: trace.then(|| {
            h.steps
                .iter()
                .map(|s| TraceRecord {
                    word: vocab.token(s.word).unwrap_or("<?>").to_string(),
                    logp: s.logp,
                    value: s.value,
                })
                .collect()
        }),
    }
}

fn greedy_captions(models: &ModelSet, variant: Variant, examples: &[CaptionedExample], max_len: usize) -> Result<Vec<Caption>> {
    let (policy, _) = models.models_for(variant).map_err(explain)?;
    let dm = DecodeModels::new(policy, None)?;
    examples
        .iter()
        .map(|e| {
            let out = greedy_decode(&dm.for_image(&e.feature)?, max_len)?;
            Ok(Caption {
                scene_id: e.scene.scene_id,
                hypothesis: out.best().clone(),
                truncated: out.truncated,
            })
        })
        .collect()
}

fn caption(run: &mut Run, variant: Variant, split: &str, greedy: bool, trace: bool) -> Result<Value> {
    let data = run.data()?;
    let models = run.models()?;
    let examples = data.split(split)?;
    let d = &run.cfg.decode;
    let ab = AblationConfig::new(variant, d.lambda, d.beam, run.cfg.seed);
    let caps = if greedy {
        greedy_captions(&models, variant, examples, d.max_len)?
    } else {
        evalkit::caption_examples(&models, &ab, examples, d.max_len).map_err(explain)?
    };
    let p = run.path("captions.jsonl");
    let mut w = BufWriter::new(File::create(&p)?);
    for c in &caps {
        serde_json::to_writer(&mut w, &record(&data.vocab, c.scene_id, &c.hypothesis, c.truncated, trace))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    run.record(&p);
    let report = evalkit::score_captions(&models.embed, examples, &caps)?;
    println!(
        "{} captions for {split}: BLEU-4 {:.4}, ROUGE-L {:.4}, mean reward {:.4}",
        caps.len(),
        report.bleu[3],
        report.rouge_l,
        report.mean_reward
    );
    Ok(json!({
        "variant": variant.as_str(), "split": split, "greedy": greedy,
        "lambda": ab.lambda, "beam": ab.beam,
        "bleu": report.bleu, "rouge_l": report.rouge_l, "mean_reward": report.mean_reward,
        "truncated": caps.iter().filter(|c| c.truncated).count(),
    }))
}

fn write_tables(run: &mut Run, stem: &str, rows: &[ReportRow]) -> Result<()> {
    let csv = run.path(&format!("{stem}.csv"));
    evalkit::write_rows_csv(&csv, rows)?;
    let md = run.path(&format!("{stem}.md"));
    fs::write(&md, evalkit::markdown_table(rows))?;
    run.record(&csv);
    run.record(&md);
    Ok(())
}

fn evaluate(run: &mut Run, only: Option<Variant>) -> Result<Value> {
    let data = run.data()?;
    let models = run.models()?;
    let d = run.cfg.decode.clone();
    let variants: Vec<Variant> = match only {
        Some(v) => vec![v],
        None => Variant::ALL
            .into_iter()
            .filter(|&v| models.models_for(v).is_ok())
            .collect(),
    };
    let configs: Vec<AblationConfig> = variants
        .iter()
        .map(|&v| AblationConfig::new(v, d.lambda, d.beam, run.cfg.seed))
        .collect();
    let rows = evalkit::run_ablation(&models, &configs, &data.test, d.max_len).map_err(explain)?;
    write_tables(run, "report", &rows)?;
    print!("{}", evalkit::markdown_table(&rows));
    Ok(serde_json::to_value(&rows)?)
}

fn sweep(run: &mut Run, variant: Variant) -> Result<Value> {
    let data = run.data()?;
    let models = run.models()?;
    let d = run.cfg.decode.clone();
    let seed = run.cfg.seed;
    let lambda_rows = if variant.uses_value() {
        let rows = evalkit::lambda_sweep(&models, variant, d.beam, seed, &data.test, d.max_len).map_err(explain)?;
        write_tables(run, "sweep_lambda", &rows)?;
        print!("{}", evalkit::markdown_table(&rows));
        rows
    } else {
        Vec::new()
    };
    let beam_rows = evalkit::beam_sweep(&models, variant, d.lambda, seed, &data.test, d.max_len).map_err(explain)?;
    write_tables(run, "sweep_beam", &beam_rows)?;
    print!("{}", evalkit::markdown_table(&beam_rows));
    Ok(json!({ "lambda": lambda_rows, "beam": beam_rows }))
}

fn gradcheck(run: &mut Run, seeds: u64) -> Result<(Value, bool)> {
    let rows = gradsuite::run_suite(seeds)?;
    let mut ok = true;
    for r in &rows {
        let pass = r.max_relative_error <= GRADCHECK_TOLERANCE;
        ok &= pass;
        println!(
            "{:<16} max relative error {:.3e} over {} seeds  {}",
            r.model,
            r.max_relative_error,
            r.seeds,
            if pass { "ok" } else { "FAIL" }
        );
    }
    let p = run.path("gradcheck.csv");
    evalkit::write_rows_csv(&p, &rows)?;
    run.record(&p);
    Ok((json!({ "tolerance": GRADCHECK_TOLERANCE, "passed": ok, "models": rows }), ok))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    let mut run = Run::new(&cli.common)?;
    let name = cli.command.name();
    let mut ok = true;
    let metrics = match cli.command {
        Command::GenData => gen_data(&mut run)?,
        Command::TrainEmbed => train_embed(&mut run)?,
        Command::PretrainPolicy => pretrain_policy(&mut run)?,
        Command::PretrainValue { variant } => pretrain_value(&mut run, variant)?,
        Command::TrainRl => train_rl(&mut run)?,
        Command::Caption {
            variant,
            split,
            greedy,
            trace,
        } => caption(&mut run, variant, &split, greedy, trace)?,
        Command::Evaluate { variant } => evaluate(&mut run, variant)?,
        Command::Sweep { variant } => sweep(&mut run, variant)?,
        Command::Gradcheck { seeds } => {
            if seeds == 0 {
                bail!("--seeds must be positive");
            }
            let (m, passed) = gradcheck(&mut run, seeds)?;
            ok = passed;
            m
        }
    };
    run.finish(name, metrics)?;
    Ok(ok)
}
