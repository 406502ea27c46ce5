//! Captioning metrics and the harness comparing model variants.

mod ablation;
mod metrics;

pub use ablation::{
    beam_sweep, caption_examples, evaluate_config, lambda_grid, lambda_sweep, markdown_table, run_ablation,
    score_captions, write_rows_csv, AblationConfig, Caption, ImageScore, MetricReport, ModelSet, ReportRow, Variant,
    BEAM_GRID,
};
pub use metrics::{corpus_bleu, lcs_len, rouge_l, rouge_l_pair, spearman};
