//! Synthetic captioning world: symbolic scenes, a frozen feature encoder
//! and a caption grammar with several references per scene.

mod dataset;
mod encoder;
mod grammar;
mod scene;
mod vocab;

pub use dataset::{
    generate_dataset, read_jsonl, vocab_from_json, vocab_to_json, write_jsonl, CaptionedExample, DataConfig,
    Dataset, SPLITS,
};
pub use encoder::{encode_scene, one_hot, ImageFeature, SceneEncoder, FEATURE_DIM, ONE_HOT_DIM};
pub use grammar::{
    canonical_caption, color_words, parse_caption, realize_captions, relation_phrases, shape_words, size_words, LEXICON,
    MAX_CAPTION_LEN, NUM_REFERENCES,
};
pub use scene::{Color, Relation, Scene, SceneObject, Shape, Size, OBJECT_KINDS};
pub use vocab::{is_action, Vocab, EOS, EOS_TOKEN, PAD, PAD_TOKEN, UNK, UNK_TOKEN};
