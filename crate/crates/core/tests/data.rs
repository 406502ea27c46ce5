use std::collections::HashSet;
use std::io::Cursor;

use lookahead_caption::sceneworld::{
    canonical_caption, parse_caption, read_jsonl, realize_captions, vocab_from_json, vocab_to_json, write_jsonl,
    DataConfig, Dataset, Scene, Vocab, MAX_CAPTION_LEN,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(seed: u64) -> DataConfig {
    DataConfig {
        seed,
        n_train: 40,
        n_val: 10,
        n_test: 10,
        ..DataConfig::default()
    }
}

#[test]
fn generation_is_a_function_of_the_config() {
    let a = small(3).generate().unwrap();
    let b = small(3).generate().unwrap();
    let c = small(4).generate().unwrap();
    assert_eq!(a, b);
    assert_ne!(a.train, c.train);
}

#[test]
fn splits_are_disjoint_and_sized() {
    let d = small(5).generate().unwrap();
    assert_eq!((d.train.len(), d.val.len(), d.test.len()), (40, 10, 10));
    let mut seen = HashSet::new();
    for e in d.train.iter().chain(&d.val).chain(&d.test) {
        assert!(seen.insert(e.scene.scene_id), "scene {} repeated", e.scene.scene_id);
    }
}

#[test]
fn files_round_trip() {
    let d = small(6).generate().unwrap();
    let dir = tempfile::tempdir().unwrap();
    d.save(dir.path()).unwrap();
    for f in ["vocab.json", "train.jsonl", "val.jsonl", "test.jsonl"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(Dataset::load(dir.path()).unwrap(), d);

    let vocab = Vocab::standard();
    assert_eq!(vocab_from_json(&vocab_to_json(&vocab).unwrap()).unwrap(), vocab);
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &d.test, &vocab).unwrap();
    assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), d.test.len());
    assert_eq!(read_jsonl(Cursor::new(buf), &vocab).unwrap(), d.test);
}

#[test]
fn missing_or_broken_files_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(Dataset::load(dir.path()).is_err());
    let vocab = Vocab::standard();
    assert!(read_jsonl(Cursor::new(b"{not json}\n".to_vec()), &vocab).is_err());
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &small(7).generate().unwrap().test[..1], &vocab).unwrap();
    let bad = String::from_utf8(buf).unwrap().replace("\"ball\"", "\"zeppelin\"");
    if bad.contains("zeppelin") {
        assert!(read_jsonl(Cursor::new(bad.into_bytes()), &vocab).is_err());
    }
}

proptest! {
    #[test]
    fn every_reference_parses_back_to_its_scene(seed in any::<u64>(), grammar_seed in 0u64..100) {
        let scene = Scene::random(&mut ChaCha8Rng::seed_from_u64(seed));
        let refs = realize_captions(&scene, grammar_seed);
        prop_assert_eq!(&refs[0], &canonical_caption(&scene));
        let distinct: HashSet<_> = refs.iter().collect();
        prop_assert_eq!(distinct.len(), refs.len());
        for r in &refs {
            prop_assert!(r.len() <= MAX_CAPTION_LEN);
            let (objects, relation) = parse_caption(r).expect("grammar output parses");
            prop_assert_eq!(&objects, &scene.objects);
            prop_assert_eq!(relation, scene.relation);
        }
        prop_assert_eq!(realize_captions(&scene, grammar_seed), refs);
    }

    #[test]
    fn scene_ids_are_canonical(seed in any::<u64>()) {
        let scene = Scene::random(&mut ChaCha8Rng::seed_from_u64(seed));
        let again = Scene::new(scene.objects.clone(), scene.relation).unwrap();
        prop_assert_eq!(again.scene_id, scene.scene_id);
        prop_assert!(scene.scene_id < Scene::capacity());
    }
}
