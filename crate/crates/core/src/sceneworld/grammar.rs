use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scene::{Color, Relation, Scene, SceneObject, Shape, Size};
use super::vocab::EOS_TOKEN;

/// Longest reference, counting the final `<eos>`.
pub const MAX_CAPTION_LEN: usize = 12;
/// References produced per scene.
pub const NUM_REFERENCES: usize = 5;

/// Every word the grammar can emit, in vocabulary order.
pub const LEXICON: &[&str] = &[
    "a", "one", "there", "is", //
    "small", "little", "tiny", "mini", "big", "large", "huge", "giant", //
    "red", "crimson", "green", "blue", "azure", "yellow", "purple", "violet", "orange", //
    "ball", "sphere", "orb", "cube", "block", "box", "cone", "cylinder", "tube", "can", "pyramid",
    "ring", "hoop", "loop", "star", "disk", "disc", "plate", //
    "left", "of", "to", "the", "on", "top", "atop", "near", "beside", "next", "by", //
    "and", "with",
];

pub fn size_words(s: Size) -> &'static [&'static str] {
    match s {
        Size::Small => &["small", "little", "tiny", "mini"],
        Size::Big => &["big", "large", "huge", "giant"],
    }
}

pub fn color_words(c: Color) -> &'static [&'static str] {
    match c {
        Color::Red => &["red", "crimson"],
        Color::Green => &["green"],
        Color::Blue => &["blue", "azure"],
        Color::Yellow => &["yellow"],
        Color::Purple => &["purple", "violet"],
        Color::Orange => &["orange"],
    }
}

pub fn shape_words(s: Shape) -> &'static [&'static str] {
    match s {
        Shape::Ball => &["ball", "sphere", "orb"],
        Shape::Cube => &["cube", "block", "box"],
        Shape::Cone => &["cone"],
        Shape::Cylinder => &["cylinder", "tube", "can"],
        Shape::Pyramid => &["pyramid"],
        Shape::Ring => &["ring", "hoop", "loop"],
        Shape::Star => &["star"],
        Shape::Disk => &["disk", "disc", "plate"],
    }
}

pub fn relation_phrases(r: Relation) -> &'static [&'static [&'static str]] {
    match r {
        Relation::LeftOf => &[&["left", "of"], &["to", "the", "left", "of"]],
        Relation::On => &[&["on"], &["on", "top", "of"], &["atop"]],
        Relation::Near => &[&["near"], &["beside"], &["next", "to"], &["by"]],
        Relation::None => &[],
    }
}

const CONNECTIVES: &[&str] = &["and", "with"];

fn scene_rng(scene: &Scene, grammar_seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(grammar_seed ^ scene.scene_id.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[derive(Clone, Copy)]
struct Choices<'a> {
    intro: bool,
    article: Option<&'static str>,
    relation: &'a [&'static str],
    connective: &'static str,
}

fn build(scene: &Scene, ch: Choices<'_>, mut word: impl FnMut(&'static [&'static str]) -> &'static str) -> Vec<&'static str> {
    let mut out = Vec::with_capacity(16);
    if ch.intro {
        out.extend(["there", "is"]);
    }
    for (k, o) in scene.objects.iter().enumerate() {
        match k {
            1 => out.extend(ch.relation),
            2 => out.push(ch.connective),
            _ => {}
        }
        if let Some(a) = ch.article {
            out.push(if k == 0 { a } else { "a" });
        }
        out.push(word(size_words(o.size)));
        out.push(word(color_words(o.color)));
        out.push(word(shape_words(o.shape)));
    }
    out.push(EOS_TOKEN);
    out
}

/// The reference using the first synonym of every attribute, with the
/// article "a" and the longest relation phrase that fits.
pub fn canonical_caption(scene: &Scene) -> Vec<&'static str> {
    let phrases: &[&[&str]] = match scene.relation {
        Relation::None => &[&[]],
        r => relation_phrases(r),
    };
    let mut best: Option<Vec<&'static str>> = None;
    for article in [Some("a"), None] {
        for p in phrases {
            let ch = Choices {
                intro: false,
                article,
                relation: p,
                connective: CONNECTIVES[0],
            };
            let c = build(scene, ch, |ws| ws[0]);
            if c.len() <= MAX_CAPTION_LEN && best.as_ref().is_none_or(|b| c.len() > b.len()) {
                best = Some(c);
            }
        }
        if best.is_some() {
            break;
        }
    }
    best.expect("every scene has a caption within the length budget")
}

fn sample_caption(scene: &Scene, rng: &mut impl Rng) -> Vec<&'static str> {
    let intro = scene.objects.len() < 3 && rng.random_bool(0.25);
    let u: f64 = rng.random();
    let article = if u < 0.6 {
        Some("a")
    } else if u < 0.75 {
        Some("one")
    } else {
        None
    };
    let relation: &[&str] = match scene.relation {
        Relation::None => &[],
        r => relation_phrases(r).choose(rng).expect("nonempty"),
    };
    let connective = CONNECTIVES.choose(rng).expect("nonempty");
    let ch = Choices {
        intro,
        article,
        relation,
        connective,
    };
    build(scene, ch, |ws| ws.choose(rng).expect("nonempty"))
}

/// Distinct reference captions for `scene`, each ending in `<eos>` and at
/// most [`MAX_CAPTION_LEN`] tokens long. Deterministic in
/// `(scene attributes, grammar_seed)`. The first reference is always
/// [`canonical_caption`].
pub fn realize_captions(scene: &Scene, grammar_seed: u64) -> Vec<Vec<&'static str>> {
    let mut rng = scene_rng(scene, grammar_seed);
    let mut refs: Vec<Vec<&'static str>> = vec![canonical_caption(scene)];
    for _ in 0..100_000 {
        let c = sample_caption(scene, &mut rng);
        if c.len() <= MAX_CAPTION_LEN && !refs.contains(&c) {
            refs.push(c);
            if refs.len() == NUM_REFERENCES {
                break;
            }
        }
    }
    assert_eq!(refs.len(), NUM_REFERENCES, "grammar could not realize {scene:?}");
    refs
}

struct Cursor<'a, S> {
    tokens: &'a [S],
    pos: usize,
}

impl<S: AsRef<str>> Cursor<'_, S> {
    fn peek(&self, k: usize) -> Option<&str> {
        self.tokens.get(self.pos + k).map(|s| s.as_ref())
    }

    fn eat(&mut self, word: &str) -> bool {
        if self.peek(0) == Some(word) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_phrase(&mut self, phrase: &[&str]) -> bool {
        if phrase.iter().enumerate().all(|(k, w)| self.peek(k) == Some(*w)) {
            self.pos += phrase.len();
            true
        } else {
            false
        }
    }

    fn pick<T: Copy>(&mut self, options: &[T], words: impl Fn(T) -> &'static [&'static str]) -> Option<T> {
        let w = self.peek(0)?;
        let hit = options.iter().copied().find(|&o| words(o).contains(&w))?;
        self.pos += 1;
        Some(hit)
    }

    fn object(&mut self) -> Option<SceneObject> {
        let _ = self.eat("a") || self.eat("one");
        let size = self.pick(&Size::ALL, size_words)?;
        let color = self.pick(&Color::ALL, color_words)?;
        let shape = self.pick(&Shape::ALL, shape_words)?;
        Some(SceneObject { shape, color, size })
    }

    fn relation(&mut self) -> Option<Relation> {
        let mut best: Option<(usize, Relation)> = None;
        for r in Relation::PAIR {
            for p in relation_phrases(r) {
                let matches = p.iter().enumerate().all(|(k, w)| self.peek(k) == Some(*w));
                if matches && best.is_none_or(|(len, _)| p.len() > len) {
                    best = Some((p.len(), r));
                }
            }
        }
        let (len, r) = best?;
        self.pos += len;
        Some(r)
    }
}

/// Recovers `(objects, relation)` from a caption produced by the grammar.
/// A trailing `<eos>` is optional.
pub fn parse_caption<S: AsRef<str>>(tokens: &[S]) -> Option<(Vec<SceneObject>, Relation)> {
    let mut c = Cursor { tokens, pos: 0 };
    c.eat_phrase(&["there", "is"]);
    let mut objects = vec![c.object()?];
    let mut relation = Relation::None;
    if c.peek(0).is_some_and(|w| w != EOS_TOKEN) {
        relation = c.relation()?;
        objects.push(c.object()?);
        if c.eat("and") || c.eat("with") {
            objects.push(c.object()?);
        }
    }
    c.eat(EOS_TOKEN);
    (c.pos == tokens.len()).then_some((objects, relation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sceneworld::vocab::Vocab;

    #[test]
    fn single_red_small_ball() {
        let o = SceneObject {
            shape: Shape::Ball,
            color: Color::Red,
            size: Size::Small,
        };
        let scene = Scene::new(vec![o], Relation::None).unwrap();
        let refs = realize_captions(&scene, 0);
        assert_eq!(refs.len(), NUM_REFERENCES);
        for r in &refs {
            assert!(r.iter().any(|w| color_words(Color::Red).contains(w)));
            assert!(r.iter().any(|w| shape_words(Shape::Ball).contains(w)));
            assert_eq!(*r.last().unwrap(), EOS_TOKEN);
        }
        assert_eq!(refs[0], ["a", "small", "red", "ball", "<eos>"]);
    }

    #[test]
    fn lexicon_covers_every_table() {
        let v = Vocab::standard();
        let all = Shape::ALL
            .iter()
            .flat_map(|&s| shape_words(s).iter())
            .chain(Color::ALL.iter().flat_map(|&c| color_words(c).iter()))
            .chain(Size::ALL.iter().flat_map(|&s| size_words(s).iter()))
            .chain(Relation::ALL.iter().flat_map(|&r| relation_phrases(r).iter().flat_map(|p| p.iter())))
            .chain(CONNECTIVES.iter());
        for w in all {
            assert!(v.id(w).is_some(), "{w}");
        }
    }

    #[test]
    fn parser_rejects_garbage() {
        assert!(parse_caption(&["red", "ball"]).is_none());
        assert!(parse_caption(&["a", "big", "red", "ball", "ball"]).is_none());
        assert!(parse_caption::<&str>(&[]).is_none());
    }
}
