use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Ball,
    Cube,
    Cone,
    Cylinder,
    Pyramid,
    Ring,
    Star,
    Disk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Purple,
    Orange,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Size {
    Small,
    Big,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    LeftOf,
    On,
    Near,
    None,
}

impl Shape {
    pub const ALL: [Shape; 8] = [
        Shape::Ball,
        Shape::Cube,
        Shape::Cone,
        Shape::Cylinder,
        Shape::Pyramid,
        Shape::Ring,
        Shape::Star,
        Shape::Disk,
    ];
}

impl Color {
    pub const ALL: [Color; 6] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Purple,
        Color::Orange,
    ];
}

impl Size {
    pub const ALL: [Size; 2] = [Size::Small, Size::Big];
}

impl Relation {
    pub const ALL: [Relation; 4] = [Relation::LeftOf, Relation::On, Relation::Near, Relation::None];
    /// Relations available to two-object scenes.
    pub const PAIR: [Relation; 3] = [Relation::LeftOf, Relation::On, Relation::Near];
    /// Relations available to three-object scenes, whose captions must fit
    /// the length budget with a single-token relation word.
    pub const TRIPLE: [Relation; 2] = [Relation::On, Relation::Near];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: Color,
    pub size: Size,
}

/// Number of distinct object descriptions.
pub const OBJECT_KINDS: u64 = 8 * 6 * 2;

impl SceneObject {
    /// Index in `0..OBJECT_KINDS`.
    pub fn code(&self) -> u64 {
        (self.shape as u64 * 6 + self.color as u64) * 2 + self.size as u64
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            shape: Shape::ALL[rng.random_range(0..Shape::ALL.len())],
            color: Color::ALL[rng.random_range(0..Color::ALL.len())],
            size: Size::ALL[rng.random_range(0..Size::ALL.len())],
        }
    }
}

/// A symbolic scene: one to three objects, with a relation between the
/// first two when there are at least two.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: u64,
    pub objects: Vec<SceneObject>,
    pub relation: Relation,
}

fn relation_index(options: &[Relation], r: Relation) -> Option<u64> {
    options.iter().position(|&x| x == r).map(|i| i as u64)
}

impl Scene {
    /// Builds a scene and assigns its canonical id.
    pub fn new(objects: Vec<SceneObject>, relation: Relation) -> Result<Self> {
        let scene_id = Self::canonical_id(&objects, relation)?;
        Ok(Self {
            scene_id,
            objects,
            relation,
        })
    }

    /// Bijective id over all valid scenes; equal attributes give equal ids.
    pub fn canonical_id(objects: &[SceneObject], relation: Relation) -> Result<u64> {
        let k = OBJECT_KINDS;
        let bad = || Error::InvalidArgument(format!("invalid scene: {} objects with relation {relation:?}", objects.len()));
        match objects {
            [a] if relation == Relation::None => Ok(a.code()),
            [a, b] => {
                let r = relation_index(&Relation::PAIR, relation).ok_or_else(bad)?;
                Ok(k + (r * k + a.code()) * k + b.code())
            }
            [a, b, c] => {
                let r = relation_index(&Relation::TRIPLE, relation).ok_or_else(bad)?;
                Ok(k + 3 * k * k + ((r * k + a.code()) * k + b.code()) * k + c.code())
            }
            _ => Err(bad()),
        }
    }

    /// Total number of distinct scenes.
    pub fn capacity() -> u64 {
        let k = OBJECT_KINDS;
        k + 3 * k * k + 2 * k * k * k
    }

    /// Checks the structural invariants, including the stored id.
    pub fn validate(&self) -> Result<()> {
        let id = Self::canonical_id(&self.objects, self.relation)?;
        if id != self.scene_id {
            return Err(Error::InvalidArgument(format!(
                "scene id {} does not match its attributes (expected {id})",
                self.scene_id
            )));
        }
        Ok(())
    }

    /// Draws a scene with 1, 2 or 3 objects with probabilities 0.15, 0.6, 0.25.
    pub fn random(rng: &mut impl Rng) -> Self {
        let u: f64 = rng.random();
        let (n, relation) = if u < 0.15 {
            (1, Relation::None)
        } else if u < 0.75 {
            (2, Relation::PAIR[rng.random_range(0..3)])
        } else {
            (3, Relation::TRIPLE[rng.random_range(0..2)])
        };
        let objects = (0..n).map(|_| SceneObject::random(rng)).collect();
        Self::new(objects, relation).expect("valid by construction")
    }
}
