//! Turns a scene and a requested phenomenon into a verified expression.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use gres_core::{GresError, Result};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::scene::{Color, Scene, Shape};
use crate::semantics::{satisfying_subsets, Denotation, Desc, Direction, Expr, IdSet, Loc};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    Single,
    Counting,
    CompoundAnd,
    CompoundExcept,
    SharedAttr,
    Relational,
    NoTargetAbsent,
    NoTargetDeceptive,
}

impl Kind {
    pub const ALL: [Kind; 8] = [
        Kind::Single,
        Kind::Counting,
        Kind::CompoundAnd,
        Kind::CompoundExcept,
        Kind::SharedAttr,
        Kind::Relational,
        Kind::NoTargetAbsent,
        Kind::NoTargetDeceptive,
    ];
    pub const MULTI: [Kind; 5] = [
        Kind::Counting,
        Kind::CompoundAnd,
        Kind::CompoundExcept,
        Kind::SharedAttr,
        Kind::Relational,
    ];
    pub const NO_TARGET: [Kind; 2] = [Kind::NoTargetAbsent, Kind::NoTargetDeceptive];

    pub fn is_no_target(self) -> bool {
        Self::NO_TARGET.contains(&self)
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Single => "single",
            Kind::Counting => "counting",
            Kind::CompoundAnd => "compound_and",
            Kind::CompoundExcept => "compound_except",
            Kind::SharedAttr => "shared_attr",
            Kind::Relational => "relational",
            Kind::NoTargetAbsent => "no_target_absent",
            Kind::NoTargetDeceptive => "no_target_deceptive",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Kind {
    type Err = GresError;

    fn from_str(s: &str) -> Result<Self> {
        Kind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| GresError::Input(format!("unknown expression kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExpressionSpec {
    pub expr: Expr,
    pub text: String,
    /// Empty exactly for no-target kinds.
    pub target_ids: IdSet,
    pub kind: Kind,
}

/// Checks unambiguity by exhaustive subset evaluation, plus the kind's own rules.
pub fn verify(scene: &Scene, spec: &ExpressionSpec) -> Result<()> {
    let fail = |why: &str| {
        Err(GresError::Contract(format!(
            "{:?} ({}): {why}",
            spec.text, spec.kind
        )))
    };
    if spec.text != spec.expr.text() {
        return fail("text does not match the expression");
    }
    let subsets = satisfying_subsets(&spec.expr, scene);
    if spec.kind.is_no_target() {
        if !spec.target_ids.is_empty() || !subsets.is_empty() {
            return fail("no-target expression has a satisfying subset");
        }
        if spec.expr.denote(scene) != Denotation::Empty {
            return fail("no-target expression is ill-formed rather than absent");
        }
        if !spec.expr.is_relevant(scene) {
            return fail("no-target expression names nothing present in the scene");
        }
    } else {
        if spec.target_ids.is_empty() {
            return fail("target expression with an empty target set");
        }
        if subsets != [spec.target_ids.clone()] {
            return fail("target set is not the unique satisfying subset");
        }
    }
    Ok(())
}

fn present_colors(scene: &Scene) -> Vec<Color> {
    scene
        .objects
        .iter()
        .map(|o| o.color)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn present_shapes(scene: &Scene) -> Vec<Shape> {
    scene
        .objects
        .iter()
        .map(|o| o.shape)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Noun phrases built from attributes present in the scene, with the given locations.
fn descs(scene: &Scene, locs: &[Option<Loc>], allow_bare: bool) -> Vec<Desc> {
    let colors: Vec<Option<Color>> = std::iter::once(None)
        .chain(present_colors(scene).into_iter().map(Some))
        .collect();
    let shapes: Vec<Option<Shape>> = std::iter::once(None)
        .chain(present_shapes(scene).into_iter().map(Some))
        .collect();
    let mut out = Vec::new();
    for &c in &colors {
        for &s in &shapes {
            for &l in locs {
                if c.is_none() && s.is_none() && (!allow_bare || l.is_none()) {
                    continue;
                }
                out.push(Desc::new(c, s, l));
            }
        }
    }
    out
}

const ALL_LOCS: [Option<Loc>; 7] = [
    None,
    Some(Loc::Left),
    Some(Loc::Right),
    Some(Loc::Top),
    Some(Loc::Bottom),
    Some(Loc::FarLeft),
    Some(Loc::FarRight),
];
const HALF_LOCS: [Option<Loc>; 5] = [
    None,
    Some(Loc::Left),
    Some(Loc::Right),
    Some(Loc::Top),
    Some(Loc::Bottom),
];

fn targets_of(expr: &Expr, scene: &Scene) -> Option<IdSet> {
    match expr.denote(scene) {
        Denotation::Targets(t) => Some(t),
        _ => None,
    }
}

/// Every uniquely-referring singular description, grouped by referent.
fn singular_refs(scene: &Scene) -> Vec<(usize, Expr)> {
    descs(scene, &ALL_LOCS, true)
        .into_iter()
        .map(Expr::The)
        .filter_map(|e| targets_of(&e, scene).map(|t| (*t.iter().next().unwrap(), e)))
        .collect()
}

fn candidates(scene: &Scene, kind: Kind, rng: &mut impl Rng) -> Vec<Expr> {
    match kind {
        Kind::Single => {
            let refs = singular_refs(scene);
            let Some(&(target, _)) = refs.choose(rng) else {
                return vec![];
            };
            refs.into_iter()
                .filter(|(t, _)| *t == target)
                .map(|(_, e)| e)
                .collect()
        }
        Kind::Counting => descs(scene, &HALF_LOCS, true)
            .into_iter()
            .filter_map(|d| {
                let k = d.matches(scene).len();
                (2..=6).contains(&k).then_some(Expr::Count(k, d))
            })
            .collect(),
        Kind::CompoundAnd => {
            // only location-free parts, so the conjunction stays short
            let refs: Vec<(usize, Expr)> = singular_refs(scene)
                .into_iter()
                .filter(|(_, e)| matches!(e, Expr::The(d) if d.loc.is_none()))
                .collect();
            let mut out = Vec::new();
            for (ta, a) in &refs {
                for (tb, b) in &refs {
                    if ta != tb {
                        out.push(Expr::And(Box::new(a.clone()), Box::new(b.clone())));
                    }
                }
            }
            out
        }
        Kind::CompoundExcept => descs(scene, &HALF_LOCS, false)
            .into_iter()
            .flat_map(|d| [false, true].map(|plural| Expr::Except { desc: d, plural }))
            .collect(),
        Kind::SharedAttr => {
            let mut out = Vec::new();
            for &c in &present_colors(scene) {
                for &s1 in &Shape::ALL {
                    for &s2 in &Shape::ALL {
                        if s1 != s2 {
                            out.push(Expr::SharedColor {
                                color: c,
                                shapes: (s1, s2),
                            });
                        }
                    }
                }
            }
            for &s in &present_shapes(scene) {
                for &c1 in &Color::ALL {
                    for &c2 in &Color::ALL {
                        if c1 != c2 {
                            out.push(Expr::SharedShape {
                                colors: (c1, c2),
                                shape: s,
                            });
                        }
                    }
                }
            }
            out
        }
        Kind::Relational => {
            let anchors: Vec<Desc> = singular_refs(scene)
                .into_iter()
                .filter_map(|(_, e)| match e {
                    Expr::The(d) if d.loc.is_none() => Some(d),
                    _ => None,
                })
                .collect();
            let mut out = Vec::new();
            for target in descs(scene, &[None], false)
                .into_iter()
                .chain([Desc::new(None, None, None)])
            {
                for dir in Direction::ALL {
                    for &anchor in &anchors {
                        out.push(Expr::Rel {
                            target,
                            dir,
                            anchor,
                        });
                    }
                }
            }
            out
        }
        Kind::NoTargetAbsent => {
            let mut out = Vec::new();
            for &c in &present_colors(scene) {
                for &s in &present_shapes(scene) {
                    out.push(Expr::The(Desc::new(Some(c), Some(s), None)));
                }
            }
            out
        }
        Kind::NoTargetDeceptive => vec![],
    }
}

/// Kind-specific acceptance on top of a well-formed denotation.
fn acceptable(kind: Kind, expr: &Expr, scene: &Scene) -> bool {
    match (kind.is_no_target(), expr.denote(scene)) {
        (true, Denotation::Empty) => expr.is_relevant(scene),
        (false, Denotation::Targets(t)) => match kind {
            Kind::Single => t.len() == 1,
            _ => t.len() >= 2,
        },
        _ => false,
    }
}

/// Realizes `kind` in `scene`, or `Ok(None)` when the scene cannot support it.
///
/// `donors` are expressions taken from other scenes; only
/// [`Kind::NoTargetDeceptive`] uses them.
pub fn realize_expression(
    scene: &Scene,
    kind: Kind,
    rng: &mut impl Rng,
    donors: &[Expr],
) -> Result<Option<ExpressionSpec>> {
    let chosen = if kind == Kind::NoTargetDeceptive {
        let mut order: Vec<&Expr> = donors.iter().collect();
        order.shuffle(rng);
        order
            .into_iter()
            .find(|e| acceptable(kind, e, scene))
            .cloned()
    } else {
        let pool: Vec<Expr> = candidates(scene, kind, rng)
            .into_iter()
            .filter(|e| acceptable(kind, e, scene))
            .collect();
        pool.choose(rng).cloned()
    };
    let Some(expr) = chosen else { return Ok(None) };
    let target_ids = targets_of(&expr, scene).unwrap_or_default();
    let spec = ExpressionSpec {
        text: expr.text(),
        expr,
        target_ids,
        kind,
    };
    verify(scene, &spec)?;
    Ok(Some(spec))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::scene::ObjectSpec;

    fn obj(id: usize, shape: Shape, color: Color, x: i64, y: i64) -> ObjectSpec {
        ObjectSpec {
            id,
            shape,
            color,
            x,
            y,
            size: 4,
        }
    }

    fn scene(objects: Vec<ObjectSpec>) -> Scene {
        Scene {
            height: 48,
            width: 48,
            objects,
            seed: 0,
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in Kind::ALL {
            assert_eq!(k.name().parse::<Kind>().unwrap(), k);
        }
        assert!("plural".parse::<Kind>().is_err());
    }

    #[test]
    fn counting_on_two_blue_squares() {
        let s = scene(vec![
            obj(0, Shape::Square, Color::Blue, 8, 10),
            obj(1, Shape::Square, Color::Blue, 8, 36),
            obj(2, Shape::Circle, Color::Red, 38, 24),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut texts = BTreeSet::new();
        for _ in 0..200 {
            let spec = realize_expression(&s, Kind::Counting, &mut rng, &[])
                .unwrap()
                .unwrap();
            assert_eq!(spec.target_ids, IdSet::from([0, 1]), "{}", spec.text);
            texts.insert(spec.text);
        }
        assert!(texts.contains("the two blue squares"));
        assert!(texts.contains("the two squares on the left"));
    }

    #[test]
    fn except_takes_the_complement() {
        let s = scene(vec![
            obj(0, Shape::Circle, Color::Red, 8, 10),
            obj(1, Shape::Square, Color::Blue, 30, 10),
            obj(2, Shape::Triangle, Color::Green, 20, 36),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = false;
        for _ in 0..300 {
            let spec = realize_expression(&s, Kind::CompoundExcept, &mut rng, &[])
                .unwrap()
                .unwrap();
            let excluded: IdSet = (0..3).filter(|id| !spec.target_ids.contains(id)).collect();
            if spec.text == "everything except the red circle" {
                assert_eq!(spec.target_ids, IdSet::from([1, 2]));
                seen = true;
            }
            assert!(!excluded.is_empty() && !spec.target_ids.is_empty());
        }
        assert!(seen);
    }

    #[test]
    fn absent_combination_names_present_attributes() {
        let s = scene(vec![
            obj(0, Shape::Square, Color::Red, 8, 10),
            obj(1, Shape::Circle, Color::Blue, 30, 10),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut texts = BTreeSet::new();
        for _ in 0..50 {
            let spec = realize_expression(&s, Kind::NoTargetAbsent, &mut rng, &[])
                .unwrap()
                .unwrap();
            assert!(spec.target_ids.is_empty());
            texts.insert(spec.text);
        }
        assert_eq!(
            texts,
            BTreeSet::from(["the red circle".to_string(), "the blue square".to_string()])
        );
    }

    #[test]
    fn unsupported_kinds_skip() {
        let s = scene(vec![
            obj(0, Shape::Square, Color::Red, 8, 10),
            obj(1, Shape::Circle, Color::Blue, 30, 36),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(realize_expression(&s, Kind::Counting, &mut rng, &[])
            .unwrap()
            .is_none());
        assert!(
            realize_expression(&s, Kind::NoTargetDeceptive, &mut rng, &[])
                .unwrap()
                .is_none()
        );
    }

    #[test]
    fn deceptive_donors_filtered_by_absence_and_relevance() {
        let s = scene(vec![
            obj(0, Shape::Square, Color::Red, 8, 10),
            obj(1, Shape::Circle, Color::Blue, 30, 10),
        ]);
        let present = Expr::The(Desc::new(Some(Color::Red), None, None));
        let irrelevant = Expr::The(Desc::new(Some(Color::Yellow), Some(Shape::Triangle), None));
        let good = Expr::Count(2, Desc::new(None, Some(Shape::Circle), None));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let donors = [present.clone(), irrelevant.clone(), good.clone()];
            let spec = realize_expression(&s, Kind::NoTargetDeceptive, &mut rng, &donors);
            // "the two circles" with one circle is miscounted, not absent
            assert!(spec.unwrap().is_none());
        }
        let good = Expr::The(Desc::new(Some(Color::Green), Some(Shape::Square), None));
        let spec = realize_expression(
            &s,
            Kind::NoTargetDeceptive,
            &mut rng,
            &[irrelevant, good.clone()],
        )
        .unwrap()
        .unwrap();
        assert_eq!(spec.expr, good);
        assert_eq!(spec.text, "the green square");
    }

    #[test]
    fn verify_rejects_wrong_targets() {
        let s = scene(vec![
            obj(0, Shape::Square, Color::Red, 8, 10),
            obj(1, Shape::Circle, Color::Blue, 30, 10),
        ]);
        let expr = Expr::The(Desc::new(None, Some(Shape::Circle), None));
        let spec = ExpressionSpec {
            text: expr.text(),
            expr,
            target_ids: IdSet::from([0]),
            kind: Kind::Single,
        };
        assert!(verify(&s, &spec).is_err());
    }
}
