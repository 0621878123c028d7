//! Referring-expression ASTs, their surface text and two independent semantics:
//! a direct denotation used by the generator and a per-subset satisfaction
//! predicate used to verify unambiguity by exhaustive enumeration.

use std::collections::BTreeSet;

use crate::scene::{Color, ObjectSpec, Scene, Shape};

pub type IdSet = BTreeSet<usize>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Loc {
    /// Center strictly in the left half.
    Left,
    Right,
    Top,
    Bottom,
    /// Minimum center column among the described objects, ties to the lower id.
    FarLeft,
    FarRight,
}

impl Loc {
    fn phrase(self) -> &'static str {
        match self {
            Loc::Left => " on the left",
            Loc::Right => " on the right",
            Loc::Top => " at the top",
            Loc::Bottom => " at the bottom",
            Loc::FarLeft => " on the far left",
            Loc::FarRight => " on the far right",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::LeftOf,
        Direction::RightOf,
        Direction::Above,
        Direction::Below,
    ];

    fn phrase(self) -> &'static str {
        match self {
            Direction::LeftOf => "left of",
            Direction::RightOf => "right of",
            Direction::Above => "above",
            Direction::Below => "below",
        }
    }

    pub fn holds(self, o: &ObjectSpec, anchor: &ObjectSpec) -> bool {
        match self {
            Direction::LeftOf => o.x < anchor.x,
            Direction::RightOf => o.x > anchor.x,
            Direction::Above => o.y < anchor.y,
            Direction::Below => o.y > anchor.y,
        }
    }
}

/// A noun phrase: optional color, optional shape (at least one), optional location.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Desc {
    pub color: Option<Color>,
    pub shape: Option<Shape>,
    pub loc: Option<Loc>,
}

impl Desc {
    pub fn new(color: Option<Color>, shape: Option<Shape>, loc: Option<Loc>) -> Self {
        Desc { color, shape, loc }
    }

    fn noun_matches(&self, o: &ObjectSpec) -> bool {
        self.color.is_none_or(|c| o.color == c) && self.shape.is_none_or(|s| o.shape == s)
    }

    /// Whether `o` is described, judged from `o` and its competitors alone.
    pub fn holds(&self, o: &ObjectSpec, scene: &Scene) -> bool {
        if !self.noun_matches(o) {
            return false;
        }
        let (w2, h2) = (scene.width as i64, scene.height as i64);
        match self.loc {
            None => true,
            Some(Loc::Left) => 2 * o.x < w2,
            Some(Loc::Right) => 2 * o.x > w2,
            Some(Loc::Top) => 2 * o.y < h2,
            Some(Loc::Bottom) => 2 * o.y > h2,
            Some(Loc::FarLeft) => !scene
                .objects
                .iter()
                .any(|p| p.id != o.id && self.noun_matches(p) && (p.x, p.id) < (o.x, o.id)),
            Some(Loc::FarRight) => !scene.objects.iter().any(|p| {
                p.id != o.id
                    && self.noun_matches(p)
                    && (p.x, std::cmp::Reverse(p.id)) > (o.x, std::cmp::Reverse(o.id))
            }),
        }
    }

    /// Described objects, computed by filtering and (for extremal locations) an argmin/argmax.
    pub fn matches(&self, scene: &Scene) -> IdSet {
        let base: Vec<&ObjectSpec> = scene
            .objects
            .iter()
            .filter(|o| self.noun_matches(o))
            .collect();
        let (w2, h2) = (scene.width as i64, scene.height as i64);
        let pick =
            |f: &dyn Fn(&ObjectSpec) -> bool| base.iter().filter(|o| f(o)).map(|o| o.id).collect();
        match self.loc {
            None => pick(&|_| true),
            Some(Loc::Left) => pick(&|o| 2 * o.x < w2),
            Some(Loc::Right) => pick(&|o| 2 * o.x > w2),
            Some(Loc::Top) => pick(&|o| 2 * o.y < h2),
            Some(Loc::Bottom) => pick(&|o| 2 * o.y > h2),
            Some(Loc::FarLeft) => base
                .iter()
                .min_by_key(|o| (o.x, o.id))
                .map(|o| o.id)
                .into_iter()
                .collect(),
            Some(Loc::FarRight) => base
                .iter()
                .min_by_key(|o| (-o.x, o.id))
                .map(|o| o.id)
                .into_iter()
                .collect(),
        }
    }

    fn singular(&self) -> String {
        self.phrase(false)
    }

    fn plural(&self) -> String {
        self.phrase(true)
    }

    fn phrase(&self, plural: bool) -> String {
        let mut s = String::new();
        if let Some(c) = self.color {
            s.push_str(c.word());
            s.push(' ');
        }
        s.push_str(match (self.shape, plural) {
            (Some(sh), false) => sh.word(),
            (Some(sh), true) => sh.plural(),
            (None, false) => "object",
            (None, true) => "objects",
        });
        if let Some(l) = self.loc {
            s.push_str(l.phrase());
        }
        s
    }

    fn attributes(&self) -> (Vec<Color>, Vec<Shape>) {
        (
            self.color.into_iter().collect(),
            self.shape.into_iter().collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    /// "the red circle": exactly one described object.
    The(Desc),
    /// "the two blue squares": exactly `k` described objects.
    Count(usize, Desc),
    /// "the red circle and the blue square".
    And(Box<Expr>, Box<Expr>),
    /// "everything except the red circle(s)".
    Except { desc: Desc, plural: bool },
    /// "the red circle and square".
    SharedColor {
        color: Color,
        shapes: (Shape, Shape),
    },
    /// "the red and blue circles".
    SharedShape {
        colors: (Color, Color),
        shape: Shape,
    },
    /// "the squares left of the red circle".
    Rel {
        target: Desc,
        dir: Direction,
        anchor: Desc,
    },
}

pub fn number_word(k: usize) -> &'static str {
    match k {
        2 => "two",
        3 => "three",
        4 => "four",
        5 => "five",
        6 => "six",
        _ => "several",
    }
}

/// What the generator believes an expression refers to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Denotation {
    Targets(IdSet),
    /// Every referenced description is absent: a no-target expression.
    Empty,
    /// Presupposition failure other than absence (ambiguous or miscounted).
    Ill,
}

impl Expr {
    pub fn text(&self) -> String {
        match self {
            Expr::The(d) => format!("the {}", d.singular()),
            Expr::Count(k, d) => format!("the {} {}", number_word(*k), d.plural()),
            Expr::And(a, b) => format!("{} and {}", a.text(), b.text()),
            Expr::Except { desc, plural } => format!(
                "everything except the {}",
                if *plural {
                    desc.plural()
                } else {
                    desc.singular()
                }
            ),
            Expr::SharedColor { color, shapes } => {
                format!(
                    "the {} {} and {}",
                    color.word(),
                    shapes.0.word(),
                    shapes.1.word()
                )
            }
            Expr::SharedShape { colors, shape } => {
                format!(
                    "the {} and {} {}",
                    colors.0.word(),
                    colors.1.word(),
                    shape.plural()
                )
            }
            Expr::Rel {
                target,
                dir,
                anchor,
            } => {
                format!(
                    "the {} {} the {}",
                    target.plural(),
                    dir.phrase(),
                    anchor.singular()
                )
            }
        }
    }

    /// Colors and shapes named anywhere in the expression.
    pub fn attributes(&self) -> (BTreeSet<Color>, BTreeSet<Shape>) {
        let mut colors = BTreeSet::new();
        let mut shapes = BTreeSet::new();
        let mut add = |(c, s): (Vec<Color>, Vec<Shape>)| {
            colors.extend(c);
            shapes.extend(s);
        };
        match self {
            Expr::The(d) | Expr::Count(_, d) | Expr::Except { desc: d, .. } => add(d.attributes()),
            Expr::And(a, b) => {
                let (ca, sa) = a.attributes();
                let (cb, sb) = b.attributes();
                add((
                    ca.into_iter().chain(cb).collect(),
                    sa.into_iter().chain(sb).collect(),
                ));
            }
            Expr::SharedColor {
                color,
                shapes: (s1, s2),
            } => add((vec![*color], vec![*s1, *s2])),
            Expr::SharedShape {
                colors: (c1, c2),
                shape,
            } => add((vec![*c1, *c2], vec![*shape])),
            Expr::Rel { target, anchor, .. } => {
                add(target.attributes());
                add(anchor.attributes());
            }
        }
        (colors, shapes)
    }

    /// The expression names at least one color or shape present in the scene.
    pub fn is_relevant(&self, scene: &Scene) -> bool {
        let (colors, shapes) = self.attributes();
        scene
            .objects
            .iter()
            .any(|o| colors.contains(&o.color) || shapes.contains(&o.shape))
    }

    pub fn denote(&self, scene: &Scene) -> Denotation {
        match self {
            Expr::The(d) => counted(d.matches(scene), 1),
            Expr::Count(k, d) => counted(d.matches(scene), *k),
            Expr::And(a, b) => conjoin(a.denote(scene), b.denote(scene)),
            Expr::SharedColor { color, shapes } => conjoin(
                Expr::The(Desc::new(Some(*color), Some(shapes.0), None)).denote(scene),
                Expr::The(Desc::new(Some(*color), Some(shapes.1), None)).denote(scene),
            ),
            Expr::SharedShape { colors, shape } => conjoin(
                Expr::The(Desc::new(Some(colors.0), Some(*shape), None)).denote(scene),
                Expr::The(Desc::new(Some(colors.1), Some(*shape), None)).denote(scene),
            ),
            Expr::Except { desc, plural } => {
                let excluded = desc.matches(scene);
                let rest: IdSet = scene
                    .objects
                    .iter()
                    .map(|o| o.id)
                    .filter(|id| !excluded.contains(id))
                    .collect();
                let count_ok = if *plural {
                    excluded.len() >= 2
                } else {
                    excluded.len() == 1
                };
                if count_ok && !rest.is_empty() {
                    Denotation::Targets(rest)
                } else {
                    Denotation::Ill
                }
            }
            Expr::Rel {
                target,
                dir,
                anchor,
            } => {
                let anchors = anchor.matches(scene);
                match anchors.len() {
                    0 => Denotation::Empty,
                    1 => {
                        let a = scene.object(*anchors.iter().next().unwrap()).unwrap();
                        let hits: IdSet = target
                            .matches(scene)
                            .into_iter()
                            .filter(|&id| id != a.id && dir.holds(scene.object(id).unwrap(), a))
                            .collect();
                        if hits.is_empty() {
                            Denotation::Empty
                        } else {
                            Denotation::Targets(hits)
                        }
                    }
                    _ => Denotation::Ill,
                }
            }
        }
    }

    /// Whether `subset` is a reading of the expression, decided object by object.
    pub fn satisfied_by(&self, scene: &Scene, subset: &IdSet) -> bool {
        let exactly = |d: &Desc, s: &IdSet| {
            scene
                .objects
                .iter()
                .all(|o| s.contains(&o.id) == d.holds(o, scene))
        };
        match self {
            Expr::The(d) => subset.len() == 1 && exactly(d, subset),
            Expr::Count(k, d) => subset.len() == *k && exactly(d, subset),
            Expr::And(a, b) => split_satisfies(scene, subset, a, b),
            Expr::SharedColor { color, shapes } => split_satisfies(
                scene,
                subset,
                &Expr::The(Desc::new(Some(*color), Some(shapes.0), None)),
                &Expr::The(Desc::new(Some(*color), Some(shapes.1), None)),
            ),
            Expr::SharedShape { colors, shape } => split_satisfies(
                scene,
                subset,
                &Expr::The(Desc::new(Some(colors.0), Some(*shape), None)),
                &Expr::The(Desc::new(Some(colors.1), Some(*shape), None)),
            ),
            Expr::Except { desc, plural } => {
                let excluded = scene
                    .objects
                    .iter()
                    .filter(|o| !subset.contains(&o.id))
                    .count();
                let count_ok = if *plural {
                    excluded >= 2
                } else {
                    excluded == 1
                };
                !subset.is_empty()
                    && count_ok
                    && scene
                        .objects
                        .iter()
                        .all(|o| subset.contains(&o.id) != desc.holds(o, scene))
            }
            Expr::Rel {
                target,
                dir,
                anchor,
            } => {
                !subset.is_empty()
                    && scene.objects.iter().any(|a| {
                        Expr::The(*anchor).satisfied_by(scene, &IdSet::from([a.id]))
                            && scene.objects.iter().all(|o| {
                                let member =
                                    o.id != a.id && target.holds(o, scene) && dir.holds(o, a);
                                subset.contains(&o.id) == member
                            })
                    })
            }
        }
    }
}

fn counted(m: IdSet, k: usize) -> Denotation {
    if m.is_empty() {
        Denotation::Empty
    } else if m.len() == k {
        Denotation::Targets(m)
    } else {
        Denotation::Ill
    }
}

fn conjoin(a: Denotation, b: Denotation) -> Denotation {
    match (a, b) {
        (Denotation::Targets(x), Denotation::Targets(y)) if x.is_disjoint(&y) => {
            Denotation::Targets(x.union(&y).copied().collect())
        }
        (Denotation::Empty, Denotation::Empty) => Denotation::Empty,
        _ => Denotation::Ill,
    }
}

fn split_satisfies(scene: &Scene, subset: &IdSet, a: &Expr, b: &Expr) -> bool {
    let items: Vec<usize> = subset.iter().copied().collect();
    (0u32..1 << items.len()).any(|bits| {
        let (mut left, mut right) = (IdSet::new(), IdSet::new());
        for (i, &id) in items.iter().enumerate() {
            if bits >> i & 1 == 1 {
                left.insert(id);
            } else {
                right.insert(id);
            }
        }
        a.satisfied_by(scene, &left) && b.satisfied_by(scene, &right)
    })
}

/// Every subset of scene objects satisfying the expression, by brute-force enumeration.
pub fn satisfying_subsets(expr: &Expr, scene: &Scene) -> Vec<IdSet> {
    let ids: Vec<usize> = scene.objects.iter().map(|o| o.id).collect();
    (0u64..1 << ids.len())
        .map(|bits| {
            ids.iter()
                .enumerate()
                .filter(|(i, _)| bits >> i & 1 == 1)
                .map(|(_, &id)| id)
                .collect::<IdSet>()
        })
        .filter(|s| expr.satisfied_by(scene, s))
        .collect()
}
