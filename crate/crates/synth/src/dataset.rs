//! Whole train/val corpora: kind mixtures, per-sample seeds and the on-disk layout.
//!
//! ```text
//! DIR/{train,val}/manifest.tsv   image_path \t mask_path \t no_target(0|1) \t expression
//! DIR/{train,val}/meta.tsv       index, kind, scene seed, targets, objects
//! DIR/{train,val}/images/NNNNNN.ppm
//! DIR/{train,val}/masks/NNNNNN.pgm
//! ```

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gres_core::raster::{Mask, RgbImage};
use gres_core::{GresError, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::pnm;
use crate::realize::{realize_expression, ExpressionSpec, Kind};
use crate::scene::{generate_scene, rasterize_mask, render, Scene, SceneConfig};
use crate::semantics::Expr;

/// Scene attempts per sample before the generator gives up.
pub const MAX_SAMPLE_ATTEMPTS: u64 = 4096;
/// Other scenes consulted for a deceptive no-target expression.
pub const DONOR_SCENES: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    fn id(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Split {
    type Err = GresError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            _ => Err(GresError::Input(format!(
                "unknown split {s:?} (expected train or val)"
            ))),
        }
    }
}

/// Proportions of single-, multi- and no-target samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mix {
    pub single: f64,
    pub multi: f64,
    pub notarget: f64,
}

impl Default for Mix {
    fn default() -> Self {
        Mix {
            single: 0.4,
            multi: 0.3,
            notarget: 0.3,
        }
    }
}

impl FromStr for Mix {
    type Err = GresError;

    /// `single=0.4,multi=0.3,notarget=0.3`; omitted groups get 0.
    fn from_str(s: &str) -> Result<Self> {
        let mut mix = Mix {
            single: 0.0,
            multi: 0.0,
            notarget: 0.0,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| GresError::Input(format!("mix entry {part:?} is not key=value")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| GresError::Input(format!("mix weight {v:?} is not a number")))?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(GresError::Input(format!(
                    "mix weight {v} must be non-negative"
                )));
            }
            match k.trim() {
                "single" => mix.single = v,
                "multi" => mix.multi = v,
                "notarget" => mix.notarget = v,
                other => return Err(GresError::Input(format!("unknown mix group {other:?}"))),
            }
        }
        if mix.single + mix.multi + mix.notarget <= 0.0 {
            return Err(GresError::Input("mix weights sum to zero".into()));
        }
        Ok(mix)
    }
}

impl fmt::Display for Mix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "single={},multi={},notarget={}",
            self.single, self.multi, self.notarget
        )
    }
}

impl Mix {
    /// Largest-remainder apportionment of `n` samples into (single, multi, notarget).
    pub fn counts(&self, n: usize) -> [usize; 3] {
        let w = [self.single, self.multi, self.notarget];
        let total: f64 = w.iter().sum();
        let quotas: Vec<f64> = w.iter().map(|x| x / total * n as f64).collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut order: Vec<usize> = (0..3).collect();
        // stable sort keeps group order for equal remainders
        order.sort_by(|&a, &b| {
            (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor()))
        });
        let missing = n - counts.iter().sum::<usize>();
        for &g in order.iter().take(missing) {
            counts[g] += 1;
        }
        [counts[0], counts[1], counts[2]]
    }

    /// Kinds for a split of `n` samples: multi- and no-target groups cycle
    /// through their sub-kinds, then the list is shuffled.
    pub fn kinds(&self, n: usize, rng: &mut impl Rng) -> Vec<Kind> {
        let [a, b, c] = self.counts(n);
        let mut kinds = vec![Kind::Single; a];
        kinds.extend((0..b).map(|i| Kind::MULTI[i % Kind::MULTI.len()]));
        kinds.extend((0..c).map(|i| Kind::NO_TARGET[i % Kind::NO_TARGET.len()]));
        kinds.shuffle(rng);
        kinds
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetConfig {
    pub scene: SceneConfig,
    pub train: usize,
    pub val: usize,
    pub mix: Mix,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            scene: SceneConfig::default(),
            train: 400,
            val: 100,
            mix: Mix::default(),
        }
    }
}

impl DatasetConfig {
    pub fn len(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Scene seed for one attempt at one sample. Distinct (split, index, attempt)
/// triples map to distinct seeds, so train and val scenes never coincide.
pub fn scene_seed(base: u64, split: Split, index: usize, attempt: u64) -> u64 {
    assert!((index as u64) < 1 << 28 && attempt < MAX_SAMPLE_ATTEMPTS);
    splitmix64(base).wrapping_add(split.id() << 40 | (index as u64) << 12 | attempt)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub split: Split,
    pub index: usize,
    pub scene: Scene,
    pub expression: ExpressionSpec,
    pub image: RgbImage,
    pub mask: Mask,
}

impl Sample {
    pub fn no_target(&self) -> bool {
        self.expression.target_ids.is_empty()
    }
}

/// Target expressions realized in scenes of other samples of the same split.
fn donor_expressions(
    base: u64,
    split: Split,
    n: usize,
    index: usize,
    cfg: &SceneConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Expr>> {
    let pool = n.max(DONOR_SCENES + 1);
    let mut donors = Vec::new();
    for _ in 0..DONOR_SCENES {
        let j = loop {
            let j = rng.gen_range(0..pool);
            if j != index {
                break j;
            }
        };
        let Ok(scene) = generate_scene(scene_seed(base, split, j, 0), cfg) else {
            continue;
        };
        let kind = [
            Kind::Single,
            Kind::Counting,
            Kind::SharedAttr,
            Kind::CompoundAnd,
            Kind::Relational,
        ]
        .choose(rng)
        .copied()
        .unwrap();
        if let Some(spec) = realize_expression(&scene, kind, rng, &[])? {
            donors.push(spec.expr);
        }
    }
    Ok(donors)
}

/// Deterministically generates sample `index` of `split`, retrying with fresh
/// scenes until the requested kind can be realized.
pub fn generate_sample(
    base: u64,
    split: Split,
    index: usize,
    kind: Kind,
    cfg: &DatasetConfig,
) -> Result<Sample> {
    let n = cfg.len(split);
    for attempt in 0..MAX_SAMPLE_ATTEMPTS {
        let seed = scene_seed(base, split, index, attempt);
        let Ok(scene) = generate_scene(seed, &cfg.scene) else {
            continue;
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let donors = if kind == Kind::NoTargetDeceptive {
            donor_expressions(base, split, n, index, &cfg.scene, &mut rng)?
        } else {
            Vec::new()
        };
        let Some(expression) = realize_expression(&scene, kind, &mut rng, &donors)? else {
            continue;
        };
        let ids: Vec<usize> = expression.target_ids.iter().copied().collect();
        let mask = rasterize_mask(&scene, &ids)?;
        return Ok(Sample {
            split,
            index,
            image: render(&scene),
            mask,
            scene,
            expression,
        });
    }
    Err(GresError::Input(format!(
        "could not realize a {kind} sample for {split}/{index} in {MAX_SAMPLE_ATTEMPTS} scenes"
    )))
}

pub fn generate_split(base: u64, split: Split, cfg: &DatasetConfig) -> Result<Vec<Sample>> {
    cfg.scene.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(base ^ (0xD1CE << 8 | split.id())));
    let kinds = cfg.mix.kinds(cfg.len(split), &mut rng);
    kinds
        .into_iter()
        .enumerate()
        .map(|(i, k)| generate_sample(base, split, i, k, cfg))
        .collect()
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| GresError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| GresError::io(path, e))
}

pub fn write_split(dir: &Path, samples: &[Sample]) -> Result<()> {
    create_dir(&dir.join("images"))?;
    create_dir(&dir.join("masks"))?;
    let mut manifest = String::new();
    let mut meta = String::from("index\tkind\tscene_seed\ttargets\tobjects\n");
    for s in samples {
        let img = format!("images/{:06}.ppm", s.index);
        let msk = format!("masks/{:06}.pgm", s.index);
        pnm::write_ppm(&dir.join(&img), &s.image)?;
        pnm::write_pgm(&dir.join(&msk), &s.mask)?;
        let _ = writeln!(
            manifest,
            "{img}\t{msk}\t{}\t{}",
            u8::from(s.no_target()),
            s.expression.text
        );
        let targets: Vec<String> = s
            .expression
            .target_ids
            .iter()
            .map(usize::to_string)
            .collect();
        let objects: Vec<String> = s.scene.objects.iter().map(ToString::to_string).collect();
        let _ = writeln!(
            meta,
            "{}\t{}\t{}\t{}\t{}",
            s.index,
            s.expression.kind,
            s.scene.seed,
            targets.join(","),
            objects.join(" ")
        );
    }
    write_text(&dir.join("manifest.tsv"), &manifest)?;
    write_text(&dir.join("meta.tsv"), &meta)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSummary {
    pub train: usize,
    pub val: usize,
    /// Per kind, `(train, val)` counts.
    pub kinds: Vec<(Kind, usize, usize)>,
}

/// Generates and writes both splits under `out`.
pub fn build_dataset(out: &Path, cfg: &DatasetConfig, seed: u64) -> Result<DatasetSummary> {
    let train = generate_split(seed, Split::Train, cfg)?;
    let val = generate_split(seed, Split::Val, cfg)?;
    write_split(&out.join(Split::Train.name()), &train)?;
    write_split(&out.join(Split::Val.name()), &val)?;
    let count = |v: &[Sample], k| v.iter().filter(|s| s.expression.kind == k).count();
    Ok(DatasetSummary {
        train: train.len(),
        val: val.len(),
        kinds: Kind::ALL
            .iter()
            .map(|&k| (k, count(&train, k), count(&val, k)))
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub no_target: bool,
    pub expression: String,
}

/// Parses a manifest; relative paths are resolved against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = fs::read_to_string(path).map_err(|e| GresError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = |reason: &str| GresError::Format {
                path: path.to_path_buf(),
                reason: format!("line {}: {reason}", i + 1),
            };
            let mut fields = line.splitn(4, '\t');
            let (Some(img), Some(msk), Some(flag), Some(expr)) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(bad("expected 4 tab-separated fields"));
            };
            let no_target = match flag {
                "0" => false,
                "1" => true,
                _ => return Err(bad("no-target flag must be 0 or 1")),
            };
            if expr.trim().is_empty() {
                return Err(bad("empty expression"));
            }
            Ok(ManifestRow {
                image_path: base.join(img),
                mask_path: base.join(msk),
                no_target,
                expression: expr.to_string(),
            })
        })
        .collect()
}
