//! A generated toy dataset with matching encoder weights and mock backends.
//!
//! Every image is a dark 64x64 canvas with one coloured 16x16 square per
//! category, placed on the 16-pixel proposal grid. The toy encoder keeps the
//! 2-bins-per-channel histogram as region features, and each colour word is
//! embedded on its own histogram bin, so "pink polyp" points at the pink
//! square while the bare name "polyp" scores every region the same.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    export_canonical, AnnotationRecord, DatasetManifest, LabelSource, LabeledBox, Modality, Split,
    ANNOTATION_FILE,
};
use crate::grounding::{EncoderDescriptor, ToyEncoder};
use crate::mlm::{ClozeTemplate, MaskedLmDescriptor, TokenProbability};
use crate::prompt::{
    AttributeEntry, AttributeName, CategoryEntry, CategorySpec, PromptConfig, PromptTemplate,
    SynonymDisplay,
};
use crate::vqa::{build_question, default_question, ImageRef, MockAnswer, VqaBackendDescriptor};
use crate::BBox;

pub const IMAGE_SIZE: u32 = 64;
pub const CELL: u32 = 16;
/// Squares are placed in cells `FIRST_CELL..16` so that, with every region
/// tied, each ground truth sits behind at least five background proposals.
pub const FIRST_CELL: usize = 5;
pub const BACKGROUND: [u8; 3] = [20, 20, 20];

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ENCODER_FILE: &str = "encoder.json";
pub const MLM_FILE: &str = "mlm_vocab.json";
pub const VQA_FILE: &str = "vqa_answers.json";
pub const PROMPTS_FILE: &str = "prompts.json";

const COLOR_MATCH: f64 = 6.0;
const COLOR_MISMATCH: f64 = -3.0;
const NUM_BUCKETS: usize = 64;
const NUM_LAYERS: usize = 4;

pub struct ToyCategory {
    pub name: &'static str,
    pub color_word: &'static str,
    pub rgb: [u8; 3],
    pub shape: &'static str,
    pub location: &'static str,
    pub mlm_colors: [&'static str; 3],
    pub mlm_locations: [&'static str; 3],
}

pub const CATEGORIES: [ToyCategory; 3] = [
    ToyCategory {
        name: "polyp",
        color_word: "pink",
        rgb: [255, 105, 180],
        shape: "round",
        location: "rectum",
        mlm_colors: ["pink", "red", "white"],
        mlm_locations: ["rectum", "colon", "stomach"],
    },
    ToyCategory {
        name: "wound",
        color_word: "red",
        rgb: [220, 20, 20],
        shape: "irregular",
        location: "foot",
        mlm_colors: ["red", "white", "pink"],
        mlm_locations: ["foot", "leg", "skin"],
    },
    ToyCategory {
        name: "nodule",
        color_word: "white",
        rgb: [240, 240, 240],
        shape: "oval",
        location: "lung",
        mlm_colors: ["white", "pink", "red"],
        mlm_locations: ["lung", "chest", "neck"],
    },
];

/// Shapes the mock VQA backend reports, cycled per image.
const VQA_SHAPES: [&str; 4] = ["round", "oval", "flat", "lobulated"];
const MLM_SHAPES: [&str; 3] = ["round", "oval", "flat"];

/// Histogram bin of a colour with 2 bins per channel.
fn bin_of(rgb: [u8; 3]) -> usize {
    let q = |v: u8| v as usize * 2 / 256;
    (q(rgb[0]) * 2 + q(rgb[1])) * 2 + q(rgb[2])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            train: 8,
            val: 4,
            test: 6,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

pub fn category_names() -> Vec<String> {
    CATEGORIES.iter().map(|c| c.name.to_string()).collect()
}

fn attr(name: &str) -> AttributeName {
    AttributeName::canonical(name).expect("canonical attribute")
}

fn slots() -> Vec<AttributeName> {
    ["color", "shape", "location"].iter().map(|a| attr(a)).collect()
}

pub fn manifest(spec: &SyntheticSpec) -> DatasetManifest {
    let splits: BTreeMap<Split, usize> = Split::ALL
        .iter()
        .map(|&s| (s, spec.count(s)))
        .filter(|(_, n)| *n > 0)
        .collect();
    let total: usize = splits.values().sum();
    DatasetManifest {
        name: "synthetic".into(),
        title: "Coloured squares on a dark background".into(),
        modality: Modality::Photography,
        categories: CATEGORIES
            .iter()
            .map(|c| CategorySpec::new(c.name).with_attributes(slots()))
            .collect(),
        splits,
        expected_boxes: total * CATEGORIES.len(),
        label_source: LabelSource::Bbox,
        test_subsets: BTreeMap::new(),
    }
}

/// Identity projection over 2x2x2 bins. Category names start at zero and
/// each colour word sits on its colour's bin.
pub fn encoder() -> ToyEncoder {
    let mut enc = ToyEncoder::identity(2, NUM_LAYERS, NUM_BUCKETS);
    let dim = enc.dim;
    for c in &CATEGORIES {
        enc = enc.with_embedding(c.name, vec![0.0; dim]);
        let bin = bin_of(c.rgb);
        let row = (0..dim)
            .map(|i| if i == bin { COLOR_MATCH } else { COLOR_MISMATCH })
            .collect();
        enc = enc.with_embedding(c.color_word, row);
    }
    enc
}

pub fn prompt_config() -> PromptConfig {
    let templates = [
        ("name", "[OBJ]"),
        ("color", "[ATTR:color] [OBJ]"),
        ("full", "[ATTR:color], [ATTR:shape] [OBJ] in [ATTR:location]"),
    ]
    .into_iter()
    .map(|(k, p)| (k.to_string(), PromptTemplate::new(p).expect("static pattern")))
    .collect();
    let categories = CATEGORIES
        .iter()
        .map(|c| CategoryEntry {
            name: c.name.into(),
            synonyms: vec![],
            display: SynonymDisplay::default(),
            attributes: vec!["color".into(), "shape".into(), "location".into()],
            values: [
                ("color", c.color_word),
                ("shape", c.shape),
                ("location", c.location),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
        })
        .collect();
    let attributes = ["color", "shape", "location"]
        .iter()
        .map(|a| {
            let q = default_question(&attr(a)).expect("shipped question");
            (
                a.to_string(),
                AttributeEntry {
                    kind: None,
                    question: Some(q.pattern),
                },
            )
        })
        .collect();
    PromptConfig {
        templates,
        categories,
        attributes,
    }
}

/// Fill-mask table keyed by the cloze sentences the default template builds.
pub fn mlm_vocabulary() -> BTreeMap<String, Vec<TokenProbability>> {
    let cloze = ClozeTemplate::default();
    let weights = [0.5, 0.3, 0.2];
    let rows = |tokens: [&str; 3]| -> Vec<TokenProbability> {
        tokens
            .iter()
            .zip(weights)
            .map(|(t, p)| TokenProbability {
                token: t.to_string(),
                probability: p,
            })
            .collect()
    };
    let mut out = BTreeMap::new();
    for c in &CATEGORIES {
        for (a, tokens) in [
            ("color", c.mlm_colors),
            ("shape", MLM_SHAPES),
            ("location", c.mlm_locations),
        ] {
            let q = cloze.build(&attr(a), c.name).expect("valid cloze");
            out.insert(q.text, rows(tokens));
        }
    }
    out
}

fn location_word(cell: usize) -> &'static str {
    match (cell / 4 < 2, cell % 4 < 2) {
        (true, true) => "upper left",
        (true, false) => "upper right",
        (false, true) => "lower left",
        (false, false) => "lower right",
    }
}

pub struct GeneratedImage {
    pub record: AnnotationRecord,
    pub pixels: RgbImage,
    /// Grid cell of each category's square, in category order.
    pub cells: Vec<usize>,
}

fn cell_box(cell: usize) -> BBox {
    let (x, y) = ((cell % 4) as u32 * CELL, (cell / 4) as u32 * CELL);
    BBox::new(x as f64, y as f64, (x + CELL) as f64, (y + CELL) as f64).expect("cell box")
}

pub fn generate_image(id: &str, split: Split, seed: u64) -> GeneratedImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut free: Vec<usize> = (FIRST_CELL..16).collect();
    free.shuffle(&mut rng);
    let cells: Vec<usize> = free[..CATEGORIES.len()].to_vec();

    let mut pixels = RgbImage::from_pixel(IMAGE_SIZE, IMAGE_SIZE, Rgb(BACKGROUND));
    let mut boxes = Vec::new();
    for (c, &cell) in CATEGORIES.iter().zip(&cells) {
        let b = cell_box(cell);
        for y in b.y1() as u32..b.y2() as u32 {
            for x in b.x1() as u32..b.x2() as u32 {
                pixels.put_pixel(x, y, Rgb(c.rgb));
            }
        }
        boxes.push(LabeledBox {
            bbox: b,
            category: c.name.into(),
        });
    }
    let uri = format!("{split}/{id}.png");
    GeneratedImage {
        record: AnnotationRecord {
            image: ImageRef::new(id, &uri, IMAGE_SIZE, IMAGE_SIZE).expect("valid ref"),
            boxes,
        },
        pixels,
        cells,
    }
}

/// Every image of every split, in split then index order.
pub fn generate_images(spec: &SyntheticSpec) -> Vec<(Split, GeneratedImage)> {
    let mut out = Vec::new();
    let mut global = 0u64;
    for split in Split::ALL {
        for i in 0..spec.count(split) {
            let id = format!("{split}_{i:03}");
            let seed = spec.seed.wrapping_mul(1_000_003).wrapping_add(global);
            out.push((split, generate_image(&id, split, seed)));
            global += 1;
        }
    }
    out
}

/// Answers for every default question about every image. Colours are the
/// true colours, shapes cycle over images, locations follow the square.
pub fn vqa_answers(images: &[(Split, GeneratedImage)]) -> Vec<MockAnswer> {
    let mut rows = Vec::new();
    for (i, (_, img)) in images.iter().enumerate() {
        for (c, &cell) in CATEGORIES.iter().zip(&img.cells) {
            let spec = CategorySpec::new(c.name);
            let answers = [
                ("color", c.color_word.to_string()),
                ("shape", VQA_SHAPES[i % VQA_SHAPES.len()].to_string()),
                ("location", location_word(cell).to_string()),
            ];
            for (a, answer) in answers {
                let q = default_question(&attr(a)).expect("shipped question");
                rows.push(MockAnswer {
                    image_id: img.record.image.id.clone(),
                    question: build_question(&q, &spec).expect("valid question"),
                    answer,
                });
            }
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFixture {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub records: BTreeMap<Split, Vec<AnnotationRecord>>,
}

impl SyntheticFixture {
    pub fn encoder_descriptor(&self) -> EncoderDescriptor {
        EncoderDescriptor::toy(ENCODER_FILE)
    }

    pub fn mlm_descriptor(&self) -> MaskedLmDescriptor {
        MaskedLmDescriptor::mock(MLM_FILE)
    }

    pub fn vqa_descriptor(&self) -> VqaBackendDescriptor {
        VqaBackendDescriptor::mock(VQA_FILE)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value).expect("fixture serializes");
    std::fs::write(path, text + "\n")
}

/// Writes images, per-split annotations, manifest, encoder weights, prompt
/// config and mock backend tables under `root`.
pub fn write_fixture(root: &Path, spec: &SyntheticSpec) -> std::io::Result<SyntheticFixture> {
    let other = |e: crate::dataset::DatasetError| std::io::Error::other(e.to_string());
    std::fs::create_dir_all(root)?;
    let images = generate_images(spec);
    let mut records: BTreeMap<Split, Vec<AnnotationRecord>> = BTreeMap::new();
    for (split, img) in &images {
        let dir = root.join(split.as_str());
        std::fs::create_dir_all(&dir)?;
        img.pixels
            .save(root.join(&img.record.image.uri))
            .map_err(std::io::Error::other)?;
        records.entry(*split).or_default().push(img.record.clone());
    }
    let names = category_names();
    for (split, recs) in &records {
        export_canonical(recs, &names, &root.join(split.as_str()).join(ANNOTATION_FILE)).map_err(other)?;
    }
    let manifest = manifest(spec);
    manifest.save_json(&root.join(MANIFEST_FILE)).map_err(other)?;
    encoder().save(&root.join(ENCODER_FILE))?;
    write_json(&root.join(MLM_FILE), &mlm_vocabulary())?;
    write_json(&root.join(VQA_FILE), &vqa_answers(&images))?;
    write_json(&root.join(PROMPTS_FILE), &prompt_config())?;
    Ok(SyntheticFixture {
        root: root.to_path_buf(),
        manifest,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_dataset, LoadOptions};

    #[test]
    fn colour_bins() {
        assert_eq!(bin_of(BACKGROUND), 0);
        assert_eq!(bin_of([255, 105, 180]), 5);
        assert_eq!(bin_of([220, 20, 20]), 4);
        assert_eq!(bin_of([240, 240, 240]), 7);
    }

    #[test]
    fn squares_avoid_early_cells_and_each_other() {
        for (_, img) in generate_images(&SyntheticSpec::default()) {
            let mut cells = img.cells.clone();
            assert!(cells.iter().all(|&c| c >= FIRST_CELL));
            cells.sort();
            cells.dedup();
            assert_eq!(cells.len(), CATEGORIES.len());
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_images(&SyntheticSpec::default());
        let b = generate_images(&SyntheticSpec::default());
        assert!(a.iter().zip(&b).all(|(x, y)| x.1.pixels == y.1.pixels && x.1.record == y.1.record));
    }

    #[test]
    fn written_fixture_loads_strictly() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec::default();
        let fx = write_fixture(dir.path(), &spec).unwrap();
        let m = DatasetManifest::from_path(&dir.path().join(MANIFEST_FILE)).unwrap();
        let ds = load_dataset(&m, dir.path(), LoadOptions { strict: true }).unwrap();
        assert_eq!(ds.split(Split::Train), fx.records[&Split::Train].as_slice());
        assert_eq!(ds.num_boxes(), 3 * (spec.train + spec.val + spec.test));
        let enc = ToyEncoder::load(&dir.path().join(ENCODER_FILE)).unwrap();
        assert_eq!(enc, encoder());
        PromptConfig::from_path(&dir.path().join(PROMPTS_FILE))
            .unwrap()
            .manual_entries()
            .unwrap();
    }
}
