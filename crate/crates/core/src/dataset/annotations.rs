//! Canonical annotation documents.
//!
//! Layout under a dataset root:
//!
//! ```text
//! <root>/manifest.json
//! <root>/<split>/annotations.json
//! <root>/<split>/<file_name>
//! ```
//!
//! `annotations.json` holds `images` (`id`, `file_name`, `width`, `height`),
//! `annotations` (`id`, `image_id`, `category_id`, `bbox` as x, y, width,
//! height) and `categories` (`id`, `name`). Loaded image ids are the file
//! name without its extension, so they survive renumbering on export.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{io_err, mask_to_boxes, DatasetError, DatasetManifest, LabelMask, MaskMode, Split};
use crate::vqa::ImageRef;
use crate::BBox;

pub const ANNOTATION_FILE: &str = "annotations.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image: ImageRef,
    pub boxes: Vec<LabeledBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocCategory {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CanonicalDocument {
    pub images: Vec<DocImage>,
    pub annotations: Vec<DocAnnotation>,
    pub categories: Vec<DocCategory>,
}

fn file_stem(file_name: &str) -> &str {
    match file_name.rfind('.') {
        Some(i) if i > 0 => &file_name[..i],
        _ => file_name,
    }
}

/// Parses one split's document. `categories` restricts the allowed names.
pub fn load_annotation_file(
    path: &Path,
    split: Split,
    categories: &[String],
) -> Result<Vec<AnnotationRecord>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let doc: CanonicalDocument = serde_json::from_str(&text).map_err(|e| DatasetError::UnparsableAnnotation {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let invalid = |message: String| DatasetError::InvalidAnnotation {
        path: path.display().to_string(),
        message,
    };

    let mut cat_names = BTreeMap::new();
    for c in &doc.categories {
        if !categories.contains(&c.name) {
            return Err(invalid(format!("category {:?} is not in the manifest", c.name)));
        }
        if cat_names.insert(c.id, c.name.clone()).is_some() {
            return Err(invalid(format!("duplicate category id {}", c.id)));
        }
    }

    let mut index = BTreeMap::new();
    let mut stems = BTreeSet::new();
    let mut records = Vec::with_capacity(doc.images.len());
    for img in &doc.images {
        if img.file_name.is_empty() || img.file_name.contains(['/', '\\']) {
            return Err(invalid(format!("file_name {:?} must be a bare file name", img.file_name)));
        }
        if !stems.insert(file_stem(&img.file_name).to_string()) {
            return Err(invalid(format!("duplicate image {:?}", file_stem(&img.file_name))));
        }
        let image = ImageRef::new(
            file_stem(&img.file_name),
            &format!("{split}/{}", img.file_name),
            img.width,
            img.height,
        )
        .map_err(|e| invalid(e.to_string()))?;
        if index.insert(img.id, records.len()).is_some() {
            return Err(invalid(format!("duplicate image id {}", img.id)));
        }
        records.push(AnnotationRecord {
            image,
            boxes: Vec::new(),
        });
    }

    for a in &doc.annotations {
        let &slot = index
            .get(&a.image_id)
            .ok_or_else(|| invalid(format!("annotation {} refers to unknown image {}", a.id, a.image_id)))?;
        let category = cat_names
            .get(&a.category_id)
            .ok_or_else(|| invalid(format!("annotation {} refers to unknown category {}", a.id, a.category_id)))?;
        let [x, y, w, h] = a.bbox;
        let bbox = BBox::from_xywh(x, y, w, h).map_err(|e| invalid(format!("annotation {}: {e}", a.id)))?;
        let rec = &mut records[slot];
        if !bbox.within(rec.image.width as f64, rec.image.height as f64) {
            return Err(invalid(format!(
                "annotation {} box {:?} outside {}x{} image",
                a.id, a.bbox, rec.image.width, rec.image.height
            )));
        }
        rec.boxes.push(LabeledBox {
            bbox,
            category: category.clone(),
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadOptions {
    /// Count mismatches are errors when set, warnings otherwise.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
    pub splits: BTreeMap<Split, Vec<AnnotationRecord>>,
    pub warnings: Vec<DatasetError>,
}

impl LoadedDataset {
    pub fn split(&self, split: Split) -> &[AnnotationRecord] {
        self.splits.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn num_boxes(&self) -> usize {
        self.splits.values().flatten().map(|r| r.boxes.len()).sum()
    }

    pub fn find_image(&self, id: &str) -> Option<(Split, &AnnotationRecord)> {
        self.splits
            .iter()
            .find_map(|(s, recs)| recs.iter().find(|r| r.image.id == id).map(|r| (*s, r)))
    }
}

/// Loads every split declared by the manifest and checks image and box
/// counts against it.
pub fn load_dataset(manifest: &DatasetManifest, root: &Path, options: LoadOptions) -> Result<LoadedDataset, DatasetError> {
    manifest.validate()?;
    let categories = manifest.category_names();
    let splits: Vec<Split> = manifest.splits.keys().copied().collect();
    for &split in &splits {
        let p = root.join(split.as_str()).join(ANNOTATION_FILE);
        if !p.is_file() {
            return Err(DatasetError::MissingSplit {
                split,
                path: p.display().to_string(),
            });
        }
    }
    let loaded: Vec<(Split, Vec<AnnotationRecord>)> = splits
        .par_iter()
        .map(|&split| {
            let p = root.join(split.as_str()).join(ANNOTATION_FILE);
            load_annotation_file(&p, split, &categories).map(|r| (split, r))
        })
        .collect::<Result<_, _>>()?;

    let mut seen = BTreeSet::new();
    for (split, recs) in &loaded {
        for r in recs {
            if !seen.insert(r.image.id.clone()) {
                return Err(DatasetError::InvalidAnnotation {
                    path: root.display().to_string(),
                    message: format!("image {:?} appears in more than one split ({split})", r.image.id),
                });
            }
        }
    }

    let mut mismatches = Vec::new();
    for (split, recs) in &loaded {
        let expected = manifest.splits[split];
        if recs.len() != expected {
            mismatches.push(DatasetError::CountMismatch {
                split: Some(*split),
                what: "image",
                expected,
                actual: recs.len(),
            });
        }
    }
    let boxes: usize = loaded.iter().flat_map(|(_, r)| r).map(|r| r.boxes.len()).sum();
    if boxes != manifest.expected_boxes {
        mismatches.push(DatasetError::CountMismatch {
            split: None,
            what: "box",
            expected: manifest.expected_boxes,
            actual: boxes,
        });
    }
    if options.strict {
        if let Some(first) = mismatches.into_iter().next() {
            return Err(first);
        }
        mismatches = Vec::new();
    }
    Ok(LoadedDataset {
        manifest: manifest.clone(),
        root: root.to_path_buf(),
        splits: loaded.into_iter().collect(),
        warnings: mismatches,
    })
}

fn uri_file_name(uri: &str) -> &str {
    uri.rsplit(['/', '\\']).next().unwrap_or(uri)
}

/// Builds the canonical document. Image, annotation and category ids are
/// assigned 1.. in record, box and `categories` order.
pub fn canonical_document(records: &[AnnotationRecord], categories: &[String]) -> Result<CanonicalDocument, DatasetError> {
    let cat_ids: BTreeMap<&str, u64> = categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i as u64 + 1))
        .collect();
    let mut doc = CanonicalDocument {
        categories: categories
            .iter()
            .enumerate()
            .map(|(i, name)| DocCategory {
                id: i as u64 + 1,
                name: name.clone(),
            })
            .collect(),
        ..Default::default()
    };
    for (i, r) in records.iter().enumerate() {
        let image_id = i as u64 + 1;
        doc.images.push(DocImage {
            id: image_id,
            file_name: uri_file_name(&r.image.uri).to_string(),
            width: r.image.width,
            height: r.image.height,
        });
        for b in &r.boxes {
            let category_id = *cat_ids.get(b.category.as_str()).ok_or_else(|| DatasetError::InvalidAnnotation {
                path: r.image.uri.clone(),
                message: format!("category {:?} not in export category list", b.category),
            })?;
            doc.annotations.push(DocAnnotation {
                id: doc.annotations.len() as u64 + 1,
                image_id,
                category_id,
                bbox: b.bbox.to_xywh(),
            });
        }
    }
    Ok(doc)
}

pub fn export_canonical(records: &[AnnotationRecord], categories: &[String], path: &Path) -> Result<(), DatasetError> {
    let doc = canonical_document(records, categories)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let text = serde_json::to_string_pretty(&doc).expect("document serializes");
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

/// Converts `<src>/images/<name>` plus `<src>/masks/<stem>.png` pairs into
/// records for `split`, one category for every box.
pub fn convert_mask_split(
    src: &Path,
    split: Split,
    category: &str,
    mode: MaskMode,
    min_area: usize,
) -> Result<Vec<AnnotationRecord>, DatasetError> {
    let images_dir = src.join("images");
    let mut names: Vec<String> = std::fs::read_dir(&images_dir)
        .map_err(|e| io_err(&images_dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
        .par_iter()
        .map(|name| {
            let img_path = images_dir.join(name);
            let (w, h) = image::image_dimensions(&img_path).map_err(|e| io_err(&img_path, e))?;
            let mask_path = src.join("masks").join(format!("{}.png", file_stem(name)));
            let mask = LabelMask::from_png(&mask_path, mode)?;
            if (mask.width(), mask.height()) != (w as usize, h as usize) {
                return Err(DatasetError::InvalidMask(format!(
                    "{} is {}x{}, image is {w}x{h}",
                    mask_path.display(),
                    mask.width(),
                    mask.height()
                )));
            }
            let boxes = mask_to_boxes(&mask, mode, min_area)?
                .into_iter()
                .map(|bbox| LabeledBox {
                    bbox,
                    category: category.to_string(),
                })
                .collect();
            let image = ImageRef::new(file_stem(name), &format!("{split}/{name}"), w, h).map_err(|e| {
                DatasetError::InvalidAnnotation {
                    path: img_path.display().to_string(),
                    message: e.to_string(),
                }
            })?;
            Ok(AnnotationRecord { image, boxes })
        })
        .collect()
}

/// Dataset directories directly under `data_root` that hold a
/// `manifest.json` or `manifest.toml`, sorted by directory name.
pub fn discover_datasets(data_root: &Path) -> Result<Vec<(DatasetManifest, PathBuf)>, DatasetError> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(data_root)
        .map_err(|e| io_err(data_root, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut out = Vec::new();
    for dir in dirs {
        for name in ["manifest.json", "manifest.toml"] {
            let p = dir.join(name);
            if p.is_file() {
                out.push((DatasetManifest::from_path(&p)?, dir.clone()));
                break;
            }
        }
    }
    Ok(out)
}
