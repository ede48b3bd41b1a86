//! Manifests for the nine public benchmark datasets. Image files are not
//! bundled; these describe the expected layout and counts.

use std::collections::BTreeMap;

use super::{DatasetManifest, LabelSource, Modality, Split};
use crate::prompt::CategorySpec;

struct Row {
    name: &'static str,
    title: &'static str,
    modality: Modality,
    categories: &'static [&'static str],
    splits: [usize; 3],
    boxes: usize,
    source: LabelSource,
}

const ROWS: &[Row] = &[
    Row {
        name: "isic2016",
        title: "ISIC 2016",
        modality: Modality::Photography,
        categories: &["skin lesion"],
        splits: [720, 180, 379],
        boxes: 1282,
        source: LabelSource::BinaryMask,
    },
    Row {
        name: "dfuc2020",
        title: "DFUC 2020",
        modality: Modality::Photography,
        categories: &["wound"],
        splits: [1280, 320, 400],
        boxes: 2496,
        source: LabelSource::Bbox,
    },
    Row {
        name: "polyp",
        title: "Polyp Benchmark",
        modality: Modality::Endoscopy,
        categories: &["polyp"],
        splits: [1160, 290, 798],
        boxes: 2374,
        source: LabelSource::BinaryMask,
    },
    Row {
        name: "bccd",
        title: "BCCD",
        modality: Modality::Cytology,
        categories: &["platelet", "red blood cell", "white blood cell"],
        splits: [765, 73, 36],
        boxes: 11789,
        source: LabelSource::Bbox,
    },
    Row {
        name: "cpm17",
        title: "CPM-17",
        modality: Modality::Histopathology,
        categories: &["nucleus"],
        splits: [25, 7, 32],
        boxes: 7506,
        source: LabelSource::InstanceMask,
    },
    Row {
        name: "tbx11k",
        title: "TBX11K",
        modality: Modality::Xray,
        categories: &["pulmonary tuberculosis"],
        splits: [479, 120, 200],
        boxes: 1211,
        source: LabelSource::Bbox,
    },
    Row {
        name: "luna16",
        title: "Luna16",
        modality: Modality::Ct,
        categories: &["lung nodule"],
        splits: [2590, 589, 818],
        boxes: 7545,
        source: LabelSource::BinaryMask,
    },
    Row {
        name: "adni",
        title: "ADNI",
        modality: Modality::Mri,
        categories: &["hippocampus"],
        splits: [759, 190, 237],
        boxes: 1186,
        source: LabelSource::BinaryMask,
    },
    Row {
        name: "tn3k",
        title: "TN3k",
        modality: Modality::Ultrasound,
        categories: &["thyroid nodule"],
        splits: [2303, 576, 614],
        boxes: 3811,
        source: LabelSource::BinaryMask,
    },
];

const POLYP_TEST_SUBSETS: &[(&str, usize)] = &[
    ("CVC-300", 60),
    ("CVC-ClinicDB", 62),
    ("CVC-ColonDB", 380),
    ("Kvasir", 100),
    ("ETIS", 196),
];

pub fn builtin_manifests() -> Vec<DatasetManifest> {
    ROWS.iter()
        .map(|r| DatasetManifest {
            name: r.name.into(),
            title: r.title.into(),
            modality: r.modality,
            categories: r.categories.iter().map(|c| CategorySpec::new(c)).collect(),
            splits: Split::ALL.into_iter().zip(r.splits).collect(),
            expected_boxes: r.boxes,
            label_source: r.source,
            test_subsets: if r.name == "polyp" {
                POLYP_TEST_SUBSETS.iter().map(|&(k, v)| (k.to_string(), v)).collect()
            } else {
                BTreeMap::new()
            },
        })
        .collect()
}

pub fn builtin_manifest(name: &str) -> Option<DatasetManifest> {
    builtin_manifests().into_iter().find(|m| m.name == name)
}
