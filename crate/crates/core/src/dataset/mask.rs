//! Label masks to tight boxes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::BBox;

pub const DEFAULT_MIN_AREA: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Foreground is 1; one box per 4-connected component.
    Binary,
    /// Each nonzero value is an instance id; one box per id.
    Instance,
}

/// Row-major 2-D label image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    data: Vec<u32>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, data: Vec<u32>) -> Result<Self, DatasetError> {
        if width == 0 || height == 0 {
            return Err(DatasetError::EmptyMask);
        }
        if data.len() != width * height {
            return Err(DatasetError::InvalidMask(format!(
                "{} values for a {width}x{height} mask",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<u32>]) -> Result<Self, DatasetError> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(DatasetError::InvalidMask("ragged rows".into()));
        }
        Self::new(width, rows.len(), rows.concat())
    }

    /// Reads a PNG. Binary mode maps every nonzero pixel to 1 (masks are often
    /// stored as 0/255); instance mode keeps 16-bit luma values as ids.
    pub fn from_png(path: &Path, mode: MaskMode) -> Result<Self, DatasetError> {
        let img = image::open(path).map_err(|e| DatasetError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let luma = img.to_luma16();
        let (w, h) = luma.dimensions();
        let data = luma
            .into_raw()
            .into_iter()
            .map(|v| match mode {
                MaskMode::Binary => u32::from(v != 0),
                MaskMode::Instance => u32::from(v),
            })
            .collect();
        Self::new(w as usize, h as usize, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.data[y * self.width + x]
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

#[derive(Clone, Copy)]
struct Extent {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    area: usize,
}

impl Extent {
    fn at(x: usize, y: usize) -> Self {
        Self {
            x0: x,
            y0: y,
            x1: x + 1,
            y1: y + 1,
            area: 1,
        }
    }

    fn grow(&mut self, x: usize, y: usize) {
        self.x0 = self.x0.min(x);
        self.y0 = self.y0.min(y);
        self.x1 = self.x1.max(x + 1);
        self.y1 = self.y1.max(y + 1);
        self.area += 1;
    }

    fn bbox(&self) -> BBox {
        BBox::new(self.x0 as f64, self.y0 as f64, self.x1 as f64, self.y1 as f64).expect("non-empty extent")
    }
}

/// Tight boxes with exclusive right/bottom edges. Binary components are
/// returned in raster order of their first pixel; instances by ascending id.
/// `min_area` only applies in binary mode.
pub fn mask_to_boxes(mask: &LabelMask, mode: MaskMode, min_area: usize) -> Result<Vec<BBox>, DatasetError> {
    match mode {
        MaskMode::Binary => {
            if let Some(v) = mask.data.iter().find(|&&v| v > 1) {
                return Err(DatasetError::InvalidMode {
                    mode,
                    message: format!("value {v} in a binary mask"),
                });
            }
            Ok(binary_components(mask)
                .into_iter()
                .filter(|e| e.area >= min_area)
                .map(|e| e.bbox())
                .collect())
        }
        MaskMode::Instance => {
            let mut extents: BTreeMap<u32, Extent> = BTreeMap::new();
            for y in 0..mask.height {
                for x in 0..mask.width {
                    let id = mask.get(x, y);
                    if id != 0 {
                        extents
                            .entry(id)
                            .and_modify(|e| e.grow(x, y))
                            .or_insert_with(|| Extent::at(x, y));
                    }
                }
            }
            Ok(extents.values().map(Extent::bbox).collect())
        }
    }
}

fn binary_components(mask: &LabelMask) -> Vec<Extent> {
    let (w, h) = (mask.width, mask.height);
    let mut parent: Vec<usize> = (0..w * h).collect();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if mask.data[i] == 0 {
                continue;
            }
            if x > 0 && mask.data[i - 1] != 0 {
                union(&mut parent, i, i - 1);
            }
            if y > 0 && mask.data[i - w] != 0 {
                union(&mut parent, i, i - w);
            }
        }
    }
    let mut order: Vec<usize> = Vec::new();
    let mut extents: BTreeMap<usize, Extent> = BTreeMap::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if mask.data[i] == 0 {
                continue;
            }
            let root = find(&mut parent, i);
            match extents.get_mut(&root) {
                Some(e) => e.grow(x, y),
                None => {
                    order.push(root);
                    extents.insert(root, Extent::at(x, y));
                }
            }
        }
    }
    order.into_iter().map(|r| extents[&r]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_mask(w: usize, h: usize, rects: &[(usize, usize, usize, usize)]) -> LabelMask {
        let mut data = vec![0; w * h];
        for &(r0, r1, c0, c1) in rects {
            for y in r0..=r1 {
                for x in c0..=c1 {
                    data[y * w + x] = 1;
                }
            }
        }
        LabelMask::new(w, h, data).unwrap()
    }

    #[test]
    fn rectangle_extent() {
        let m = rect_mask(10, 10, &[(2, 4, 3, 6)]);
        let b = mask_to_boxes(&m, MaskMode::Binary, DEFAULT_MIN_AREA).unwrap();
        assert_eq!(b, vec![BBox::new(3.0, 2.0, 7.0, 5.0).unwrap()]);
    }

    #[test]
    fn all_zero_is_empty() {
        let m = LabelMask::new(4, 4, vec![0; 16]).unwrap();
        assert!(mask_to_boxes(&m, MaskMode::Binary, 1).unwrap().is_empty());
        assert!(mask_to_boxes(&m, MaskMode::Instance, 1).unwrap().is_empty());
    }

    #[test]
    fn diagonal_blobs_stay_apart() {
        let m = LabelMask::from_rows(&[vec![1, 1, 0, 0], vec![1, 1, 0, 0], vec![0, 0, 1, 1], vec![0, 0, 1, 1]]).unwrap();
        let b = mask_to_boxes(&m, MaskMode::Binary, 1).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b[1], BBox::new(2.0, 2.0, 4.0, 4.0).unwrap());
    }

    #[test]
    fn u_shape_is_one_component() {
        let m = LabelMask::from_rows(&[vec![1, 0, 1], vec![1, 0, 1], vec![1, 1, 1]]).unwrap();
        let b = mask_to_boxes(&m, MaskMode::Binary, 1).unwrap();
        assert_eq!(b, vec![BBox::new(0.0, 0.0, 3.0, 3.0).unwrap()]);
    }

    #[test]
    fn small_components_dropped() {
        let m = rect_mask(10, 10, &[(0, 0, 0, 0), (5, 8, 5, 8)]);
        let b = mask_to_boxes(&m, MaskMode::Binary, DEFAULT_MIN_AREA).unwrap();
        assert_eq!(b, vec![BBox::new(5.0, 5.0, 9.0, 9.0).unwrap()]);
    }

    #[test]
    fn instance_ids_split_touching_regions() {
        let m = LabelMask::from_rows(&[vec![3, 3, 7], vec![0, 7, 7]]).unwrap();
        let b = mask_to_boxes(&m, MaskMode::Instance, 100).unwrap();
        assert_eq!(
            b,
            vec![BBox::new(0.0, 0.0, 2.0, 1.0).unwrap(), BBox::new(1.0, 0.0, 3.0, 2.0).unwrap()]
        );
    }

    #[test]
    fn binary_mode_rejects_ids() {
        let m = LabelMask::from_rows(&[vec![0, 2]]).unwrap();
        assert!(matches!(
            mask_to_boxes(&m, MaskMode::Binary, 1),
            Err(DatasetError::InvalidMode { .. })
        ));
        assert!(matches!(LabelMask::new(0, 3, vec![]), Err(DatasetError::EmptyMask)));
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let mut img = image::GrayImage::new(6, 6);
        for y in 1..4 {
            for x in 2..5 {
                img.put_pixel(x, y, image::Luma([255]));
            }
        }
        img.save(&p).unwrap();
        let m = LabelMask::from_png(&p, MaskMode::Binary).unwrap();
        let b = mask_to_boxes(&m, MaskMode::Binary, 1).unwrap();
        assert_eq!(b, vec![BBox::new(2.0, 1.0, 5.0, 4.0).unwrap()]);
    }
}
