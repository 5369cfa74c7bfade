//! Depth-guided segmentation of detector bounding boxes into pixel-wise
//! dynamic masks: histogram-mode depth estimate, in-band thresholding,
//! connected-component filtering and dilation.

use std::collections::HashSet;

use crate::dataset::Detection;
use crate::geometry::DepthImage;

/// Per-pixel dynamic/static labeling, row-major, `true` = dynamic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "bit count mismatch");
        Self {
            width,
            height,
            bits,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    /// Mask lookup at subpixel coordinates (nearest pixel); out-of-bounds
    /// reads as static.
    pub fn contains_point(&self, u: f64, v: f64) -> bool {
        let x = u.round();
        let y = v.round();
        if x < 0.0 || y < 0.0 {
            return false;
        }
        let (x, y) = (x as usize, y as usize);
        x < self.width && y < self.height && self.get(x, y)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn union_with(&mut self, other: &BinaryMask) {
        assert_eq!((self.width, self.height), (other.width, other.height));
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    /// Intersection-over-union against another mask of the same size.
    /// Two empty masks have IoU 1.
    pub fn iou(&self, other: &BinaryMask) -> f64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let mut inter = 0usize;
        let mut union = 0usize;
        for (a, b) in self.bits.iter().zip(&other.bits) {
            if *a && *b {
                inter += 1;
            }
            if *a || *b {
                union += 1;
            }
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Tight bounding box of the set pixels as (x, y, w, h).
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut min_x = usize::MAX;
        let mut min_y = usize::MAX;
        let mut max_x = 0usize;
        let mut max_y = 0usize;
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    any = true;
                    min_x = min_x.min(x);
                    min_y = min_y.min(y);
                    max_x = max_x.max(x);
                    max_y = max_y.max(y);
                }
            }
        }
        any.then(|| (min_x, min_y, max_x - min_x + 1, max_y - min_y + 1))
    }
}

/// Connected-component labels, row-major; 0 = background, components are
/// numbered 1..=n in descending size order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
}

impl LabelImage {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }
}

/// 8-connected component labeling. Returns the label image and component
/// sizes indexed by `label - 1` (descending).
pub fn connected_components(mask: &BinaryMask) -> (LabelImage, Vec<usize>) {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0u32; w * h];
    let mut sizes: Vec<usize> = Vec::new();
    let mut stack: Vec<(usize, usize)> = Vec::new();
    let mut next = 1u32;

    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) || labels[y * w + x] != 0 {
                continue;
            }
            let label = next;
            next += 1;
            let mut size = 0usize;
            labels[y * w + x] = label;
            stack.push((x, y));
            while let Some((cx, cy)) = stack.pop() {
                size += 1;
                let x_lo = cx.saturating_sub(1);
                let y_lo = cy.saturating_sub(1);
                for ny in y_lo..=(cy + 1).min(h - 1) {
                    for nx in x_lo..=(cx + 1).min(w - 1) {
                        let idx = ny * w + nx;
                        if mask.bits[idx] && labels[idx] == 0 {
                            labels[idx] = label;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
            sizes.push(size);
        }
    }

    // Relabel in descending size order.
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|a, b| sizes[*b].cmp(&sizes[*a]).then(a.cmp(b)));
    let mut remap = vec![0u32; sizes.len() + 1];
    for (rank, old) in order.iter().enumerate() {
        remap[old + 1] = (rank + 1) as u32;
    }
    for l in labels.iter_mut() {
        *l = remap[*l as usize];
    }
    let sorted_sizes: Vec<usize> = order.iter().map(|i| sizes[*i]).collect();

    (
        LabelImage {
            width: w,
            height: h,
            labels,
        },
        sorted_sizes,
    )
}

/// Binary dilation with a square structuring element of Chebyshev radius
/// `radius`. Separable: horizontal sweep then vertical sweep.
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width, mask.height);
    let mut horiz = vec![false; w * h];
    for y in 0..h {
        let row = &mask.bits[y * w..(y + 1) * w];
        let out = &mut horiz[y * w..(y + 1) * w];
        // Distance to the most recent set pixel, scanning both directions.
        let mut since = usize::MAX;
        for x in 0..w {
            since = if row[x] { 0 } else { since.saturating_add(1) };
            if since <= radius {
                out[x] = true;
            }
        }
        since = usize::MAX;
        for x in (0..w).rev() {
            since = if row[x] { 0 } else { since.saturating_add(1) };
            if since <= radius {
                out[x] = true;
            }
        }
    }
    let mut bits = vec![false; w * h];
    for x in 0..w {
        let mut since = usize::MAX;
        for y in 0..h {
            since = if horiz[y * w + x] { 0 } else { since.saturating_add(1) };
            if since <= radius {
                bits[y * w + x] = true;
            }
        }
        since = usize::MAX;
        for y in (0..h).rev() {
            since = if horiz[y * w + x] { 0 } else { since.saturating_add(1) };
            if since <= radius {
                bits[y * w + x] = true;
            }
        }
    }
    BinaryMask::from_bits(w, h, bits)
}

/// Segmentation tuning knobs; see config keys `segmentation.*`.
#[derive(Debug, Clone)]
pub struct SegmentationParams {
    /// Absolute depth band around the object-depth estimate (m).
    pub abs_band: f64,
    /// Relative depth band (fraction of the estimate).
    pub rel_band: f64,
    /// Mask dilation radius (px).
    pub dilation_radius: usize,
    /// Minimum detector confidence.
    pub conf_threshold: f64,
    /// Detector classes treated as dynamic.
    pub dynamic_classes: HashSet<String>,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            abs_band: 0.2,
            rel_band: 0.1,
            dilation_radius: 5,
            conf_threshold: 0.5,
            dynamic_classes: HashSet::from(["person".to_string()]),
        }
    }
}

/// A bounding box clamped to image bounds, in integer pixels.
#[derive(Debug, Clone, Copy)]
struct PixelBox {
    x0: usize,
    y0: usize,
    x1: usize, // exclusive
    y1: usize, // exclusive
}

impl PixelBox {
    fn from_bbox(bbox: (f64, f64, f64, f64), width: usize, height: usize) -> Option<Self> {
        let (x, y, w, h) = bbox;
        let x0 = x.max(0.0).floor() as usize;
        let y0 = y.max(0.0).floor() as usize;
        let x1 = ((x + w).ceil().max(0.0) as usize).min(width);
        let y1 = ((y + h).ceil().max(0.0) as usize).min(height);
        (x0 < x1 && y0 < y1).then_some(Self { x0, y0, x1, y1 })
    }

    /// Central region scaled by `frac` around the box center.
    fn central(&self, frac: f64) -> Self {
        let w = (self.x1 - self.x0) as f64;
        let h = (self.y1 - self.y0) as f64;
        let cx = self.x0 as f64 + w / 2.0;
        let cy = self.y0 as f64 + h / 2.0;
        let hw = (w * frac / 2.0).max(0.5);
        let hh = (h * frac / 2.0).max(0.5);
        Self {
            x0: (cx - hw).floor().max(self.x0 as f64) as usize,
            y0: (cy - hh).floor().max(self.y0 as f64) as usize,
            x1: ((cx + hw).ceil() as usize).min(self.x1),
            y1: ((cy + hh).ceil() as usize).min(self.y1),
        }
    }

}

/// Outcome of [`segment_box`]; `had_depth` is false when the box contained
/// no valid depth (the mask is then empty).
#[derive(Debug, Clone)]
pub struct SegmentResult {
    pub mask: BinaryMask,
    pub had_depth: bool,
}

/// Segment the object inside a detector box using depth: the object depth
/// is the mode of a 64-bin histogram over the central half-box, pixels
/// within `max(abs_band, rel_band * d)` of it are kept, components not
/// touching the central region are dropped, and the result is dilated.
pub fn segment_box(
    depth: &DepthImage,
    bbox: (f64, f64, f64, f64),
    params: &SegmentationParams,
) -> SegmentResult {
    let (w, h) = (depth.width, depth.height);
    let empty = || SegmentResult {
        mask: BinaryMask::new(w, h),
        had_depth: false,
    };
    let Some(pb) = PixelBox::from_bbox(bbox, w, h) else {
        return empty();
    };
    let central = pb.central(0.5);

    // Object depth estimate: mode of a 64-bin histogram over valid depths
    // in the central region.
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    let mut n_valid = 0usize;
    for y in central.y0..central.y1 {
        for x in central.x0..central.x1 {
            let d = depth.at(x, y);
            if d > 0.0 {
                lo = lo.min(d);
                hi = hi.max(d);
                n_valid += 1;
            }
        }
    }
    if n_valid == 0 {
        return empty();
    }
    const BINS: usize = 64;
    let span = (hi - lo).max(f32::EPSILON);
    let mut hist = [0u32; BINS];
    for y in central.y0..central.y1 {
        for x in central.x0..central.x1 {
            let d = depth.at(x, y);
            if d > 0.0 {
                let bin = (((d - lo) / span) * BINS as f32) as usize;
                hist[bin.min(BINS - 1)] += 1;
            }
        }
    }
    let mode_bin = hist
        .iter()
        .enumerate()
        .max_by_key(|(_, c)| **c)
        .map(|(i, _)| i)
        .unwrap();
    let d_star = (lo + span * (mode_bin as f32 + 0.5) / BINS as f32) as f64;

    // In-band pixels inside the box.
    let band = params.abs_band.max(params.rel_band * d_star);
    let mut mask = BinaryMask::new(w, h);
    for y in pb.y0..pb.y1 {
        for x in pb.x0..pb.x1 {
            let d = depth.at(x, y) as f64;
            if d > 0.0 && (d - d_star).abs() <= band {
                mask.set(x, y, true);
            }
        }
    }

    // Keep only components that overlap the central region.
    let (labels, sizes) = connected_components(&mask);
    if !sizes.is_empty() {
        let mut keep = vec![false; sizes.len() + 1];
        for y in central.y0..central.y1 {
            for x in central.x0..central.x1 {
                let l = labels.get(x, y);
                if l != 0 {
                    keep[l as usize] = true;
                }
            }
        }
        for y in pb.y0..pb.y1 {
            for x in pb.x0..pb.x1 {
                let l = labels.get(x, y);
                if l != 0 && !keep[l as usize] {
                    mask.set(x, y, false);
                }
            }
        }
    }

    SegmentResult {
        mask: dilate(&mask, params.dilation_radius),
        had_depth: true,
    }
}

/// Union of [`segment_box`] over detections of a dynamic class with
/// sufficient confidence.
pub fn detections_to_mask(
    depth: &DepthImage,
    detections: &[Detection],
    params: &SegmentationParams,
) -> BinaryMask {
    let mut mask = BinaryMask::new(depth.width, depth.height);
    for det in detections {
        if det.confidence < params.conf_threshold {
            continue;
        }
        if !params.dynamic_classes.contains(&det.class_name) {
            continue;
        }
        let result = segment_box(depth, det.bbox, params);
        mask.union_with(&result.mask);
    }
    mask
}
