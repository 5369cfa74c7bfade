//! FAST corner scoring, grid-constrained point sampling, and pyramidal
//! Lucas-Kanade tracking. Shared by dynamic-point mask propagation and
//! static-point tracking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::GrayImage;
use crate::segmentation::BinaryMask;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("pixel ({u}, {v}) too close to the image border")]
    OutsideBorder { u: usize, v: usize },
}

/// 16-pixel Bresenham circle of radius 3, clockwise from the top.
pub const FAST_CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

/// Image border (px) required by the FAST circle.
pub const FAST_BORDER: usize = 3;

/// FAST-9 corner score: 0 unless some contiguous arc of >= 9 circle
/// pixels is entirely brighter than `center + t` or entirely darker than
/// `center - t`; otherwise the best qualifying arc's minimum contrast
/// above the threshold, `min |p - center| - t`.
pub fn fast_score(img: &GrayImage, u: usize, v: usize, t: u8) -> Result<i32, FlowError> {
    if u < FAST_BORDER
        || v < FAST_BORDER
        || u >= img.width - FAST_BORDER
        || v >= img.height - FAST_BORDER
    {
        return Err(FlowError::OutsideBorder { u, v });
    }
    Ok(fast_score_unchecked(img, u, v, t))
}

pub(crate) fn fast_score_unchecked(img: &GrayImage, u: usize, v: usize, t: u8) -> i32 {
    let c = img.at(u, v) as i32;
    let t = t as i32;

    // High-speed rejection on the four compass pixels: a 9-long arc
    // always contains at least 2 of them on the same side.
    let compass = [0usize, 4, 8, 12].map(|i| {
        let (dx, dy) = FAST_CIRCLE[i];
        img.at((u as i32 + dx) as usize, (v as i32 + dy) as usize) as i32 - c
    });
    let brighter = compass.iter().filter(|d| **d > t).count();
    let darker = compass.iter().filter(|d| **d < -t).count();
    if brighter < 2 && darker < 2 {
        return 0;
    }

    let mut diffs = [0i32; 16];
    for (i, (dx, dy)) in FAST_CIRCLE.iter().enumerate() {
        let p = img.at((u as i32 + dx) as usize, (v as i32 + dy) as usize) as i32;
        diffs[i] = p - c;
    }

    let mut best = 0i32;
    for start in 0..16 {
        let mut bright_min = i32::MAX;
        let mut dark_min = i32::MAX;
        let mut all_bright = true;
        let mut all_dark = true;
        for k in 0..9 {
            let d = diffs[(start + k) % 16];
            all_bright &= d > t;
            all_dark &= d < -t;
            if !all_bright && !all_dark {
                break;
            }
            bright_min = bright_min.min(d);
            dark_min = dark_min.min(-d);
        }
        if all_bright {
            best = best.max(bright_min - t);
        }
        if all_dark {
            best = best.max(dark_min - t);
        }
    }
    best
}

/// A sampled point with its FAST score and originating grid cell.
#[derive(Debug, Clone, Copy)]
pub struct Keypoint {
    pub position: (f64, f64),
    pub score: f32,
    pub source_cell: Option<usize>,
}

/// One point per `cell`-aligned tile that contains masked pixels: the
/// masked pixel with the best FAST score, or a seeded-random masked pixel
/// when no score clears zero. Points keep a 3 px image border.
pub fn sample_masked_points(
    img: &GrayImage,
    mask: &BinaryMask,
    cell: usize,
    t: u8,
    seed: u64,
) -> Vec<Keypoint> {
    assert!(cell >= 4, "cell size must be at least 4 px");
    assert_eq!((img.width, img.height), (mask.width, mask.height));
    let (w, h) = (img.width, img.height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let cells_x = w.div_ceil(cell);

    for y0 in (0..h).step_by(cell) {
        for x0 in (0..w).step_by(cell) {
            let x1 = (x0 + cell).min(w);
            let y1 = (y0 + cell).min(h);
            let cell_idx = (y0 / cell) * cells_x + x0 / cell;

            let mut best: Option<(i32, usize, usize)> = None;
            let mut masked = 0usize;
            for y in y0.max(FAST_BORDER)..y1.min(h - FAST_BORDER) {
                for x in x0.max(FAST_BORDER)..x1.min(w - FAST_BORDER) {
                    if !mask.get(x, y) {
                        continue;
                    }
                    masked += 1;
                    let score = fast_score_unchecked(img, x, y, t);
                    if score > 0 && best.map_or(true, |(s, _, _)| score > s) {
                        best = Some((score, x, y));
                    }
                }
            }
            if let Some((score, x, y)) = best {
                points.push(Keypoint {
                    position: (x as f64, y as f64),
                    score: score as f32,
                    source_cell: Some(cell_idx),
                });
            } else if masked > 0 {
                // No FAST corner in this cell: fall back to a random
                // masked pixel.
                let pick = rng.gen_range(0..masked);
                let mut seen = 0usize;
                'outer: for y in y0.max(FAST_BORDER)..y1.min(h - FAST_BORDER) {
                    for x in x0.max(FAST_BORDER)..x1.min(w - FAST_BORDER) {
                        if mask.get(x, y) {
                            if seen == pick {
                                points.push(Keypoint {
                                    position: (x as f64, y as f64),
                                    score: 0.0,
                                    source_cell: Some(cell_idx),
                                });
                                break 'outer;
                            }
                            seen += 1;
                        }
                    }
                }
            }
        }
    }
    points
}

/// Coarse-to-fine grayscale pyramid: level 0 is full resolution, each
/// level above is a 2x2 box downsample.
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub levels: Vec<GrayImage>,
}

impl Pyramid {
    pub fn build(img: &GrayImage, n_levels: usize) -> Self {
        let mut levels = Vec::with_capacity(n_levels.max(1));
        levels.push(img.clone());
        for _ in 1..n_levels {
            let prev = levels.last().unwrap();
            let (w, h) = (prev.width / 2, prev.height / 2);
            if w < 16 || h < 16 {
                break;
            }
            let mut next = GrayImage::new(w, h);
            for y in 0..h {
                for x in 0..w {
                    let sum = prev.at(2 * x, 2 * y) as u32
                        + prev.at(2 * x + 1, 2 * y) as u32
                        + prev.at(2 * x, 2 * y + 1) as u32
                        + prev.at(2 * x + 1, 2 * y + 1) as u32;
                    next.set(x, y, ((sum + 2) / 4) as u8);
                }
            }
            levels.push(next);
        }
        Self { levels }
    }

    pub fn base(&self) -> &GrayImage {
        &self.levels[0]
    }
}

/// Lucas-Kanade parameters; see config keys `flow.*`.
#[derive(Debug, Clone, Copy)]
pub struct LkParams {
    /// Full window side length (odd), px.
    pub window: usize,
    pub levels: usize,
    pub max_iters: usize,
    /// Convergence threshold on the iteration step, px.
    pub eps: f64,
    /// Forward-backward round-trip gate, px; <= 0 disables the check.
    pub fb_threshold: f64,
    /// Minimum eigenvalue of the normalized window gradient matrix.
    pub min_eig: f64,
}

impl Default for LkParams {
    fn default() -> Self {
        Self {
            window: 21,
            levels: 3,
            max_iters: 30,
            eps: 0.01,
            fb_threshold: 1.0,
            min_eig: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Tracked,
    /// Solver diverged or the window was ill-conditioned.
    Lost,
    OutOfBounds,
    FbCheckFailed,
}

/// Per-point tracking outcome. `residual` is the mean absolute intensity
/// error over the window (0-255 units) at the final position.
#[derive(Debug, Clone, Copy)]
pub struct FlowPoint {
    pub pos: (f64, f64),
    pub status: TrackStatus,
    pub residual: f32,
}

impl FlowPoint {
    pub fn tracked(&self) -> bool {
        self.status == TrackStatus::Tracked
    }

    fn failed(status: TrackStatus, pos: (f64, f64)) -> Self {
        Self {
            pos,
            status,
            residual: f32::INFINITY,
        }
    }
}

fn window_fits(img: &GrayImage, x: f64, y: f64, margin: f64) -> bool {
    x >= margin
        && y >= margin
        && x <= img.width as f64 - 1.0 - margin
        && y <= img.height as f64 - 1.0 - margin
}

/// Track one point from `prev` to `cur`, coarse-to-fine. Gauss-Newton on
/// the brightness-constancy linearization, template gradients fixed per
/// level.
fn track_point(prev: &Pyramid, cur: &Pyramid, point: (f64, f64), params: &LkParams) -> FlowPoint {
    let half = (params.window / 2) as i32;
    let margin = half as f64 + 1.0;
    let n_levels = params.levels.min(prev.levels.len()).min(cur.levels.len());
    let top = n_levels.saturating_sub(1);

    // Displacement carried across levels, in the current level's scale.
    let mut d = (0.0f64, 0.0f64);
    let mut final_residual = f32::INFINITY;

    for level in (0..n_levels).rev() {
        let scale = 1.0 / (1u32 << level) as f64;
        let p = (point.0 * scale, point.1 * scale);
        let prev_img = &prev.levels[level];
        let cur_img = &cur.levels[level];
        let finest = level == 0;

        if level < top {
            d = (d.0 * 2.0, d.1 * 2.0);
        }

        if !window_fits(prev_img, p.0, p.1, margin) {
            if finest {
                return FlowPoint::failed(TrackStatus::OutOfBounds, point);
            }
            continue;
        }

        // Template intensities and gradients, normalized to [0,1].
        let n_px = (params.window * params.window) as f64;
        let mut template = vec![0.0f64; params.window * params.window];
        let mut grad = vec![(0.0f64, 0.0f64); params.window * params.window];
        let mut gxx = 0.0;
        let mut gxy = 0.0;
        let mut gyy = 0.0;
        let mut idx = 0;
        for wy in -half..=half {
            for wx in -half..=half {
                let x = p.0 + wx as f64;
                let y = p.1 + wy as f64;
                let val = prev_img.bilinear(x as f32, y as f32) as f64 / 255.0;
                let gx = (prev_img.bilinear((x + 1.0) as f32, y as f32) as f64
                    - prev_img.bilinear((x - 1.0) as f32, y as f32) as f64)
                    / (2.0 * 255.0);
                let gy = (prev_img.bilinear(x as f32, (y + 1.0) as f32) as f64
                    - prev_img.bilinear(x as f32, (y - 1.0) as f32) as f64)
                    / (2.0 * 255.0);
                template[idx] = val;
                grad[idx] = (gx, gy);
                gxx += gx * gx;
                gxy += gx * gy;
                gyy += gy * gy;
                idx += 1;
            }
        }

        // Conditioning gate on the per-pixel-normalized gradient matrix.
        let trace_half = (gxx + gyy) / (2.0 * n_px);
        let det_norm = (gxx * gyy - gxy * gxy) / (n_px * n_px);
        let min_eig = trace_half - (trace_half * trace_half - det_norm).max(0.0).sqrt();
        if min_eig < params.min_eig {
            if finest {
                return FlowPoint::failed(TrackStatus::Lost, point);
            }
            continue;
        }
        let det_g = gxx * gyy - gxy * gxy;

        for _ in 0..params.max_iters {
            let q = (p.0 + d.0, p.1 + d.1);
            if !window_fits(cur_img, q.0, q.1, margin) {
                if finest {
                    return FlowPoint::failed(
                        TrackStatus::OutOfBounds,
                        (point.0 + d.0, point.1 + d.1),
                    );
                }
                break;
            }
            let mut bx = 0.0;
            let mut by = 0.0;
            let mut abs_err = 0.0f64;
            let mut idx = 0;
            for wy in -half..=half {
                for wx in -half..=half {
                    let val = cur_img
                        .bilinear((q.0 + wx as f64) as f32, (q.1 + wy as f64) as f32)
                        as f64
                        / 255.0;
                    let di = template[idx] - val;
                    bx += di * grad[idx].0;
                    by += di * grad[idx].1;
                    abs_err += di.abs();
                    idx += 1;
                }
            }
            if finest {
                final_residual = (abs_err / n_px * 255.0) as f32;
            }
            let step_x = (gyy * bx - gxy * by) / det_g;
            let step_y = (gxx * by - gxy * bx) / det_g;
            d = (d.0 + step_x, d.1 + step_y);
            if step_x.hypot(step_y) < params.eps {
                break;
            }
        }
    }

    let pos = (point.0 + d.0, point.1 + d.1);
    if !window_fits(cur.base(), pos.0, pos.1, 1.0) {
        return FlowPoint::failed(TrackStatus::OutOfBounds, pos);
    }
    FlowPoint {
        pos,
        status: TrackStatus::Tracked,
        residual: final_residual,
    }
}

/// Track `points` from `prev` to `cur` with an optional forward-backward
/// consistency check.
pub fn lk_track(
    prev: &Pyramid,
    cur: &Pyramid,
    points: &[(f64, f64)],
    params: &LkParams,
) -> Vec<FlowPoint> {
    points
        .iter()
        .map(|p| {
            let fwd = track_point(prev, cur, *p, params);
            if !fwd.tracked() || params.fb_threshold <= 0.0 {
                return fwd;
            }
            let back = track_point(cur, prev, fwd.pos, params);
            if !back.tracked() {
                return FlowPoint::failed(TrackStatus::FbCheckFailed, fwd.pos);
            }
            let roundtrip = (back.pos.0 - p.0).hypot(back.pos.1 - p.1);
            if roundtrip > params.fb_threshold {
                FlowPoint::failed(TrackStatus::FbCheckFailed, fwd.pos)
            } else {
                fwd
            }
        })
        .collect()
}

/// Track points through a chain of consecutive frames; a point survives
/// only if every hop succeeds.
pub fn track_through_chain(
    pyramids: &[&Pyramid],
    points: &[(f64, f64)],
    params: &LkParams,
) -> Vec<FlowPoint> {
    assert!(pyramids.len() >= 2, "chain needs at least two frames");
    let mut result: Vec<FlowPoint> = points
        .iter()
        .map(|p| FlowPoint {
            pos: *p,
            status: TrackStatus::Tracked,
            residual: 0.0,
        })
        .collect();

    for hop in pyramids.windows(2) {
        let active: Vec<usize> = (0..result.len()).filter(|i| result[*i].tracked()).collect();
        if active.is_empty() {
            break;
        }
        let positions: Vec<(f64, f64)> = active.iter().map(|i| result[*i].pos).collect();
        let hopped = lk_track(hop[0], hop[1], &positions, params);
        for (i, fp) in active.into_iter().zip(hopped) {
            result[i] = fp;
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive reference: every arc start and every length >= 9.
    fn fast_oracle(diffs: &[i32; 16], t: i32) -> i32 {
        let mut best = 0;
        for start in 0..16 {
            for len in 9..=16 {
                let arc: Vec<i32> = (0..len).map(|k| diffs[(start + k) % 16]).collect();
                if arc.iter().all(|d| *d > t) {
                    best = best.max(arc.iter().map(|d| d.abs()).min().unwrap() - t);
                }
                if arc.iter().all(|d| *d < -t) {
                    best = best.max(arc.iter().map(|d| d.abs()).min().unwrap() - t);
                }
            }
        }
        best
    }

    fn image_from_fn(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> GrayImage {
        let mut img = GrayImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    #[test]
    fn fast_uniform_image_scores_zero() {
        let img = image_from_fn(16, 16, |_, _| 77);
        for v in 3..13 {
            for u in 3..13 {
                assert_eq!(fast_score(&img, u, v, 10).unwrap(), 0);
            }
        }
    }

    #[test]
    fn fast_step_corner_scores_contrast_minus_threshold() {
        // Dark quadrant (x >= 8, y >= 8) of an otherwise bright image;
        // the circle around (8,8) keeps an 11-long bright arc.
        let img = image_from_fn(16, 16, |x, y| if x >= 8 && y >= 8 { 0 } else { 255 });
        assert_eq!(fast_score(&img, 8, 8, 20).unwrap(), 235);
    }

    #[test]
    fn fast_eight_contiguous_is_not_a_corner() {
        let mut img = image_from_fn(16, 16, |_, _| 100);
        for (dx, dy) in FAST_CIRCLE.iter().take(8) {
            img.set((8 + dx) as usize, (8 + dy) as usize, 200);
        }
        assert_eq!(fast_score(&img, 8, 8, 20).unwrap(), 0);
    }

    #[test]
    fn fast_out_of_border_is_error() {
        let img = image_from_fn(16, 16, |_, _| 0);
        assert!(fast_score(&img, 2, 8, 10).is_err());
        assert!(fast_score(&img, 8, 13, 10).is_err());
    }

    #[test]
    fn fast_matches_exhaustive_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10_000 {
            let mut img = image_from_fn(7, 7, |_, _| 0);
            for p in img.pixels.iter_mut() {
                *p = rng.gen();
            }
            let t: u8 = rng.gen_range(5..40);
            let c = img.at(3, 3) as i32;
            let mut diffs = [0i32; 16];
            for (i, (dx, dy)) in FAST_CIRCLE.iter().enumerate() {
                diffs[i] = img.at((3 + dx) as usize, (3 + dy) as usize) as i32 - c;
            }
            assert_eq!(
                fast_score(&img, 3, 3, t).unwrap(),
                fast_oracle(&diffs, t as i32),
                "diffs {diffs:?} t {t}"
            );
        }
    }

    #[test]
    fn sampling_empty_mask() {
        let img = image_from_fn(30, 30, |x, y| (x * 7 + y * 13) as u8);
        let mask = BinaryMask::new(30, 30);
        assert!(sample_masked_points(&img, &mask, 15, 20, 1).is_empty());
    }

    #[test]
    fn sampling_full_mask_one_point_per_tile() {
        let img = image_from_fn(30, 30, |_, _| 50);
        let mask = BinaryMask::from_bits(30, 30, vec![true; 900]);
        let pts = sample_masked_points(&img, &mask, 15, 20, 1);
        assert_eq!(pts.len(), 4);
        let cells: std::collections::HashSet<_> =
            pts.iter().map(|p| p.source_cell.unwrap()).collect();
        assert_eq!(cells.len(), 4);
        for p in &pts {
            assert!(mask.contains_point(p.position.0, p.position.1));
        }
    }

    #[test]
    fn sampling_picks_best_corner_per_tile() {
        // One synthetic bright dot per 15 px tile; verify each emitted
        // point attains the exhaustive per-tile max of fast_score.
        let mut img = image_from_fn(30, 30, |_, _| 20);
        for (cx, cy) in [(7usize, 6usize), (22, 7), (6, 22), (23, 21)] {
            img.set(cx, cy, 255);
        }
        let mask = BinaryMask::from_bits(30, 30, vec![true; 900]);
        let pts = sample_masked_points(&img, &mask, 15, 20, 1);
        assert_eq!(pts.len(), 4);
        for p in &pts {
            let (px, py) = (p.position.0 as usize, p.position.1 as usize);
            let tile_x = (px / 15) * 15;
            let tile_y = (py / 15) * 15;
            let mut best = 0;
            for y in tile_y.max(3)..(tile_y + 15).min(27) {
                for x in tile_x.max(3)..(tile_x + 15).min(27) {
                    best = best.max(fast_score(&img, x, y, 20).unwrap());
                }
            }
            assert!(best > 0, "tile should contain a corner");
            assert_eq!(fast_score(&img, px, py, 20).unwrap(), best);
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let img = image_from_fn(32, 32, |_, _| 10);
        let mask = BinaryMask::from_bits(32, 32, vec![true; 1024]);
        let a = sample_masked_points(&img, &mask, 8, 20, 7);
        let b = sample_masked_points(&img, &mask, 8, 20, 7);
        assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.position, q.position);
        }
    }

    /// Smoothed random texture with enough gradient for LK.
    fn noise_texture(w: usize, h: usize, seed: u64) -> GrayImage {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = GrayImage::new(w, h);
        for p in img.pixels.iter_mut() {
            *p = rng.gen();
        }
        // Two 5x5 box blurs band-limit the noise.
        for _ in 0..2 {
            let mut out = GrayImage::new(w, h);
            for y in 0..h {
                for x in 0..w {
                    let mut sum = 0u32;
                    let mut n = 0u32;
                    for dy in -2i64..=2 {
                        for dx in -2i64..=2 {
                            let nx = x as i64 + dx;
                            let ny = y as i64 + dy;
                            if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                                sum += img.at(nx as usize, ny as usize) as u32;
                                n += 1;
                            }
                        }
                    }
                    out.set(x, y, (sum / n) as u8);
                }
            }
            img = out;
        }
        // Blurring crushes contrast; stretch back to the full range.
        let lo = *img.pixels.iter().min().unwrap() as f32;
        let hi = *img.pixels.iter().max().unwrap() as f32;
        for p in img.pixels.iter_mut() {
            *p = ((*p as f32 - lo) / (hi - lo).max(1.0) * 255.0) as u8;
        }
        img
    }

    fn crop(img: &GrayImage, x0: usize, y0: usize, w: usize, h: usize) -> GrayImage {
        let mut out = GrayImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                out.set(x, y, img.at(x0 + x, y0 + y));
            }
        }
        out
    }

    fn grid_points(w: usize, h: usize, step: usize, margin: usize) -> Vec<(f64, f64)> {
        let mut pts = Vec::new();
        let mut y = margin;
        while y < h - margin {
            let mut x = margin;
            while x < w - margin {
                pts.push((x as f64, y as f64));
                x += step;
            }
            y += step;
        }
        pts
    }

    #[test]
    fn lk_zero_motion_fixed_point() {
        let img = noise_texture(120, 100, 5);
        let pyr = Pyramid::build(&img, 3);
        let pts = grid_points(120, 100, 16, 14);
        let result = lk_track(&pyr, &pyr, &pts, &LkParams::default());
        for (p, fp) in pts.iter().zip(&result) {
            assert_eq!(fp.status, TrackStatus::Tracked);
            assert!((fp.pos.0 - p.0).abs() < 1e-3 && (fp.pos.1 - p.1).abs() < 1e-3);
        }
    }

    #[test]
    fn lk_recovers_integer_translation() {
        // cur is prev shifted by exactly (2, 1): two crops of one big
        // texture, so pixel values match bit-exactly.
        let big = noise_texture(160, 140, 6);
        let prev = crop(&big, 10, 10, 128, 112);
        let cur = crop(&big, 8, 9, 128, 112);
        let p_prev = Pyramid::build(&prev, 3);
        let p_cur = Pyramid::build(&cur, 3);
        let pts = grid_points(128, 112, 12, 16);
        let result = lk_track(&p_prev, &p_cur, &pts, &LkParams::default());
        let mut good = 0;
        for (p, fp) in pts.iter().zip(&result) {
            if fp.tracked()
                && (fp.pos.0 - (p.0 + 2.0)).abs() < 0.25
                && (fp.pos.1 - (p.1 + 1.0)).abs() < 0.25
            {
                good += 1;
            }
        }
        assert!(
            good as f64 >= 0.95 * pts.len() as f64,
            "only {good}/{} points recovered the shift",
            pts.len()
        );
    }

    #[test]
    fn lk_flat_window_is_lost() {
        let mut img = noise_texture(120, 100, 7);
        for y in 30..70 {
            for x in 40..90 {
                img.set(x, y, 128);
            }
        }
        let pyr = Pyramid::build(&img, 3);
        let result = lk_track(&pyr, &pyr, &[(64.0, 50.0)], &LkParams::default());
        assert_eq!(result[0].status, TrackStatus::Lost);
    }

    #[test]
    fn chain_identity_on_identical_frames() {
        let img = noise_texture(100, 90, 8);
        let pyr = Pyramid::build(&img, 3);
        let pts = grid_points(100, 90, 20, 14);
        let result = track_through_chain(&[&pyr, &pyr, &pyr], &pts, &LkParams::default());
        for (p, fp) in pts.iter().zip(&result) {
            assert!(fp.tracked());
            assert!((fp.pos.0 - p.0).abs() < 1e-3 && (fp.pos.1 - p.1).abs() < 1e-3);
        }
    }

    #[test]
    fn chain_accumulates_per_hop_shifts() {
        let big = noise_texture(170, 140, 9);
        let f0 = crop(&big, 10, 10, 128, 112);
        let f1 = crop(&big, 9, 10, 128, 112);
        let f2 = crop(&big, 8, 10, 128, 112);
        let p0 = Pyramid::build(&f0, 3);
        let p1 = Pyramid::build(&f1, 3);
        let p2 = Pyramid::build(&f2, 3);
        let pts = grid_points(128, 112, 16, 16);
        let result = track_through_chain(&[&p0, &p1, &p2], &pts, &LkParams::default());
        let mut good = 0;
        for (p, fp) in pts.iter().zip(&result) {
            if fp.tracked()
                && (fp.pos.0 - (p.0 + 2.0)).abs() < 0.25
                && (fp.pos.1 - p.1).abs() < 0.25
            {
                good += 1;
            }
        }
        assert!(good as f64 >= 0.9 * pts.len() as f64);
    }

    #[test]
    fn chain_point_exits_mid_sequence() {
        let big = noise_texture(220, 120, 10);
        let f0 = crop(&big, 0, 10, 128, 100);
        let f1 = crop(&big, 40, 10, 128, 100);
        let f2 = crop(&big, 80, 10, 128, 100);
        let p0 = Pyramid::build(&f0, 3);
        let p1 = Pyramid::build(&f1, 3);
        let p2 = Pyramid::build(&f2, 3);
        // A point near the left edge leaves the view after the first
        // -40 px hop.
        let result =
            track_through_chain(&[&p0, &p1, &p2], &[(30.0, 50.0)], &LkParams::default());
        assert_ne!(result[0].status, TrackStatus::Tracked);
    }

    #[test]
    fn fb_check_passes_for_tracked_points() {
        let big = noise_texture(160, 140, 11);
        let prev = crop(&big, 10, 10, 128, 112);
        let cur = crop(&big, 7, 10, 128, 112);
        let p_prev = Pyramid::build(&prev, 3);
        let p_cur = Pyramid::build(&cur, 3);
        let pts = grid_points(128, 112, 16, 16);
        let params = LkParams::default();
        let result = lk_track(&p_prev, &p_cur, &pts, &params);
        for (p, fp) in pts.iter().zip(&result) {
            if fp.tracked() {
                let back = lk_track(&p_cur, &p_prev, &[fp.pos], &params);
                assert!(back[0].tracked());
                let rt = (back[0].pos.0 - p.0).hypot(back[0].pos.1 - p.1);
                assert!(rt <= params.fb_threshold + 1e-9);
            }
        }
    }
}
