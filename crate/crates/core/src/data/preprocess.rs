//! Raw video ingestion and temporal/spatial normalization.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NORMALIZED_FRAMES: usize = 120;
pub const ANCHOR_STRIDE: usize = 4;

fn dims4(t: &Tensor<f32>) -> Result<[usize; 4]> {
    match *t.shape() {
        [c, f, h, w] => Ok([c, f, h, w]),
        ref s => Err(Error::dim(format!("video needs (channels, frames, H, W), got {s:?}"))),
    }
}

fn gather_frames(video: &Tensor<f32>, keep: &[usize]) -> Result<Tensor<f32>> {
    let [c, f, h, w] = dims4(video)?;
    let plane = h * w;
    let mut data = Vec::with_capacity(c * keep.len() * plane);
    for ch in 0..c {
        for &k in keep {
            let base = (ch * f + k) * plane;
            data.extend_from_slice(&video.data()[base..base + plane]);
        }
    }
    Tensor::new(vec![c, keep.len(), h, w], data)
}

fn mean_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.len() as f64
}

/// Brings a video to exactly `target` frames. Longer videos lose, one at a
/// time, the frame whose gray plane has the smallest mean absolute
/// difference to its predecessor (earliest on ties, frame 0 never);
/// shorter videos repeat their last frame.
pub fn normalize_frames_to(raw: &Tensor<f32>, target: usize) -> Result<Tensor<f32>> {
    let [_, f, h, w] = dims4(raw)?;
    if target == 0 {
        return Err(Error::arg("target frame count must be positive"));
    }
    if f == target {
        return Ok(raw.clone());
    }
    if f < target {
        let keep: Vec<usize> = (0..target).map(|i| i.min(f - 1)).collect();
        return gather_frames(raw, &keep);
    }
    let plane = h * w;
    let gray = |i: usize| &raw.data()[i * plane..(i + 1) * plane];
    let mut kept: Vec<usize> = (0..f).collect();
    // diffs[j] is the difference of kept[j] to kept[j - 1]; diffs[0] unused
    let mut diffs: Vec<f64> = (0..f)
        .map(|j| if j == 0 { f64::INFINITY } else { mean_abs_diff(gray(j), gray(j - 1)) })
        .collect();
    while kept.len() > target {
        let mut r = 1;
        for j in 2..kept.len() {
            if diffs[j] < diffs[r] {
                r = j;
            }
        }
        kept.remove(r);
        diffs.remove(r);
        if r < kept.len() {
            diffs[r] = mean_abs_diff(gray(kept[r]), gray(kept[r - 1]));
        }
    }
    gather_frames(raw, &kept)
}

pub fn normalize_frames(raw: &Tensor<f32>) -> Result<Tensor<f32>> {
    normalize_frames_to(raw, NORMALIZED_FRAMES)
}

/// Every fourth frame of a normalized video, starting at the first.
pub fn select_anchors(frames: &Tensor<f32>) -> Result<Tensor<f32>> {
    let [_, f, _, _] = dims4(frames)?;
    if f != NORMALIZED_FRAMES {
        return Err(Error::arg(format!(
            "anchor selection needs exactly {NORMALIZED_FRAMES} frames, got {f}"
        )));
    }
    let keep: Vec<usize> = (0..f).step_by(ANCHOR_STRIDE).collect();
    gather_frames(frames, &keep)
}

/// Bilinear resize of an `(H, W)` plane with half-pixel centers.
pub fn resize_to(frame: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let (h, w) = match *frame.shape() {
        [h, w] => (h, w),
        ref s => return Err(Error::dim(format!("resize needs an (H, W) plane, got {s:?}"))),
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::dim("resize target must be non-empty"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(frame.clone());
    }
    let src = frame.data();
    let coord = |o: usize, n_in: usize, n_out: usize| -> (usize, usize, f32) {
        let x = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let x0 = x.floor() as usize;
        let x1 = (x0 + 1).min(n_in - 1);
        (x0, x1, (x - x0 as f64) as f32)
    };
    let cols: Vec<_> = (0..out_w).map(|x| coord(x, w, out_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, h, out_h);
        for &(x0, x1, fx) in &cols {
            let top = src[y0 * w + x0] + (src[y0 * w + x1] - src[y0 * w + x0]) * fx;
            let bot = src[y1 * w + x0] + (src[y1 * w + x1] - src[y1 * w + x0]) * fx;
            out.push((top + (bot - top) * fy).clamp(0.0, 1.0));
        }
    }
    Tensor::new(vec![out_h, out_w], out)
}

pub fn resize(frame: &Tensor<f32>) -> Result<Tensor<f32>> {
    resize_to(frame, 60, 80)
}

/// Full pipeline for one raw video `(channels, T_raw, H, W)`: spatial
/// resize, temporal normalization, anchor selection. A video that already
/// has `anchors` frames at the target size is returned unchanged.
pub fn preprocess_video(raw: &Tensor<f32>, frame_h: usize, frame_w: usize, anchors: usize) -> Result<Tensor<f32>> {
    let [c, f, h, w] = dims4(raw)?;
    if f == anchors && (h, w) == (frame_h, frame_w) {
        return Ok(raw.clone());
    }
    let mut planes = Vec::with_capacity(c * f * frame_h * frame_w);
    for i in 0..c * f {
        let plane = Tensor::new(vec![h, w], raw.data()[i * h * w..(i + 1) * h * w].to_vec())?;
        planes.extend(resize_to(&plane, frame_h, frame_w)?.into_data());
    }
    let resized = Tensor::new(vec![c, f, frame_h, frame_w], planes)?;
    let normalized = normalize_frames_to(&resized, anchors * ANCHOR_STRIDE)?;
    let keep: Vec<usize> = (0..anchors * ANCHOR_STRIDE).step_by(ANCHOR_STRIDE).collect();
    gather_frames(&normalized, &keep)
}

fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

fn load_plane(path: &Path) -> Result<(usize, usize, Vec<f32>, bool)> {
    let img = image::open(path).map_err(|e| Error::format(0, format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        image::DynamicImage::ImageLuma16(buf) => Ok((h, w, buf.into_raw().into_iter().map(f32::from).collect(), true)),
        other => Ok((h, w, other.to_luma8().into_raw().into_iter().map(f32::from).collect(), false)),
    }
}

/// Reads `<dir>/gray/*` and, when present, `<dir>/depth/*` frame images
/// (sorted by file name). Gray is scaled by its bit depth; depth is divided
/// by the largest depth value in the video.
pub fn ingest_video_dir(dir: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let dir = dir.as_ref();
    let gray_files = sorted_files(&dir.join("gray"))?;
    if gray_files.is_empty() {
        return Err(Error::format(0, format!("{} has no gray frames", dir.join("gray").display())));
    }
    let depth_dir = dir.join("depth");
    let depth_files = if depth_dir.is_dir() { sorted_files(&depth_dir)? } else { vec![] };
    if !depth_files.is_empty() && depth_files.len() != gray_files.len() {
        return Err(Error::format(0, format!(
            "{}: {} gray frames but {} depth frames",
            dir.display(),
            gray_files.len(),
            depth_files.len()
        )));
    }
    let mut size = None;
    let mut read_all = |files: &[PathBuf]| -> Result<Vec<f32>> {
        let mut out = vec![];
        for f in files {
            let (h, w, px, wide) = load_plane(f)?;
            if *size.get_or_insert((h, w)) != (h, w) {
                return Err(Error::format(0, format!("{} has a different frame size", f.display())));
            }
            let scale = if wide { 65535.0 } else { 255.0 };
            out.extend(px.into_iter().map(|v| v / scale));
        }
        Ok(out)
    };
    let mut data = read_all(&gray_files)?;
    let channels = if depth_files.is_empty() {
        1
    } else {
        let depth = read_all(&depth_files)?;
        let max = depth.iter().copied().fold(0.0f32, f32::max);
        data.extend(depth.into_iter().map(|v| if max > 0.0 { v / max } else { 0.0 }));
        2
    };
    let (h, w) = size.expect("at least one frame");
    Tensor::new(vec![channels, gray_files.len(), h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_video(seed: u64, c: usize, f: usize, h: usize, w: usize) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[c, f, h, w], |_| rng.gen_range(0.0..1.0)).unwrap()
    }

    // Recomputes every neighbour difference on each pass.
    fn greedy_oracle(video: &Tensor<f32>, target: usize) -> Vec<usize> {
        let [_, f, h, w] = [video.shape()[0], video.shape()[1], video.shape()[2], video.shape()[3]];
        let plane = h * w;
        let mut kept: Vec<usize> = (0..f).collect();
        while kept.len() > target {
            let mut best = (f64::INFINITY, 0);
            for j in 1..kept.len() {
                let (a, b) = (kept[j], kept[j - 1]);
                let mut d = 0.0f64;
                for p in 0..plane {
                    d += (video.data()[a * plane + p] - video.data()[b * plane + p]).abs() as f64;
                }
                d /= plane as f64;
                if d < best.0 {
                    best = (d, j);
                }
            }
            kept.remove(best.1);
        }
        kept
    }

    #[test]
    fn identity_at_120() {
        let v = random_video(1, 2, 120, 3, 4);
        assert_eq!(normalize_frames(&v).unwrap(), v);
    }

    #[test]
    fn drops_exact_duplicate() {
        let mut v = random_video(2, 1, 121, 3, 4);
        let plane = 12;
        let copy: Vec<f32> = v.data()[40 * plane..41 * plane].to_vec();
        v.data_mut()[41 * plane..42 * plane].copy_from_slice(&copy);
        let out = normalize_frames(&v).unwrap();
        let expect: Vec<usize> = (0..121).filter(|&i| i != 41).collect();
        assert_eq!(out, gather_frames(&v, &expect).unwrap());
    }

    #[test]
    fn matches_greedy_oracle() {
        let v = random_video(3, 2, 150, 4, 5);
        let out = normalize_frames(&v).unwrap();
        assert_eq!(out, gather_frames(&v, &greedy_oracle(&v, 120)).unwrap());
    }

    #[test]
    fn short_videos_repeat_last() {
        let v = random_video(4, 1, 100, 2, 2);
        let out = normalize_frames(&v).unwrap();
        assert_eq!(out.shape()[1], 120);
        assert_eq!(out.data()[119 * 4..], v.data()[99 * 4..]);
    }

    #[test]
    fn anchors_every_fourth() {
        let v = Tensor::from_fn(&[1, 120, 1, 1], |i| i as f32 / 119.0).unwrap();
        let a = select_anchors(&v).unwrap();
        let picked: Vec<usize> = a.data().iter().map(|x| (x * 119.0).round() as usize + 1).collect();
        assert_eq!(picked, (0..30).map(|k| 1 + 4 * k).collect::<Vec<_>>());
        assert_eq!(*picked.last().unwrap(), 117);

        let c = Tensor::filled(&[2, 120, 2, 2], 0.3).unwrap();
        assert!(select_anchors(&c).unwrap().data().iter().all(|&x| x == 0.3));
        assert!(matches!(select_anchors(&Tensor::zeros(&[1, 119, 1, 1]).unwrap()), Err(Error::Argument(_))));
    }

    #[test]
    fn resize_examples() {
        let f = random_video(5, 1, 1, 60, 80).reshape(&[60, 80]).unwrap();
        assert_eq!(resize(&f).unwrap(), f);
        let c = Tensor::filled(&[37, 91], 0.37f32).unwrap();
        assert!(resize(&c).unwrap().data().iter().all(|&v| v == 0.37));
    }

    #[test]
    fn checkerboard_matches_bilinear_oracle() {
        let (h, w) = (120, 160);
        let f = Tensor::from_fn(&[h, w], |i| ((i / w + i % w) % 2) as f32).unwrap();
        let out = resize(&f).unwrap();
        let px = |y: i64, x: i64| f.data()[(y.clamp(0, h as i64 - 1) as usize) * w + x.clamp(0, w as i64 - 1) as usize] as f64;
        for oy in 0..60 {
            for ox in 0..80 {
                let sy = ((oy as f64 + 0.5) * 2.0 - 0.5).max(0.0);
                let sx = ((ox as f64 + 0.5) * 2.0 - 0.5).max(0.0);
                let (y0, x0) = (sy.floor() as i64, sx.floor() as i64);
                let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                let v = px(y0, x0) * (1.0 - fy) * (1.0 - fx)
                    + px(y0, x0 + 1) * (1.0 - fy) * fx
                    + px(y0 + 1, x0) * fy * (1.0 - fx)
                    + px(y0 + 1, x0 + 1) * fy * fx;
                assert!((out.data()[oy * 80 + ox] as f64 - v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pipeline_is_idempotent() {
        let raw = random_video(6, 2, 137, 24, 32);
        let once = preprocess_video(&raw, 12, 16, 30).unwrap();
        assert_eq!(once.shape(), &[2, 30, 12, 16]);
        assert_eq!(preprocess_video(&once, 12, 16, 30).unwrap(), once);
        assert_eq!(preprocess_video(&raw, 12, 16, 30).unwrap(), once);
    }
}
