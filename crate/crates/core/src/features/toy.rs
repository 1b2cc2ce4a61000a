//! Deterministic hand-crafted extractors standing in for the pretrained
//! backbones. Every component is scaled into `[0, 1]`.

use crate::error::{Error, Result};
use crate::gms::FragmentVolume;
use crate::preproc::Frame;

pub const PIXELSTATS_DIM: usize = 16;
pub const MOTIONSTATS_DIM: usize = 8;
pub const FRAGMENTSTATS_DIM: usize = 16;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
/// Largest possible |4c - n - s - e - w| for 8-bit input.
const LAPLACIAN_MAX: f64 = 1020.0;
const HIST_BINS: usize = 8;
const DIFF_BINS: usize = 5;

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let mut n = 0usize;
    let mut sum = 0.0;
    for v in values.clone() {
        sum += v;
        n += 1;
    }
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Luma plane from interleaved RGB samples.
pub(crate) fn luma(rgb: &[f64]) -> Vec<f64> {
    rgb.chunks_exact(3)
        .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
        .collect()
}

/// Normalised 4-neighbour Laplacian magnitude over interior pixels.
pub(crate) fn laplacian_magnitude(plane: &[f64], width: usize, height: usize) -> Vec<f64> {
    if width < 3 || height < 3 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity((width - 2) * (height - 2));
    for y in 1..height - 1 {
        for x in 1..width - 1 {
            let c = plane[y * width + x];
            let lap = (c - plane[(y - 1) * width + x])
                + (c - plane[(y + 1) * width + x])
                + (c - plane[y * width + x - 1])
                + (c - plane[y * width + x + 1]);
            out.push(lap.abs() / LAPLACIAN_MAX);
        }
    }
    out
}

fn planar_stats(width: usize, height: usize, rgb: &[f64]) -> [f64; PIXELSTATS_DIM] {
    let mut out = [0.0; PIXELSTATS_DIM];
    for c in 0..3 {
        let (m, s) = mean_std(rgb.iter().skip(c).step_by(3).copied());
        out[c] = m / 255.0;
        out[3 + c] = s / 127.5;
    }
    let y = luma(rgb);
    let lap = laplacian_magnitude(&y, width, height);
    let (lm, ls) = mean_std(lap.iter().copied());
    out[6] = lm;
    out[7] = ls;
    let mut hist = [0usize; HIST_BINS];
    for v in &y {
        let bin = (v.round().clamp(0.0, 255.0) as usize * HIST_BINS / 256).min(HIST_BINS - 1);
        hist[bin] += 1;
    }
    for (o, h) in out[8..].iter_mut().zip(hist) {
        *o = h as f64 / y.len() as f64;
    }
    out
}

/// Per-frame statistics: channel means (3), channel stds (3), Laplacian
/// magnitude mean and std (2), 8-bin luma histogram (8).
pub fn pixel_stats(frame: &Frame) -> [f64; PIXELSTATS_DIM] {
    let rgb: Vec<f64> = frame.data().iter().map(|&v| v as f64).collect();
    planar_stats(frame.width(), frame.height(), &rgb)
}

/// Frame-difference statistics over a chunk: mean, std and max of the
/// per-pair mean absolute difference (3) and a 5-bin histogram of
/// per-sample absolute differences (5).
pub fn motion_stats(frames: &[Frame]) -> Result<[f64; MOTIONSTATS_DIM]> {
    if frames.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "motion statistics need at least 2 frames, got {}",
            frames.len()
        )));
    }
    let mut hist = [0usize; DIFF_BINS];
    let mut total = 0usize;
    let mut mads = Vec::with_capacity(frames.len() - 1);
    for pair in frames.windows(2) {
        let (a, b) = (pair[0].data(), pair[1].data());
        if a.len() != b.len() {
            return Err(Error::Geometry("chunk frames differ in size".into()));
        }
        let mut sum = 0u64;
        for (&p, &q) in a.iter().zip(b) {
            let d = p.abs_diff(q) as usize;
            sum += d as u64;
            hist[d * DIFF_BINS / 256] += 1;
        }
        total += a.len();
        mads.push(sum as f64 / a.len() as f64);
    }
    let (m, s) = mean_std(mads.iter().copied());
    let max = mads.iter().copied().fold(0.0, f64::max);
    let mut out = [0.0; MOTIONSTATS_DIM];
    out[0] = m / 255.0;
    out[1] = s / 127.5;
    out[2] = max / 255.0;
    for (o, h) in out[3..].iter_mut().zip(hist) {
        *o = h as f64 / total as f64;
    }
    Ok(out)
}

/// Mean absolute difference (unnormalised, 0..=255) between consecutive
/// frames; exposed for diagnostics.
pub fn mean_abs_differences(frames: &[Frame]) -> Vec<f64> {
    frames
        .windows(2)
        .map(|p| {
            let s: u64 = p[0]
                .data()
                .iter()
                .zip(p[1].data())
                .map(|(&a, &b)| a.abs_diff(b) as u64)
                .sum();
            s as f64 / p[0].data().len() as f64
        })
        .collect()
}

/// Pixel statistics of the temporally averaged fragment frame.
pub fn fragment_stats(volume: &FragmentVolume) -> [f64; FRAGMENTSTATS_DIM] {
    let first = &volume.frames[0];
    let mut acc = vec![0.0; first.data().len()];
    for f in &volume.frames {
        for (a, &v) in acc.iter_mut().zip(f.data()) {
            *a += v as f64;
        }
    }
    let n = volume.frames.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    planar_stats(first.width(), first.height(), &acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gms::{make_plan, sample_fragments};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(w: usize, h: usize, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::new(w, h, (0..w * h * 3).map(|_| rng.random()).collect()).unwrap()
    }

    /// Brute-force 5x5 Gaussian blur (sigma 1) with clamped borders.
    fn gaussian_blur_oracle(f: &Frame) -> Frame {
        let (w, h) = (f.width() as i64, f.height() as i64);
        let mut k = [[0.0f64; 5]; 5];
        let mut total = 0.0;
        for (dy, row) in k.iter_mut().enumerate() {
            for (dx, v) in row.iter_mut().enumerate() {
                let (a, b) = (dx as f64 - 2.0, dy as f64 - 2.0);
                *v = (-(a * a + b * b) / 2.0).exp();
                total += *v;
            }
        }
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for (dy, row) in k.iter().enumerate() {
                        for (dx, kv) in row.iter().enumerate() {
                            let sx = (x + dx as i64 - 2).clamp(0, w - 1) as usize;
                            let sy = (y + dy as i64 - 2).clamp(0, h - 1) as usize;
                            acc += kv * f.pixel(sx, sy)[c] as f64;
                        }
                    }
                    out.push((acc / total).round() as u8);
                }
            }
        }
        Frame::new(w as usize, h as usize, out).unwrap()
    }

    /// Mean |Laplacian| of luma computed pixel by pixel from the frame.
    fn laplacian_oracle(f: &Frame) -> f64 {
        let y = |x: usize, yy: usize| {
            let p = f.pixel(x, yy);
            0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
        };
        let mut sum = 0.0;
        let mut n = 0.0;
        for yy in 1..f.height() - 1 {
            for x in 1..f.width() - 1 {
                let l = 4.0 * y(x, yy) - y(x - 1, yy) - y(x + 1, yy) - y(x, yy - 1) - y(x, yy + 1);
                sum += l.abs() / 1020.0;
                n += 1.0;
            }
        }
        sum / n
    }

    #[test]
    fn constant_gray_has_no_spread() {
        let f = Frame::filled(12, 9, [128, 128, 128]).unwrap();
        let s = pixel_stats(&f);
        assert!(s[..3].iter().all(|&m| (m - 128.0 / 255.0).abs() < 1e-12));
        assert_eq!(&s[3..8], &[0.0; 5]);
        assert_eq!(s[8 + 4], 1.0);
        assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn blur_lowers_laplacian_energy() {
        for seed in 0..20 {
            let f = random_frame(8, 8, seed);
            let b = gaussian_blur_oracle(&f);
            let (sf, sb) = (pixel_stats(&f), pixel_stats(&b));
            assert!((sf[6] - laplacian_oracle(&f)).abs() < 1e-12);
            assert!((sb[6] - laplacian_oracle(&b)).abs() < 1e-12);
            assert!(sb[6] < sf[6], "seed {seed}: {} !< {}", sb[6], sf[6]);
        }
    }

    #[test]
    fn pixel_stats_deterministic_and_bounded() {
        let f = random_frame(31, 17, 4);
        let a = pixel_stats(&f);
        assert_eq!(a, pixel_stats(&f.clone()));
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!((a[8..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn motion_of_static_chunk_is_zero() {
        let f = random_frame(6, 6, 1);
        let s = motion_stats(&vec![f; 5]).unwrap();
        assert_eq!(&s[..3], &[0.0; 3]);
        assert_eq!(s[3], 1.0);
    }

    #[test]
    fn alternating_black_white_has_full_difference() {
        let b = Frame::filled(4, 4, [0, 0, 0]).unwrap();
        let w = Frame::filled(4, 4, [255, 255, 255]).unwrap();
        let chunk = vec![b.clone(), w.clone(), b, w];
        assert!(mean_abs_differences(&chunk).iter().all(|&d| d == 255.0));
        let s = motion_stats(&chunk).unwrap();
        assert_eq!(s[0], 1.0);
        assert_eq!(s[1], 0.0);
        assert_eq!(s[2], 1.0);
        assert_eq!(s[7], 1.0);
        assert_eq!(s, motion_stats(&chunk).unwrap());
    }

    #[test]
    fn single_frame_chunk_errors() {
        assert!(motion_stats(&[random_frame(4, 4, 0)]).is_err());
    }

    #[test]
    fn fragment_stats_mirror_pixel_stats() {
        let gray = Frame::filled(32, 32, [128, 128, 128]).unwrap();
        let plan = make_plan(32, 32, 2, 8, 3).unwrap();
        let v = sample_fragments(&[gray.clone(), gray], &plan).unwrap();
        let s = fragment_stats(&v);
        assert_eq!(&s[3..8], &[0.0; 5]);

        // A single fragment frame averages to itself.
        let f = random_frame(32, 32, 9);
        let v = sample_fragments(&[f], &plan).unwrap();
        assert_eq!(fragment_stats(&v), pixel_stats(&v.frames[0]));
        assert_eq!(fragment_stats(&v), fragment_stats(&v.clone()));
    }
}
