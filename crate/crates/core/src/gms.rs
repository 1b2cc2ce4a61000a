//! Grid mini-cube sampling.
//!
//! A frame is split into a `grid_count` x `grid_count` grid. One
//! raw-resolution patch is drawn per cell, the same patch location is used
//! for every frame, and the patches are reassembled in grid order into a
//! `(grid_count * patch_size)` square fragment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::preproc::Frame;

pub const DEFAULT_GRID_COUNT: usize = 7;
pub const DEFAULT_PATCH_SIZE: usize = 32;

/// Pixel bounds of one grid cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GmsPlan {
    pub frame_width: usize,
    pub frame_height: usize,
    pub grid_count: usize,
    pub patch_size: usize,
    /// Row-major, `grid_count * grid_count` entries.
    pub cells: Vec<Cell>,
    /// Patch origin relative to the owning cell, row-major.
    pub offsets: Vec<(usize, usize)>,
    pub seed: u64,
}

impl GmsPlan {
    pub fn fragment_size(&self) -> usize {
        self.grid_count * self.patch_size
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.grid_count + col]
    }

    /// Absolute source coordinate of the patch for cell `(row, col)`.
    pub fn patch_origin(&self, row: usize, col: usize) -> (usize, usize) {
        let c = self.cell(row, col);
        let (dx, dy) = self.offsets[row * self.grid_count + col];
        (c.x + dx, c.y + dy)
    }
}

/// Splits `len` pixels into `parts` spans; the last span takes the remainder.
fn partition(len: usize, parts: usize) -> Vec<(usize, usize)> {
    let base = len / parts;
    (0..parts)
        .map(|i| {
            let extra = if i + 1 == parts { len % parts } else { 0 };
            (i * base, base + extra)
        })
        .collect()
}

pub fn make_plan(
    width: usize,
    height: usize,
    grid_count: usize,
    patch_size: usize,
    seed: u64,
) -> Result<GmsPlan> {
    if grid_count == 0 || patch_size == 0 {
        return Err(Error::Geometry(format!(
            "grid_count ({grid_count}) and patch_size ({patch_size}) must be at least 1"
        )));
    }
    let cols = partition(width, grid_count);
    let rows = partition(height, grid_count);
    let mut cells = Vec::with_capacity(grid_count * grid_count);
    for (row, &(y, h)) in rows.iter().enumerate() {
        for (col, &(x, w)) in cols.iter().enumerate() {
            if w < patch_size || h < patch_size {
                return Err(Error::CellTooSmall {
                    row,
                    col,
                    width: w,
                    height: h,
                    patch: patch_size,
                });
            }
            cells.push(Cell {
                x,
                y,
                width: w,
                height: h,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets = cells
        .iter()
        .map(|c| {
            let dx = rng.random_range(0..=c.width - patch_size);
            let dy = rng.random_range(0..=c.height - patch_size);
            (dx, dy)
        })
        .collect();
    Ok(GmsPlan {
        frame_width: width,
        frame_height: height,
        grid_count,
        patch_size,
        cells,
        offsets,
        seed,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FragmentVolume {
    pub frames: Vec<Frame>,
    pub plan: GmsPlan,
}

fn assemble(frame: &Frame, plan: &GmsPlan) -> Frame {
    let g = plan.grid_count;
    let p = plan.patch_size;
    let side = g * p;
    let src = frame.data();
    let src_stride = frame.width() * 3;
    let mut out = vec![0u8; side * side * 3];
    for row in 0..g {
        for col in 0..g {
            let (sx, sy) = plan.patch_origin(row, col);
            for dy in 0..p {
                let s = (sy + dy) * src_stride + sx * 3;
                let d = ((row * p + dy) * side + col * p) * 3;
                out[d..d + p * 3].copy_from_slice(&src[s..s + p * 3]);
            }
        }
    }
    Frame::new(side, side, out).expect("fragment buffer sized from plan")
}

pub fn sample_fragments(frames: &[Frame], plan: &GmsPlan) -> Result<FragmentVolume> {
    if frames.is_empty() {
        return Err(Error::InvalidInput("no frames to sample".into()));
    }
    if let Some((i, f)) = frames
        .iter()
        .enumerate()
        .find(|(_, f)| f.width() != plan.frame_width || f.height() != plan.frame_height)
    {
        return Err(Error::Geometry(format!(
            "frame {i} is {}x{}, plan expects {}x{}",
            f.width(),
            f.height(),
            plan.frame_width,
            plan.frame_height
        )));
    }
    Ok(FragmentVolume {
        frames: frames.iter().map(|f| assemble(f, plan)).collect(),
        plan: plan.clone(),
    })
}
