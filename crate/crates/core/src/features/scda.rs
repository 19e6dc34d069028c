//! Selective convolutional descriptor aggregation over a final activation grid.
//!
//! The grid is collapsed over channels, thresholded at its mean, reduced to its
//! largest 8-connected component, and the channel vectors under that component
//! are average- and max-pooled into one unit-norm descriptor.

use std::collections::VecDeque;

use super::ConvMap;
use crate::error::{Error, Result};

/// Real-valued `height x width` grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn get(&self, h: usize, w: usize) -> f64 {
        self.values[h * self.width + w]
    }
}

/// Binary `height x width` mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<bool>,
}

impl Mask {
    pub fn from_rows(rows: &[&[u8]]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let cells = rows.iter().flat_map(|r| r.iter().map(|&c| c != 0)).collect();
        Self {
            height,
            width,
            cells,
        }
    }

    pub fn get(&self, h: usize, w: usize) -> bool {
        self.cells[h * self.width + w]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScdaDescriptor {
    pub frame_index: usize,
    /// Average-pooled part followed by max-pooled part, unit L2 norm.
    pub values: Vec<f64>,
    /// Set when the pooled vector was all-zero and could not be normalized.
    pub degenerate: bool,
}

pub fn channel_sum(map: &ConvMap) -> Grid {
    let (height, width, channels) = map.shape();
    let values = map
        .values()
        .chunks_exact(channels)
        .map(|cell| cell.iter().map(|&v| v as f64).sum())
        .collect();
    Grid {
        height,
        width,
        values,
    }
}

/// Cells strictly above the grid mean. An empty result falls back to all-ones.
pub fn threshold_mask(grid: &Grid) -> Mask {
    let mean = grid.values.iter().sum::<f64>() / grid.values.len() as f64;
    let mut cells: Vec<bool> = grid.values.iter().map(|&v| v > mean).collect();
    if !cells.iter().any(|&c| c) {
        cells.iter_mut().for_each(|c| *c = true);
    }
    Mask {
        height: grid.height,
        width: grid.width,
        cells,
    }
}

/// Keeps the largest 8-connected component. Components are discovered in
/// row-major order, so on equal size the one starting first wins.
pub fn largest_connected_component(mask: &Mask) -> Result<Mask> {
    let (h, w) = (mask.height, mask.width);
    let mut seen = vec![false; h * w];
    let mut best: Vec<usize> = Vec::new();
    let mut queue = VecDeque::new();

    for start in 0..h * w {
        if !mask.cells[start] || seen[start] {
            continue;
        }
        let mut component = Vec::new();
        seen[start] = true;
        queue.push_back(start);
        while let Some(idx) = queue.pop_front() {
            component.push(idx);
            let (r, c) = ((idx / w) as isize, (idx % w) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let n = nr as usize * w + nc as usize;
                    if mask.cells[n] && !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        if component.len() > best.len() {
            best = component;
        }
    }

    if best.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut cells = vec![false; h * w];
    for idx in best {
        cells[idx] = true;
    }
    Ok(Mask {
        height: h,
        width: w,
        cells,
    })
}

/// Selection mask used by [`scda_descriptor`].
pub fn selection_mask(map: &ConvMap) -> Mask {
    let mask = threshold_mask(&channel_sum(map));
    largest_connected_component(&mask).expect("threshold mask always has a set cell")
}

pub fn scda_descriptor(map: &ConvMap) -> ScdaDescriptor {
    let (height, width, channels) = map.shape();
    let selected = selection_mask(map);

    let mut avg = vec![0f64; channels];
    let mut max = vec![f64::NEG_INFINITY; channels];
    let mut count = 0usize;
    for h in 0..height {
        for w in 0..width {
            if !selected.get(h, w) {
                continue;
            }
            count += 1;
            for (c, &v) in map.cell(h, w).iter().enumerate() {
                let v = v as f64;
                avg[c] += v;
                if v > max[c] {
                    max[c] = v;
                }
            }
        }
    }
    avg.iter_mut().for_each(|a| *a /= count as f64);

    let mut values = avg;
    values.extend(max);
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    let degenerate = norm == 0.0;
    if !degenerate {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    ScdaDescriptor {
        frame_index: map.frame_index,
        values,
        degenerate,
    }
}
