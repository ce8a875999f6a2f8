use crate::error::{Error, Result};

/// Encoder downsampling factor between frame and base latent.
pub const LATENT_STRIDE: usize = 32;

/// One grid of codebook indices, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexGrid {
    pub width: usize,
    pub height: usize,
    pub indices: Vec<u32>,
}

impl IndexGrid {
    pub fn new(width: usize, height: usize, indices: Vec<u32>) -> Result<Self> {
        if indices.len() != width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} index grid given {} indices",
                indices.len()
            )));
        }
        Ok(Self { width, height, indices })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// The transmitted representation of one frame: `k` index grids from the
/// coarsest scale to the base latent resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMapPyramid {
    pub frame_width: usize,
    pub frame_height: usize,
    pub scales: Vec<IndexGrid>,
}

impl IndexMapPyramid {
    pub fn k(&self) -> usize {
        self.scales.len()
    }

    /// Checks geometry against the frame dims and every index against `v`.
    pub fn validate(&self, v: usize) -> Result<()> {
        let dims = scale_dims(self.frame_width, self.frame_height, self.k())?;
        for (j, (grid, &(w, h))) in self.scales.iter().zip(&dims).enumerate() {
            if (grid.width, grid.height) != (w, h) || grid.len() != w * h {
                return Err(Error::Dimension(format!(
                    "scale {} is {}x{}, expected {w}x{h}",
                    j + 1,
                    grid.width,
                    grid.height
                )));
            }
            if let Some(&bad) = grid.indices.iter().find(|&&i| i as usize >= v) {
                return Err(Error::Corruption {
                    scale: j + 1,
                    index: bad,
                    limit: v,
                });
            }
        }
        Ok(())
    }

    pub fn total_indices(&self) -> usize {
        self.scales.iter().map(IndexGrid::len).sum()
    }
}

/// Base latent dims for a frame; the frame must be a multiple of the stride.
pub fn latent_dims(frame_width: usize, frame_height: usize) -> Result<(usize, usize)> {
    if frame_width == 0
        || frame_height == 0
        || frame_width % LATENT_STRIDE != 0
        || frame_height % LATENT_STRIDE != 0
    {
        return Err(Error::Dimension(format!(
            "frame {frame_width}x{frame_height} is not a positive multiple of {LATENT_STRIDE}"
        )));
    }
    Ok((frame_width / LATENT_STRIDE, frame_height / LATENT_STRIDE))
}

/// Downsampling factor of scale `j` (1-based) relative to the base latent.
pub fn scale_factor(j: usize, k: usize) -> usize {
    1 << (k - j)
}

/// `(width, height)` of every scale, coarsest first. Partial blocks round up.
/// Errors when the resolutions would not strictly increase.
pub fn scale_dims(frame_width: usize, frame_height: usize, k: usize) -> Result<Vec<(usize, usize)>> {
    if k == 0 || k > 8 {
        return Err(Error::Invalid(format!("k must be in 1..=8, got {k}")));
    }
    let (lw, lh) = latent_dims(frame_width, frame_height)?;
    let dims: Vec<(usize, usize)> = (1..=k)
        .map(|j| {
            let f = scale_factor(j, k);
            (lw.div_ceil(f), lh.div_ceil(f))
        })
        .collect();
    for pair in dims.windows(2) {
        if pair[1].0 <= pair[0].0 || pair[1].1 <= pair[0].1 {
            return Err(Error::Invalid(format!(
                "latent {lw}x{lh} is too small for {k} strictly increasing scales"
            )));
        }
    }
    Ok(dims)
}
