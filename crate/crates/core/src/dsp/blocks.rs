use super::MelClip;
use crate::diffusion::Tensor;
use crate::error::{Error, Result};

/// One `n_mels × block_frames` window of a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub values: Tensor,
    pub index: usize,
    /// Frames taken from the clip; the rest are zero padding.
    pub valid_frames: usize,
    pub padded: bool,
}

/// Splits a clip into consecutive, non-overlapping blocks. The last block is
/// zero-padded to full width and flagged when the frame count does not divide.
pub fn chunk_blocks(clip: &MelClip, block_frames: usize) -> Result<Vec<Block>> {
    if block_frames == 0 {
        return Err(Error::InvalidArgument("block_frames must be at least 1".into()));
    }
    let n_blocks = clip.n_frames.div_ceil(block_frames);
    let blocks = (0..n_blocks)
        .map(|b| {
            let start = b * block_frames;
            let valid = block_frames.min(clip.n_frames - start);
            let mut data = vec![0.0; clip.n_mels * block_frames];
            for m in 0..clip.n_mels {
                let src = &clip.values[m * clip.n_frames + start..m * clip.n_frames + start + valid];
                data[m * block_frames..m * block_frames + valid].copy_from_slice(src);
            }
            Block {
                values: Tensor::from_parts(vec![clip.n_mels, block_frames], data),
                index: b,
                valid_frames: valid,
                padded: valid < block_frames,
            }
        })
        .collect();
    Ok(blocks)
}
