//! Binary greyscale (P5) previews of latent channels.

use std::fs;
use std::path::Path;

use tvf_core::Tensor;

use crate::error::{CliError, CliResult};

/// Map `[-1, 1]` to `0..=255`, clamping outside values.
pub fn to_byte(x: f32) -> u8 {
    (((x.clamp(-1.0, 1.0) + 1.0) * 127.5).round()) as u8
}

/// P5 bytes of an `h x w` plane stored row-major.
pub fn encode(plane: &[f32], h: usize, w: usize) -> Vec<u8> {
    assert_eq!(plane.len(), h * w, "plane size");
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(plane.iter().map(|&x| to_byte(x)));
    out
}

/// Write `{stem}_c{k}.pgm` for every channel of a `[C, H, W]` tensor.
pub fn write_channels(dir: &Path, stem: &str, grid: &Tensor<f32>) -> CliResult<()> {
    let &[c, h, w] = grid.shape() else {
        return Err(CliError::usage(format!("expected a [C, H, W] latent, got {:?}", grid.shape())));
    };
    for k in 0..c {
        let path = dir.join(format!("{stem}_c{k}.pgm"));
        let plane = &grid.data()[k * h * w..(k + 1) * h * w];
        fs::write(&path, encode(plane, h, w)).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}
