//! Sprite-sheet assembly and lossless PNG output: views as rows, time as
//! columns.

use std::path::Path;

use image::RgbImage;

use super::raster::RenderFrame;
use crate::error::{Error, Result};

/// Compose a views x frames grid into one image. All frames must share one
/// size.
pub fn sprite_sheet_image(grid: &[Vec<RenderFrame>]) -> Result<RgbImage> {
    if grid.is_empty() || grid[0].is_empty() {
        return Err(Error::InvalidArgument("sprite sheet needs at least one frame".into()));
    }
    let (fw, fh) = (grid[0][0].width, grid[0][0].height);
    let cols = grid[0].len();
    for row in grid {
        if row.len() != cols {
            return Err(Error::InvalidArgument("ragged sprite grid".into()));
        }
        for f in row {
            if f.width != fw || f.height != fh {
                return Err(Error::dim(
                    "sprite frame size",
                    format!("{fw}x{fh}"),
                    format!("{}x{}", f.width, f.height),
                ));
            }
        }
    }
    let mut img = RgbImage::new((cols * fw) as u32, (grid.len() * fh) as u32);
    for (vi, row) in grid.iter().enumerate() {
        for (ti, frame) in row.iter().enumerate() {
            for y in 0..fh {
                for x in 0..fw {
                    let src = 3 * (y * fw + x);
                    let px = image::Rgb([frame.rgb[src], frame.rgb[src + 1], frame.rgb[src + 2]]);
                    img.put_pixel((ti * fw + x) as u32, (vi * fh + y) as u32, px);
                }
            }
        }
    }
    Ok(img)
}

pub fn write_sprite_sheet(grid: &[Vec<RenderFrame>], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let img = sprite_sheet_image(grid)?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid_frame(w: usize, h: usize, val: u8) -> RenderFrame {
        RenderFrame {
            width: w,
            height: h,
            rgb: vec![val; w * h * 3],
            depth: vec![f64::INFINITY; w * h],
        }
    }

    #[test]
    fn grid_dimensions() {
        let grid: Vec<Vec<RenderFrame>> = (0..4)
            .map(|v| (0..8).map(|t| solid_frame(64, 64, (v * 8 + t) as u8)).collect())
            .collect();
        let img = sprite_sheet_image(&grid).unwrap();
        assert_eq!(img.width(), 512);
        assert_eq!(img.height(), 256);
    }

    #[test]
    fn single_frame_sheet_equals_frame() {
        let frame = solid_frame(5, 7, 99);
        let img = sprite_sheet_image(&[vec![frame.clone()]]).unwrap();
        assert_eq!(img.width(), 5);
        assert_eq!(img.height(), 7);
        assert_eq!(img.as_raw().as_slice(), frame.rgb.as_slice());
    }

    #[test]
    fn png_roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sheet.png");
        let mut frame = solid_frame(9, 4, 0);
        for (i, b) in frame.rgb.iter_mut().enumerate() {
            *b = (i * 7 % 251) as u8;
        }
        write_sprite_sheet(&[vec![frame.clone()]], &path).unwrap();
        let back = image::open(&path).unwrap().to_rgb8();
        assert_eq!(back.as_raw().as_slice(), frame.rgb.as_slice());
    }

    #[test]
    fn ragged_grid_rejected() {
        let a = vec![solid_frame(4, 4, 1), solid_frame(4, 4, 2)];
        let b = vec![solid_frame(4, 4, 3)];
        assert!(sprite_sheet_image(&[a, b]).is_err());
    }
}
