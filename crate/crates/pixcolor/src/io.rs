//! PNG reading and writing.

use std::path::{Path, PathBuf};

use pixcolor_core::color::RgbImage;

use crate::error::{file_err, Error, Result};

/// Decodes any PNG (gray, alpha, 16-bit) into 8-bit RGB.
pub fn load_png(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(file_err(path))?;
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })?
        .into_rgb8();
    let (w, h) = decoded.dimensions();
    Ok(RgbImage::new(w as usize, h as usize, decoded.into_raw())?)
}

pub fn save_png(path: &Path, img: &RgbImage) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(file_err(dir))?;
    }
    image::save_buffer_with_format(
        path,
        img.data(),
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// `*.png` files directly inside `dir`, sorted by file name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(file_err(dir))? {
        let path = entry.map_err(file_err(dir))?.path();
        let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
