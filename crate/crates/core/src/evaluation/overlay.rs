//! Four-panel prediction composites: input, element classes, corrosion and
//! a combined view with corrosion hatched over the element colours.

use std::path::Path;

use image::{GrayImage, Rgb, RgbImage};

use crate::datamodel::catalog::{CORROSION, NUM_ELEMENT_CLASSES};
use crate::error::{Error, Result};

/// Fixed element colours, indexed by class: background, bearing, bracing,
/// deck, floor beam, girder, substructure.
pub const ELEMENT_PALETTE: [[u8; 3]; NUM_ELEMENT_CLASSES] = [
    [0, 0, 0],
    [230, 159, 0],
    [86, 180, 233],
    [0, 158, 115],
    [240, 228, 66],
    [0, 114, 178],
    [204, 121, 167],
];

pub const NO_CORROSION_COLOR: [u8; 3] = [40, 40, 40];
pub const CORROSION_COLOR: [u8; 3] = [213, 94, 0];

/// Hatch pixels lie on diagonal stripes two pixels wide every four pixels.
pub fn is_hatch(x: u32, y: u32) -> bool {
    (x + y) % 4 < 2
}

pub fn colorize_elements(map: &GrayImage) -> Result<RgbImage> {
    let (w, h) = map.dimensions();
    let mut out = RgbImage::new(w, h);
    for (o, p) in out.pixels_mut().zip(map.pixels()) {
        let k = p[0] as usize;
        let c = ELEMENT_PALETTE.get(k).ok_or(Error::ClassOutOfRange {
            value: k,
            classes: NUM_ELEMENT_CLASSES,
        })?;
        *o = Rgb(*c);
    }
    Ok(out)
}

pub fn colorize_defects(map: &GrayImage) -> Result<RgbImage> {
    let (w, h) = map.dimensions();
    let mut out = RgbImage::new(w, h);
    for (o, p) in out.pixels_mut().zip(map.pixels()) {
        *o = Rgb(match p[0] {
            CORROSION => CORROSION_COLOR,
            0 => NO_CORROSION_COLOR,
            v => {
                return Err(Error::ClassOutOfRange {
                    value: v as usize,
                    classes: 2,
                })
            }
        });
    }
    Ok(out)
}

/// Builds the composite `[input | elements | corrosion | combined]`.
pub fn overlay_image(
    image: &RgbImage,
    element_pred: &GrayImage,
    defect_pred: &GrayImage,
) -> Result<RgbImage> {
    let (w, h) = image.dimensions();
    if element_pred.dimensions() != (w, h) || defect_pred.dimensions() != (w, h) {
        return Err(Error::Shape(format!(
            "overlay inputs differ in size: image {:?}, element {:?}, defect {:?}",
            (w, h),
            element_pred.dimensions(),
            defect_pred.dimensions()
        )));
    }
    let elements = colorize_elements(element_pred)?;
    let defects = colorize_defects(defect_pred)?;
    let mut out = RgbImage::new(4 * w, h);
    for y in 0..h {
        for x in 0..w {
            let e = *elements.get_pixel(x, y);
            out.put_pixel(x, y, *image.get_pixel(x, y));
            out.put_pixel(w + x, y, e);
            out.put_pixel(2 * w + x, y, *defects.get_pixel(x, y));
            let corroded = defect_pred.get_pixel(x, y)[0] == CORROSION;
            let combined = if corroded && is_hatch(x, y) {
                Rgb(CORROSION_COLOR)
            } else {
                e
            };
            out.put_pixel(3 * w + x, y, combined);
        }
    }
    Ok(out)
}

/// Writes the composite as a PNG.
pub fn render_overlay(
    image: &RgbImage,
    element_pred: &GrayImage,
    defect_pred: &GrayImage,
    path: &Path,
) -> Result<()> {
    let composite = overlay_image(image, element_pred, defect_pred)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    composite
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}
