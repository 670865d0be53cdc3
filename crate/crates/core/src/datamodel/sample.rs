use std::path::Path;

use image::imageops::{self, FilterType};
use image::{DynamicImage, GrayImage, RgbImage};

use super::catalog::{NUM_DEFECT_CLASSES, NUM_ELEMENT_CLASSES};
use super::labels::validate_label_map;
use super::manifest::{DatasetManifest, ManifestEntry, Split};
use crate::error::{Error, Result};

/// An RGB image with its element and defect label maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: RgbImage,
    pub element_map: GrayImage,
    pub defect_map: GrayImage,
}

impl Sample {
    pub fn dimensions(&self) -> (u32, u32) {
        self.image.dimensions()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.image.dimensions();
        if self.element_map.dimensions() != dims || self.defect_map.dimensions() != dims {
            return Err(Error::Entry {
                id: self.id.clone(),
                message: format!(
                    "raster sizes differ: image {:?}, element {:?}, defect {:?}",
                    dims,
                    self.element_map.dimensions(),
                    self.defect_map.dimensions()
                ),
            });
        }
        validate_label_map(&self.element_map, NUM_ELEMENT_CLASSES)?;
        validate_label_map(&self.defect_map, NUM_DEFECT_CLASSES)
    }

    /// Resizes to `size × size`: bilinear for the image, nearest-neighbour
    /// for the label maps.
    pub fn resized(self, size: u32) -> Sample {
        if self.image.dimensions() == (size, size) {
            return self;
        }
        Sample {
            id: self.id,
            image: imageops::resize(&self.image, size, size, FilterType::Triangle),
            element_map: imageops::resize(&self.element_map, size, size, FilterType::Nearest),
            defect_map: imageops::resize(&self.defect_map, size, size, FilterType::Nearest),
        }
    }
}

fn decode(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads a single-channel index mask.
pub fn read_mask(path: &Path) -> Result<GrayImage> {
    match decode(path)? {
        DynamicImage::ImageLuma8(m) => Ok(m),
        other => Err(Error::Image {
            path: path.to_path_buf(),
            message: format!(
                "masks must be 8-bit single channel, found {:?}",
                other.color()
            ),
        }),
    }
}

pub fn read_image(path: &Path) -> Result<RgbImage> {
    Ok(decode(path)?.to_rgb8())
}

/// Decodes one manifest entry, validates it and resizes it to
/// `target_size × target_size`.
pub fn load_sample(
    manifest: &DatasetManifest,
    entry: &ManifestEntry,
    target_size: u32,
) -> Result<Sample> {
    let tag = |e: Error| match e {
        Error::Entry { .. } => e,
        other => Error::Entry {
            id: entry.id.clone(),
            message: other.to_string(),
        },
    };
    let sample = Sample {
        id: entry.id.clone(),
        image: read_image(&manifest.resolve(&entry.image_path)).map_err(tag)?,
        element_map: read_mask(&manifest.resolve(&entry.element_mask_path)).map_err(tag)?,
        defect_map: read_mask(&manifest.resolve(&entry.defect_mask_path)).map_err(tag)?,
    };
    sample.validate().map_err(tag)?;
    Ok(sample.resized(target_size))
}

/// Loads every entry of one split.
pub fn load_split(
    manifest: &DatasetManifest,
    split: Split,
    target_size: u32,
) -> Result<Vec<Sample>> {
    manifest
        .split(split)
        .map(|e| load_sample(manifest, e, target_size))
        .collect()
}

/// Writes a sample's rasters as PNGs using the standard dataset layout and
/// returns the corresponding manifest entry.
pub fn write_sample(root: &Path, sample: &Sample, split: Split) -> Result<ManifestEntry> {
    let entry = ManifestEntry {
        id: sample.id.clone(),
        image_path: Path::new("images").join(format!("{}.png", sample.id)),
        element_mask_path: Path::new("labels_element").join(format!("{}.png", sample.id)),
        defect_mask_path: Path::new("labels_defect").join(format!("{}.png", sample.id)),
        split,
        instances: None,
    };
    for dir in ["images", "labels_element", "labels_defect"] {
        let d = root.join(dir);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let save_err = |path: &Path, e: image::ImageError| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let p = root.join(&entry.image_path);
    sample.image.save(&p).map_err(|e| save_err(&p, e))?;
    let p = root.join(&entry.element_mask_path);
    sample.element_map.save(&p).map_err(|e| save_err(&p, e))?;
    let p = root.join(&entry.defect_mask_path);
    sample.defect_map.save(&p).map_err(|e| save_err(&p, e))?;
    Ok(entry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::manifest::load_manifest;
    use image::{Luma, Rgb};
    use std::collections::BTreeSet;
    use tempfile::tempdir;

    fn sample(w: u32, h: u32) -> Sample {
        Sample {
            id: "s".into(),
            image: RgbImage::from_fn(w, h, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 7])),
            element_map: GrayImage::from_fn(w, h, |x, y| Luma([((x / 40 + y / 40) % 7) as u8])),
            defect_map: GrayImage::from_fn(w, h, |x, _| Luma([u8::from(x > w / 3)])),
        }
    }

    fn values(m: &GrayImage) -> BTreeSet<u8> {
        m.as_raw().iter().copied().collect()
    }

    fn dataset_with(s: &Sample) -> (tempfile::TempDir, DatasetManifest) {
        let dir = tempdir().unwrap();
        let entry = write_sample(dir.path(), s, Split::Train).unwrap();
        let m = DatasetManifest {
            root: dir.path().to_path_buf(),
            entries: vec![entry],
        };
        m.save().unwrap();
        let m = load_manifest(dir.path()).unwrap();
        (dir, m)
    }

    #[test]
    fn resize_keeps_label_values() {
        let s = sample(960, 720);
        let (_dir, m) = dataset_with(&s);
        let loaded = load_sample(&m, &m.entries[0], 480).unwrap();
        assert_eq!(loaded.image.dimensions(), (480, 480));
        assert_eq!(loaded.element_map.dimensions(), (480, 480));
        assert_eq!(loaded.defect_map.dimensions(), (480, 480));
        assert!(values(&loaded.element_map).is_subset(&values(&s.element_map)));
        assert_eq!(values(&loaded.element_map), values(&s.element_map));
        assert_eq!(values(&loaded.defect_map), values(&s.defect_map));
    }

    #[test]
    fn already_sized_sample_round_trips() {
        let s = sample(48, 48);
        let (_dir, m) = dataset_with(&s);
        assert_eq!(load_sample(&m, &m.entries[0], 48).unwrap(), s);
    }

    #[test]
    fn out_of_range_mask_value_rejected() {
        let mut s = sample(16, 16);
        s.element_map.put_pixel(3, 3, Luma([9]));
        let (_dir, m) = dataset_with(&s);
        let err = load_sample(&m, &m.entries[0], 16).unwrap_err();
        assert!(
            err.to_string().contains("class index out of range"),
            "{err}"
        );
    }

    #[test]
    fn mismatched_raster_sizes_rejected() {
        let mut s = sample(16, 16);
        s.defect_map = GrayImage::new(16, 12);
        let (_dir, m) = dataset_with(&s);
        assert!(matches!(
            load_sample(&m, &m.entries[0], 16),
            Err(Error::Entry { .. })
        ));
    }

    #[test]
    fn rgb_mask_rejected() {
        let s = sample(8, 8);
        let (dir, m) = dataset_with(&s);
        RgbImage::new(8, 8)
            .save(dir.path().join(&m.entries[0].element_mask_path))
            .unwrap();
        assert!(load_sample(&m, &m.entries[0], 8).is_err());
    }
}
