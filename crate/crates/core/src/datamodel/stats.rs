use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::catalog::{
    DEFECT_CLASSES, ELEMENT_ABBREVIATIONS, ELEMENT_CLASSES, NUM_DEFECT_CLASSES, NUM_ELEMENT_CLASSES,
};
use super::manifest::{DatasetManifest, Split};
use super::sample::read_mask;
use crate::error::{Error, Result};

/// Pixel and image counts for one split (or the whole dataset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    /// `train`, `test` or `total`.
    pub name: String,
    pub images: usize,
    pub element_pixels: [u64; NUM_ELEMENT_CLASSES],
    pub defect_pixels: [u64; NUM_DEFECT_CLASSES],
    /// Present only when every entry of the split carries instance counts.
    pub instance_counts: Option<[u64; NUM_ELEMENT_CLASSES]>,
}

impl SplitSummary {
    fn empty(name: &str) -> Self {
        Self {
            name: name.to_string(),
            images: 0,
            element_pixels: [0; NUM_ELEMENT_CLASSES],
            defect_pixels: [0; NUM_DEFECT_CLASSES],
            instance_counts: Some([0; NUM_ELEMENT_CLASSES]),
        }
    }

    fn absorb(&mut self, other: &SplitSummary) {
        self.images += other.images;
        for (a, b) in self.element_pixels.iter_mut().zip(other.element_pixels) {
            *a += b;
        }
        for (a, b) in self.defect_pixels.iter_mut().zip(other.defect_pixels) {
            *a += b;
        }
        self.instance_counts = match (self.instance_counts, other.instance_counts) {
            (Some(mut a), Some(b)) => {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Some(a)
            }
            _ => None,
        };
    }

    fn proportions<const K: usize>(counts: &[u64; K]) -> [f64; K] {
        let total: u64 = counts.iter().sum();
        let mut out = [0.0; K];
        if total > 0 {
            for (o, &c) in out.iter_mut().zip(counts) {
                *o = c as f64 / total as f64;
            }
        }
        out
    }

    pub fn element_proportions(&self) -> [f64; NUM_ELEMENT_CLASSES] {
        Self::proportions(&self.element_pixels)
    }

    /// `[no corrosion, corrosion]` pixel fractions.
    pub fn defect_proportions(&self) -> [f64; NUM_DEFECT_CLASSES] {
        Self::proportions(&self.defect_pixels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub train: SplitSummary,
    pub test: SplitSummary,
    pub total: SplitSummary,
}

/// Counts label pixels per split over the raw-resolution masks.
pub fn compute_split_stats(manifest: &DatasetManifest) -> Result<SplitStats> {
    let mut train = SplitSummary::empty("train");
    let mut test = SplitSummary::empty("test");
    for entry in &manifest.entries {
        let tag = |e: Error| Error::Entry {
            id: entry.id.clone(),
            message: e.to_string(),
        };
        let element = read_mask(&manifest.resolve(&entry.element_mask_path)).map_err(tag)?;
        let defect = read_mask(&manifest.resolve(&entry.defect_mask_path)).map_err(tag)?;
        let mut one = SplitSummary::empty(entry.split.as_str());
        one.images = 1;
        for &v in element.as_raw() {
            let slot = one.element_pixels.get_mut(v as usize).ok_or_else(|| {
                tag(Error::ClassOutOfRange {
                    value: v as usize,
                    classes: NUM_ELEMENT_CLASSES,
                })
            })?;
            *slot += 1;
        }
        for &v in defect.as_raw() {
            let slot = one.defect_pixels.get_mut(v as usize).ok_or_else(|| {
                tag(Error::ClassOutOfRange {
                    value: v as usize,
                    classes: NUM_DEFECT_CLASSES,
                })
            })?;
            *slot += 1;
        }
        one.instance_counts = entry.instances.as_ref().map(|m| {
            let mut counts = [0u64; NUM_ELEMENT_CLASSES];
            for (i, (name, abbr)) in ELEMENT_CLASSES
                .iter()
                .zip(ELEMENT_ABBREVIATIONS)
                .enumerate()
            {
                counts[i] = m.get(*name).or_else(|| m.get(abbr)).copied().unwrap_or(0) as u64;
            }
            counts
        });
        match entry.split {
            Split::Train => train.absorb(&one),
            Split::Test => test.absorb(&one),
        }
    }
    for s in [&mut train, &mut test] {
        if s.images == 0 {
            s.instance_counts = None;
        }
    }
    let mut total = SplitSummary::empty("total");
    total.absorb(&train);
    total.absorb(&test);
    if total.images == 0 {
        total.instance_counts = None;
    }
    Ok(SplitStats { train, test, total })
}

impl SplitStats {
    /// Plain-text table: image counts, element pixel shares and defect area
    /// shares (percent) per split.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<10}{:>8}", "", "images");
        for a in ELEMENT_ABBREVIATIONS {
            let _ = write!(out, "{a:>8}");
        }
        let _ = writeln!(out, "{:>8}{:>8}", "Cor", "No");
        for s in [&self.train, &self.test, &self.total] {
            let _ = write!(out, "{:<10}{:>8}", s.name, s.images);
            for p in s.element_proportions() {
                let _ = write!(out, "{:>8.1}", 100.0 * p);
            }
            let d = s.defect_proportions();
            let _ = writeln!(out, "{:>8.1}{:>8.1}", 100.0 * d[1], 100.0 * d[0]);
        }
        if let Some(counts) = self.total.instance_counts {
            let _ = write!(out, "{:<10}{:>8}", "instances", "");
            for c in counts {
                let _ = write!(out, "{c:>8}");
            }
            let _ = writeln!(out);
        }
        let _ = writeln!(
            out,
            "(element columns: % of pixels per class; defect columns: % {} / {} area)",
            DEFECT_CLASSES[1], DEFECT_CLASSES[0]
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::sample::{write_sample, Sample};
    use image::{GrayImage, Luma, RgbImage};
    use tempfile::tempdir;

    fn sample(id: &str, corrosion: u8, element: u8) -> Sample {
        Sample {
            id: id.into(),
            image: RgbImage::new(10, 10),
            element_map: GrayImage::from_pixel(10, 10, Luma([element])),
            defect_map: GrayImage::from_pixel(10, 10, Luma([corrosion])),
        }
    }

    fn manifest(samples: &[(Sample, Split)]) -> (tempfile::TempDir, DatasetManifest) {
        let dir = tempdir().unwrap();
        let entries = samples
            .iter()
            .map(|(s, split)| write_sample(dir.path(), s, *split).unwrap())
            .collect();
        let m = DatasetManifest {
            root: dir.path().to_path_buf(),
            entries,
        };
        (dir, m)
    }

    #[test]
    fn all_corroded_sample() {
        let (_d, m) = manifest(&[(sample("a", 1, 5), Split::Train)]);
        let s = compute_split_stats(&m).unwrap();
        assert_eq!(s.train.defect_proportions()[1], 1.0);
        assert_eq!(s.train.element_proportions()[5], 1.0);
    }

    #[test]
    fn half_corroded_pair() {
        let (_d, m) = manifest(&[
            (sample("a", 1, 5), Split::Train),
            (sample("b", 0, 2), Split::Train),
        ]);
        let s = compute_split_stats(&m).unwrap();
        // brute-force recount
        let corroded: u64 = [100u64, 0].iter().sum();
        assert_eq!(s.train.defect_proportions()[1], corroded as f64 / 200.0);
        assert_eq!(s.train.defect_proportions()[1], 0.5);
        assert_eq!(s.test.images, 0);
        assert_eq!(s.total.images, 2);
    }

    #[test]
    fn proportions_sum_to_one() {
        let (_d, m) = manifest(&[
            (sample("a", 1, 1), Split::Train),
            (sample("b", 0, 3), Split::Test),
            (sample("c", 1, 6), Split::Test),
        ]);
        let s = compute_split_stats(&m).unwrap();
        for split in [&s.train, &s.test, &s.total] {
            assert!((split.element_proportions().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((split.defect_proportions().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(s.render().contains("total"));
    }
}
