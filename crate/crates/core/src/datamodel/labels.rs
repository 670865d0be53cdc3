//! Conversion between the two per-task label maps and the 14-class merged
//! taxonomy used by the merged-task baseline.

use image::GrayImage;

use super::catalog::{NUM_DEFECT_CLASSES, NUM_ELEMENT_CLASSES, NUM_MERGED_CLASSES};
use crate::error::{Error, Result};

/// Checks every value of `map` is below `classes`.
pub fn validate_label_map(map: &GrayImage, classes: usize) -> Result<()> {
    match map.as_raw().iter().find(|&&v| v as usize >= classes) {
        Some(&v) => Err(Error::ClassOutOfRange {
            value: v as usize,
            classes,
        }),
        None => Ok(()),
    }
}

/// `merged = element + 7 · defect`.
pub fn merge_labels(element: &GrayImage, defect: &GrayImage) -> Result<GrayImage> {
    if element.dimensions() != defect.dimensions() {
        return Err(Error::Shape(format!(
            "element map {:?} vs defect map {:?}",
            element.dimensions(),
            defect.dimensions()
        )));
    }
    validate_label_map(element, NUM_ELEMENT_CLASSES)?;
    validate_label_map(defect, NUM_DEFECT_CLASSES)?;
    let data = element
        .as_raw()
        .iter()
        .zip(defect.as_raw())
        .map(|(&e, &d)| e + NUM_ELEMENT_CLASSES as u8 * d)
        .collect();
    let (w, h) = element.dimensions();
    Ok(GrayImage::from_raw(w, h, data).expect("dimensions match buffer"))
}

/// Inverse of [`merge_labels`]: `element = merged mod 7`, `defect = merged div 7`.
pub fn split_merged(merged: &GrayImage) -> Result<(GrayImage, GrayImage)> {
    validate_label_map(merged, NUM_MERGED_CLASSES)?;
    let (w, h) = merged.dimensions();
    let k = NUM_ELEMENT_CLASSES as u8;
    let element = merged.as_raw().iter().map(|&m| m % k).collect();
    let defect = merged.as_raw().iter().map(|&m| m / k).collect();
    Ok((
        GrayImage::from_raw(w, h, element).expect("dimensions match buffer"),
        GrayImage::from_raw(w, h, defect).expect("dimensions match buffer"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Luma;
    use proptest::prelude::*;

    #[test]
    fn girder_corrosion_maps_to_twelve() {
        let e = GrayImage::from_pixel(1, 1, Luma([5]));
        let d = GrayImage::from_pixel(1, 1, Luma([1]));
        assert_eq!(merge_labels(&e, &d).unwrap().get_pixel(0, 0)[0], 12);
        let z = GrayImage::new(1, 1);
        assert_eq!(merge_labels(&z, &z).unwrap().get_pixel(0, 0)[0], 0);
    }

    #[test]
    fn split_examples() {
        let m = GrayImage::from_raw(2, 1, vec![12, 0]).unwrap();
        let (e, d) = split_merged(&m).unwrap();
        assert_eq!(e.as_raw(), &vec![5, 0]);
        assert_eq!(d.as_raw(), &vec![1, 0]);
        let bad = GrayImage::from_pixel(1, 1, Luma([14]));
        assert!(matches!(
            split_merged(&bad),
            Err(Error::ClassOutOfRange { value: 14, .. })
        ));
    }

    #[test]
    fn girder_map_with_corroded_quadrant() {
        let n = 8;
        let e = GrayImage::from_pixel(n, n, Luma([5]));
        let d = GrayImage::from_fn(n, n, |x, y| Luma([u8::from(x < n / 2 && y < n / 2)]));
        let m = merge_labels(&e, &d).unwrap();
        for y in 0..n {
            for x in 0..n {
                let expected = if x < n / 2 && y < n / 2 { 12 } else { 5 };
                assert_eq!(m.get_pixel(x, y)[0], expected);
            }
        }
        let corroded = m.as_raw().iter().filter(|&&v| v == 12).count();
        assert_eq!(corroded * 4, (n * n) as usize);
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        assert!(merge_labels(&GrayImage::new(2, 2), &GrayImage::new(2, 3)).is_err());
    }

    proptest! {
        #[test]
        fn merge_split_round_trip(
            e in proptest::collection::vec(0u8..7, 256),
            d in proptest::collection::vec(0u8..2, 256),
        ) {
            let em = GrayImage::from_raw(16, 16, e).unwrap();
            let dm = GrayImage::from_raw(16, 16, d).unwrap();
            let (e2, d2) = split_merged(&merge_labels(&em, &dm).unwrap()).unwrap();
            prop_assert_eq!(e2, em);
            prop_assert_eq!(d2, dm);
        }
    }
}
