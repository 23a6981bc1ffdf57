//! The 32-electrode 10-20 montage and its flat 2-D layout.
//!
//! Coordinates are an azimuthal projection with Cz at the origin, nose
//! towards +y, right ear towards +x, and the ear-to-ear equator at radius 1.

pub const STANDARD_32: [&str; 32] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "FC5", "FC1", "FC2", "FC6", "T7", "C3", "Cz", "C4",
    "T8", "TP9", "CP5", "CP1", "CP2", "CP6", "TP10", "P7", "P3", "Pz", "P4", "P8", "PO9", "O1",
    "Oz", "O2", "PO10",
];

const LAYOUT: [(&str, f64, f64); 32] = [
    ("Fp1", -0.247, 0.761),
    ("Fp2", 0.247, 0.761),
    ("F7", -0.647, 0.470),
    ("F3", -0.310, 0.430),
    ("Fz", 0.0, 0.400),
    ("F4", 0.310, 0.430),
    ("F8", 0.647, 0.470),
    ("FC5", -0.560, 0.220),
    ("FC1", -0.190, 0.210),
    ("FC2", 0.190, 0.210),
    ("FC6", 0.560, 0.220),
    ("T7", -0.800, 0.0),
    ("C3", -0.400, 0.0),
    ("Cz", 0.0, 0.0),
    ("C4", 0.400, 0.0),
    ("T8", 0.800, 0.0),
    ("TP9", -0.900, -0.300),
    ("CP5", -0.560, -0.220),
    ("CP1", -0.190, -0.210),
    ("CP2", 0.190, -0.210),
    ("CP6", 0.560, -0.220),
    ("TP10", 0.900, -0.300),
    ("P7", -0.647, -0.470),
    ("P3", -0.310, -0.430),
    ("Pz", 0.0, -0.400),
    ("P4", 0.310, -0.430),
    ("P8", 0.647, -0.470),
    ("PO9", -0.530, -0.850),
    ("O1", -0.247, -0.761),
    ("Oz", 0.0, -0.800),
    ("O2", 0.247, -0.761),
    ("PO10", 0.530, -0.850),
];

/// Frontal electrodes (prefrontal and frontal row).
pub const FRONTAL: [&str; 7] = ["Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8"];

/// Occipital and parieto-occipital electrodes.
pub const OCCIPITAL: [&str; 5] = ["PO9", "O1", "Oz", "O2", "PO10"];

pub fn position(label: &str) -> Option<(f64, f64)> {
    LAYOUT
        .iter()
        .find(|(name, _, _)| name.eq_ignore_ascii_case(label))
        .map(|&(_, x, y)| (x, y))
}

pub fn layout() -> impl Iterator<Item = (&'static str, f64, f64)> {
    LAYOUT.iter().copied()
}

pub fn distance(a: &str, b: &str) -> Option<f64> {
    let (ax, ay) = position(a)?;
    let (bx, by) = position(b)?;
    Some(((ax - bx).powi(2) + (ay - by).powi(2)).sqrt())
}

/// Gaussian spatial weight `exp(-d^2 / 2 sigma^2)` of `label` around `peak`.
pub fn spatial_weight(label: &str, peak: &str, sigma: f64) -> Option<f64> {
    let d = distance(label, peak)?;
    Some((-d * d / (2.0 * sigma * sigma)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_covers_montage() {
        for name in STANDARD_32 {
            assert!(position(name).is_some(), "{name}");
        }
        let mut names: Vec<_> = STANDARD_32.to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 32);
    }

    #[test]
    fn weights() {
        assert_eq!(spatial_weight("Cz", "Cz", 0.35), Some(1.0));
        let c3 = spatial_weight("C3", "Cz", 0.35).unwrap();
        assert!((c3 - (-0.16f64 / 0.245).exp()).abs() < 1e-12);
        assert!(spatial_weight("Xx", "Cz", 0.35).is_none());
    }
}
