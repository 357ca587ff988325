//! Electrode montage: labels, 2D scalp projection, and hemisphere tags.

use super::SignalError;

/// Hemisphere class under the 10-20 naming convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hemisphere {
    Left,
    Right,
    Midline,
}

impl Hemisphere {
    /// Odd terminal digit → left, even → right, trailing `z` → midline.
    /// Returns `None` when the label does not follow the convention.
    pub fn from_label(label: &str) -> Option<Self> {
        let last = label.chars().last()?;
        match last {
            'z' | 'Z' => Some(Hemisphere::Midline),
            d if d.is_ascii_digit() => {
                if (d as u8 - b'0') % 2 == 1 {
                    Some(Hemisphere::Left)
                } else {
                    Some(Hemisphere::Right)
                }
            }
            _ => None,
        }
    }

    fn from_x(x: f64) -> Self {
        if x < 0.0 {
            Hemisphere::Left
        } else if x > 0.0 {
            Hemisphere::Right
        } else {
            Hemisphere::Midline
        }
    }
}

/// Canonical 32-channel montage order (DEAP recording order).
pub const CANONICAL_LABELS: [&str; 32] = [
    "Fp1", "AF3", "F3", "F7", "FC5", "FC1", "C3", "T7", "CP5", "CP1", "P3", "P7", "PO3", "O1", "Oz",
    "Pz", "Fp2", "AF4", "Fz", "F4", "F8", "FC6", "FC2", "Cz", "C4", "T8", "CP6", "CP2", "P4", "P8",
    "PO4", "O2",
];

// Polar positions (azimuth in degrees from the nose, negative to the left;
// arc radius with the Fpz-T7-Oz circle at 0.511).
const CANONICAL_POLAR: [(f64, f64); 32] = [
    (-18.0, 0.511),  // Fp1
    (-23.0, 0.411),  // AF3
    (-39.0, 0.333),  // F3
    (-54.0, 0.511),  // F7
    (-69.0, 0.394),  // FC5
    (-46.0, 0.181),  // FC1
    (-90.0, 0.256),  // C3
    (-90.0, 0.511),  // T7
    (-111.0, 0.394), // CP5
    (-134.0, 0.181), // CP1
    (-141.0, 0.333), // P3
    (-126.0, 0.511), // P7
    (-157.0, 0.411), // PO3
    (-162.0, 0.511), // O1
    (180.0, 0.511),  // Oz
    (180.0, 0.256),  // Pz
    (18.0, 0.511),   // Fp2
    (23.0, 0.411),   // AF4
    (0.0, 0.256),    // Fz
    (39.0, 0.333),   // F4
    (54.0, 0.511),   // F8
    (69.0, 0.394),   // FC6
    (46.0, 0.181),   // FC2
    (0.0, 0.0),      // Cz
    (90.0, 0.256),   // C4
    (90.0, 0.511),   // T8
    (111.0, 0.394),  // CP6
    (134.0, 0.181),  // CP2
    (141.0, 0.333),  // P4
    (126.0, 0.511),  // P8
    (157.0, 0.411),  // PO4
    (162.0, 0.511),  // O2
];

/// Ordered electrode labels with 2D positions in `[-1, 1]²` and hemisphere tags.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectrodeLayout {
    names: Vec<String>,
    coords: Vec<[f64; 2]>,
    hemispheres: Vec<Hemisphere>,
}

impl ElectrodeLayout {
    /// Builds a layout, deriving hemisphere tags from the labels. Labels that
    /// do not follow the 10-20 suffix convention fall back to the sign of the
    /// x coordinate.
    pub fn new(names: Vec<String>, coords: Vec<[f64; 2]>) -> Result<Self, SignalError> {
        let hemispheres = names
            .iter()
            .zip(&coords)
            .map(|(n, c)| Hemisphere::from_label(n).unwrap_or_else(|| Hemisphere::from_x(c[0])))
            .collect();
        Self::with_hemispheres(names, coords, hemispheres)
    }

    pub fn with_hemispheres(
        names: Vec<String>,
        coords: Vec<[f64; 2]>,
        hemispheres: Vec<Hemisphere>,
    ) -> Result<Self, SignalError> {
        if names.len() < 2 {
            return Err(SignalError::Layout(format!(
                "layout needs at least 2 electrodes, got {}",
                names.len()
            )));
        }
        if coords.len() != names.len() || hemispheres.len() != names.len() {
            return Err(SignalError::Layout(format!(
                "{} names but {} coordinates and {} hemisphere tags",
                names.len(),
                coords.len(),
                hemispheres.len()
            )));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].iter().any(|m| m.eq_ignore_ascii_case(n)) {
                return Err(SignalError::Layout(format!("duplicate electrode label {n}")));
            }
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SignalError::Layout("non-finite electrode coordinate".into()));
        }
        Ok(Self {
            names,
            coords,
            hemispheres,
        })
    }

    /// The embedded 32-electrode montage.
    pub fn canonical() -> Self {
        let coords = CANONICAL_POLAR
            .iter()
            .map(|&(theta, r)| {
                let t = theta.to_radians();
                let scale = r / 0.511;
                [scale * t.sin(), scale * t.cos()]
            })
            .collect();
        Self::new(CANONICAL_LABELS.iter().map(|s| s.to_string()).collect(), coords)
            .expect("canonical layout is valid")
    }

    /// Sub-layout of the canonical montage in the given label order.
    pub fn canonical_subset<S: AsRef<str>>(labels: &[S]) -> Result<Self, SignalError> {
        let canon = Self::canonical();
        let mut names = Vec::with_capacity(labels.len());
        let mut coords = Vec::with_capacity(labels.len());
        let mut hemis = Vec::with_capacity(labels.len());
        for l in labels {
            let l = l.as_ref().trim();
            let i = canon.index_of(l).ok_or_else(|| {
                SignalError::Layout(format!("unknown electrode label {l:?}"))
            })?;
            names.push(canon.names[i].clone());
            coords.push(canon.coords[i]);
            hemis.push(canon.hemispheres[i]);
        }
        Self::with_hemispheres(names, coords, hemis)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn hemispheres(&self) -> &[Hemisphere] {
        &self.hemispheres
    }

    /// Case-insensitive label lookup.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.names.iter().position(|n| n.eq_ignore_ascii_case(label))
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let [ax, ay] = self.coords[a];
        let [bx, by] = self.coords[b];
        (ax - bx).hypot(ay - by)
    }
}
