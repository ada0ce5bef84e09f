use super::CoilData;
use crate::{Complex64, Error, Result};

/// Equispaced phase-encode line mask with a fully sampled centre band.
///
/// Lines are rows: `line_selected[i]` keeps or zeroes row `i` of every coil.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplingMask {
    pub height: usize,
    pub width: usize,
    pub line_selected: Vec<bool>,
    pub acs_count: usize,
    pub acceleration: usize,
}

/// Default auto-calibration band: 8% of the lines at 4x, 4% at 8x.
pub fn default_acs(height: usize, acceleration: usize) -> usize {
    let fraction = 0.32 / acceleration.max(1) as f64;
    ((height as f64 * fraction).round() as usize).min(height)
}

/// Every `acceleration`-th line from `offset`, plus `acs_count` lines centred on `height / 2`.
pub fn make_mask(
    height: usize,
    width: usize,
    acceleration: usize,
    acs_count: usize,
    offset: usize,
) -> Result<SamplingMask> {
    if acceleration == 0 {
        return Err(Error::config("acceleration must be at least 1"));
    }
    if offset >= acceleration {
        return Err(Error::config(format!("offset {offset} must be below acceleration {acceleration}")));
    }
    if acs_count > height {
        return Err(Error::config(format!("acs_count {acs_count} exceeds height {height}")));
    }
    let mut line_selected: Vec<bool> = (0..height).map(|i| i >= offset && (i - offset) % acceleration == 0).collect();
    let (start, end) = acs_band(height, acs_count);
    for flag in &mut line_selected[start..end] {
        *flag = true;
    }
    Ok(SamplingMask { height, width, line_selected, acs_count, acceleration })
}

fn acs_band(height: usize, acs_count: usize) -> (usize, usize) {
    let start = (height / 2).saturating_sub(acs_count / 2);
    let start = start.min(height - acs_count);
    (start, start + acs_count)
}

impl SamplingMask {
    /// A mask keeping every line.
    pub fn full(height: usize, width: usize) -> Self {
        Self { height, width, line_selected: vec![true; height], acs_count: height, acceleration: 1 }
    }

    pub fn from_lines(width: usize, line_selected: Vec<bool>, acs_count: usize, acceleration: usize) -> Result<Self> {
        let height = line_selected.len();
        if acs_count > height {
            return Err(Error::config(format!("acs_count {acs_count} exceeds height {height}")));
        }
        let mask = Self { height, width, line_selected, acs_count, acceleration };
        let (start, end) = mask.acs_range();
        if !mask.line_selected[start..end].iter().all(|&s| s) {
            return Err(Error::input("auto-calibration lines are not all selected"));
        }
        Ok(mask)
    }

    /// Row range of the auto-calibration band.
    pub fn acs_range(&self) -> (usize, usize) {
        acs_band(self.height, self.acs_count)
    }

    pub fn selected_count(&self) -> usize {
        self.line_selected.iter().filter(|&&s| s).count()
    }

    pub fn sampled_fraction(&self) -> f64 {
        self.selected_count() as f64 / self.height as f64
    }

    /// The `H x W` binary matrix `M`.
    pub fn expand(&self) -> Vec<bool> {
        self.line_selected.iter().flat_map(|&s| std::iter::repeat(s).take(self.width)).collect()
    }

    /// Same expansion as 0/1 reals, convenient for network graphs.
    pub fn expand_f64(&self) -> Vec<f64> {
        self.expand().into_iter().map(|s| if s { 1.0 } else { 0.0 }).collect()
    }

    /// Zeroes unselected rows of one `H x W` plane.
    pub fn apply_plane(&self, plane: &mut [Complex64]) {
        for (row, &keep) in plane.chunks_mut(self.width).zip(&self.line_selected) {
            if !keep {
                row.fill(Complex64::new(0.0, 0.0));
            }
        }
    }

    pub fn apply(&self, ksp: &mut CoilData) -> Result<()> {
        if ksp.height != self.height || ksp.width != self.width {
            return Err(Error::shape(format!(
                "mask is {}x{} but k-space is {}x{}",
                self.height, self.width, ksp.height, ksp.width
            )));
        }
        for l in 0..ksp.coils {
            self.apply_plane(ksp.coil_mut(l));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn selected(mask: &SamplingMask) -> Vec<usize> {
        (0..mask.height).filter(|&i| mask.line_selected[i]).collect()
    }

    #[test]
    fn no_acceleration_selects_everything() {
        let m = make_mask(8, 8, 1, 0, 0).unwrap();
        assert_eq!(m.selected_count(), 8);
    }

    #[test]
    fn equispaced_with_center_band() {
        let m = make_mask(16, 16, 4, 4, 0).unwrap();
        assert_eq!(selected(&m), vec![0, 4, 6, 7, 8, 9, 12]);
        assert_eq!(m.acs_range(), (6, 10));
    }

    #[test]
    fn offset_shifts_the_lattice() {
        let m = make_mask(16, 16, 4, 0, 1).unwrap();
        assert_eq!(selected(&m), vec![1, 5, 9, 13]);
    }

    #[test]
    fn fastmri_style_fraction_matches_enumeration() {
        // independent count: lattice lines plus ACS lines not already on the lattice
        let height = 320;
        let acs = default_acs(height, 4);
        assert_eq!(acs, 26);
        let m = make_mask(height, 32, 4, acs, 0).unwrap();
        let start = height / 2 - acs / 2;
        let mut count = 0;
        for i in 0..height {
            let on_lattice = i % 4 == 0;
            let in_acs = i >= start && i < start + acs;
            if on_lattice || in_acs {
                count += 1;
            }
        }
        assert_eq!(m.selected_count(), count);
        assert_eq!(count, 80 + 26 - 7);
        assert!((m.sampled_fraction() - 99.0 / 320.0).abs() < 1e-15);
    }

    #[test]
    fn config_errors() {
        assert!(matches!(make_mask(8, 8, 0, 0, 0), Err(Error::InvalidConfig(_))));
        assert!(matches!(make_mask(8, 8, 4, 9, 0), Err(Error::InvalidConfig(_))));
        assert!(matches!(make_mask(8, 8, 4, 2, 4), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn masking_is_idempotent() {
        let m = make_mask(8, 4, 2, 2, 0).unwrap();
        let data = (0..32).map(|i| Complex64::new(i as f64, -(i as f64))).collect();
        let mut once = CoilData::new(1, 8, 4, data).unwrap();
        m.apply(&mut once).unwrap();
        let mut twice = once.clone();
        m.apply(&mut twice).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn acs_band_stays_inside_grid() {
        let m = make_mask(8, 8, 4, 8, 0).unwrap();
        assert_eq!(m.selected_count(), 8);
        let m = make_mask(9, 8, 4, 3, 0).unwrap();
        assert_eq!(m.acs_range(), (3, 6));
    }
}
