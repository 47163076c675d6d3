//! Helpers for the acceptance runner: verdict lines, small statistics and
//! locating workspace binaries.

use std::path::PathBuf;

/// Outcome of one criterion; `detail` carries the measured numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }

    /// `criterion  N  PASS|FAIL  name: detail`
    pub fn line(&self, number: usize, name: &str) -> String {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        format!("criterion {number:>2}  {tag}  {name}: {}", self.detail)
    }
}

/// Median of a non-empty sample; the mean of the middle pair for even sizes.
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of an empty sample");
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Least-squares line `y = a + b x`, returned with its coefficient of
/// determination.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 2, "a line needs two points");
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(xi, yi)| (yi - a - b * xi).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|yi| (yi - my).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    (a, b, r2)
}

/// Path of a binary built into the same target directory as the running
/// test executable (`target/<profile>/deps/..`).
pub fn workspace_binary(name: &str) -> PathBuf {
    let exe = std::env::current_exe().expect("test executable path");
    let profile_dir = exe
        .parent()
        .and_then(|deps| deps.parent())
        .expect("test executable lives in target/<profile>/deps");
    profile_dir.join(format!("{name}{}", std::env::consts::EXE_SUFFIX))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even_samples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn exact_line_has_unit_r2() {
        let (a, b, r2) = linear_fit(&[1.0, 2.0, 4.0], &[3.0, 5.0, 9.0]);
        assert!((a - 1.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
        let (_, _, flat) = linear_fit(&[1.0, 2.0, 3.0], &[1.0, 3.0, 1.0]);
        assert!(flat.abs() < 1e-12);
    }

    #[test]
    fn verdict_lines_are_tagged() {
        assert_eq!(Verdict::new(true, "ok").line(3, "x"), "criterion  3  PASS  x: ok");
        assert!(Verdict::new(false, "no").line(10, "y").contains("FAIL"));
    }
}
