//! Fixed-width histograms of sample weights.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// `bins` equal-width bins over `[lo, hi]`; values at `hi` land in the last
    /// bin, values outside the range are clamped into the end bins.
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        assert!(bins > 0 && hi > lo);
        let mut counts = vec![0; bins];
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let b = ((v - lo) / width).floor();
            let b = if b.is_nan() {
                0
            } else {
                (b.max(0.0) as usize).min(bins - 1)
            };
            counts[b] += 1;
        }
        Self { lo, hi, counts }
    }

    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let width = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + bin as f64 * width, self.lo + (bin + 1) as f64 * width)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("bin_lo\tbin_hi\tcount\n");
        for (b, c) in self.counts.iter().enumerate() {
            let (l, h) = self.edges(b);
            let _ = writeln!(s, "{l:.4}\t{h:.4}\t{c}");
        }
        s
    }

    /// Bars scaled so the fullest bin is `width` characters wide.
    pub fn to_text(&self, width: usize) -> String {
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1);
        let mut s = String::new();
        for (b, &c) in self.counts.iter().enumerate() {
            let (l, h) = self.edges(b);
            let bar = "#".repeat((c * width).div_ceil(max));
            let _ = writeln!(s, "[{l:.2}, {h:.2}) {c:>7} {bar}");
        }
        s
    }
}
