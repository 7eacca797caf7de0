use serde::{Deserialize, Serialize};

/// Per-coordinate z-score fitted on training rows and applied unchanged
/// at evaluation time. Constant coordinates keep a unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, width: usize) -> Self {
        let mut n = 0usize;
        let mut mean = vec![0.0; width];
        let mut m2 = vec![0.0; width];
        // Welford
        for row in rows {
            n += 1;
            for ((m, s), &x) in mean.iter_mut().zip(m2.iter_mut()).zip(row) {
                let d = x - *m;
                *m += d / n as f64;
                *s += d * (x - *m);
            }
        }
        let std = m2
            .iter()
            .map(|s| {
                let sd = if n > 0 { (s / n as f64).sqrt() } else { 0.0 };
                if sd > 1e-8 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zscore() {
        let rows = [vec![1.0, 5.0], vec![3.0, 5.0]];
        let n = Normalizer::fit(rows.iter().map(|r| r.as_slice()), 2);
        assert_eq!(n.mean, vec![2.0, 5.0]);
        assert_eq!(n.std, vec![1.0, 1.0]);
        assert_eq!(n.apply(&[3.0, 5.0]), vec![1.0, 0.0]);
        let rows = [vec![0.0], vec![4.0]];
        let n = Normalizer::fit(rows.iter().map(|r| r.as_slice()), 1);
        assert_eq!(n.apply(&[4.0]), vec![1.0]);
    }
}
