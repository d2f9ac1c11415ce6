//! Per-feature scaling with statistics that travel inside checkpoints.

use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scaling {
    /// Maps `[min, max]` onto `[0, 1]`.
    MinMax,
    /// Subtracts the mean and divides by the standard deviation.
    ZScore,
}

/// Affine per-feature transform `(x - offset) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity(n: usize) -> Self {
        Self {
            offset: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    pub fn fit<R: AsRef<[f64]>>(rows: &[R], scaling: Scaling) -> Self {
        let n = rows.first().map_or(0, |r| r.as_ref().len());
        let mut offset = vec![0.0; n];
        let mut scale = vec![1.0; n];
        for j in 0..n {
            let col = rows.iter().map(|r| r.as_ref()[j]);
            let (o, s) = match scaling {
                Scaling::MinMax => {
                    let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                    (lo, hi - lo)
                }
                Scaling::ZScore => {
                    let m = rows.len() as f64;
                    let mean = col.clone().sum::<f64>() / m;
                    let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
                    (mean, var.sqrt())
                }
            };
            offset[j] = o;
            scale[j] = if s > 1e-12 { s } else { 1.0 };
        }
        Self { offset, scale }
    }

    pub fn len(&self) -> usize {
        self.offset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offset.is_empty()
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.offset.iter().zip(&self.scale))
            .map(|(v, (o, s))| (v - o) / s)
            .collect()
    }

    pub fn inverse(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.offset.iter().zip(&self.scale))
            .map(|(v, (o, s))| v * s + o)
            .collect()
    }

    /// Stores the statistics as `{prefix}.offset` / `{prefix}.scale`.
    pub fn write(&self, ckpt: &mut Checkpoint, prefix: &str) {
        let f = |v: &[f64]| Tensor::from_vec(v.iter().map(|&x| x as f32).collect());
        ckpt.push(format!("{prefix}.offset"), f(&self.offset));
        ckpt.push(format!("{prefix}.scale"), f(&self.scale));
    }

    pub fn read(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        let get = |name: String| {
            ckpt.get(&name)
                .map(|t| t.data().iter().map(|&x| x as f64).collect::<Vec<_>>())
                .ok_or_else(|| Error::Checkpoint(format!("missing `{name}`")))
        };
        let offset = get(format!("{prefix}.offset"))?;
        let scale = get(format!("{prefix}.scale"))?;
        if offset.len() != scale.len() {
            return Err(Error::Checkpoint(format!("`{prefix}` statistics disagree in length")));
        }
        Ok(Self { offset, scale })
    }

    /// Round-trips the statistics through `f32`, matching what a checkpoint stores.
    pub fn quantized(&self) -> Self {
        let q = |v: &[f64]| v.iter().map(|&x| x as f32 as f64).collect();
        Self {
            offset: q(&self.offset),
            scale: q(&self.scale),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minmax_maps_to_unit_interval() {
        let rows = vec![vec![1.0, -5.0], vec![3.0, 5.0], vec![2.0, 0.0]];
        let n = Normalizer::fit(&rows, Scaling::MinMax);
        assert_eq!(n.transform(&rows[0]), vec![0.0, 0.0]);
        assert_eq!(n.transform(&rows[1]), vec![1.0, 1.0]);
        for r in &rows {
            let back = n.inverse(&n.transform(r));
            for (a, b) in back.iter().zip(r) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zscore_round_trip_and_constant_column() {
        let rows = vec![vec![1.0, 7.0], vec![3.0, 7.0]];
        let n = Normalizer::fit(&rows, Scaling::ZScore);
        assert_eq!(n.transform(&rows[0]), vec![-1.0, 0.0]);
        assert_eq!(n.inverse(&[1.0, 0.0]), vec![3.0, 7.0]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let n = Normalizer {
            offset: vec![0.5, -1.0],
            scale: vec![2.0, 0.25],
        };
        let mut c = Checkpoint::default();
        n.write(&mut c, "norm.in");
        assert_eq!(Normalizer::read(&c, "norm.in").unwrap(), n);
        assert!(Normalizer::read(&c, "norm.out").is_err());
    }
}
