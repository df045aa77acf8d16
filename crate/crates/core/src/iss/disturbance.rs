use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Shape of a disturbance sequence `v = (v₀, v₁, …)`.
#[derive(Debug, Clone, PartialEq)]
pub enum DisturbanceKind {
    Zero,
    /// `v_k = c·u` with `u = (1, …, 1)/√d`, so `‖v_k‖ = |c|`.
    Constant(f64),
    /// `v_k = c·rate^k·u`.
    Decaying {
        c: f64,
        rate: f64,
    },
    /// Components uniform in `[-δ/√d, δ/√d]`, drawn from a seeded generator.
    RandomBounded {
        delta: f64,
        seed: u64,
    },
    /// Explicit list; zero after the list is exhausted.
    Custom(Vec<DVector<f64>>),
}

/// A disturbance generator with known sup-norm `‖v‖∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSequence {
    kind: DisturbanceKind,
}

impl DisturbanceSequence {
    pub fn new(kind: DisturbanceKind) -> Result<Self> {
        match &kind {
            DisturbanceKind::Constant(c) if !c.is_finite() => {
                return Err(Error::InvalidParameter(format!("constant disturbance {c}")))
            }
            DisturbanceKind::Decaying { c, rate } if !c.is_finite() || !(0.0..=1.0).contains(rate) => {
                return Err(Error::InvalidParameter(format!(
                    "decaying disturbance needs finite c and rate in [0, 1], got c={c}, rate={rate}"
                )))
            }
            DisturbanceKind::RandomBounded { delta, .. } if !(*delta >= 0.0) || !delta.is_finite() => {
                return Err(Error::InvalidParameter(format!("random disturbance bound {delta}")))
            }
            _ => {}
        }
        Ok(Self { kind })
    }

    pub fn zero() -> Self {
        Self {
            kind: DisturbanceKind::Zero,
        }
    }

    pub fn constant(c: f64) -> Result<Self> {
        Self::new(DisturbanceKind::Constant(c))
    }

    pub fn decaying(c: f64, rate: f64) -> Result<Self> {
        Self::new(DisturbanceKind::Decaying { c, rate })
    }

    pub fn random_bounded(delta: f64, seed: u64) -> Result<Self> {
        Self::new(DisturbanceKind::RandomBounded { delta, seed })
    }

    pub fn custom(list: Vec<DVector<f64>>) -> Self {
        Self {
            kind: DisturbanceKind::Custom(list),
        }
    }

    pub fn kind(&self) -> &DisturbanceKind {
        &self.kind
    }

    /// `‖v‖∞ = sup_k ‖v_k‖`.
    pub fn sup_norm(&self) -> f64 {
        match &self.kind {
            DisturbanceKind::Zero => 0.0,
            DisturbanceKind::Constant(c) => c.abs(),
            DisturbanceKind::Decaying { c, .. } => c.abs(),
            DisturbanceKind::RandomBounded { delta, .. } => *delta,
            DisturbanceKind::Custom(list) => list.iter().map(|v| v.norm()).fold(0.0, f64::max),
        }
    }

    /// Starts emitting vectors of dimension `dim`.
    pub fn stream(&self, dim: usize) -> Result<DisturbanceStream> {
        if let DisturbanceKind::Custom(list) = &self.kind {
            if let Some(bad) = list.iter().find(|v| v.len() != dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: bad.len(),
                    context: "custom disturbance entry",
                });
            }
        }
        let rng = match self.kind {
            DisturbanceKind::RandomBounded { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
            _ => None,
        };
        Ok(DisturbanceStream {
            kind: self.kind.clone(),
            dim,
            k: 0,
            rng,
        })
    }
}

/// Iterator over `v₀, v₁, …` for a fixed dimension.
#[derive(Debug, Clone)]
pub struct DisturbanceStream {
    kind: DisturbanceKind,
    dim: usize,
    k: usize,
    rng: Option<ChaCha8Rng>,
}

impl DisturbanceStream {
    pub fn next_disturbance(&mut self) -> DVector<f64> {
        let d = self.dim;
        let unit = |s: f64| {
            if d == 0 {
                DVector::zeros(0)
            } else {
                DVector::from_element(d, s / (d as f64).sqrt())
            }
        };
        let v = match &self.kind {
            DisturbanceKind::Zero => DVector::zeros(d),
            DisturbanceKind::Constant(c) => unit(*c),
            DisturbanceKind::Decaying { c, rate } => unit(c * rate.powi(self.k as i32)),
            DisturbanceKind::RandomBounded { delta, .. } => {
                let rng = self.rng.as_mut().expect("seeded stream");
                let scale = if d == 0 { 0.0 } else { delta / (d as f64).sqrt() };
                DVector::from_fn(d, |_, _| scale * rng.random_range(-1.0..=1.0))
            }
            DisturbanceKind::Custom(list) => list.get(self.k).cloned().unwrap_or_else(|| DVector::zeros(d)),
        };
        self.k += 1;
        v
    }
}

impl Iterator for DisturbanceStream {
    type Item = DVector<f64>;

    fn next(&mut self) -> Option<DVector<f64>> {
        Some(self.next_disturbance())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_and_decaying_norms() {
        let mut s = DisturbanceSequence::constant(0.3).unwrap().stream(4).unwrap();
        assert!((s.next_disturbance().norm() - 0.3).abs() < 1e-15);
        let mut s = DisturbanceSequence::decaying(1.0, 0.5).unwrap().stream(2).unwrap();
        let norms: Vec<f64> = (0..3).map(|_| s.next_disturbance().norm()).collect();
        assert!((norms[2] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn random_is_reproducible() {
        let seq = DisturbanceSequence::random_bounded(1e-3, 7).unwrap();
        let a: Vec<_> = seq.stream(3).unwrap().take(10).collect();
        let b: Vec<_> = seq.stream(3).unwrap().take(10).collect();
        assert_eq!(a, b);
        let other: Vec<_> = DisturbanceSequence::random_bounded(1e-3, 8)
            .unwrap()
            .stream(3)
            .unwrap()
            .take(10)
            .collect();
        assert_ne!(a, other);
    }

    #[test]
    fn custom_dimension_checked() {
        let seq = DisturbanceSequence::custom(vec![DVector::from_vec(vec![1.0, 2.0])]);
        assert!(seq.stream(3).is_err());
        let mut s = seq.stream(2).unwrap();
        assert_eq!(s.next_disturbance().norm(), 5f64.sqrt());
        assert_eq!(s.next_disturbance().norm(), 0.0);
        assert_eq!(seq.sup_norm(), 5f64.sqrt());
    }

    #[test]
    fn invalid_parameters() {
        assert!(DisturbanceSequence::decaying(1.0, 1.5).is_err());
        assert!(DisturbanceSequence::random_bounded(-1.0, 0).is_err());
        assert!(DisturbanceSequence::constant(f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn emitted_norms_respect_sup(delta in 0.0..10.0f64, seed in any::<u64>(), dim in 0usize..6, c in -5.0..5.0f64, rate in 0.0..1.0f64) {
            for seq in [
                DisturbanceSequence::random_bounded(delta, seed).unwrap(),
                DisturbanceSequence::constant(c).unwrap(),
                DisturbanceSequence::decaying(c, rate).unwrap(),
                DisturbanceSequence::zero(),
            ] {
                let sup = seq.sup_norm();
                for v in seq.stream(dim).unwrap().take(25) {
                    prop_assert!(v.norm() <= sup * (1.0 + 1e-12) + 1e-300);
                }
            }
        }
    }
}
