use super::rng::Rng;
use crate::error::{invalid, Result};

/// Seeded shuffle, then the first `floor(fraction·n)` items (clamped so both
/// sides are non-empty) form the training split.
pub fn split_dataset<T: Clone>(items: &[T], train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if items.len() < 2 {
        return Err(invalid(format!("need at least 2 samples to split, got {}", items.len())));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(invalid(format!("train fraction must lie in (0,1), got {train_fraction}")));
    }
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let cut = ((train_fraction * n as f64).floor() as usize).clamp(1, n - 1);
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    Ok((pick(&order[..cut]), pick(&order[cut..])))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_follow_floor() {
        let v: Vec<usize> = (0..10).collect();
        let (a, b) = split_dataset(&v, 0.8, 1).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let (a, b) = split_dataset(&v, 0.75, 1).unwrap();
        assert_eq!((a.len(), b.len()), (7, 3));
    }

    #[test]
    fn partition() {
        let v: Vec<usize> = (0..37).collect();
        let (a, b) = split_dataset(&v, 0.6, 5).unwrap();
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort();
        assert_eq!(all, v);
    }

    #[test]
    fn seeded() {
        let v: Vec<usize> = (0..30).collect();
        assert_eq!(split_dataset(&v, 0.5, 3).unwrap(), split_dataset(&v, 0.5, 3).unwrap());
        assert_ne!(split_dataset(&v, 0.5, 3).unwrap(), split_dataset(&v, 0.5, 4).unwrap());
    }

    #[test]
    fn too_small() {
        assert!(split_dataset(&[1], 0.5, 0).is_err());
        assert!(split_dataset::<u8>(&[], 0.5, 0).is_err());
        assert!(split_dataset(&[1, 2], 1.0, 0).is_err());
    }
}
