use rand::Rng;

/// Samples an index from the smallest set of highest-probability entries
/// whose mass reaches `top_p`. Ties in probability keep the lower index first.
///
/// `probs` need not be normalised. Returns `None` when the mass is zero.
pub fn nucleus_sample<R: Rng + ?Sized>(probs: &[f64], top_p: f64, rng: &mut R) -> Option<usize> {
    let total: f64 = probs.iter().filter(|p| p.is_finite() && **p > 0.0).sum();
    if total <= 0.0 {
        return None;
    }
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for i in order {
        kept.push(i);
        mass += probs[i] / total;
        if mass >= top_p - 1e-12 {
            break;
        }
    }
    let draw = rng.gen::<f64>() * mass;
    let mut acc = 0.0;
    for &i in &kept {
        acc += probs[i] / total;
        if draw < acc {
            return Some(i);
        }
    }
    kept.last().copied()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nucleus_excludes_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let probs = [0.6, 0.3, 0.05, 0.05];
        for _ in 0..500 {
            let i = nucleus_sample(&probs, 0.9, &mut rng).unwrap();
            assert!(i < 2);
        }
    }

    #[test]
    fn full_mass_reaches_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut seen = [false; 4];
        for _ in 0..2000 {
            seen[nucleus_sample(&[0.25; 4], 1.0, &mut rng).unwrap()] = true;
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn small_top_p_is_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(nucleus_sample(&[0.1, 0.7, 0.2], 0.01, &mut rng), Some(1));
        assert_eq!(nucleus_sample(&[0.0, 0.0], 0.9, &mut rng), None);
    }

    #[test]
    fn empirical_frequencies_follow_renormalised_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counts = [0usize; 3];
        let n = 20_000;
        for _ in 0..n {
            counts[nucleus_sample(&[0.5, 0.25, 0.25], 0.7, &mut rng).unwrap()] += 1;
        }
        // head = {0, 1} (mass 0.75 >= 0.7): renormalised to 2/3, 1/3
        let f0 = counts[0] as f64 / n as f64;
        assert!((f0 - 2.0 / 3.0).abs() < 0.02, "{f0}");
        assert_eq!(counts[2], 0);
    }
}
