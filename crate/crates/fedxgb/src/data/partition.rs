//! Deterministic instance partitioning across participants.

use rand::seq::SliceRandom;
use rand::Rng;

/// Shuffle instance indices and deal them round-robin into `parts` groups.
/// The groups are disjoint, cover every index, and differ in size by at
/// most one.
pub fn split_round_robin<R: Rng + ?Sized>(
    n_instances: usize,
    parts: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    assert!(parts > 0, "at least one partition");
    let mut order: Vec<usize> = (0..n_instances).collect();
    order.shuffle(rng);
    let mut out = vec![Vec::with_capacity(n_instances / parts + 1); parts];
    for (k, idx) in order.into_iter().enumerate() {
        out[k % parts].push(idx);
    }
    out
}

/// Pick `total` indices with per-class counts proportional to the class
/// frequencies in `labels` (largest-remainder rounding), shuffled within
/// each class.
pub fn stratified_subsample<R: Rng + ?Sized>(
    labels: &[u32],
    n_classes: u32,
    total: usize,
    rng: &mut R,
) -> Vec<usize> {
    assert!(total <= labels.len(), "subsample larger than dataset");
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes as usize];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y as usize].push(i);
    }

    let n = labels.len() as f64;
    let mut take: Vec<usize> = by_class
        .iter()
        .map(|c| (c.len() as f64 / n * total as f64).floor() as usize)
        .collect();
    let mut remainders: Vec<(usize, f64)> = by_class
        .iter()
        .enumerate()
        .map(|(c, v)| {
            let exact = v.len() as f64 / n * total as f64;
            (c, exact - exact.floor())
        })
        .collect();
    remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut short = total - take.iter().sum::<usize>();
    for (c, _) in remainders {
        if short == 0 {
            break;
        }
        if take[c] < by_class[c].len() {
            take[c] += 1;
            short -= 1;
        }
    }

    let mut picked = Vec::with_capacity(total);
    for (c, mut members) in by_class.into_iter().enumerate() {
        members.shuffle(rng);
        picked.extend(members.into_iter().take(take[c]));
    }
    picked.sort_unstable();
    picked
}
