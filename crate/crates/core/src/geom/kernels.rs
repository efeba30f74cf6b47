//! Flat-buffer nearest-neighbour kernels shared by the geometry API and the autodiff graph.
//!
//! Point buffers are packed `xyz` triples. Ties always resolve to the lowest index.

#[inline]
pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Nearest point of `b` for every point of `a`: `(index, distance)`.
pub(crate) fn nearest(a: &[f64], b: &[f64]) -> Vec<(usize, f64)> {
    debug_assert!(!b.is_empty());
    a.chunks_exact(3)
        .map(|p| {
            let mut best = (0usize, f64::INFINITY);
            for (j, q) in b.chunks_exact(3).enumerate() {
                let d = dist2(p, q);
                if d < best.1 {
                    best = (j, d);
                }
            }
            (best.0, best.1.sqrt())
        })
        .collect()
}

/// Both nearest-neighbour directions from a single sweep over the distance matrix.
pub(crate) fn nearest_both(a: &[f64], b: &[f64]) -> (Vec<(usize, f64)>, Vec<(usize, f64)>) {
    let nb = b.len() / 3;
    let mut col_best = vec![(0usize, f64::INFINITY); nb];
    let row_best = a
        .chunks_exact(3)
        .enumerate()
        .map(|(i, p)| {
            let mut best = (0usize, f64::INFINITY);
            for (j, q) in b.chunks_exact(3).enumerate() {
                let d = dist2(p, q);
                if d < best.1 {
                    best = (j, d);
                }
                if d < col_best[j].1 {
                    col_best[j] = (i, d);
                }
            }
            (best.0, best.1.sqrt())
        })
        .collect();
    for c in &mut col_best {
        c.1 = c.1.sqrt();
    }
    (row_best, col_best)
}

/// Symmetric mean chamfer distance between packed clouds.
pub(crate) fn chamfer_flat(a: &[f64], b: &[f64]) -> f64 {
    let (ab, ba) = nearest_both(a, b);
    let na = ab.len() as f64;
    let nb = ba.len() as f64;
    ab.iter().map(|x| x.1).sum::<f64>() / na + ba.iter().map(|x| x.1).sum::<f64>() / nb
}
