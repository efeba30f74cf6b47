use super::cloud::PointCloud;
use super::kernels::dist2;

/// Connected components of the graph joining points closer than `tau`.
///
/// Labels are dense and ordered by the smallest point index in each component.
pub fn connected_components(cloud: &PointCloud, tau: f64) -> Vec<usize> {
    let flat = cloud.flat();
    let n = cloud.len();
    let tau2 = tau * tau;
    let mut labels = vec![usize::MAX; n];
    let mut next = 0;
    let mut stack = Vec::new();
    for seed in 0..n {
        if labels[seed] != usize::MAX {
            continue;
        }
        labels[seed] = next;
        stack.push(seed);
        while let Some(i) = stack.pop() {
            let p = &flat[3 * i..3 * i + 3];
            for j in 0..n {
                if labels[j] == usize::MAX && dist2(p, &flat[3 * j..3 * j + 3]) < tau2 {
                    labels[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    labels
}

/// Point indices of each component, in label order.
pub fn component_members(labels: &[usize]) -> Vec<Vec<usize>> {
    let count = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); count];
    for (i, &l) in labels.iter().enumerate() {
        out[l].push(i);
    }
    out
}
