//! Deterministic principal-component projection for hull sampling.
//!
//! Power iteration with deflation on the implicit covariance operator, so
//! the cost stays O(members * dim) per matvec even for wide embeddings.

/// Projects `rows` onto their top `n_components` principal directions
/// (computed on these rows only). Returns one projected point per row.
pub(super) fn project(rows: &[&[f64]], n_components: usize) -> Vec<Vec<f64>> {
    let m = rows.len();
    let dim = rows[0].len();
    let mut mean = vec![0.0f64; dim];
    for row in rows {
        for (acc, v) in mean.iter_mut().zip(*row) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= m as f64;
    }
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|row| row.iter().zip(&mean).map(|(v, mu)| v - mu).collect())
        .collect();

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(n_components);
    for axis in 0..n_components {
        if let Some(direction) = dominant_direction(&centered, &components, axis) {
            components.push(direction);
        } else {
            // Degenerate data (fewer directions of variance than requested):
            // pad with zeros so every projected point gets a 0 coordinate.
            components.push(vec![0.0; dim]);
        }
    }

    centered
        .iter()
        .map(|row| components.iter().map(|c| dot(row, c)).collect())
        .collect()
}

/// Power iteration for the next principal direction, orthogonal to the ones
/// already found. Returns `None` when the residual variance vanishes.
fn dominant_direction(
    centered: &[Vec<f64>],
    previous: &[Vec<f64>],
    axis: usize,
) -> Option<Vec<f64>> {
    let dim = centered[0].len();
    let scale: f64 = centered
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>())
        .sum();
    if scale < 1e-24 {
        return None;
    }

    // Deterministic start: a fixed dense vector, falling back to basis axes
    // if it lies in the span of earlier components.
    let mut v: Vec<f64> = (0..dim)
        .map(|i| 1.0 + ((i + axis) % 7) as f64 * 0.25)
        .collect();
    let mut basis_fallback = 0usize;
    loop {
        orthogonalize(&mut v, previous);
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-9 {
            for x in &mut v {
                *x /= norm;
            }
            break;
        }
        if basis_fallback >= dim {
            return None;
        }
        v = vec![0.0; dim];
        v[basis_fallback] = 1.0;
        basis_fallback += 1;
    }

    let mut eigenvalue = 0.0f64;
    for _ in 0..500 {
        let mut next = apply_covariance(centered, &v);
        orthogonalize(&mut next, previous);
        let norm = dot(&next, &next).sqrt();
        if norm < 1e-18 {
            return None;
        }
        for x in &mut next {
            *x /= norm;
        }
        let delta: f64 = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        eigenvalue = norm;
        if delta < 1e-13 {
            break;
        }
    }
    if eigenvalue < 1e-18 {
        return None;
    }
    Some(v)
}

fn apply_covariance(centered: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let dim = v.len();
    let mut out = vec![0.0f64; dim];
    for row in centered {
        let coeff = dot(row, v);
        for (acc, x) in out.iter_mut().zip(row) {
            *acc += coeff * x;
        }
    }
    let m = centered.len() as f64;
    for x in &mut out {
        *x /= m;
    }
    out
}

fn orthogonalize(v: &mut [f64], previous: &[Vec<f64>]) {
    for p in previous {
        let coeff = dot(v, p);
        for (x, y) in v.iter_mut().zip(p) {
            *x -= coeff * y;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_planted_subspace() {
        // Points spread along (1, 1, 0, 0) and (0, 0, 1, -1); projection to 2
        // components must preserve pairwise distances of the planted plane.
        let a = [1.0, 1.0, 0.0, 0.0];
        let b = [0.0, 0.0, 1.0, -1.0];
        let coords = [
            (0.0, 0.0),
            (1.0, 0.0),
            (0.0, 1.0),
            (3.0, -2.0),
            (-1.0, 0.5),
            (2.0, 2.0),
        ];
        let rows: Vec<Vec<f64>> = coords
            .iter()
            .map(|&(x, y)| (0..4).map(|i| x * a[i] + y * b[i]).collect())
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let projected = project(&refs, 2);

        let orig_d2 = |i: usize, j: usize| -> f64 {
            rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(x, y)| (x - y) * (x - y))
                .sum()
        };
        let proj_d2 = |i: usize, j: usize| -> f64 {
            projected[i]
                .iter()
                .zip(&projected[j])
                .map(|(x, y)| (x - y) * (x - y))
                .sum()
        };
        for i in 0..rows.len() {
            for j in (i + 1)..rows.len() {
                assert!(
                    (orig_d2(i, j) - proj_d2(i, j)).abs() < 1e-8,
                    "distance ({i},{j}) not preserved"
                );
            }
        }
    }

    #[test]
    fn degenerate_data_projects_to_zero() {
        let rows = [vec![2.0, 2.0], vec![2.0, 2.0], vec![2.0, 2.0]];
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let projected = project(&refs, 2);
        assert!(projected
            .iter()
            .all(|p| p.iter().all(|v| v.abs() < 1e-12)));
    }

    #[test]
    fn is_deterministic() {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![(i * i) as f64 * 0.1, i as f64, (10 - i) as f64 * 0.3])
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        assert_eq!(project(&refs, 2), project(&refs, 2));
    }
}
