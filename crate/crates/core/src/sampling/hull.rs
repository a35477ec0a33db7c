//! Convex-hull vertex identification for projected cluster members.

/// Indices of the hull vertices of `points` (dimension >= 2), sorted.
///
/// 2-D uses the monotone chain exactly; higher dimensions certify each point
/// with a Frank-Wolfe distance test against the hull of the others.
pub(super) fn hull_vertices(points: &[Vec<f64>]) -> Vec<usize> {
    match points.first().map(|p| p.len()) {
        None => Vec::new(),
        Some(2) => monotone_chain(points),
        Some(_) => frank_wolfe_vertices(points),
    }
}

/// Andrew's monotone chain; strict turns, so collinear boundary points that
/// are not corners are excluded.
fn monotone_chain(points: &[Vec<f64>]) -> Vec<usize> {
    // Deduplicate coincident points, keeping the lowest index.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a][0]
            .partial_cmp(&points[b][0])
            .unwrap()
            .then(points[a][1].partial_cmp(&points[b][1]).unwrap())
            .then(a.cmp(&b))
    });
    order.dedup_by(|&mut a, &mut b| points[a] == points[b]);

    if order.len() <= 2 {
        let mut v = order;
        v.sort_unstable();
        return v;
    }

    let cross = |o: usize, a: usize, b: usize| -> f64 {
        (points[a][0] - points[o][0]) * (points[b][1] - points[o][1])
            - (points[a][1] - points[o][1]) * (points[b][0] - points[o][0])
    };

    let mut lower: Vec<usize> = Vec::new();
    for &p in &order {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<usize> = Vec::new();
    for &p in order.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    let mut vertices: Vec<usize> = lower.into_iter().chain(upper).collect();
    vertices.sort_unstable();
    vertices.dedup();
    vertices
}

/// A point is a hull vertex iff it has positive distance to the convex hull
/// of the remaining points. Frank-Wolfe both shrinks the distance and, via
/// its duality gap, certifies a positive lower bound.
fn frank_wolfe_vertices(points: &[Vec<f64>]) -> Vec<usize> {
    let scale: f64 = points
        .iter()
        .flat_map(|p| p.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1e-12);
    let tol = (scale * 1e-7).powi(2);

    let mut unique: Vec<usize> = Vec::new();
    'outer: for i in 0..points.len() {
        for &u in &unique {
            if points[u] == points[i] {
                continue 'outer;
            }
        }
        unique.push(i);
    }

    let mut vertices = Vec::new();
    for &i in &unique {
        let others: Vec<&[f64]> = unique
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| points[j].as_slice())
            .collect();
        if others.is_empty() || distance_outside_hull(&points[i], &others, tol) {
            vertices.push(i);
        }
    }
    vertices.sort_unstable();
    vertices
}

/// True when `target` is certified to lie at squared distance > tol from
/// conv(`others`). Away-step Frank-Wolfe with exact line search; the away
/// steps give linear convergence on polytopes, so the duality-gap
/// certificate tightens fast enough to separate genuine vertices.
fn distance_outside_hull(target: &[f64], others: &[&[f64]], tol: f64) -> bool {
    let dim = target.len();
    let m = others.len();
    let mut weights = vec![0.0f64; m];
    weights[0] = 1.0;
    let mut x: Vec<f64> = others[0].to_vec();

    for iter in 0..10_000usize {
        if iter > 0 && iter % 64 == 0 {
            // Rebuild x from the weights to flush accumulated drift.
            let total: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= total;
            }
            for c in 0..dim {
                x[c] = others
                    .iter()
                    .zip(&weights)
                    .map(|(a, w)| a[c] * w)
                    .sum();
            }
        }
        let residual: Vec<f64> = (0..dim).map(|c| x[c] - target[c]).collect();
        let dist2: f64 = residual.iter().map(|v| v * v).sum();
        if dist2 <= tol {
            return false;
        }

        let score = |a: &[f64]| -> f64 { (0..dim).map(|c| a[c] * residual[c]).sum() };
        let x_score: f64 = (0..dim).map(|c| x[c] * residual[c]).sum();

        // Frank-Wolfe atom: linear minimizer over the vertex set.
        let (fw_atom, fw_score) = others
            .iter()
            .enumerate()
            .map(|(j, a)| (j, score(a)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
            .unwrap();
        let fw_gap = x_score - fw_score;
        // f(x) - f* <= gap for f = 0.5 dist^2, so dist2* >= dist2 - 2 gap.
        if dist2 - 2.0 * fw_gap > tol {
            return true;
        }

        // Away atom: worst active vertex.
        let away = weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 1e-14)
            .map(|(j, _)| (j, score(others[j])))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)));

        let take_away = matches!(
            away,
            Some((away_atom, away_score))
                if weights[away_atom] < 1.0 - 1e-12
                    && away_atom != fw_atom
                    && (away_score - x_score) > fw_gap
        );

        if take_away {
            let (away_atom, _) = away.unwrap();
            let direction: Vec<f64> = (0..dim).map(|c| x[c] - others[away_atom][c]).collect();
            let denom: f64 = direction.iter().map(|v| v * v).sum();
            if denom < 1e-30 {
                return dist2 > tol;
            }
            let unconstrained = -residual
                .iter()
                .zip(&direction)
                .map(|(r, d)| r * d)
                .sum::<f64>()
                / denom;
            let max_step = weights[away_atom] / (1.0 - weights[away_atom]);
            let step = unconstrained.clamp(0.0, max_step);
            if step <= 0.0 {
                return dist2 > tol;
            }
            for w in weights.iter_mut() {
                *w *= 1.0 + step;
            }
            weights[away_atom] -= step;
            for c in 0..dim {
                x[c] += step * direction[c];
            }
        } else {
            let direction: Vec<f64> = (0..dim).map(|c| others[fw_atom][c] - x[c]).collect();
            let denom: f64 = direction.iter().map(|v| v * v).sum();
            if denom < 1e-30 {
                return dist2 > tol;
            }
            let step = (-residual
                .iter()
                .zip(&direction)
                .map(|(r, d)| r * d)
                .sum::<f64>()
                / denom)
                .clamp(0.0, 1.0);
            if step <= 0.0 {
                // Frank-Wolfe optimality: x is the projection of target.
                return dist2 > tol;
            }
            for w in weights.iter_mut() {
                *w *= 1.0 - step;
            }
            weights[fw_atom] += step;
            for c in 0..dim {
                x[c] += step * direction[c];
            }
        }
    }
    // Convergence stalled near the boundary; treat as interior (not a vertex).
    false
}
