//! Communication graph with distance-weighted edges, its Laplacian and a
//! dense eigensolver used as the centralized spectral oracle.

use nalgebra::{DMatrix, DVector};

use crate::Vec2;

/// Normalization giving a maximum edge weight of 10 at zero distance.
pub fn default_sigma(radius: f64) -> f64 {
    radius.powi(4) / 11f64.ln()
}

/// Edge weight e^{(R²−d²)²/σ} − 1 inside the radius, zero outside.
pub fn adjacency_weight(d: f64, radius: f64, sigma: f64) -> f64 {
    if d > radius {
        return 0.0;
    }
    let s = radius * radius - d * d;
    (s * s / sigma).exp_m1()
}

/// Gradient of the edge weight with respect to `xi` (the other end fixed).
pub fn adjacency_weight_grad(xi: &Vec2, xl: &Vec2, radius: f64, sigma: f64) -> Vec2 {
    let diff = xi - xl;
    let d2 = diff.norm_squared();
    if d2 > radius * radius {
        return Vec2::zeros();
    }
    let s = radius * radius - d2;
    diff * (-4.0 * s / sigma * (s * s / sigma).exp())
}

#[derive(Debug, Clone)]
pub struct CommGraph {
    pub radius: f64,
    pub sigma: f64,
    pub positions: Vec<Vec2>,
    pub adjacency: DMatrix<f64>,
    pub laplacian: DMatrix<f64>,
    pub neighbors: Vec<Vec<usize>>,
}

impl CommGraph {
    pub fn build(positions: &[Vec2], radius: f64, sigma: f64) -> Self {
        let n = positions.len();
        let mut adjacency = DMatrix::zeros(n, n);
        let mut neighbors = vec![Vec::new(); n];
        for i in 0..n {
            for l in (i + 1)..n {
                let d = (positions[i] - positions[l]).norm();
                if d <= radius {
                    let a = adjacency_weight(d, radius, sigma);
                    adjacency[(i, l)] = a;
                    adjacency[(l, i)] = a;
                    neighbors[i].push(l);
                    neighbors[l].push(i);
                }
            }
        }
        let degree = DVector::from_fn(n, |i, _| adjacency.row(i).sum());
        let laplacian = DMatrix::from_diagonal(&degree) - &adjacency;
        Self { radius, sigma, positions: positions.to_vec(), adjacency, laplacian, neighbors }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn weighted_degree(&self, i: usize) -> f64 {
        self.laplacian[(i, i)]
    }

    pub fn max_weighted_degree(&self) -> f64 {
        (0..self.len()).map(|i| self.weighted_degree(i)).fold(0.0, f64::max)
    }

    /// Breadth-first connectivity over the neighbor sets.
    pub fn is_connected(&self) -> bool {
        let n = self.len();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &l in &self.neighbors[i] {
                if !seen[l] {
                    seen[l] = true;
                    stack.push(l);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.len() {
            for l in (i + 1)..self.len() {
                best = best.min((self.positions[i] - self.positions[l]).norm());
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct Fiedler {
    pub lambda2: f64,
    /// Unit norm, orthogonal to the all-ones vector, first nonzero entry positive.
    pub vector: DVector<f64>,
}

/// Eigenvalues in ascending order with matching eigenvector columns.
pub fn sorted_eigen(l: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = l.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_columns(&order.iter().map(|&k| eig.eigenvectors.column(k).into_owned()).collect::<Vec<_>>());
    (values, vectors)
}

pub fn exact_fiedler(l: &DMatrix<f64>) -> Fiedler {
    let n = l.nrows();
    if n < 2 {
        return Fiedler { lambda2: 0.0, vector: DVector::zeros(n) };
    }
    let (values, vectors) = sorted_eigen(l);
    let mut v = vectors.column(1).into_owned();
    v /= v.norm();
    let scale = v.amax();
    if let Some(first) = v.iter().copied().find(|x| x.abs() > 1e-12 * scale) {
        if first < 0.0 {
            v.neg_mut();
        }
    }
    // roundoff can leave λ₂ slightly negative on disconnected graphs
    Fiedler { lambda2: values[1].max(0.0), vector: v }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn weight_examples() {
        assert_eq!(adjacency_weight(2.0, 2.0, 10.0), 0.0);
        assert_eq!(adjacency_weight(2.1, 2.0, 10.0), 0.0);
        assert!((adjacency_weight(1.0, 2.0, 10.0) - (0.9f64.exp() - 1.0)).abs() < 1e-12);
        let r = 5.0;
        assert!((adjacency_weight(0.0, r, default_sigma(r)) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let (r, sigma) = (3.0, default_sigma(3.0));
        let xi = Vec2::new(0.4, -0.3);
        let xl = Vec2::new(1.5, 0.9);
        let g = adjacency_weight_grad(&xi, &xl, r, sigma);
        let h = 1e-6;
        for k in 0..2 {
            let mut e = Vec2::zeros();
            e[k] = h;
            let fd = (adjacency_weight((xi + e - xl).norm(), r, sigma)
                - adjacency_weight((xi - e - xl).norm(), r, sigma))
                / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-7 * g.norm().max(1.0));
        }
    }

    #[test]
    fn build_examples() {
        let r = 4.0;
        let g = CommGraph::build(&[Vec2::zeros(), Vec2::new(r + 0.1, 0.0)], r, default_sigma(r));
        assert!(g.neighbors[0].is_empty());
        let path = [Vec2::zeros(), Vec2::new(0.9 * r, 0.0), Vec2::new(1.8 * r, 0.0)];
        let g = CommGraph::build(&path, r, default_sigma(r));
        assert_eq!(g.neighbors, vec![vec![1], vec![0, 2], vec![1]]);
        let sigma = 7.0;
        let g = CommGraph::build(&[Vec2::new(1.0, 1.0), Vec2::new(1.0, 1.0)], r, sigma);
        assert!((g.adjacency[(0, 1)] - ((r.powi(4) / sigma).exp() - 1.0)).abs() < 1e-9);
    }

    #[test]
    fn fiedler_examples() {
        let a = 2.5;
        let k2 = DMatrix::from_row_slice(2, 2, &[a, -a, -a, a]);
        assert!((exact_fiedler(&k2).lambda2 - 2.0 * a).abs() < 1e-12);
        let p3 = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        let f = exact_fiedler(&p3);
        assert!((f.lambda2 - 1.0).abs() < 1e-12);
        assert!(f.vector[0] > 0.0);
        assert!(f.vector.sum().abs() < 1e-12);
        let apart = CommGraph::build(&[Vec2::zeros(), Vec2::new(10.0, 0.0)], 1.0, 1.0);
        assert_eq!(exact_fiedler(&apart.laplacian).lambda2, 0.0);
        assert_eq!(exact_fiedler(&DMatrix::zeros(1, 1)).lambda2, 0.0);
    }

    fn positions(max_n: usize, side: f64) -> impl Strategy<Value = Vec<Vec2>> {
        prop::collection::vec((0.0..side, 0.0..side), 2..=max_n)
            .prop_map(|v| v.into_iter().map(|(x, y)| Vec2::new(x, y)).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn connectivity_agrees_with_lambda2(pts in positions(8, 12.0)) {
            let g = CommGraph::build(&pts, 5.0, default_sigma(5.0));
            let l2 = exact_fiedler(&g.laplacian).lambda2;
            prop_assert_eq!(g.is_connected(), l2 > 1e-9);
        }

        #[test]
        fn laplacian_rows_sum_to_zero(pts in positions(8, 12.0)) {
            let g = CommGraph::build(&pts, 5.0, default_sigma(5.0));
            let ones = DVector::from_element(g.len(), 1.0);
            prop_assert!((&g.laplacian * &ones).amax() < 1e-12 * g.max_weighted_degree().max(1.0));
            prop_assert!((&g.adjacency - g.adjacency.transpose()).amax() == 0.0);
            let (values, _) = sorted_eigen(&g.laplacian);
            prop_assert!(values[0] > -1e-9);
        }

        #[test]
        fn adding_an_edge_never_lowers_lambda2(pts in positions(7, 12.0), i in 0usize..7, l in 0usize..7, w in 0.1f64..5.0) {
            let g = CommGraph::build(&pts, 5.0, default_sigma(5.0));
            let n = g.len();
            let (i, l) = (i % n, l % n);
            prop_assume!(i != l);
            let before = exact_fiedler(&g.laplacian).lambda2;
            let mut lap = g.laplacian.clone();
            lap[(i, i)] += w;
            lap[(l, l)] += w;
            lap[(i, l)] -= w;
            lap[(l, i)] -= w;
            prop_assert!(exact_fiedler(&lap).lambda2 >= before - 1e-9);
        }
    }
}
