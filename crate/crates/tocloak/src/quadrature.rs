//! One-dimensional rules: Gauss-Legendre on intervals, geometrically graded
//! cells, and the periodic trapezoid rule.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;

/// Nodes and weights of the `order`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> Vec<(f64, f64)> {
    let n = NonZeroUsize::new(order.max(1)).expect("positive");
    let mut pairs: Vec<(f64, f64)> = GaussLegendre::new(n).iter().map(|&(x, w)| (x, w)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs
}

/// Composite rule: nodes and weights of a Gauss-Legendre rule on each cell.
#[derive(Clone, Debug, Default)]
pub struct Rule1d {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule1d {
    pub fn on_cells(cells: &[(f64, f64)], order: usize) -> Self {
        let base = gauss_legendre(order);
        let mut rule = Rule1d::default();
        for &(a, b) in cells {
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            for &(x, w) in &base {
                rule.nodes.push(mid + half * x);
                rule.weights.push(half * w);
            }
        }
        rule
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Uniform cells covering `[a, b]`.
pub fn uniform_cells(a: f64, b: f64, count: usize) -> Vec<(f64, f64)> {
    let n = count.max(1);
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / n as f64, a + (b - a) * (k + 1) as f64 / n as f64))
        .collect()
}

/// Cells on `[floor, top]` whose edges grow geometrically by `ratio`
/// (`floor * ratio^k`), the last cell ending exactly at `top`.
pub fn geometric_cells(floor: f64, top: f64, ratio: f64) -> Vec<(f64, f64)> {
    assert!(floor > 0.0 && top > floor && ratio > 1.0);
    let mut cells = Vec::new();
    let mut a = floor;
    while a < top {
        let b = (a * ratio).min(top);
        // avoid a sliver at the top
        let b = if top / b < 1.0 + 0.25 * (ratio - 1.0) { top } else { b };
        cells.push((a, b));
        a = b;
    }
    cells
}

/// Cells on `[a, b]` graded toward `a`: the first cell has width `first` and
/// widths grow by `ratio` until they reach `cap`, after which they stay uniform.
pub fn graded_cells(a: f64, b: f64, first: f64, ratio: f64, cap: f64) -> Vec<(f64, f64)> {
    assert!(b > a && first > 0.0 && ratio >= 1.0);
    let mut cells = Vec::new();
    let mut x = a;
    let mut w = first.min(b - a);
    while x < b {
        let mut nx = x + w;
        if b - nx < 0.5 * w.min(cap) {
            nx = b;
        }
        cells.push((x, nx.min(b)));
        x = nx;
        w = (w * ratio).min(cap);
    }
    cells
}

/// Angles `2 pi j / n`, each with weight `2 pi / n`.
pub fn trapezoid_angles(n: usize) -> Vec<f64> {
    (0..n).map(|j| 2.0 * std::f64::consts::PI * j as f64 / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        let rule = Rule1d::on_cells(&[(0.0, 2.0)], 5);
        let v = rule.integrate(|x| x.powi(9));
        assert!((v - 2f64.powi(10) / 10.0).abs() < 1e-11);
    }

    #[test]
    fn geometric_cells_cover_interval() {
        let cells = geometric_cells(1e-10, 0.5, 1.2);
        assert_eq!(cells[0].0, 1e-10);
        assert_eq!(cells.last().unwrap().1, 0.5);
        for w in cells.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
        let rule = Rule1d::on_cells(&cells, 6);
        let v = rule.integrate(|s| 1.0 / s);
        assert!((v - (0.5f64 / 1e-10).ln()).abs() < 1e-10);
    }

    #[test]
    fn graded_cells_cover_interval() {
        let cells = graded_cells(1.0, 2.0, 1e-3, 1.2, 0.05);
        assert_eq!(cells.last().unwrap().1, 2.0);
        assert!((cells[0].1 - cells[0].0 - 1e-3).abs() < 1e-15);
        assert!(cells.iter().all(|c| c.1 - c.0 <= 0.05 * 1.5 + 1e-12));
    }
}
