#![allow(dead_code)]

use swarmtrack::control::CbfProblem;
use swarmtrack::Vec2;

/// Best objective over feasible grid points of spacing `res` inside the
/// speed ball, searched coarse to fine: a 0.05·limit grid over the whole
/// ball, then windows of ±3 old cells around the incumbent at each finer
/// spacing down to `res`. `None` if no grid point is feasible.
pub fn grid_search(p: &CbfProblem, res: f64) -> Option<(f64, Vec2)> {
    let limit = p.speed_limit();
    let mut spacing = 0.05 * limit;
    let mut best: Option<(f64, Vec2)> = None;
    let scan = |center: Vec2, half: f64, h: f64, best: &mut Option<(f64, Vec2)>| {
        let k = (half / h).ceil() as i64;
        for a in -k..=k {
            for b in -k..=k {
                let u = center + Vec2::new(a as f64 * h, b as f64 * h);
                if p.violation(&u) == 0.0 {
                    let f = p.objective(&u);
                    if best.is_none_or(|(bf, _)| f < bf) {
                        *best = Some((f, u));
                    }
                }
            }
        }
    };
    scan(Vec2::zeros(), limit, spacing, &mut best);
    while spacing > res {
        let next = (spacing / 10.0).max(res);
        let (_, c) = best?;
        scan(c, 3.0 * spacing, next, &mut best);
        spacing = next;
    }
    best
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
