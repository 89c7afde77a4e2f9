//! Brute-force reference implementations used by several test targets.
#![allow(dead_code)]

use std::cmp::Ordering;

/// What the reference scan picks for one image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleChoice {
    pub rows: u32,
    pub cols: u32,
    pub cover: bool,
    /// Objective as an exact fraction `num / den`.
    pub num: i128,
    pub den: i128,
}

impl OracleChoice {
    pub fn objective(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Scans every grid in `min..=max` tiles directly.
///
/// Scale `s = min(R·r/h, C·r/w)` is kept as `a/b`; the cover objective is
/// `R·C·r² − s²·h·w` and the downscale one is `h·w − s²·h·w`, both over `b²`.
pub fn oracle_select(h: u32, w: u32, r: u32, min: u32, max: u32) -> OracleChoice {
    let (h, w, r) = (h as i128, w as i128, r as i128);
    let mut grids = Vec::new();
    for rows in 1..=max {
        for cols in 1..=max {
            let n = rows * cols;
            if n >= min && n <= max {
                grids.push((rows, cols));
            }
        }
    }
    grids.sort_by_key(|&(rows, cols)| (rows * cols, rows, cols));

    struct Cand {
        rows: u32,
        cols: u32,
        a: i128,
        b: i128,
        cover: bool,
    }
    let cands: Vec<Cand> = grids
        .iter()
        .map(|&(rows, cols)| {
            let (sh, sw) = (rows as i128 * r, cols as i128 * r);
            // sh/h vs sw/w
            let (a, b) = if sh * w <= sw * h { (sh, h) } else { (sw, w) };
            Cand {
                rows,
                cols,
                a,
                b,
                cover: a >= b,
            }
        })
        .collect();
    let any_cover = cands.iter().any(|c| c.cover);

    let objective = |c: &Cand| -> (i128, i128) {
        let base = if any_cover {
            c.rows as i128 * c.cols as i128 * r * r
        } else {
            h * w
        };
        (base * c.b * c.b - c.a * c.a * h * w, c.b * c.b)
    };
    let frac_cmp = |x: (i128, i128), y: (i128, i128)| (x.0 * y.1).cmp(&(y.0 * x.1));
    let aspect = |c: &Cand| {
        let p = c.cols as i128 * h;
        let q = c.rows as i128 * w;
        (p.max(q), p.min(q))
    };
    let key_cmp = |x: &Cand, y: &Cand| -> Ordering {
        let primary = if any_cover {
            frac_cmp(objective(x), objective(y))
        } else {
            // larger scale first
            frac_cmp((y.a, y.b), (x.a, x.b))
        };
        primary
            .then((x.rows * x.cols).cmp(&(y.rows * y.cols)))
            .then_with(|| frac_cmp(aspect(x), aspect(y)))
    };

    let pool: Vec<&Cand> = cands.iter().filter(|c| !any_cover || c.cover).collect();
    let mut best = pool[0];
    for c in &pool[1..] {
        if key_cmp(c, best) == Ordering::Less {
            best = c;
        }
    }
    let (num, den) = objective(best);
    OracleChoice {
        rows: best.rows,
        cols: best.cols,
        cover: best.cover,
        num,
        den,
    }
}

/// Whether two objective values agree up to float rounding of exact fractions.
pub fn same_objective(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// `floor(i·M/N)` computed the slow way: walk frame boundaries.
pub fn oracle_frames(m: u64, n: u64) -> Vec<u64> {
    (0..n)
        .map(|i| {
            let mut f = 0;
            while (f + 1) * n <= i * m {
                f += 1;
            }
            f
        })
        .collect()
}
