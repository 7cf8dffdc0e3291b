//! Cell-wise volume quadrature over regions given by a membership test.
//!
//! The lattice has cells `[anchor + k h, anchor + (k+1) h]`. Cells whose
//! corners are all inside use the tensor 2-point Gauss rule; cells with
//! corners on both sides use 4^d midpoint subsamples filtered by the
//! membership test. Cells with no corner inside are skipped. Partial sums are
//! formed per lattice row and added in row order, so the result does not
//! depend on the thread count.

use rayon::prelude::*;

use crate::error::Result;
use crate::linalg::{Point, ORIGIN};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub d: usize,
    pub h: f64,
    pub anchor: Point,
}

impl Lattice {
    pub fn new(d: usize, h: f64, anchor: Point) -> Self {
        Lattice { d, h, anchor }
    }

    pub fn refined(&self) -> Self {
        Lattice {
            h: self.h / 2.0,
            ..*self
        }
    }
}

const GAUSS: f64 = 0.211_324_865_405_187_1; // (1 − 1/√3)/2

/// ∫ f over {x ∈ [lo, hi] : inside(x)}.
pub fn integrate<I, F>(lat: &Lattice, lo: &Point, hi: &Point, inside: I, f: F) -> Result<f64>
where
    I: Fn(&Point) -> bool + Sync,
    F: Fn(&Point) -> Result<f64> + Sync,
{
    let d = lat.d;
    let h = lat.h;
    let mut first = [0i64; 3];
    let mut count = [1usize; 3];
    for i in 0..d {
        let a = ((lo[i] - lat.anchor[i]) / h).floor() as i64;
        let b = ((hi[i] - lat.anchor[i]) / h).ceil() as i64;
        first[i] = a;
        count[i] = (b - a).max(0) as usize;
        if count[i] == 0 {
            return Ok(0.0);
        }
    }
    let rows: usize = count[1..d].iter().product();
    let vol = h.powi(d as i32);
    let row_sum = |row: usize| -> Result<f64> {
        let mut idx = [0i64; 3];
        let mut r = row;
        for i in 1..d {
            idx[i] = first[i] + (r % count[i]) as i64;
            r /= count[i];
        }
        let mut acc = 0.0;
        for k0 in 0..count[0] {
            idx[0] = first[0] + k0 as i64;
            let mut base = ORIGIN;
            for i in 0..d {
                base[i] = lat.anchor[i] + idx[i] as f64 * h;
            }
            let corners = 1usize << d;
            let mut n_in = 0;
            for c in 0..corners {
                let mut p = base;
                for (i, pi) in p.iter_mut().enumerate().take(d) {
                    *pi += ((c >> i) & 1) as f64 * h;
                }
                if inside(&p) {
                    n_in += 1;
                }
            }
            if n_in == 0 {
                continue;
            }
            if n_in == corners {
                let mut s = 0.0;
                for c in 0..corners {
                    let mut p = base;
                    for (i, pi) in p.iter_mut().enumerate().take(d) {
                        let t = if (c >> i) & 1 == 1 { 1.0 - GAUSS } else { GAUSS };
                        *pi += t * h;
                    }
                    s += f(&p)?;
                }
                acc += s * vol / corners as f64;
            } else {
                let m = 4usize;
                let total = m.pow(d as u32);
                let mut s = 0.0;
                for k in 0..total {
                    let mut p = base;
                    let mut r = k;
                    for pi in p.iter_mut().take(d) {
                        *pi += ((r % m) as f64 + 0.5) * h / m as f64;
                        r /= m;
                    }
                    if inside(&p) {
                        s += f(&p)?;
                    }
                }
                acc += s * vol / total as f64;
            }
        }
        Ok(acc)
    };
    let sums: Vec<Result<f64>> = (0..rows).into_par_iter().map(row_sum).collect();
    let mut total = 0.0;
    for s in sums {
        total += s?;
    }
    Ok(total)
}
