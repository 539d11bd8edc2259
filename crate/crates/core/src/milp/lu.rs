//! Sparse LU factorization of a simplex basis with product-form updates.
//!
//! The basis `B` (one sparse column per basis position) is factored
//! left-looking: columns are eliminated one at a time against the pivots
//! chosen so far, and each pivot row is picked by threshold partial
//! pivoting with a preference for short rows. Basis changes are appended
//! as eta columns until the next refactorization.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

const NONE: usize = usize::MAX;
/// Threshold for partial pivoting relative to the largest candidate.
const PIVOT_THRESHOLD: f64 = 0.1;
/// Candidates below this magnitude are treated as structural zeros.
const SINGULAR_TOL: f64 = 1e-11;

/// Basis positions that could not be pivoted and the rows left without a pivot.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Singular {
    pub positions: Vec<usize>,
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Eta {
    position: usize,
    pivot: f64,
    entries: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct BasisFactor {
    m: usize,
    pivot_row: Vec<usize>,
    position_of_step: Vec<usize>,
    lower: Vec<Vec<(usize, f64)>>,
    upper: Vec<Vec<(usize, f64)>>,
    diag: Vec<f64>,
    etas: Vec<Eta>,
}

impl BasisFactor {
    /// Factors the basis given as one sparse column per position.
    pub fn factor(m: usize, columns: &[Vec<(usize, f64)>]) -> Result<Self, Singular> {
        debug_assert_eq!(columns.len(), m);
        let mut row_count = vec![0usize; m];
        for col in columns {
            for &(i, _) in col {
                row_count[i] += 1;
            }
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by_key(|&c| (columns[c].len(), c));

        let mut f = BasisFactor {
            m,
            ..Default::default()
        };
        let mut step_of_row = vec![NONE; m];
        let mut work = vec![0.0; m];
        let mut touched_mark = vec![false; m];
        let mut touched: Vec<usize> = Vec::new();
        let mut queued = vec![false; m];
        let mut heap: BinaryHeap<Reverse<usize>> = BinaryHeap::new();
        let mut failed = Vec::new();

        for &pos in &order {
            touched.clear();
            for &(i, v) in &columns[pos] {
                if !touched_mark[i] {
                    touched_mark[i] = true;
                    touched.push(i);
                }
                work[i] += v;
                let s = step_of_row[i];
                if s != NONE && !queued[s] {
                    queued[s] = true;
                    heap.push(Reverse(s));
                }
            }
            while let Some(Reverse(s)) = heap.pop() {
                queued[s] = false;
                let v = work[f.pivot_row[s]];
                if v == 0.0 {
                    continue;
                }
                for &(i, l) in &f.lower[s] {
                    if !touched_mark[i] {
                        touched_mark[i] = true;
                        touched.push(i);
                    }
                    work[i] -= l * v;
                    let si = step_of_row[i];
                    if si != NONE && !queued[si] {
                        queued[si] = true;
                        heap.push(Reverse(si));
                    }
                }
            }

            let mut max_abs: f64 = 0.0;
            for &i in &touched {
                if step_of_row[i] == NONE {
                    max_abs = max_abs.max(work[i].abs());
                }
            }
            let mut pivot = NONE;
            if max_abs > SINGULAR_TOL {
                let threshold = PIVOT_THRESHOLD * max_abs;
                for &i in &touched {
                    if step_of_row[i] != NONE || work[i].abs() < threshold {
                        continue;
                    }
                    if pivot == NONE || (row_count[i], i) < (row_count[pivot], pivot) {
                        pivot = i;
                    }
                }
            }

            if pivot == NONE {
                failed.push(pos);
            } else {
                let step = f.pivot_row.len();
                let d = work[pivot];
                let mut upper = Vec::new();
                let mut lower = Vec::new();
                for &i in &touched {
                    let v = work[i];
                    if v == 0.0 || i == pivot {
                        continue;
                    }
                    match step_of_row[i] {
                        NONE => lower.push((i, v / d)),
                        s => upper.push((s, v)),
                    }
                }
                step_of_row[pivot] = step;
                f.pivot_row.push(pivot);
                f.position_of_step.push(pos);
                f.diag.push(d);
                f.lower.push(lower);
                f.upper.push(upper);
            }
            for &i in &touched {
                work[i] = 0.0;
                touched_mark[i] = false;
            }
        }

        if failed.is_empty() {
            Ok(f)
        } else {
            let rows = (0..m).filter(|&i| step_of_row[i] == NONE).collect();
            Err(Singular {
                positions: failed,
                rows,
            })
        }
    }

    pub fn num_updates(&self) -> usize {
        self.etas.len()
    }

    /// Solves `B x = rhs`. `rhs` is indexed by row and is clobbered; the
    /// solution is written to `out`, indexed by basis position.
    pub fn ftran(&self, rhs: &mut [f64], out: &mut [f64]) {
        for s in 0..self.m {
            let v = rhs[self.pivot_row[s]];
            if v != 0.0 {
                for &(i, l) in &self.lower[s] {
                    rhs[i] -= l * v;
                }
            }
        }
        // Reuse `rhs` storage order: y_s lives at rhs[pivot_row[s]].
        for s in (0..self.m).rev() {
            let r = self.pivot_row[s];
            let y = rhs[r] / self.diag[s];
            rhs[r] = y;
            if y != 0.0 {
                for &(j, u) in &self.upper[s] {
                    rhs[self.pivot_row[j]] -= u * y;
                }
            }
        }
        for s in 0..self.m {
            out[self.position_of_step[s]] = rhs[self.pivot_row[s]];
        }
        for eta in &self.etas {
            let xr = out[eta.position] / eta.pivot;
            out[eta.position] = xr;
            if xr != 0.0 {
                for &(i, a) in &eta.entries {
                    out[i] -= a * xr;
                }
            }
        }
    }

    /// Solves `B' y = c`. `c` is indexed by basis position and is clobbered;
    /// the solution is written to `out`, indexed by row.
    pub fn btran(&self, c: &mut [f64], out: &mut [f64]) {
        for eta in self.etas.iter().rev() {
            let mut v = c[eta.position];
            for &(i, a) in &eta.entries {
                v -= a * c[i];
            }
            c[eta.position] = v / eta.pivot;
        }
        // w_s stored at out[pivot_row[s]] temporarily.
        for s in 0..self.m {
            let mut v = c[self.position_of_step[s]];
            for &(j, u) in &self.upper[s] {
                v -= u * out[self.pivot_row[j]];
            }
            out[self.pivot_row[s]] = v / self.diag[s];
        }
        for s in (0..self.m).rev() {
            let mut v = out[self.pivot_row[s]];
            for &(i, l) in &self.lower[s] {
                v -= l * out[i];
            }
            out[self.pivot_row[s]] = v;
        }
    }

    /// Records the replacement of the column at `position` by a column
    /// whose FTRAN image is `alpha` (indexed by basis position).
    pub fn update(&mut self, position: usize, alpha: &[f64]) {
        let entries = alpha
            .iter()
            .enumerate()
            .filter(|&(i, &a)| i != position && a != 0.0)
            .map(|(i, &a)| (i, a))
            .collect();
        self.etas.push(Eta {
            position,
            pivot: alpha[position],
            entries,
        });
    }
}
