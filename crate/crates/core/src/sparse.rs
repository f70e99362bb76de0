//! Minimal coordinate-format sparse matrix, used for assembled discrete
//! generators and their structural tests.

/// Sparse matrix in coordinate (row, col, value) form.
#[derive(Debug, Clone)]
pub struct CooMatrix {
    pub nrows: usize,
    pub ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl CooMatrix {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, entries: Vec::new() }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Sorts entries by (row, col), sums duplicates, drops exact zeros.
    pub fn canonicalize(&mut self) {
        self.entries
            .sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(self.entries.len());
        for &(r, c, v) in &self.entries {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|e| e.2 != 0.0);
        self.entries = merged;
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.ncols];
        for &(_, c, v) in &self.entries {
            sums[c] += v;
        }
        sums
    }

    /// Largest absolute entrywise difference between canonical forms.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut a = self.clone();
        let mut b = other.clone();
        a.canonicalize();
        b.canonicalize();
        let mut diff: f64 = 0.0;
        let (mut i, mut j) = (0, 0);
        while i < a.entries.len() || j < b.entries.len() {
            let ea = a.entries.get(i);
            let eb = b.entries.get(j);
            match (ea, eb) {
                (Some(&(ra, ca, va)), Some(&(rb, cb, vb))) => {
                    match (ra, ca).cmp(&(rb, cb)) {
                        std::cmp::Ordering::Equal => {
                            diff = diff.max((va - vb).abs());
                            i += 1;
                            j += 1;
                        }
                        std::cmp::Ordering::Less => {
                            diff = diff.max(va.abs());
                            i += 1;
                        }
                        std::cmp::Ordering::Greater => {
                            diff = diff.max(vb.abs());
                            j += 1;
                        }
                    }
                }
                (Some(&(_, _, va)), None) => {
                    diff = diff.max(va.abs());
                    i += 1;
                }
                (None, Some(&(_, _, vb))) => {
                    diff = diff.max(vb.abs());
                    j += 1;
                }
                (None, None) => break,
            }
        }
        diff
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        y.fill(0.0);
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
    }

    /// Kronecker sum A (+) B = A x I_m + I_n x B on index (i*m + k).
    pub fn kron_sum(a: &Self, b: &Self) -> Self {
        assert_eq!(a.nrows, a.ncols);
        assert_eq!(b.nrows, b.ncols);
        let (n, m) = (a.nrows, b.nrows);
        let mut out = Self::new(n * m, n * m);
        for &(i, j, v) in &a.entries {
            for k in 0..m {
                out.push(i * m + k, j * m + k, v);
            }
        }
        for k in 0..n {
            for &(i, j, v) in &b.entries {
                out.push(k * m + i, k * m + j, v);
            }
        }
        out.canonicalize();
        out
    }

    /// Writes the matrix as `row col value` lines in canonical order.
    pub fn to_coordinate_text(&self) -> String {
        let mut canon = self.clone();
        canon.canonicalize();
        let mut s = String::new();
        s.push_str(&format!("# rows {} cols {} nnz {}\n", canon.nrows, canon.ncols, canon.nnz()));
        for &(r, c, v) in &canon.entries {
            s.push_str(&format!("{} {} {:.16e}\n", r, c, v));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonicalize_merges_duplicates() {
        let mut m = CooMatrix::new(2, 2);
        m.push(0, 1, 1.5);
        m.push(0, 1, 2.5);
        m.push(1, 0, 3.0);
        m.push(1, 0, -3.0);
        m.canonicalize();
        assert_eq!(m.entries(), &[(0, 1, 4.0)]);
    }

    #[test]
    fn kron_sum_of_diagonals() {
        let mut a = CooMatrix::new(2, 2);
        a.push(0, 0, 1.0);
        a.push(1, 1, 2.0);
        let mut b = CooMatrix::new(2, 2);
        b.push(0, 0, 10.0);
        b.push(1, 1, 20.0);
        let s = CooMatrix::kron_sum(&a, &b);
        // Diagonal should be the pairwise sums 11, 21, 12, 22.
        let want = [(0, 0, 11.0), (1, 1, 21.0), (2, 2, 12.0), (3, 3, 22.0)];
        assert_eq!(s.entries(), &want);
    }

    #[test]
    fn max_abs_diff_sees_missing_entries() {
        let mut a = CooMatrix::new(2, 2);
        a.push(0, 0, 1.0);
        let b = CooMatrix::new(2, 2);
        assert_eq!(a.max_abs_diff(&b), 1.0);
        assert_eq!(a.max_abs_diff(&a.clone()), 0.0);
    }
}
