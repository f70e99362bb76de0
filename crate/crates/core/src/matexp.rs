//! Matrix exponential for small dense matrices by Padé approximation with
//! scaling and squaring.
//!
//! The switching chains handled here have a handful of states, so the
//! intensity matrices are tiny and a fixed [6/6] Padé approximant is both
//! accurate to machine precision and cheap.

/// Dense row-major square matrix, sized for chain generators (a few states).
#[derive(Clone, Debug, PartialEq)]
pub struct SmallMat {
    n: usize,
    a: Vec<f64>,
}

impl SmallMat {
    pub fn zeros(n: usize) -> Self {
        Self { n, a: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.a[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "matrix must be square");
        let mut a = Vec::with_capacity(n * n);
        for r in rows {
            a.extend_from_slice(r);
        }
        Self { n, a }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.n + j] = v;
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let mut t = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                t.a[j * n + i] = self.a[i * n + j];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { n: self.n, a: self.a.iter().map(|v| v * s).collect() }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self.a[i * n + k];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.a[i * n + j] += aik * other.a[k * n + j];
                }
            }
        }
        out
    }

    /// y = self * x for a column vector x.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(y.len(), n);
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.a[i * n + j] * x[j];
            }
            y[i] = acc;
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self {
            n: self.n,
            a: self.a.iter().zip(&other.a).map(|(x, y)| x + y).collect(),
        }
    }

    pub fn inf_norm(&self) -> f64 {
        let n = self.n;
        (0..n)
            .map(|i| (0..n).map(|j| self.a[i * n + j].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Solves self * X = B by Gaussian elimination with partial pivoting,
    /// overwriting nothing; panics on exactly singular input (the Padé
    /// denominator is well conditioned after scaling).
    fn solve(&self, b: &Self) -> Self {
        let n = self.n;
        let mut lu = self.a.clone();
        let mut x = b.a.clone();
        for col in 0..n {
            let mut piv = col;
            let mut best = lu[col * n + col].abs();
            for r in col + 1..n {
                let v = lu[r * n + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            assert!(best > 0.0, "singular matrix in Pade solve");
            if piv != col {
                for j in 0..n {
                    lu.swap(col * n + j, piv * n + j);
                    x.swap(col * n + j, piv * n + j);
                }
            }
            let d = lu[col * n + col];
            for r in col + 1..n {
                let f = lu[r * n + col] / d;
                if f == 0.0 {
                    continue;
                }
                for j in col..n {
                    lu[r * n + j] -= f * lu[col * n + j];
                }
                for j in 0..n {
                    x[r * n + j] -= f * x[col * n + j];
                }
            }
        }
        for col in (0..n).rev() {
            let d = lu[col * n + col];
            for j in 0..n {
                x[col * n + j] /= d;
            }
            for r in 0..col {
                let f = lu[r * n + col];
                if f == 0.0 {
                    continue;
                }
                for j in 0..n {
                    x[r * n + j] -= f * x[col * n + j];
                }
            }
        }
        Self { n, a: x }
    }
}

// Coefficients of the [6/6] Pade approximant to exp:
// c_k = (12-k)! 6! / (12! k! (6-k)!).
const PADE6: [f64; 7] = [
    1.0,
    1.0 / 2.0,
    5.0 / 44.0,
    1.0 / 66.0,
    1.0 / 792.0,
    1.0 / 15840.0,
    1.0 / 665280.0,
];

// Scale so the argument norm is at most this before applying the
// approximant; conservative for order 6 in double precision.
const PADE6_THETA: f64 = 0.25;

/// exp(A) by [6/6] Pade with scaling and squaring.
pub fn expm(a: &SmallMat) -> SmallMat {
    let norm = a.inf_norm();
    let s = if norm > PADE6_THETA {
        (norm / PADE6_THETA).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a.scale(0.5_f64.powi(s as i32));

    // Split the polynomial into even and odd parts so the denominator is
    // N(-A) = even - odd where N(A) = even + odd.
    let n = a.dim();
    let a2 = scaled.matmul(&scaled);
    let a4 = a2.matmul(&a2);
    let a6 = a4.matmul(&a2);
    let even = SmallMat::identity(n)
        .scale(PADE6[0])
        .add(&a2.scale(PADE6[2]))
        .add(&a4.scale(PADE6[4]))
        .add(&a6.scale(PADE6[6]));
    let odd_poly = SmallMat::identity(n)
        .scale(PADE6[1])
        .add(&a2.scale(PADE6[3]))
        .add(&a4.scale(PADE6[5]));
    let odd = scaled.matmul(&odd_poly);

    let num = even.add(&odd);
    let den = even.add(&odd.scale(-1.0));
    let mut e = den.solve(&num);
    for _ in 0..s {
        e = e.matmul(&e);
    }
    e
}
