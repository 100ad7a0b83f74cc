//! Symmetric banded matrices with an in-place Cholesky factorization.
//!
//! The stiffness and Hessian matrices of the grid energies only couple
//! lattice neighbours, so in closure ordering they are banded with bandwidth
//! at most one lattice row. Factorization costs `O(n · bw²)`.

#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    /// Row `i` stores columns `i - bw ..= i`; slot `bw` is the diagonal.
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotPositiveDefinite {
    pub row: usize,
    pub pivot: f64,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandMatrix { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + self.bw - (i - j)
    }

    /// Entry `(i, j)` of the symmetric matrix.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    pub fn add_diag(&mut self, i: usize, v: f64) {
        let s = self.slot(i, i);
        self.data[s] += v;
    }

    /// Adds `v` to the symmetric pair `(i, j)`, `(j, i)` with `i != j`.
    pub fn add_off(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i > j { (i, j) } else { (j, i) };
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    /// Adds `c · (e_a - e_b)(e_a - e_b)^T`.
    pub fn add_edge(&mut self, a: usize, b: usize, c: f64) {
        self.add_diag(a, c);
        self.add_diag(b, c);
        self.add_off(a, b, -c);
    }

    /// Removes all couplings of row/column `i`, keeping its diagonal.
    pub fn decouple(&mut self, i: usize) {
        let lo = i.saturating_sub(self.bw);
        for j in lo..i {
            let s = self.slot(i, j);
            self.data[s] = 0.0;
        }
        let hi = (i + self.bw).min(self.n - 1);
        for k in i + 1..=hi {
            let s = self.slot(k, i);
            self.data[s] = 0.0;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let row = &self.data[i * (self.bw + 1)..(i + 1) * (self.bw + 1)];
            let mut acc = 0.0;
            for j in lo..i {
                let a = row[self.bw - (i - j)];
                acc += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += acc + row[self.bw] * x[i];
        }
        y
    }

    /// Overwrites the lower band with `L` such that `A = L L^T`.
    pub fn cholesky(mut self) -> Result<Cholesky, NotPositiveDefinite> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                // A_ij - Σ_k L_ik L_jk over the overlap of both bands
                let klo = lo.max(j.saturating_sub(bw));
                let mut s = self.data[i * w + bw - (i - j)];
                for k in klo..j {
                    s -= self.data[i * w + bw - (i - k)] * self.data[j * w + bw - (j - k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(NotPositiveDefinite { row: i, pivot: s });
                    }
                    self.data[i * w + bw] = s.sqrt();
                } else {
                    self.data[i * w + bw - (i - j)] = s / self.data[j * w + bw];
                }
            }
        }
        Ok(Cholesky { factor: self })
    }
}

#[derive(Clone, Debug)]
pub struct Cholesky {
    factor: BandMatrix,
}

impl Cholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let BandMatrix { n, bw, ref data } = self.factor;
        let w = bw + 1;
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = y[i];
            for k in lo..i {
                s -= data[i * w + bw - (i - k)] * y[k];
            }
            y[i] = s / data[i * w + bw];
        }
        for i in (0..n).rev() {
            y[i] /= data[i * w + bw];
            let lo = i.saturating_sub(bw);
            let yi = y[i];
            for k in lo..i {
                y[k] -= data[i * w + bw - (i - k)] * yi;
            }
        }
        y
    }
}
