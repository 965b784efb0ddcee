//! Dense row-major f64 tensor plus the handful of matmul variants the
//! layers need. Deliberately minimal: shape + flat data, no views.

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "data length {} != shape {:?} product {}",
                data.len(),
                shape,
                n
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }
}

const PAR_FLOP_THRESHOLD: usize = 1 << 16;

/// C[m,n] = A[m,k] · B[k,n]
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2(a)?;
    let (kb, n) = dims2(b)?;
    if k != kb {
        return Err(Error::ShapeMismatch(format!("matmul {m}x{k} by {kb}x{n}")));
    }
    let mut out = Tensor::zeros(&[m, n]);
    let body = |(i, row): (usize, &mut [f64])| {
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    };
    if m * n * k >= PAR_FLOP_THRESHOLD {
        out.data.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        out.data.chunks_mut(n).enumerate().for_each(body);
    }
    Ok(out)
}

/// C[m,n] = A[m,k] · B[n,k]ᵀ (contiguous dot products).
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2(a)?;
    let (n, kb) = dims2(b)?;
    if k != kb {
        return Err(Error::ShapeMismatch(format!("matmul_nt {m}x{k} by ({n}x{kb})T")));
    }
    let mut out = Tensor::zeros(&[m, n]);
    let body = |(i, row): (usize, &mut [f64])| {
        let arow = &a.data[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let brow = &b.data[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            *o = acc;
        }
    };
    if m * n * k >= PAR_FLOP_THRESHOLD {
        out.data.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        out.data.chunks_mut(n).enumerate().for_each(body);
    }
    Ok(out)
}

/// C[m,n] = A[k,m]ᵀ · B[k,n]
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = dims2(a)?;
    let (kb, n) = dims2(b)?;
    if k != kb {
        return Err(Error::ShapeMismatch(format!("matmul_tn ({k}x{m})T by {kb}x{n}")));
    }
    let mut out = Tensor::zeros(&[m, n]);
    let body = |(i, row): (usize, &mut [f64])| {
        for p in 0..k {
            let api = a.data[p * m + i];
            if api == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += api * bv;
            }
        }
    };
    if m * n * k >= PAR_FLOP_THRESHOLD {
        out.data.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        out.data.chunks_mut(n).enumerate().for_each(body);
    }
    Ok(out)
}

fn dims2(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(Error::ShapeMismatch(format!("expected rank-2 tensor, got {s:?}"))),
    }
}
