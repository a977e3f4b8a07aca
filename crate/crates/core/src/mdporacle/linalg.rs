use crate::diffcore::Matrix;
use crate::error::{Result, ZolError};

/// Solves `a * x = b` by LU factorization with partial pivoting.
pub fn lu_solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(ZolError::Shape(format!(
            "lu_solve needs square a and matching b, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let m = b.cols();
    let mut lu = a.clone();
    let mut x = b.clone();
    let scale = a.data().iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);

    for k in 0..n {
        let mut piv = k;
        let mut best = lu.get(k, k).abs();
        for r in k + 1..n {
            let v = lu.get(r, k).abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best <= 1e-14 * scale {
            return Err(ZolError::Numeric(format!("singular system at column {k}")));
        }
        if piv != k {
            for c in 0..n {
                let (p, q) = (lu.get(k, c), lu.get(piv, c));
                lu.set(k, c, q);
                lu.set(piv, c, p);
            }
            for c in 0..m {
                let (p, q) = (x.get(k, c), x.get(piv, c));
                x.set(k, c, q);
                x.set(piv, c, p);
            }
        }
        let d = lu.get(k, k);
        for r in k + 1..n {
            let f = lu.get(r, k) / d;
            if f == 0.0 {
                continue;
            }
            lu.set(r, k, f);
            for c in k + 1..n {
                let v = lu.get(r, c) - f * lu.get(k, c);
                lu.set(r, c, v);
            }
            for c in 0..m {
                let v = x.get(r, c) - f * x.get(k, c);
                x.set(r, c, v);
            }
        }
    }
    for k in (0..n).rev() {
        let d = lu.get(k, k);
        for c in 0..m {
            let mut v = x.get(k, c);
            for j in k + 1..n {
                v -= lu.get(k, j) * x.get(j, c);
            }
            x.set(k, c, v / d);
        }
    }
    Ok(x)
}
