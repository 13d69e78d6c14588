//! Dense building blocks with their backward passes.

use ndarray::{linalg::general_mat_mul, Array1, Array2, ArrayView2, Axis};

use super::Real;

pub(crate) const LN_EPS: f64 = 1e-12;

pub(crate) struct LnCache<F> {
    xhat: Array2<F>,
    rstd: Array1<F>,
}

pub(crate) fn layer_norm<F: Real>(x: &Array2<F>, gain: &Array1<F>, bias: &Array1<F>) -> (Array2<F>, LnCache<F>) {
    let n = x.nrows();
    let width = F::lit(x.ncols() as f64);
    let eps = F::lit(LN_EPS);
    let mut xhat = Array2::zeros(x.raw_dim());
    let mut rstd = Array1::zeros(n);
    for (i, row) in x.outer_iter().enumerate() {
        let mean = row.sum() / width;
        let var = row.fold(F::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / width;
        let r = F::one() / (var + eps).sqrt();
        rstd[i] = r;
        xhat.row_mut(i).zip_mut_with(&row, |h, &v| *h = (v - mean) * r);
    }
    let y = &xhat * gain + bias;
    (y, LnCache { xhat, rstd })
}

pub(crate) fn layer_norm_backward<F: Real>(
    dy: &Array2<F>,
    cache: &LnCache<F>,
    gain: &Array1<F>,
    dgain: &mut Array1<F>,
    dbias: &mut Array1<F>,
) -> Array2<F> {
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let width = F::lit(dy.ncols() as f64);
    let dxhat = dy * gain;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_dh = dh.sum() / width;
        let mean_dh_xh = dh.iter().zip(xh).fold(F::zero(), |a, (&d, &x)| a + d * x) / width;
        let r = cache.rstd[i];
        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
            *o = r * (dh[j] - mean_dh - xh[j] * mean_dh_xh);
        }
    }
    dx
}

pub(crate) fn linear<F: Real>(x: ArrayView2<'_, F>, w: &Array2<F>, b: &Array1<F>) -> Array2<F> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Accumulates `dw += xᵀ dy`, `db += Σ dy` and returns `dy wᵀ`.
pub(crate) fn linear_backward<F: Real>(
    x: ArrayView2<'_, F>,
    dy: &Array2<F>,
    w: &Array2<F>,
    dw: &mut Array2<F>,
    db: &mut Array1<F>,
) -> Array2<F> {
    general_mat_mul(F::one(), &x.t(), dy, F::one(), dw);
    *db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub(crate) fn gelu<F: Real>(x: F) -> F {
    let c = F::lit(GELU_C);
    let a = F::lit(GELU_A);
    let half = F::lit(0.5);
    half * x * (F::one() + (c * (x + a * x * x * x)).tanh())
}

pub(crate) fn gelu_grad<F: Real>(x: F) -> F {
    let c = F::lit(GELU_C);
    let a = F::lit(GELU_A);
    let half = F::lit(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + F::lit(3.0) * a * x * x)
}

/// Row-wise softmax in place.
pub(crate) fn softmax_rows<F: Real>(m: &mut Array2<F>) {
    for mut row in m.outer_iter_mut() {
        let max = row.fold(F::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Row-wise log-softmax of `logits`, computed in `f64`.
pub(crate) fn log_softmax_f64<F: Real>(logits: &Array2<F>) -> Array2<f64> {
    let mut out = logits.mapv(|v| v.to_f64().expect("finite"));
    for mut row in out.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn layer_norm_normalizes() {
        let x = array![[1.0f64, 2.0, 3.0, 4.0], [-1.0, 0.0, 0.0, 1.0]];
        let (y, _) = layer_norm(&x, &Array1::ones(4), &Array1::zeros(4));
        for row in y.outer_iter() {
            assert!(row.sum().abs() < 1e-12);
            assert!((row.mapv(|v| v * v).sum() / 4.0 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0f64, -0.5, 0.0, 0.3, 2.0] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn log_softmax_sums_to_one() {
        let l = array![[1.0f32, 2.0, 3.0], [100.0, 100.0, -50.0]];
        let lp = log_softmax_f64(&l);
        for row in lp.outer_iter() {
            assert!((row.mapv(f64::exp).sum() - 1.0).abs() < 1e-12);
        }
    }
}
