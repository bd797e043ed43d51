//! 2-D FFT helpers over `ndarray` arrays, built on rustfft.

use std::cell::RefCell;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

fn transform_2d(a: &Array2<Complex<f64>>, inverse: bool) -> Array2<Complex<f64>> {
    let (h, w) = a.dim();
    let mut out = a.clone();
    let row_fft = plan(w, inverse);
    for mut row in out.rows_mut() {
        let slice = row.as_slice_mut().expect("contiguous row");
        row_fft.process(slice);
    }
    let col_fft = plan(h, inverse);
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            col[i] = out[(i, j)];
        }
        col_fft.process(&mut col);
        for i in 0..h {
            out[(i, j)] = col[i];
        }
    }
    out
}

pub fn fft2(a: &Array2<Complex<f64>>) -> Array2<Complex<f64>> {
    transform_2d(a, false)
}

/// Inverse 2-D FFT, normalized by 1/(H*W).
pub fn ifft2(a: &Array2<Complex<f64>>) -> Array2<Complex<f64>> {
    let (h, w) = a.dim();
    let scale = 1.0 / (h * w) as f64;
    transform_2d(a, true).mapv(|v| v * scale)
}

pub fn to_complex(a: &Array2<f64>) -> Array2<Complex<f64>> {
    a.mapv(|v| Complex::new(v, 0.0))
}

/// Real part of an inverse transform whose imaginary residue is numerical noise.
pub fn real_part(a: &Array2<Complex<f64>>) -> Array2<f64> {
    a.mapv(|v| v.re)
}
