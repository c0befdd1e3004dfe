use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type the model can run in. Training and checkpoints use
/// `f32`; `f64` exists so finite-difference checks are meaningful.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    /// `c = alpha * a · b + beta * c` over strided views.
    ///
    /// # Safety
    /// Every index reachable through the dimensions and strides must lie inside
    /// the respective buffer.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// A strided matrix view: element `(i, j)` lives at `i * rs + j * cs`.
#[derive(Clone, Copy)]
pub struct View<'a, F> {
    pub data: &'a [F],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, F> View<'a, F> {
    /// Row-major `rows × cols` block starting at the front of `data`.
    pub fn new(data: &'a [F], rows: usize, cols: usize) -> Self {
        View { data, rows, cols, rs: cols, cs: 1 }
    }

    pub fn strided(data: &'a [F], rows: usize, cols: usize, rs: usize) -> Self {
        View { data, rows, cols, rs, cs: 1 }
    }

    pub fn t(self) -> Self {
        View { data: self.data, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }

    fn fits(&self) -> bool {
        self.rows == 0 || self.cols == 0 || (self.rows - 1) * self.rs + (self.cols - 1) * self.cs < self.data.len()
    }
}

pub struct ViewMut<'a, F> {
    pub data: &'a mut [F],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, F> ViewMut<'a, F> {
    pub fn new(data: &'a mut [F], rows: usize, cols: usize) -> Self {
        ViewMut { data, rows, cols, rs: cols, cs: 1 }
    }

    pub fn strided(data: &'a mut [F], rows: usize, cols: usize, rs: usize) -> Self {
        ViewMut { data, rows, cols, rs, cs: 1 }
    }

    fn fits(&self) -> bool {
        self.rows == 0 || self.cols == 0 || (self.rows - 1) * self.rs + (self.cols - 1) * self.cs < self.data.len()
    }
}

/// `c = a · b + beta * c`.
pub fn gemm<F: Scalar>(a: View<'_, F>, b: View<'_, F>, beta: F, c: ViewMut<'_, F>) {
    assert_eq!(a.cols, b.rows, "inner dimensions");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "output shape");
    assert!(a.fits() && b.fits() && c.fits(), "view exceeds its buffer");
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    if a.rows == 1 && (b.cs == 1 || b.rs == 1) {
        return vecmat(a, b, beta, c);
    }
    // SAFETY: the asserts above bound every strided index by the buffer lengths.
    unsafe {
        F::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            F::one(),
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

/// Single-row product for incremental decoding, where packing `b` for the
/// blocked kernel costs more than the product itself.
fn vecmat<F: Scalar>(a: View<'_, F>, b: View<'_, F>, beta: F, c: ViewMut<'_, F>) {
    let x = |p: usize| a.data[p * a.cs];
    let out = |j: usize| j * c.cs;
    if b.cs == 1 {
        let mut acc = vec![F::zero(); b.cols];
        for p in 0..a.cols {
            let xp = x(p);
            for (s, &w) in acc.iter_mut().zip(&b.data[p * b.rs..][..b.cols]) {
                *s += xp * w;
            }
        }
        for (j, s) in acc.into_iter().enumerate() {
            let prev = if beta == F::zero() { F::zero() } else { beta * c.data[out(j)] };
            c.data[out(j)] = prev + s;
        }
    } else {
        let xs: Vec<F> = (0..a.cols).map(x).collect();
        for j in 0..b.cols {
            let col = &b.data[j * b.cs..][..a.cols];
            let s = xs.iter().zip(col).fold(F::zero(), |s, (&u, &w)| s + u * w);
            let prev = if beta == F::zero() { F::zero() } else { beta * c.data[out(j)] };
            c.data[out(j)] = prev + s;
        }
    }
}
