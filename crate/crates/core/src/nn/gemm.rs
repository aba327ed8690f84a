use super::Scalar;

/// Strided matrix view into a slice: element (r, c) lives at `r * rs + c * cs`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct View {
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    pub fn row_major(rows: usize, cols: usize) -> View {
        View {
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> View {
        View {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn extent(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `c = a * b + beta * c`. With `beta == 0` the old contents of `c` are ignored.
pub(crate) fn gemm<T: Scalar>(a: &[T], av: View, b: &[T], bv: View, beta: T, c: &mut [T], cv: View) {
    assert!(av.cols == bv.rows && av.rows == cv.rows && bv.cols == cv.cols, "gemm dimensions");
    assert!(a.len() >= av.extent() && b.len() >= bv.extent() && c.len() >= cv.extent(), "gemm extents");
    if cv.rows == 0 || cv.cols == 0 {
        return;
    }
    // SAFETY: every index touched is below the checked extents; `c` does not alias `a` or `b`
    // because it is borrowed mutably.
    unsafe {
        T::gemm_raw(
            av.rows,
            av.cols,
            bv.cols,
            a.as_ptr(),
            [av.rs as isize, av.cs as isize],
            b.as_ptr(),
            [bv.rs as isize, bv.cs as isize],
            beta,
            c.as_mut_ptr(),
            [cv.rs as isize, cv.cs as isize],
        )
    }
}
