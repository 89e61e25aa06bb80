//! Matrix products shaped for convolution layers: one small dimension
//! (channels) against one long contiguous dimension (pixels). Operands are
//! read in place, without the packing copies a general GEMM makes, and the
//! loops are written over fixed-width lanes so they vectorize; on x86-64 an
//! AVX2 build of the same code is selected at runtime.

use crate::num::Real;

const ROWS: usize = 4;
const WIDTH: usize = 16;
const LANES: usize = 8;
const DOT_SLAB: usize = 1024;
const NT_ROWS: usize = 4;
const NT_COLS: usize = 2;

/// `acc + a * b`, fused only where the CPU has FMA (the software fallback
/// for a fused multiply-add is far slower than two operations).
#[inline(always)]
fn madd<T: Real, const FMA: bool>(acc: T, a: T, b: T) -> T {
    if FMA {
        a.mul_add(b, acc)
    } else {
        acc + a * b
    }
}

/// `c[i, j] += sum_p a[i, p] * b[p, j]` with `a` given by `(row, col)`
/// strides, `b` and `c` row-major with the given row strides.
#[allow(clippy::too_many_arguments)]
pub fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], a_strides: (usize, usize), b: &[T], b_row: usize, c: &mut [T], c_row: usize) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(a.len() > (m - 1) * a_strides.0 + (k - 1) * a_strides.1);
    assert!(b.len() >= (k - 1) * b_row + n);
    assert!(c.len() >= (m - 1) * c_row + n);
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: the CPU supports AVX2 and FMA, checked just above.
            unsafe { gemm_nn_avx2(m, k, n, a, a_strides, b, b_row, c, c_row) };
            return;
        }
    }
    gemm_nn_body::<T, false>(m, k, n, a, a_strides, b, b_row, c, c_row);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
#[allow(clippy::too_many_arguments)]
unsafe fn gemm_nn_avx2<T: Real>(m: usize, k: usize, n: usize, a: &[T], a_strides: (usize, usize), b: &[T], b_row: usize, c: &mut [T], c_row: usize) {
    gemm_nn_body::<T, true>(m, k, n, a, a_strides, b, b_row, c, c_row)
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn gemm_nn_body<T: Real, const FMA: bool>(m: usize, k: usize, n: usize, a: &[T], (ar, ac): (usize, usize), b: &[T], b_row: usize, c: &mut [T], c_row: usize) {
    // `a` gathered into `[row block][p][ROWS]` order, zero-padded to whole blocks.
    let blocks = m.div_ceil(ROWS);
    let mut packed = vec![T::zero(); blocks * k * ROWS];
    for i in 0..m {
        for p in 0..k {
            packed[((i / ROWS) * k + p) * ROWS + i % ROWS] = a[i * ar + p * ac];
        }
    }
    let full_cols = n / WIDTH * WIDTH;
    for j in (0..full_cols).step_by(WIDTH) {
        for blk in 0..blocks {
            let mut acc = [[T::zero(); WIDTH]; ROWS];
            let ap = &packed[blk * k * ROWS..(blk + 1) * k * ROWS];
            for (p, av) in ap.chunks_exact(ROWS).enumerate() {
                let bv: &[T; WIDTH] = b[p * b_row + j..][..WIDTH].try_into().expect("width");
                for r in 0..ROWS {
                    for l in 0..WIDTH {
                        acc[r][l] = madd::<T, FMA>(acc[r][l], av[r], bv[l]);
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                let i = blk * ROWS + r;
                if i < m {
                    let cv = &mut c[i * c_row + j..][..WIDTH];
                    for l in 0..WIDTH {
                        cv[l] += row[l];
                    }
                }
            }
        }
    }
    if full_cols < n {
        for i in 0..m {
            for p in 0..k {
                let av = a[i * ar + p * ac];
                let bv = &b[p * b_row..];
                let cv = &mut c[i * c_row..];
                for j in full_cols..n {
                    cv[j] += av * bv[j];
                }
            }
        }
    }
}

/// `c[i * c_strides.0 + j * c_strides.1] += sum_q a[i, q] * b[j, q]`, with
/// `a` and `b` row-major over a shared length `k`.
#[allow(clippy::too_many_arguments)]
pub fn gemm_nt<T: Real>(m: usize, n: usize, k: usize, a: &[T], a_row: usize, b: &[T], b_row: usize, c: &mut [T], c_strides: (usize, usize)) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(a.len() >= (m - 1) * a_row + k);
    assert!(b.len() >= (n - 1) * b_row + k);
    assert!(c.len() > (m - 1) * c_strides.0 + (n - 1) * c_strides.1);
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: the CPU supports AVX2 and FMA, checked just above.
            unsafe { gemm_nt_avx2(m, n, k, a, a_row, b, b_row, c, c_strides) };
            return;
        }
    }
    gemm_nt_body::<T, false>(m, n, k, a, a_row, b, b_row, c, c_strides);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
#[allow(clippy::too_many_arguments)]
unsafe fn gemm_nt_avx2<T: Real>(m: usize, n: usize, k: usize, a: &[T], a_row: usize, b: &[T], b_row: usize, c: &mut [T], c_strides: (usize, usize)) {
    gemm_nt_body::<T, true>(m, n, k, a, a_row, b, b_row, c, c_strides)
}

#[inline(always)]
fn dot_block<T: Real, const FMA: bool, const MI: usize, const NJ: usize>(k: usize, a: [&[T]; MI], b: [&[T]; NJ]) -> [[T; NJ]; MI] {
    let mut acc = [[[T::zero(); LANES]; NJ]; MI];
    let full = k / LANES * LANES;
    for q in (0..full).step_by(LANES) {
        let av: [&[T; LANES]; MI] = a.map(|r| r[q..q + LANES].try_into().expect("lanes"));
        let bv: [&[T; LANES]; NJ] = b.map(|r| r[q..q + LANES].try_into().expect("lanes"));
        for i in 0..MI {
            for j in 0..NJ {
                for l in 0..LANES {
                    acc[i][j][l] = madd::<T, FMA>(acc[i][j][l], av[i][l], bv[j][l]);
                }
            }
        }
    }
    let mut out = [[T::zero(); NJ]; MI];
    for i in 0..MI {
        for j in 0..NJ {
            let mut s = acc[i][j].iter().copied().fold(T::zero(), |x, y| x + y);
            for q in full..k {
                s += a[i][q] * b[j][q];
            }
            out[i][j] = s;
        }
    }
    out
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn gemm_nt_body<T: Real, const FMA: bool>(m: usize, n: usize, k: usize, a: &[T], a_row: usize, b: &[T], b_row: usize, c: &mut [T], (cr, cc): (usize, usize)) {
    // Walk the shared dimension in slabs so the rows being dotted stay cached.
    for q0 in (0..k).step_by(DOT_SLAB) {
        let q1 = (q0 + DOT_SLAB).min(k);
        let row_a = |i: usize| &a[i * a_row + q0..i * a_row + q1];
        let row_b = |j: usize| &b[j * b_row + q0..j * b_row + q1];
        let len = q1 - q0;
        let mut i = 0;
        while i < m {
            let mut j = 0;
            if i + NT_ROWS <= m {
                let ra: [&[T]; NT_ROWS] = std::array::from_fn(|d| row_a(i + d));
                while j + NT_COLS <= n {
                    let rb: [&[T]; NT_COLS] = std::array::from_fn(|d| row_b(j + d));
                    let out = dot_block::<T, FMA, NT_ROWS, NT_COLS>(len, ra, rb);
                    for (di, row) in out.iter().enumerate() {
                        for (dj, v) in row.iter().enumerate() {
                            c[(i + di) * cr + (j + dj) * cc] += *v;
                        }
                    }
                    j += NT_COLS;
                }
                for j in j..n {
                    let out = dot_block::<T, FMA, NT_ROWS, 1>(len, ra, [row_b(j)]);
                    for (di, row) in out.iter().enumerate() {
                        c[(i + di) * cr + j * cc] += row[0];
                    }
                }
                i += NT_ROWS;
            } else {
                for j in 0..n {
                    let out = dot_block::<T, FMA, 1, 1>(len, [row_a(i)], [row_b(j)]);
                    c[i * cr + j * cc] += out[0][0];
                }
                i += 1;
            }
        }
    }
}
