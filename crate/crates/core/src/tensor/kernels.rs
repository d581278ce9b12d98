//! Low-level f32 compute kernels with runtime SIMD dispatch.
//!
//! Hot kernels are written once against a `FUSED` const generic (fused
//! multiply-add vs. plain mul+add) and compiled three ways: a portable
//! baseline, an AVX2+FMA version and an AVX-512 version. Dispatch happens
//! per call via a cached feature probe. Reductions that feed shared
//! accumulators are chunked deterministically so results do not depend on
//! thread count.

use std::sync::OnceLock;

/// 0 = portable, 1 = avx2+fma, 2 = avx512f.
pub fn simd_level() -> u8 {
    static LEVEL: OnceLock<u8> = OnceLock::new();
    *LEVEL.get_or_init(|| {
        #[cfg(target_arch = "x86_64")]
        {
            if is_x86_feature_detected!("avx512f")
                && is_x86_feature_detected!("avx2")
                && is_x86_feature_detected!("fma")
            {
                return 2;
            }
            if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
                return 1;
            }
            0
        }
        #[cfg(not(target_arch = "x86_64"))]
        {
            0
        }
    })
}

/// Fixed-size chunk ranges for deterministic parallel reductions. The chunk
/// grid depends only on `n_items`, never on the worker count.
pub fn chunk_ranges(n_items: usize, max_chunks: usize) -> Vec<(usize, usize)> {
    if n_items == 0 {
        return Vec::new();
    }
    let n_chunks = max_chunks.max(1).min(n_items);
    let base = n_items / n_chunks;
    let extra = n_items % n_chunks;
    let mut out = Vec::with_capacity(n_chunks);
    let mut start = 0;
    for i in 0..n_chunks {
        let len = base + usize::from(i < extra);
        out.push((start, start + len));
        start += len;
    }
    out
}

macro_rules! multiversion {
    (fn $name:ident [$v2:ident, $v512:ident] / $inner:ident ( $($arg:ident : $ty:ty),* $(,)? )) => {
        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = "avx2,fma")]
        unsafe fn $v2($($arg: $ty),*) {
            $inner::<true>($($arg),*)
        }

        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = "avx512f,avx2,fma")]
        unsafe fn $v512($($arg: $ty),*) {
            $inner::<true>($($arg),*)
        }

        pub fn $name($($arg: $ty),*) {
            #[cfg(target_arch = "x86_64")]
            {
                match simd_level() {
                    2 => return unsafe { $v512($($arg),*) },
                    1 => return unsafe { $v2($($arg),*) },
                    _ => {}
                }
            }
            $inner::<false>($($arg),*)
        }
    };
}

#[inline(always)]
fn fmaf<const FUSED: bool>(a: f32, b: f32, c: f32) -> f32 {
    if FUSED {
        a.mul_add(b, c)
    } else {
        a * b + c
    }
}

// ---------------------------------------------------------------------------
// 3x3 same-padding convolution over border-padded planes.
//
// Planes use a row stride of `rs = w + 2` and `h + 3` rows so the flattened
// interior loop can run off the row ends into always-zero border cells.
// Valid data sits at rows 1..h+1, cols 1..w+1.
// ---------------------------------------------------------------------------

pub const fn pad_rs(w: usize) -> usize {
    w + 2
}

pub const fn pad_plane(h: usize, w: usize) -> usize {
    (h + 3) * pad_rs(w)
}

/// Zero a padded buffer and copy `[c][h][w]` compact data into its interior.
pub fn pack_padded(compact: &[f32], padded: &mut [f32], c: usize, h: usize, w: usize) {
    let rs = pad_rs(w);
    let plane = pad_plane(h, w);
    padded[..c * plane].fill(0.0);
    for ch in 0..c {
        for row in 0..h {
            let src = ch * h * w + row * w;
            let dst = ch * plane + (row + 1) * rs + 1;
            padded[dst..dst + w].copy_from_slice(&compact[src..src + w]);
        }
    }
}

/// Copy the interior of a padded buffer back to compact `[c][h][w]`.
pub fn unpack_padded(padded: &[f32], compact: &mut [f32], c: usize, h: usize, w: usize) {
    let rs = pad_rs(w);
    let plane = pad_plane(h, w);
    for ch in 0..c {
        for row in 0..h {
            let dst = ch * h * w + row * w;
            let src = ch * plane + (row + 1) * rs + 1;
            compact[dst..dst + w].copy_from_slice(&padded[src..src + w]);
        }
    }
}

const CONV_LANES: usize = 64;

#[inline(always)]
fn conv3_fwd_impl<const FUSED: bool>(
    inp: &[f32],
    out: &mut [f32],
    w: &[f32],
    bias: &[f32],
    ci: usize,
    co: usize,
    h: usize,
    rs: usize,
) {
    let flat = h * rs;
    let plane = (h + 3) * rs;
    for o in 0..co {
        let ob = o * plane + rs + 1;
        let wrow = &w[o * ci * 9..(o + 1) * ci * 9];
        let b = bias[o];
        let mut r = 0;
        while r + CONV_LANES <= flat {
            let mut acc = [b; CONV_LANES];
            for i in 0..ci {
                let ib = i * plane + r;
                for kh in 0..3 {
                    let base = ib + kh * rs;
                    let src = &inp[base..base + CONV_LANES + 2];
                    let w0 = wrow[(i * 3 + kh) * 3];
                    let w1 = wrow[(i * 3 + kh) * 3 + 1];
                    let w2 = wrow[(i * 3 + kh) * 3 + 2];
                    for l in 0..CONV_LANES {
                        acc[l] = fmaf::<FUSED>(w0, src[l], acc[l]);
                    }
                    for l in 0..CONV_LANES {
                        acc[l] = fmaf::<FUSED>(w1, src[l + 1], acc[l]);
                    }
                    for l in 0..CONV_LANES {
                        acc[l] = fmaf::<FUSED>(w2, src[l + 2], acc[l]);
                    }
                }
            }
            out[ob + r..ob + r + CONV_LANES].copy_from_slice(&acc);
            r += CONV_LANES;
        }
        while r < flat {
            let mut a = b;
            for i in 0..ci {
                let ib = i * plane + r;
                for kh in 0..3 {
                    for kw in 0..3 {
                        a = fmaf::<FUSED>(wrow[(i * 3 + kh) * 3 + kw], inp[ib + kh * rs + kw], a);
                    }
                }
            }
            out[ob + r] = a;
            r += 1;
        }
    }
}

multiversion!(fn conv3_fwd [conv3_fwd_v2, conv3_fwd_v512] / conv3_fwd_impl(
    inp: &[f32], out: &mut [f32], w: &[f32], bias: &[f32],
    ci: usize, co: usize, h: usize, rs: usize
));

const DOT_LANES: usize = 32;

/// Per-tap weight gradients: `gw[o][i][kh][kw] += dot(gout[o], inp[i] shifted)`.
/// Both planes must be border-padded with zero borders (so the off-row reads
/// contribute nothing).
#[inline(always)]
fn conv3_gradw_impl<const FUSED: bool>(
    inp: &[f32],
    gout: &[f32],
    gw: &mut [f32],
    gb: &mut [f32],
    ci: usize,
    co: usize,
    h: usize,
    rs: usize,
) {
    let flat = h * rs;
    let plane = (h + 3) * rs;
    for o in 0..co {
        let gbase = o * plane + rs + 1;
        let g = &gout[gbase..gbase + flat];
        // bias gradient
        let mut bsum = [0.0f32; DOT_LANES];
        let mut r = 0;
        while r + DOT_LANES <= flat {
            for l in 0..DOT_LANES {
                bsum[l] += g[r + l];
            }
            r += DOT_LANES;
        }
        let mut btail = 0.0f32;
        while r < flat {
            btail += g[r];
            r += 1;
        }
        gb[o] += bsum.iter().sum::<f32>() + btail;

        for i in 0..ci {
            for kh in 0..3 {
                for kw in 0..3 {
                    let sbase = i * plane + kh * rs + kw;
                    let s = &inp[sbase..sbase + flat];
                    let mut acc = [0.0f32; DOT_LANES];
                    let mut r = 0;
                    while r + DOT_LANES <= flat {
                        for l in 0..DOT_LANES {
                            acc[l] = fmaf::<FUSED>(g[r + l], s[r + l], acc[l]);
                        }
                        r += DOT_LANES;
                    }
                    let mut tail = 0.0f32;
                    while r < flat {
                        tail = fmaf::<FUSED>(g[r], s[r], tail);
                        r += 1;
                    }
                    gw[((o * ci + i) * 3 + kh) * 3 + kw] += acc.iter().sum::<f32>() + tail;
                }
            }
        }
    }
}

multiversion!(fn conv3_gradw [conv3_gradw_v2, conv3_gradw_v512] / conv3_gradw_impl(
    inp: &[f32], gout: &[f32], gw: &mut [f32], gb: &mut [f32],
    ci: usize, co: usize, h: usize, rs: usize
));

/// Flip a `[co][ci][3][3]` kernel into `[ci][co][3][3]` with both spatial
/// axes reversed, turning the input-gradient pass into a forward-shaped one.
pub fn flip_transpose_kernel(w: &[f32], ci: usize, co: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; w.len()];
    for o in 0..co {
        for i in 0..ci {
            for kh in 0..3 {
                for kw in 0..3 {
                    out[((i * co + o) * 3 + (2 - kh)) * 3 + (2 - kw)] =
                        w[((o * ci + i) * 3 + kh) * 3 + kw];
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Small GEMM kernels. Row-major. `acc` adds into the existing output.
// ---------------------------------------------------------------------------

const GEMM_LANES: usize = 16;

/// C[m][n] (+)= A[m][k] * B[k][n]
#[inline(always)]
fn mm_nn_impl<const FUSED: bool>(
    a: &[f32],
    b: &[f32],
    c: &mut [f32],
    m: usize,
    k: usize,
    n: usize,
    acc: bool,
) {
    for row in 0..m {
        let arow = &a[row * k..(row + 1) * k];
        let crow = &mut c[row * n..(row + 1) * n];
        if !acc {
            crow.fill(0.0);
        }
        let mut col = 0;
        while col + GEMM_LANES <= n {
            let mut sum = [0.0f32; GEMM_LANES];
            for (kk, &av) in arow.iter().enumerate() {
                let brow = &b[kk * n + col..kk * n + col + GEMM_LANES];
                for l in 0..GEMM_LANES {
                    sum[l] = fmaf::<FUSED>(av, brow[l], sum[l]);
                }
            }
            for l in 0..GEMM_LANES {
                crow[col + l] += sum[l];
            }
            col += GEMM_LANES;
        }
        while col < n {
            let mut s = 0.0f32;
            for (kk, &av) in arow.iter().enumerate() {
                s = fmaf::<FUSED>(av, b[kk * n + col], s);
            }
            crow[col] += s;
            col += 1;
        }
    }
}

multiversion!(fn mm_nn [mm_nn_v2, mm_nn_v512] / mm_nn_impl(
    a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize, acc: bool
));

/// C[m][n] (+)= A[m][k] * B^T where B is [n][k]
#[inline(always)]
fn mm_nt_impl<const FUSED: bool>(
    a: &[f32],
    b: &[f32],
    c: &mut [f32],
    m: usize,
    k: usize,
    n: usize,
    acc: bool,
) {
    for row in 0..m {
        let arow = &a[row * k..(row + 1) * k];
        for col in 0..n {
            let brow = &b[col * k..(col + 1) * k];
            let mut lanes = [0.0f32; GEMM_LANES];
            let mut i = 0;
            while i + GEMM_LANES <= k {
                for l in 0..GEMM_LANES {
                    lanes[l] = fmaf::<FUSED>(arow[i + l], brow[i + l], lanes[l]);
                }
                i += GEMM_LANES;
            }
            let mut s = lanes.iter().sum::<f32>();
            while i < k {
                s = fmaf::<FUSED>(arow[i], brow[i], s);
                i += 1;
            }
            let dst = &mut c[row * n + col];
            if acc {
                *dst += s;
            } else {
                *dst = s;
            }
        }
    }
}

multiversion!(fn mm_nt [mm_nt_v2, mm_nt_v512] / mm_nt_impl(
    a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize, acc: bool
));

/// C[k][n] (+)= A^T * B where A is [m][k], B is [m][n]
#[inline(always)]
fn mm_tn_impl<const FUSED: bool>(
    a: &[f32],
    b: &[f32],
    c: &mut [f32],
    m: usize,
    k: usize,
    n: usize,
    acc: bool,
) {
    if !acc {
        c[..k * n].fill(0.0);
    }
    for row in 0..m {
        let arow = &a[row * k..(row + 1) * k];
        let brow = &b[row * n..(row + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let crow = &mut c[kk * n..(kk + 1) * n];
            let mut col = 0;
            while col + GEMM_LANES <= n {
                for l in 0..GEMM_LANES {
                    crow[col + l] = fmaf::<FUSED>(av, brow[col + l], crow[col + l]);
                }
                col += GEMM_LANES;
            }
            while col < n {
                crow[col] = fmaf::<FUSED>(av, brow[col], crow[col]);
                col += 1;
            }
        }
    }
}

multiversion!(fn mm_tn [mm_tn_v2, mm_tn_v512] / mm_tn_impl(
    a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize, acc: bool
));

// ---------------------------------------------------------------------------
// General (reference) convolution for arbitrary odd kernels. Used by the
// standalone graph op; correctness over speed.
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn conv2d_ref_fwd(
    x: &[f32],
    w: &[f32],
    bias: &[f32],
    out: &mut [f32],
    (ci, h, wd): (usize, usize, usize),
    (co, kh, kw): (usize, usize, usize),
    pad: usize,
) {
    let oh = h + 2 * pad + 1 - kh;
    let ow = wd + 2 * pad + 1 - kw;
    for o in 0..co {
        for y in 0..oh {
            for x_ in 0..ow {
                let mut acc = bias[o];
                for i in 0..ci {
                    for r in 0..kh {
                        let sy = y + r;
                        if sy < pad || sy >= h + pad {
                            continue;
                        }
                        for cc in 0..kw {
                            let sx = x_ + cc;
                            if sx < pad || sx >= wd + pad {
                                continue;
                            }
                            acc += w[((o * ci + i) * kh + r) * kw + cc]
                                * x[(i * h + (sy - pad)) * wd + (sx - pad)];
                        }
                    }
                }
                out[(o * oh + y) * ow + x_] = acc;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_ref_bwd(
    x: &[f32],
    w: &[f32],
    gout: &[f32],
    gx: Option<&mut [f32]>,
    gw: &mut [f32],
    gb: &mut [f32],
    (ci, h, wd): (usize, usize, usize),
    (co, kh, kw): (usize, usize, usize),
    pad: usize,
) {
    let oh = h + 2 * pad + 1 - kh;
    let ow = wd + 2 * pad + 1 - kw;
    let mut gx_buf = gx;
    for o in 0..co {
        for y in 0..oh {
            for x_ in 0..ow {
                let g = gout[(o * oh + y) * ow + x_];
                gb[o] += g;
                for i in 0..ci {
                    for r in 0..kh {
                        let sy = y + r;
                        if sy < pad || sy >= h + pad {
                            continue;
                        }
                        for cc in 0..kw {
                            let sx = x_ + cc;
                            if sx < pad || sx >= wd + pad {
                                continue;
                            }
                            let xi = (i * h + (sy - pad)) * wd + (sx - pad);
                            gw[((o * ci + i) * kh + r) * kw + cc] += g * x[xi];
                            if let Some(gxb) = gx_buf.as_deref_mut() {
                                gxb[xi] += g * w[((o * ci + i) * kh + r) * kw + cc];
                            }
                        }
                    }
                }
            }
        }
    }
}
