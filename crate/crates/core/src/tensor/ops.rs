//! Batched composite kernels used by the graph ops.
//!
//! The embedder's conv -> batchnorm -> relu -> maxpool block runs as one
//! fused unit: intermediate activations live in per-item scratch buffers and
//! only what backward needs is materialized. Work is split over a fixed
//! chunk grid so parallel reductions are deterministic regardless of worker
//! count.

use super::kernels as k;
use crate::error::{Error, Result};
use rayon::prelude::*;

const REDUCE_CHUNKS: usize = 32;

/// Split `buf` into per-chunk disjoint mutable slices matching `ranges`
/// (contiguous item ranges, `item` elements each).
fn split_chunks<'a, T>(
    mut buf: &'a mut [T],
    item: usize,
    ranges: &[(usize, usize)],
) -> Vec<&'a mut [T]> {
    let mut out = Vec::with_capacity(ranges.len());
    for &(s, e) in ranges {
        let take = (e - s) * item;
        debug_assert!(take <= buf.len());
        let _ = s;
        let (head, tail) = buf.split_at_mut(take);
        out.push(head);
        buf = tail;
    }
    out
}

pub struct ConvBlockOut {
    /// Pooled block output `[n, co, h/2, w/2]`.
    pub pooled: Vec<f32>,
    /// Saved batchnorm output `[n, co, h, w]`; backward recovers the
    /// normalized activations from it.
    pub y: Vec<f32>,
    /// Argmax of each pool window, flat within the item's `[co, h, w]` plane.
    pub idx: Vec<u32>,
    pub mean: Vec<f32>,
    pub inv_std: Vec<f32>,
}

#[allow(clippy::too_many_arguments)]
pub fn conv_block_fwd(
    x: &[f32],
    (n, ci, h, w): (usize, usize, usize, usize),
    wgt: &[f32],
    co: usize,
    bias: &[f32],
    gamma: &[f32],
    beta: &[f32],
    run_mean: &mut [f32],
    run_var: &mut [f32],
    training: bool,
    eps: f32,
    momentum: f32,
) -> Result<ConvBlockOut> {
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!("conv block needs h,w >= 2, got {h}x{w}")));
    }
    let per_channel = n * h * w;
    if training && per_channel == 1 {
        return Err(Error::DegenerateVariance);
    }
    let rs = k::pad_rs(w);
    let plane = k::pad_plane(h, w);
    let item_in = ci * h * w;
    let item_out = co * h * w;
    let (ph, pw) = (h / 2, w / 2);
    let item_pool = co * ph * pw;
    let ranges = k::chunk_ranges(n, REDUCE_CHUNKS);

    // Pass A: convolution into a transient buffer, plus per-chunk moments.
    let mut conv_out = vec![0.0f32; n * item_out];
    let chunk_stats: Vec<(Vec<f64>, Vec<f64>)> = {
        let conv_chunks = split_chunks(&mut conv_out, item_out, &ranges);
        ranges
            .par_iter()
            .zip(conv_chunks)
            .map(|(&(s, e), dst)| {
                let mut sums = vec![0.0f64; co];
                let mut sqs = vec![0.0f64; co];
                let mut xp = vec![0.0f32; ci * plane];
                let mut op = vec![0.0f32; co * plane];
                for item in s..e {
                    let local = item - s;
                    k::pack_padded(&x[item * item_in..(item + 1) * item_in], &mut xp, ci, h, w);
                    k::conv3_fwd(&xp, &mut op, wgt, bias, ci, co, h, rs);
                    let out = &mut dst[local * item_out..(local + 1) * item_out];
                    k::unpack_padded(&op, out, co, h, w);
                    if training {
                        for c in 0..co {
                            let row = &out[c * h * w..(c + 1) * h * w];
                            let (mut s1, mut s2) = (0.0f64, 0.0f64);
                            for &v in row {
                                s1 += v as f64;
                                s2 += v as f64 * v as f64;
                            }
                            sums[c] += s1;
                            sqs[c] += s2;
                        }
                    }
                }
                (sums, sqs)
            })
            .collect()
    };

    let mut mean = vec![0.0f32; co];
    let mut inv_std = vec![0.0f32; co];
    if training {
        for c in 0..co {
            let (mut s1, mut s2) = (0.0f64, 0.0f64);
            for (sums, sqs) in &chunk_stats {
                s1 += sums[c];
                s2 += sqs[c];
            }
            let m = s1 / per_channel as f64;
            let var = (s2 / per_channel as f64 - m * m).max(0.0);
            mean[c] = m as f32;
            inv_std[c] = (1.0 / (var + eps as f64).sqrt()) as f32;
            let unbiased = if per_channel > 1 {
                var * per_channel as f64 / (per_channel - 1) as f64
            } else {
                var
            };
            run_mean[c] = (1.0 - momentum) * run_mean[c] + momentum * m as f32;
            run_var[c] = (1.0 - momentum) * run_var[c] + momentum * unbiased as f32;
        }
    } else {
        for c in 0..co {
            mean[c] = run_mean[c];
            inv_std[c] = 1.0 / (run_var[c] + eps).sqrt();
        }
    }

    // Pass B: normalize + relu + 2x2 maxpool in one traversal.
    let mut y = vec![0.0f32; n * item_out];
    let mut pooled = vec![0.0f32; n * item_pool];
    let mut idx = vec![0u32; n * item_pool];
    {
        let y_chunks = split_chunks(&mut y, item_out, &ranges);
        let p_chunks = split_chunks(&mut pooled, item_pool, &ranges);
        let i_chunks = split_chunks(&mut idx, item_pool, &ranges);
        ranges
            .par_iter()
            .zip(y_chunks)
            .zip(p_chunks)
            .zip(i_chunks)
            .for_each(|(((&(s, e), yc), pc), ic)| {
                for item in s..e {
                    let local = item - s;
                    let a = &conv_out[item * item_out..(item + 1) * item_out];
                    let yi = &mut yc[local * item_out..(local + 1) * item_out];
                    let pi = &mut pc[local * item_pool..(local + 1) * item_pool];
                    let ii = &mut ic[local * item_pool..(local + 1) * item_pool];
                    for c in 0..co {
                        let scale = gamma[c] * inv_std[c];
                        let shift = beta[c] - mean[c] * scale;
                        let arow = &a[c * h * w..(c + 1) * h * w];
                        let yrow = &mut yi[c * h * w..(c + 1) * h * w];
                        for (yv, &av) in yrow.iter_mut().zip(arow.iter()) {
                            *yv = scale * av + shift;
                        }
                        for py in 0..ph {
                            for px in 0..pw {
                                let base = c * h * w + (2 * py) * w + 2 * px;
                                let cand =
                                    [base, base + 1, base + w, base + w + 1];
                                let mut best = cand[0];
                                let mut bv = yi[cand[0]];
                                for &cd in &cand[1..] {
                                    if yi[cd] > bv {
                                        bv = yi[cd];
                                        best = cd;
                                    }
                                }
                                let o = c * ph * pw + py * pw + px;
                                pi[o] = bv.max(0.0);
                                ii[o] = best as u32;
                            }
                        }
                    }
                }
            });
    }

    Ok(ConvBlockOut { pooled, y, idx, mean, inv_std })
}

pub struct ConvBlockGrads {
    pub gx: Option<Vec<f32>>,
    pub gw: Vec<f32>,
    pub gb: Vec<f32>,
    pub ggamma: Vec<f32>,
    pub gbeta: Vec<f32>,
}

/// Backward pass of the fused block. `gout` is the gradient w.r.t. the
/// pooled output. Gradients flow through the pool argmax positions, the relu
/// mask implied by `y > 0`, the batch statistics (training mode) and finally
/// the convolution.
#[allow(clippy::too_many_arguments)]
pub fn conv_block_bwd(
    x: &[f32],
    (n, ci, h, w): (usize, usize, usize, usize),
    wgt: &[f32],
    co: usize,
    gamma: &[f32],
    beta: &[f32],
    saved: &ConvBlockOut,
    gout: &[f32],
    training: bool,
    need_gx: bool,
) -> ConvBlockGrads {
    let rs = k::pad_rs(w);
    let plane = k::pad_plane(h, w);
    let item_in = ci * h * w;
    let item_out = co * h * w;
    let (ph, pw) = (h / 2, w / 2);
    let item_pool = co * ph * pw;
    let per_channel = (n * h * w) as f64;
    let ranges = k::chunk_ranges(n, REDUCE_CHUNKS);
    let wt = k::flip_transpose_kernel(wgt, ci, co);
    let zeros_ci = vec![0.0f32; ci];

    // Scale/shift used to recover xhat from the saved y: xhat = (y-beta)/gamma.
    let g_inv: Vec<f32> = gamma
        .iter()
        .map(|&g| if g.abs() > 1e-12 { 1.0 / g } else { 0.0 })
        .collect();

    // Reduction pass: per-channel sums of the relu-masked, unpooled gradient
    // and of that gradient times xhat. Only argmax positions contribute.
    let reductions: Vec<(Vec<f64>, Vec<f64>)> = ranges
        .par_iter()
        .map(|&(s, e)| {
            let mut s0 = vec![0.0f64; co];
            let mut s1 = vec![0.0f64; co];
            for item in s..e {
                let yi = &saved.y[item * item_out..(item + 1) * item_out];
                let gi = &gout[item * item_pool..(item + 1) * item_pool];
                let ii = &saved.idx[item * item_pool..(item + 1) * item_pool];
                for c in 0..co {
                    let (mut a0, mut a1) = (0.0f64, 0.0f64);
                    for p in 0..ph * pw {
                        let o = c * ph * pw + p;
                        let at = ii[o] as usize;
                        let yv = yi[at];
                        if yv > 0.0 {
                            let g = gi[o] as f64;
                            let xhat = ((yv - beta[c]) * g_inv[c]) as f64;
                            a0 += g;
                            a1 += g * xhat;
                        }
                    }
                    s0[c] += a0;
                    s1[c] += a1;
                }
            }
            (s0, s1)
        })
        .collect();
    let mut sum_g = vec![0.0f64; co];
    let mut sum_gx = vec![0.0f64; co];
    for (s0, s1) in &reductions {
        for c in 0..co {
            sum_g[c] += s0[c];
            sum_gx[c] += s1[c];
        }
    }

    let mut ggamma = vec![0.0f32; co];
    let mut gbeta = vec![0.0f32; co];
    for c in 0..co {
        ggamma[c] = sum_gx[c] as f32;
        gbeta[c] = sum_g[c] as f32;
    }

    // Dense gradient w.r.t. the convolution output, then conv backward.
    let mut gx = if need_gx { Some(vec![0.0f32; n * item_in]) } else { None };
    let gw_len = wgt.len();
    let (chunk_gw, chunk_gb): (Vec<Vec<f32>>, Vec<Vec<f32>>) = {
        let mut gx_chunks: Vec<Option<&mut [f32]>> = match gx.as_mut() {
            Some(buf) => split_chunks(buf, item_in, &ranges).into_iter().map(Some).collect(),
            None => ranges.iter().map(|_| None).collect(),
        };
        let gx_par: Vec<(usize, Option<&mut [f32]>)> =
            gx_chunks.drain(..).enumerate().collect();
        gx_par
            .into_par_iter()
            .map(|(chunk_i, gx_slot)| {
                let (s, e) = ranges[chunk_i];
                let mut gw = vec![0.0f32; gw_len];
                let mut gb = vec![0.0f32; co];
                let mut ga_pad = vec![0.0f32; co * plane];
                let mut xp = vec![0.0f32; ci * plane];
                let mut gxp = vec![0.0f32; ci * plane];
                let mut gx_slot = gx_slot;
                for item in s..e {
                    let local = item - s;
                    let yi = &saved.y[item * item_out..(item + 1) * item_out];
                    let gi = &gout[item * item_pool..(item + 1) * item_pool];
                    let ii = &saved.idx[item * item_pool..(item + 1) * item_pool];
                    ga_pad.fill(0.0);
                    for c in 0..co {
                        let scale = gamma[c] * saved.inv_std[c];
                        let m0 = (sum_g[c] / per_channel) as f32;
                        let m1 = (sum_gx[c] / per_channel) as f32;
                        // Sparse relu-masked unpooled gradient for this channel.
                        let mut gy = vec![0.0f32; h * w];
                        for p in 0..ph * pw {
                            let o = c * ph * pw + p;
                            let at = ii[o] as usize;
                            if yi[at] > 0.0 {
                                gy[at - c * h * w] += gi[o];
                            }
                        }
                        let yrow = &yi[c * h * w..(c + 1) * h * w];
                        let base = c * plane + rs + 1;
                        if training {
                            let gi_c = g_inv[c];
                            for row in 0..h {
                                for col in 0..w {
                                    let xhat = (yrow[row * w + col] - beta[c]) * gi_c;
                                    let v = gy[row * w + col] - m0 - xhat * m1;
                                    ga_pad[base + row * rs + col] = scale * v;
                                }
                            }
                        } else {
                            for row in 0..h {
                                for col in 0..w {
                                    ga_pad[base + row * rs + col] =
                                        scale * gy[row * w + col];
                                }
                            }
                        }
                    }
                    k::pack_padded(&x[item * item_in..(item + 1) * item_in], &mut xp, ci, h, w);
                    k::conv3_gradw(&xp, &ga_pad, &mut gw, &mut gb, ci, co, h, rs);
                    if let Some(dst) = gx_slot.as_deref_mut() {
                        k::conv3_fwd(&ga_pad, &mut gxp, &wt, &zeros_ci, co, ci, h, rs);
                        k::unpack_padded(
                            &gxp,
                            &mut dst[local * item_in..(local + 1) * item_in],
                            ci,
                            h,
                            w,
                        );
                    }
                }
                (gw, gb)
            })
            .unzip()
    };

    let mut gw = vec![0.0f32; gw_len];
    let mut gb = vec![0.0f32; co];
    for (cw, cb) in chunk_gw.iter().zip(&chunk_gb) {
        for (a, b) in gw.iter_mut().zip(cw) {
            *a += b;
        }
        for (a, b) in gb.iter_mut().zip(cb) {
            *a += b;
        }
    }

    ConvBlockGrads { gx, gw, gb, ggamma, gbeta }
}
