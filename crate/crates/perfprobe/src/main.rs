use rayon::prelude::*;
use std::time::Instant;

const LANES: usize = 64;

#[inline(always)]
fn conv_block_b_inner(inp: &[f32], out: &mut [f32], w: &[f32], bias: f32, h: usize, rs: usize, ic: usize, oc: usize) {
    let flat = h * rs;
    let plane = (h + 3) * rs;
    for o in 0..oc {
        let ob = o * plane + rs + 1;
        let wrow = &w[o * ic * 9..(o + 1) * ic * 9];
        let mut r = 0;
        while r + LANES <= flat {
            let mut acc = [bias; LANES];
            for i in 0..ic {
                let ib = i * plane + r;
                for kh in 0..3 {
                    let base = ib + kh * rs;
                    let s0 = &inp[base..base + LANES + 2];
                    let w0 = wrow[(i * 3 + kh) * 3];
                    let w1 = wrow[(i * 3 + kh) * 3 + 1];
                    let w2 = wrow[(i * 3 + kh) * 3 + 2];
                    for l in 0..LANES {
                        acc[l] = w0.mul_add(s0[l], acc[l]);
                    }
                    for l in 0..LANES {
                        acc[l] = w1.mul_add(s0[l + 1], acc[l]);
                    }
                    for l in 0..LANES {
                        acc[l] = w2.mul_add(s0[l + 2], acc[l]);
                    }
                }
            }
            out[ob + r..ob + r + LANES].copy_from_slice(&acc);
            r += LANES;
        }
        while r < flat {
            let mut a = bias;
            for i in 0..ic {
                let ib = i * plane + r;
                for kh in 0..3 {
                    for kw in 0..3 {
                        a += wrow[(i * 3 + kh) * 3 + kw] * inp[ib + kh * rs + kw];
                    }
                }
            }
            out[ob + r] = a;
            r += 1;
        }
    }
}

fn conv_block_b(inp: &[f32], out: &mut [f32], w: &[f32], bias: f32, h: usize, rs: usize, ic: usize, oc: usize) {
    conv_block_b_inner(inp, out, w, bias, h, rs, ic, oc)
}

#[target_feature(enable = "avx512f,avx2,fma")]
unsafe fn conv_block_b_fma(inp: &[f32], out: &mut [f32], w: &[f32], bias: f32, h: usize, rs: usize, ic: usize, oc: usize) {
    conv_block_b_inner(inp, out, w, bias, h, rs, ic, oc)
}

fn main() {
    let n_items = 1920usize;
    let (h, wd, ic, oc) = (128usize, 22usize, 8usize, 16usize);
    let rs = wd + 2;
    let isz = (h + 3) * rs * ic;
    let osz = (h + 3) * rs * oc;
    let inputs: Vec<f32> = vec![0.5; isz * 8];
    let w: Vec<f32> = vec![0.01; oc * ic * 9];
    let mut outs: Vec<f32> = vec![0.0; osz * 64];
    let use_fma = is_x86_feature_detected!("avx512f") && is_x86_feature_detected!("fma");
    println!("fma: {use_fma}");
    let t = Instant::now();
    let reps = 5;
    for _ in 0..reps {
        outs.par_chunks_mut(osz).enumerate().for_each(|(i, o)| {
            let inp = &inputs[(i % 8) * isz..(i % 8 + 1) * isz];
            for _ in 0..n_items / 64 {
                if use_fma {
                    unsafe { conv_block_b_fma(inp, o, &w, 0.1, h, rs, ic, oc) }
                } else {
                    conv_block_b(inp, o, &w, 0.1, h, rs, ic, oc);
                }
            }
        });
    }
    let el = t.elapsed().as_secs_f64();
    let macs = (reps * n_items) as f64 * (oc * ic * 9 * h * rs) as f64;
    println!("variant B2: {el:.3}s  -> {:.1} GFLOP/s", 2.0 * macs / el / 1e9);
}
