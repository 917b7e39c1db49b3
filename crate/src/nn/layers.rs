//! Forward and backward passes, generic over the numeric backend.
//!
//! Convolution is lowered to im2col plus one matmul so the fixed-point
//! path keeps its accumulate-then-truncate-once discipline everywhere.

use super::numeric::Numeric;
use super::{Architecture, LayerSpec};

/// Per-layer state the backward pass needs: the input activation of every
/// layer, relu masks, and pooling argmax positions.
pub(crate) struct Tape<E> {
    acts: Vec<Vec<E>>,
    aux: Vec<Aux>,
}

enum Aux {
    None,
    Relu(Vec<bool>),
    Pool(Vec<u32>),
}

pub(crate) fn forward<N: Numeric>(
    n: &N,
    arch: &Architecture,
    shapes: &[(usize, usize, usize)],
    layout: &[(usize, usize, usize)],
    params: &[N::E],
    input: &[N::E],
    batch: usize,
    keep: bool,
) -> (Vec<N::E>, Option<Tape<N::E>>) {
    debug_assert_eq!(input.len(), batch * arch.input_len());
    let mut cur = input.to_vec();
    let mut shape = arch.input;
    let mut acts = Vec::new();
    let mut aux = Vec::new();
    for (li, layer) in arch.layers.iter().enumerate() {
        let (next, a) = apply::<N>(n, *layer, &layout[li], params, &cur, batch, shape);
        if keep {
            acts.push(std::mem::replace(&mut cur, next));
            aux.push(a);
        } else {
            cur = next;
        }
        shape = shapes[li];
    }
    let tape = keep.then_some(Tape { acts, aux });
    (cur, tape)
}

fn apply<N: Numeric>(
    n: &N,
    layer: LayerSpec,
    slot: &(usize, usize, usize),
    params: &[N::E],
    x: &[N::E],
    batch: usize,
    shape: (usize, usize, usize),
) -> (Vec<N::E>, Aux) {
    match layer {
        LayerSpec::Dense { input, output } => {
            let (off, wlen, blen) = *slot;
            let w = &params[off..off + wlen];
            let bias = &params[off + wlen..off + wlen + blen];
            let mut out = vec![n.zero(); batch * output];
            // out = x (B x I) * w^T; w is output-major (O x I).
            n.matmul(batch, input, output, x, input, 1, w, 1, input, &mut out);
            for b in 0..batch {
                for (o, &bv) in bias.iter().enumerate() {
                    let idx = b * output + o;
                    out[idx] = n.add(out[idx], bv);
                }
            }
            (out, Aux::None)
        }
        LayerSpec::Conv2d { in_ch, out_ch, kernel, stride } => {
            let (off, wlen, blen) = *slot;
            let w = &params[off..off + wlen];
            let bias = &params[off + wlen..off + wlen + blen];
            let (oh, ow) = conv_out(shape, kernel, stride);
            let k2c = in_ch * kernel * kernel;
            let rows = batch * oh * ow;
            let col = im2col(n, x, batch, shape, kernel, stride, oh, ow);
            let mut out_t = vec![n.zero(); rows * out_ch];
            n.matmul(rows, k2c, out_ch, &col, k2c, 1, w, 1, k2c, &mut out_t);
            // Permute (B,OH,OW,OC) -> (B,OC,OH,OW) and add bias.
            let mut out = vec![n.zero(); rows * out_ch];
            for b in 0..batch {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let r = ((b * oh + oy) * ow + ox) * out_ch;
                        for oc in 0..out_ch {
                            out[((b * out_ch + oc) * oh + oy) * ow + ox] =
                                n.add(out_t[r + oc], bias[oc]);
                        }
                    }
                }
            }
            (out, Aux::None)
        }
        LayerSpec::MaxPool { size } => {
            let (c, h, w) = shape;
            let (oh, ow) = (h / size, w / size);
            let mut out = vec![n.zero(); batch * c * oh * ow];
            let mut idx = vec![0u32; out.len()];
            for b in 0..batch {
                for ch in 0..c {
                    let plane = (b * c + ch) * h * w;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = plane + (oy * size) * w + ox * size;
                            for ky in 0..size {
                                for kx in 0..size {
                                    if ky == 0 && kx == 0 {
                                        continue;
                                    }
                                    let cand = plane + (oy * size + ky) * w + ox * size + kx;
                                    if n.gt(x[cand], x[best]) {
                                        best = cand;
                                    }
                                }
                            }
                            let o = ((b * c + ch) * oh + oy) * ow + ox;
                            out[o] = x[best];
                            idx[o] = best as u32;
                        }
                    }
                }
            }
            (out, Aux::Pool(idx))
        }
        LayerSpec::Relu => {
            let zero = n.zero();
            let mut mask = vec![false; x.len()];
            let mut out = vec![zero; x.len()];
            for (i, &v) in x.iter().enumerate() {
                if n.gt(v, zero) {
                    mask[i] = true;
                    out[i] = v;
                }
            }
            (out, Aux::Relu(mask))
        }
        LayerSpec::Flatten => (x.to_vec(), Aux::None),
    }
}

/// Walks the tape backwards from `dlogits`, returning the flat parameter
/// gradient. Consumes the tape.
pub(crate) fn backward<N: Numeric>(
    n: &N,
    arch: &Architecture,
    shapes: &[(usize, usize, usize)],
    layout: &[(usize, usize, usize)],
    params: &[N::E],
    tape: Tape<N::E>,
    dlogits: Vec<N::E>,
    batch: usize,
) -> Vec<N::E> {
    let mut grads = vec![n.zero(); arch.param_count()];
    let mut dy = dlogits;
    let one = n.enc(1.0);
    let zero = n.zero();
    for li in (0..arch.layers.len()).rev() {
        let x = &tape.acts[li];
        let in_shape = if li == 0 { arch.input } else { shapes[li - 1] };
        dy = match arch.layers[li] {
            LayerSpec::Dense { input, output } => {
                let (off, wlen, blen) = layout[li];
                let w = &params[off..off + wlen];
                // dW = dy^T (O x B) * x (B x I)
                let dw = &mut grads[off..off + wlen];
                n.matmul(output, batch, input, &dy, 1, output, x, input, 1, dw);
                let db = &mut grads[off + wlen..off + wlen + blen];
                for b in 0..batch {
                    for (o, d) in db.iter_mut().enumerate() {
                        *d = n.add(*d, dy[b * output + o]);
                    }
                }
                if li == 0 {
                    Vec::new()
                } else {
                    // dx = dy (B x O) * w (O x I)
                    let mut dx = vec![zero; batch * input];
                    n.matmul(batch, output, input, &dy, output, 1, w, input, 1, &mut dx);
                    dx
                }
            }
            LayerSpec::Conv2d { in_ch, out_ch, kernel, stride } => {
                let (off, wlen, blen) = layout[li];
                let w = &params[off..off + wlen];
                let (oh, ow) = conv_out(in_shape, kernel, stride);
                let k2c = in_ch * kernel * kernel;
                let rows = batch * oh * ow;
                // Rebuild the column matrix rather than taping it.
                let col = im2col(n, x, batch, in_shape, kernel, stride, oh, ow);
                // Permute dy (B,OC,OH,OW) -> (R x OC).
                let mut dyt = vec![zero; rows * out_ch];
                for b in 0..batch {
                    for oc in 0..out_ch {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                dyt[((b * oh + oy) * ow + ox) * out_ch + oc] =
                                    dy[((b * out_ch + oc) * oh + oy) * ow + ox];
                            }
                        }
                    }
                }
                let dw = &mut grads[off..off + wlen];
                n.matmul(out_ch, rows, k2c, &dyt, 1, out_ch, &col, k2c, 1, dw);
                let db = &mut grads[off + wlen..off + wlen + blen];
                for r in 0..rows {
                    for (oc, d) in db.iter_mut().enumerate() {
                        *d = n.add(*d, dyt[r * out_ch + oc]);
                    }
                }
                if li == 0 {
                    Vec::new()
                } else {
                    let mut dcol = vec![zero; rows * k2c];
                    n.matmul(rows, out_ch, k2c, &dyt, out_ch, 1, w, k2c, 1, &mut dcol);
                    col2im(n, &dcol, batch, in_shape, kernel, stride, oh, ow)
                }
            }
            LayerSpec::MaxPool { .. } => {
                let idx = match &tape.aux[li] {
                    Aux::Pool(idx) => idx,
                    _ => unreachable!("pool layer without pool tape"),
                };
                let mut dx = vec![zero; x.len()];
                for (o, &src) in idx.iter().enumerate() {
                    let s = src as usize;
                    dx[s] = n.add(dx[s], dy[o]);
                }
                dx
            }
            LayerSpec::Relu => {
                let mask = match &tape.aux[li] {
                    Aux::Relu(m) => m,
                    _ => unreachable!("relu layer without mask"),
                };
                dy.iter()
                    .zip(mask)
                    .map(|(&d, &m)| n.mul(d, if m { one } else { zero }))
                    .collect()
            }
            LayerSpec::Flatten => dy,
        };
    }
    grads
}

fn conv_out(shape: (usize, usize, usize), kernel: usize, stride: usize) -> (usize, usize) {
    ((shape.1 - kernel) / stride + 1, (shape.2 - kernel) / stride + 1)
}

fn im2col<N: Numeric>(
    n: &N,
    x: &[N::E],
    batch: usize,
    shape: (usize, usize, usize),
    kernel: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Vec<N::E> {
    let (c, h, w) = shape;
    let k2c = c * kernel * kernel;
    let mut col = vec![n.zero(); batch * oh * ow * k2c];
    for b in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * k2c;
                for ic in 0..c {
                    for ky in 0..kernel {
                        let iy = oy * stride + ky;
                        let src = ((b * c + ic) * h + iy) * w + ox * stride;
                        let dst = row + (ic * kernel + ky) * kernel;
                        col[dst..dst + kernel].copy_from_slice(&x[src..src + kernel]);
                    }
                }
            }
        }
    }
    col
}

fn col2im<N: Numeric>(
    n: &N,
    dcol: &[N::E],
    batch: usize,
    shape: (usize, usize, usize),
    kernel: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Vec<N::E> {
    let (c, h, w) = shape;
    let k2c = c * kernel * kernel;
    let mut dx = vec![n.zero(); batch * c * h * w];
    for b in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * k2c;
                for ic in 0..c {
                    for ky in 0..kernel {
                        let iy = oy * stride + ky;
                        for kx in 0..kernel {
                            let ix = ox * stride + kx;
                            let dst = ((b * c + ic) * h + iy) * w + ix;
                            dx[dst] = n.add(dx[dst], dcol[row + (ic * kernel + ky) * kernel + kx]);
                        }
                    }
                }
            }
        }
    }
    dx
}
