//! Bilinear resampling with half-pixel centers (`align_corners = false`).

/// Source taps for one output coordinate: `(i0, i1, w0, w1)`.
pub(crate) type Tap = (usize, usize, f64, f64);

pub(crate) fn bilinear_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, 1.0 - frac, frac)
        })
        .collect()
}

/// Upsamples (or downsamples) a channel-last `(h, w, d)` field to `(out_h, out_w, d)`.
pub(crate) fn resize_channels_last(
    values: &[f64],
    (h, w): (usize, usize),
    channels: usize,
    (out_h, out_w): (usize, usize),
) -> Vec<f64> {
    let ty = bilinear_taps(h, out_h);
    let tx = bilinear_taps(w, out_w);
    let mut out = vec![0.0; out_h * out_w * channels];
    for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
        for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
            let dst = &mut out[(oy * out_w + ox) * channels..][..channels];
            for (src, wgt) in [
                ((y0, x0), wy0 * wx0),
                ((y0, x1), wy0 * wx1),
                ((y1, x0), wy1 * wx0),
                ((y1, x1), wy1 * wx1),
            ] {
                if wgt == 0.0 {
                    continue;
                }
                let s = &values[(src.0 * w + src.1) * channels..][..channels];
                for (d, v) in dst.iter_mut().zip(s) {
                    *d += wgt * v;
                }
            }
        }
    }
    out
}
