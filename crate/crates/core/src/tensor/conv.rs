//! Standard, grouped and masked 2-D cross-correlation (no bias).
//!
//! All kernels work on `[B, C, H, W]` activations and `[C_out, C_in / groups, s, s]`
//! weights. Output channel `c` of a grouped convolution with `g` groups reads only
//! input channels of group `c / (C_out / g)`. Zero padding is symmetric.
//!
//! The implementation lowers each (sample, group) pair to an im2col matrix and a
//! small dense product. Loop order is fixed so results are reproducible bit for bit.

use super::Tensor;
use crate::error::{config_err, dim_err, Result};

/// Geometry of one convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvShape {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel == 0 || self.stride == 0 {
            return config_err(format!("degenerate convolution {self:?}"));
        }
        if self.groups == 0
            || self.in_channels % self.groups != 0
            || self.out_channels % self.groups != 0
        {
            return config_err(format!(
                "groups={} must divide in_channels={} and out_channels={}",
                self.groups, self.in_channels, self.out_channels
            ));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel,
            self.kernel,
        ]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            conv_output_size(h, self.kernel, self.stride, self.padding)?,
            conv_output_size(w, self.kernel, self.stride, self.padding)?,
        ))
    }
}

/// `floor((n + 2·padding − kernel) / stride) + 1`, rejecting empty outputs.
pub fn conv_output_size(n: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = n + 2 * padding;
    if padded < kernel || stride == 0 {
        return dim_err(format!(
            "kernel {kernel} does not fit spatial size {n} with padding {padding}"
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Plain convolution: every output channel sees every input channel.
pub fn conv2d(input: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    grouped_conv2d(input, weight, 1, stride, padding)
}

fn shape_for(
    input: &Tensor,
    weight: &Tensor,
    groups: usize,
    stride: usize,
    padding: usize,
) -> Result<ConvShape> {
    let (_, c_in, _, _) = input.dims4()?;
    let (c_out, c_in_g, kh, kw) = weight.dims4()?;
    if kh != kw {
        return dim_err(format!("only square kernels are supported, got {kh}x{kw}"));
    }
    if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
        return config_err(format!(
            "groups={groups} must divide input channels {c_in} and output channels {c_out}"
        ));
    }
    if c_in_g * groups != c_in {
        return dim_err(format!(
            "weight axis 1 holds {c_in_g} channels per group but input axis 1 has {c_in} channels for {groups} groups"
        ));
    }
    let shape = ConvShape {
        in_channels: c_in,
        out_channels: c_out,
        kernel: kh,
        stride,
        padding,
        groups,
    };
    shape.validate()?;
    Ok(shape)
}

/// Copies one group's receptive fields into a `[c_in_g·s·s, out_h·out_w]` matrix.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    c_in_g: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
    cols: &mut [f64],
) {
    let p = out_h * out_w;
    for c in 0..c_in_g {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((c * k + ki) * k + kj) * p..][..p];
                for oy in 0..out_h {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    let dst = &mut row[oy * out_w..(oy + 1) * out_w];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - padding as isize;
                        *d = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Scatter-adds an im2col matrix back onto one group's input planes.
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    c_in_g: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
    x: &mut [f64],
) {
    let p = out_h * out_w;
    for c in 0..c_in_g {
        let plane = &mut x[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((c * k + ki) * k + kj) * p..][..p];
                for oy in 0..out_h {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..out_w {
                        let ix = (ox * stride + kj) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Grouped convolution with `groups` independent channel blocks.
pub fn grouped_conv2d(
    input: &Tensor,
    weight: &Tensor,
    groups: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let cs = shape_for(input, weight, groups, stride, padding)?;
    let (b, c_in, h, w) = input.dims4()?;
    let (out_h, out_w) = cs.output_hw(h, w)?;
    let c_out = cs.out_channels;
    let c_in_g = c_in / groups;
    let c_out_g = c_out / groups;
    let k = cs.kernel;
    let kk = c_in_g * k * k;
    let p = out_h * out_w;

    let x = input.data();
    let wt = weight.data();
    let mut out = vec![0.0; b * c_out * p];
    let mut cols = vec![0.0; kk * p];
    for n in 0..b {
        for g in 0..groups {
            let xg = &x[(n * c_in + g * c_in_g) * h * w..][..c_in_g * h * w];
            im2col(xg, c_in_g, h, w, k, stride, padding, out_h, out_w, &mut cols);
            for o in 0..c_out_g {
                let oc = g * c_out_g + o;
                let wrow = &wt[oc * kk..(oc + 1) * kk];
                let dst = &mut out[(n * c_out + oc) * p..][..p];
                for (r, &wv) in wrow.iter().enumerate() {
                    let src = &cols[r * p..(r + 1) * p];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += wv * s;
                    }
                }
            }
        }
    }
    Tensor::new(vec![b, c_out, out_h, out_w], out)
}

/// Gradients of a grouped convolution with respect to its input and weight.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
}

pub fn grouped_conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_output: &Tensor,
    groups: usize,
    stride: usize,
    padding: usize,
) -> Result<ConvGrads> {
    let cs = shape_for(input, weight, groups, stride, padding)?;
    let (b, c_in, h, w) = input.dims4()?;
    let (out_h, out_w) = cs.output_hw(h, w)?;
    let c_out = cs.out_channels;
    if grad_output.shape() != [b, c_out, out_h, out_w] {
        return dim_err(format!(
            "output gradient shape {:?} does not match convolution output [{b}, {c_out}, {out_h}, {out_w}]",
            grad_output.shape()
        ));
    }
    let c_in_g = c_in / groups;
    let c_out_g = c_out / groups;
    let k = cs.kernel;
    let kk = c_in_g * k * k;
    let p = out_h * out_w;

    let x = input.data();
    let wt = weight.data();
    let gy = grad_output.data();
    let mut gx = vec![0.0; input.len()];
    let mut gw = vec![0.0; weight.len()];
    let mut cols = vec![0.0; kk * p];
    let mut gcols = vec![0.0; kk * p];
    for n in 0..b {
        for g in 0..groups {
            let xg = &x[(n * c_in + g * c_in_g) * h * w..][..c_in_g * h * w];
            im2col(xg, c_in_g, h, w, k, stride, padding, out_h, out_w, &mut cols);
            gcols.fill(0.0);
            for o in 0..c_out_g {
                let oc = g * c_out_g + o;
                let gyrow = &gy[(n * c_out + oc) * p..][..p];
                let wrow = &wt[oc * kk..(oc + 1) * kk];
                let gwrow = &mut gw[oc * kk..(oc + 1) * kk];
                for r in 0..kk {
                    let col = &cols[r * p..(r + 1) * p];
                    gwrow[r] += col.iter().zip(gyrow).map(|(a, b)| a * b).sum::<f64>();
                    let wv = wrow[r];
                    let gcol = &mut gcols[r * p..(r + 1) * p];
                    for (d, &s) in gcol.iter_mut().zip(gyrow) {
                        *d += wv * s;
                    }
                }
            }
            let gxg = &mut gx[(n * c_in + g * c_in_g) * h * w..][..c_in_g * h * w];
            col2im(&gcols, c_in_g, h, w, k, stride, padding, out_h, out_w, gxg);
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        weight: Tensor::new(weight.shape().to_vec(), gw)?,
    })
}

fn check_groups(c_in: usize, c_out: usize, groups: usize) -> Result<()> {
    if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
        return config_err(format!(
            "groups={groups} must divide in_channels={c_in} and out_channels={c_out}"
        ));
    }
    Ok(())
}

/// Binary `[c_out, c_in, s, s]` mask that is one exactly where
/// `floor(groups·l / c_in) == floor(groups·k / c_out)` for output `k`, input `l`.
pub fn build_group_mask(c_in: usize, c_out: usize, kernel: usize, groups: usize) -> Result<Tensor> {
    check_groups(c_in, c_out, groups)?;
    if kernel == 0 {
        return config_err("kernel size must be positive");
    }
    let ss = kernel * kernel;
    let mut mask = Tensor::zeros(&[c_out, c_in, kernel, kernel]);
    let data = mask.data_mut();
    for k in 0..c_out {
        let gk = groups * k / c_out;
        for l in 0..c_in {
            if groups * l / c_in == gk {
                data[(k * c_in + l) * ss..(k * c_in + l + 1) * ss].fill(1.0);
            }
        }
    }
    Ok(mask)
}

/// Dense convolution with the weight multiplied elementwise by `mask`.
pub fn masked_conv2d(
    input: &Tensor,
    dense_weight: &Tensor,
    mask: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    if dense_weight.shape() != mask.shape() {
        return dim_err(format!(
            "weight shape {:?} and mask shape {:?} differ",
            dense_weight.shape(),
            mask.shape()
        ));
    }
    conv2d(input, &dense_weight.hadamard(mask)?, stride, padding)
}

/// Places a grouped weight `[c_out, c_in/g, s, s]` on the block diagonal of a
/// dense `[c_out, c_in, s, s]` weight, zero elsewhere.
pub fn pack_grouped_weight(grouped: &Tensor, c_in: usize, groups: usize) -> Result<Tensor> {
    let (c_out, c_in_g, k, _) = grouped.dims4()?;
    check_groups(c_in, c_out, groups)?;
    if c_in_g * groups != c_in {
        return dim_err(format!(
            "grouped weight holds {c_in_g} inputs per group, expected {}",
            c_in / groups
        ));
    }
    let ss = k * k;
    let c_out_g = c_out / groups;
    let mut dense = Tensor::zeros(&[c_out, c_in, k, k]);
    let d = dense.data_mut();
    let src = grouped.data();
    for o in 0..c_out {
        let g = o / c_out_g;
        let dst = (o * c_in + g * c_in_g) * ss;
        d[dst..dst + c_in_g * ss].copy_from_slice(&src[o * c_in_g * ss..(o + 1) * c_in_g * ss]);
    }
    Ok(dense)
}

/// Inverse of [`pack_grouped_weight`]: reads the block-diagonal entries of a dense weight.
pub fn unpack_grouped_weight(dense: &Tensor, groups: usize) -> Result<Tensor> {
    let (c_out, c_in, k, _) = dense.dims4()?;
    check_groups(c_in, c_out, groups)?;
    let ss = k * k;
    let c_in_g = c_in / groups;
    let c_out_g = c_out / groups;
    let src = dense.data();
    let mut data = Vec::with_capacity(c_out * c_in_g * ss);
    for o in 0..c_out {
        let g = o / c_out_g;
        let off = (o * c_in + g * c_in_g) * ss;
        data.extend_from_slice(&src[off..off + c_in_g * ss]);
    }
    Tensor::new(vec![c_out, c_in_g, k, k], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop cross-correlation, independent of the im2col path.
    fn loop_conv(x: &Tensor, w: &Tensor, groups: usize, stride: usize, pad: usize) -> Tensor {
        let (b, _, h, wd) = x.dims4().unwrap();
        let (c_out, c_in_g, k, _) = w.dims4().unwrap();
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let c_out_g = c_out / groups;
        let mut out = Tensor::zeros(&[b, c_out, oh, ow]);
        for n in 0..b {
            for o in 0..c_out {
                let g = o / c_out_g;
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = 0.0;
                        for l in 0..c_in_g {
                            for i in 0..k {
                                for j in 0..k {
                                    let iy = (y * stride + i) as isize - pad as isize;
                                    let ix = (xx * stride + j) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += w.get(&[o, l, i, j])
                                        * x.get(&[n, g * c_in_g + l, iy as usize, ix as usize]);
                                }
                            }
                        }
                        out.set(&[n, o, y, xx], acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn scalar_kernel_scales_input() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        let y = conv2d(&x, &w, 1, 0).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::zeros(&[2, 3, 5, 5]);
        let w = Tensor::randn(&[4, 3, 3, 3], 1.0, &mut rng);
        let y = conv2d(&x, &w, 1, 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn valid_conv_is_a_dot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::randn(&[1, 2, 3, 3], 1.0, &mut rng);
        let w = Tensor::randn(&[1, 2, 3, 3], 1.0, &mut rng);
        let y = conv2d(&x, &w, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        let dot: f64 = x.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        assert!((y.data()[0] - dot).abs() < 1e-12);
        assert!(y.max_abs_diff(&loop_conv(&x, &w, 1, 1, 0)) < 1e-12);
    }

    #[test]
    fn matches_loop_oracle_with_stride_and_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(groups, stride, pad) in &[(1, 1, 1), (2, 2, 1), (3, 1, 0), (1, 2, 2)] {
            let x = Tensor::randn(&[2, 6, 7, 6], 1.0, &mut rng);
            let w = Tensor::randn(&[6, 6 / groups, 3, 3], 1.0, &mut rng);
            let y = grouped_conv2d(&x, &w, groups, stride, pad).unwrap();
            assert!(y.max_abs_diff(&loop_conv(&x, &w, groups, stride, pad)) < 1e-12);
        }
    }

    #[test]
    fn two_groups_act_independently_per_pixel() {
        let x = Tensor::new(vec![1, 2, 1, 1], vec![3.0, 5.0]).unwrap();
        let w = Tensor::new(vec![2, 1, 1, 1], vec![2.0, -1.0]).unwrap();
        let y = grouped_conv2d(&x, &w, 2, 1, 0).unwrap();
        assert_eq!(y.data(), &[6.0, -5.0]);
    }

    #[test]
    fn single_group_matches_conv2d_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let x = Tensor::randn(&[2, 3, 5, 4], 1.0, &mut rng);
            let w = Tensor::randn(&[4, 3, 3, 3], 1.0, &mut rng);
            let a = grouped_conv2d(&x, &w, 1, 1, 1).unwrap();
            let b = conv2d(&x, &w, 1, 1).unwrap();
            assert_eq!(a.max_abs_diff(&b), 0.0);
        }
    }

    #[test]
    fn two_groups_equal_split_and_concat() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::randn(&[2, 4, 6, 6], 1.0, &mut rng);
        let w = Tensor::randn(&[4, 2, 3, 3], 1.0, &mut rng);
        let y = grouped_conv2d(&x, &w, 2, 1, 1).unwrap();
        let halves: Vec<Tensor> = (0..2)
            .map(|g| {
                let xi = x.slice_axis1(2 * g, 2 * g + 2).unwrap();
                let wi = w.slice_axis0(2 * g, 2 * g + 2).unwrap();
                conv2d(&xi, &wi, 1, 1).unwrap()
            })
            .collect();
        let expected = Tensor::concat_axis1(&halves).unwrap();
        assert!(y.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn non_divisible_groups_are_rejected() {
        let x = Tensor::zeros(&[1, 3, 4, 4]);
        let w = Tensor::zeros(&[4, 1, 3, 3]);
        assert!(matches!(
            grouped_conv2d(&x, &w, 3, 1, 1),
            Err(crate::Error::Config(_))
        ));
        assert!(matches!(build_group_mask(3, 4, 3, 2), Err(crate::Error::Config(_))));
    }

    #[test]
    fn mismatched_channels_name_the_axes() {
        let x = Tensor::zeros(&[1, 3, 4, 4]);
        let w = Tensor::zeros(&[2, 2, 3, 3]);
        let err = conv2d(&x, &w, 1, 1).unwrap_err();
        assert!(err.to_string().contains("axis 1"), "{err}");
    }

    #[test]
    fn mask_is_block_diagonal() {
        let m = build_group_mask(4, 4, 1, 2).unwrap();
        let expected = [
            1., 1., 0., 0., //
            1., 1., 0., 0., //
            0., 0., 1., 1., //
            0., 0., 1., 1.,
        ];
        assert_eq!(m.data(), &expected);
        assert!(build_group_mask(5, 3, 3, 1).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mask_ones_count_matches_enumeration() {
        let (c_in, c_out, s, g) = (8, 4, 3, 4);
        let m = build_group_mask(c_in, c_out, s, g).unwrap();
        let mut brute = 0;
        for k in 0..c_out {
            for l in 0..c_in {
                if (g * l) / c_in == (g * k) / c_out {
                    brute += 1;
                }
            }
        }
        assert_eq!(brute, c_out * c_in / g);
        for i in 0..s {
            for j in 0..s {
                let ones = (0..c_out)
                    .flat_map(|k| (0..c_in).map(move |l| (k, l)))
                    .filter(|&(k, l)| m.get(&[k, l, i, j]) == 1.0)
                    .count();
                assert_eq!(ones, 8);
            }
        }
    }

    #[test]
    fn masked_conv_edge_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::randn(&[1, 3, 4, 4], 1.0, &mut rng);
        let w = Tensor::randn(&[2, 3, 3, 3], 1.0, &mut rng);
        let full = masked_conv2d(&x, &w, &Tensor::ones(w.shape()), 1, 1).unwrap();
        assert_eq!(full, conv2d(&x, &w, 1, 1).unwrap());
        let none = masked_conv2d(&x, &w, &Tensor::zeros(w.shape()), 1, 1).unwrap();
        assert!(none.data().iter().all(|&v| v == 0.0));
        assert!(masked_conv2d(&x, &w, &Tensor::ones(&[2, 3, 1, 1]), 1, 1).is_err());
    }

    #[test]
    fn masked_matches_grouped_after_block_extraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::randn(&[2, 4, 5, 5], 1.0, &mut rng);
        let dense = Tensor::randn(&[4, 4, 3, 3], 1.0, &mut rng);
        let mask = build_group_mask(4, 4, 3, 2).unwrap();
        let masked = masked_conv2d(&x, &dense, &mask, 1, 1).unwrap();
        let blocks = unpack_grouped_weight(&dense, 2).unwrap();
        let grouped = grouped_conv2d(&x, &blocks, 2, 1, 1).unwrap();
        assert!(masked.max_abs_diff(&grouped) <= 1e-12);
    }

    #[test]
    fn pack_then_unpack_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = Tensor::randn(&[6, 2, 3, 3], 1.0, &mut rng);
        let dense = pack_grouped_weight(&g, 6, 3).unwrap();
        let mask = build_group_mask(6, 6, 3, 3).unwrap();
        assert_eq!(dense.hadamard(&mask).unwrap(), dense);
        assert_eq!(unpack_grouped_weight(&dense, 3).unwrap(), g);
    }

    #[test]
    fn output_size_formula() {
        assert_eq!(conv_output_size(32, 3, 1, 1).unwrap(), 32);
        assert_eq!(conv_output_size(32, 3, 2, 1).unwrap(), 16);
        assert_eq!(conv_output_size(7, 3, 2, 0).unwrap(), 3);
        assert!(conv_output_size(2, 5, 1, 1).is_err());
    }
}
