//! Reference base architectures.

use crate::nn::{ConvSpec, LayerSpec, Shortcut};

fn conv_bn_relu(out: &mut Vec<LayerSpec>, c: ConvSpec) {
    out.push(LayerSpec::Conv(c));
    out.push(LayerSpec::batch_norm(c.out_channels));
    out.push(LayerSpec::ReLU);
}

fn basic_block(out: &mut Vec<LayerSpec>, cin: usize, cout: usize, stride: usize) {
    out.push(LayerSpec::ResidualStart);
    // Only the second conv and the projection are split into subgroups.
    conv_bn_relu(
        out,
        ConvSpec {
            subgroups: false,
            ..ConvSpec::new(cin, cout, 3, stride, 1)
        },
    );
    out.push(LayerSpec::conv(cout, cout, 3, 1, 1));
    out.push(LayerSpec::batch_norm(cout));
    let shortcut = (stride != 1 || cin != cout).then_some(Shortcut {
        in_channels: cin,
        out_channels: cout,
        stride,
        groups: 1,
        subgroups: true,
    });
    out.push(LayerSpec::ResidualEnd { shortcut });
    out.push(LayerSpec::ReLU);
}

/// ResNet-18 for 32×32 inputs: 3×3 stem without max-pool, four stages of two basic blocks.
pub fn resnet18_spec(num_classes: usize) -> Vec<LayerSpec> {
    resnet_spec(3, 64, &[2, 2, 2, 2], num_classes)
}

/// Basic-block ResNet with `blocks[i]` blocks in stage `i`; stage widths double from `width`.
pub fn resnet_spec(in_channels: usize, width: usize, blocks: &[usize], num_classes: usize) -> Vec<LayerSpec> {
    let mut out = Vec::new();
    conv_bn_relu(&mut out, ConvSpec::new(in_channels, width, 3, 1, 1));
    let mut cin = width;
    for (stage, &n) in blocks.iter().enumerate() {
        let cout = width << stage;
        for b in 0..n {
            let stride = if stage > 0 && b == 0 { 2 } else { 1 };
            basic_block(&mut out, cin, cout, stride);
            cin = cout;
        }
    }
    out.push(LayerSpec::GlobalAvgPool);
    out.push(LayerSpec::Flatten);
    out.push(LayerSpec::linear(cin, num_classes));
    out
}

/// Two conv-bn-relu-pool stages and a linear classifier, for small `size × size` images.
pub fn small_cnn_spec(in_channels: usize, width: usize, size: usize, num_classes: usize) -> Vec<LayerSpec> {
    let mut out = Vec::new();
    conv_bn_relu(&mut out, ConvSpec::new(in_channels, width, 3, 1, 1));
    out.push(LayerSpec::MaxPool { kernel: 2, stride: 2 });
    conv_bn_relu(&mut out, ConvSpec::new(width, 2 * width, 3, 1, 1));
    out.push(LayerSpec::MaxPool { kernel: 2, stride: 2 });
    let s = size / 4;
    out.push(LayerSpec::Flatten);
    out.push(LayerSpec::linear(2 * width * s * s, num_classes));
    out
}

/// Fully connected ReLU network: `widths = [input, hidden..., output]`.
pub fn mlp_spec(widths: &[usize]) -> Vec<LayerSpec> {
    let mut out = Vec::new();
    for (i, w) in widths.windows(2).enumerate() {
        if i > 0 {
            out.push(LayerSpec::ReLU);
        }
        out.push(LayerSpec::linear(w[0], w[1]));
    }
    out
}
