//! Parameter and FLOP accounting.
//!
//! FLOP convention: a multiply-accumulate is 2 FLOPs. Convolutions cost
//! `2 * H' * W' * kh * kw * in * out` (depthwise: `in` is 1 per group) plus
//! one FLOP per output element for the bias add. Batch norm, ReLU, hub
//! additions, pooling and softmax cost one FLOP per output element. The dense
//! head costs `2 * D * K + K`.

use super::config::LayerKind;
use super::network::{Network, TensorRole};
use crate::ops::{ConvParams, Geometry};

/// Number of trainable scalars: weights, biases, batch-norm scale and shift.
/// Running statistics are excluded.
pub fn count_params(net: &Network) -> usize {
    net.named_tensors()
        .into_iter()
        .filter(|(_, _, role)| *role == TensorRole::Trainable)
        .map(|(_, t, _)| t.len())
        .sum()
}

/// Kernel plus bias scalars of one convolution.
pub fn conv_param_count(params: &ConvParams) -> usize {
    params.kernel.len() + params.bias.len()
}

/// FLOPs of one convolution (with bias) on an `h x w` input, and its output
/// extents.
pub fn conv_flops(params: &ConvParams, h: usize, w: usize, depthwise: bool) -> (u64, usize, usize) {
    let (kh, kw) = params.kernel_hw();
    let g = Geometry::new(h, w, kh, kw, params.stride, params.padding)
        .expect("validated ConvParams");
    let out_c = params.out_channels() as u64;
    let in_per_group = if depthwise { 1 } else { params.in_channels() as u64 };
    let out_elems = (g.out_h * g.out_w) as u64 * out_c;
    let macs = out_elems * (kh * kw) as u64 * in_per_group;
    (2 * macs + out_elems, g.out_h, g.out_w)
}

/// FLOPs of one image's forward pass at `input_size x input_size`.
pub fn count_flops(net: &Network, input_size: usize) -> u64 {
    let mut total = 0u64;
    let unit = |u: &super::network::ConvBnUnit, h: usize, total: &mut u64| -> usize {
        let (f, oh, ow) = conv_flops(&u.conv, h, h, u.depthwise);
        // batch norm + relu
        *total += f + 2 * (oh * ow * u.conv.out_channels()) as u64;
        oh
    };
    let mut size = unit(&net.stem, input_size, &mut total);
    let mut hub_sizes = std::collections::HashMap::new();
    let mut blocks = net.blocks.iter();
    let mut hubs = net.hubs.iter();
    for layer in &net.layers[1..] {
        for hub in &net.hubs {
            for p in hub.projections.iter().filter(|p| p.target == layer.id) {
                let hs = hub_sizes[&hub.layer];
                let (f, oh, ow) = conv_flops(&p.conv, hs, hs, false);
                total += f + (oh * ow * p.conv.out_channels()) as u64;
            }
        }
        match layer.kind {
            LayerKind::DwSepBlock => {
                let b = blocks.next().expect("unit per block");
                size = unit(&b.expand, size, &mut total);
                size = unit(&b.spatial, size, &mut total);
                size = unit(&b.project, size, &mut total);
            }
            LayerKind::Hub => {
                let h = hubs.next().expect("unit per hub");
                hub_sizes.insert(h.layer, unit(&h.conv, size, &mut total));
            }
            LayerKind::Head => {
                let (k, d) = (layer.channels_out as u64, layer.channels_in as u64);
                total += d; // pooling
                total += 2 * d * k + k;
                total += k; // softmax
            }
            LayerKind::StemConv => unreachable!(),
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{dense, Padding};
    use crate::tensor::Tensor;

    #[test]
    fn single_layer_counts() {
        // dense 10 -> 3 with bias
        let w = Tensor::zeros(&[3, 10]);
        let b = Tensor::zeros(&[3]);
        assert!(dense(&Tensor::zeros(&[1, 10]), &w, &b).is_ok());
        assert_eq!(w.len() + b.len(), 33);

        let conv = ConvParams::zeros([8, 1, 3, 3], 1, Padding::Same).unwrap();
        assert_eq!(conv_param_count(&conv), 80);
        let dw = ConvParams::zeros([16, 1, 3, 3], 1, Padding::Same).unwrap();
        assert_eq!(conv_param_count(&dw), 160);
    }

    #[test]
    fn pointwise_flop_definition() {
        let conv = ConvParams::zeros([1, 1, 1, 1], 1, Padding::Same).unwrap();
        let (f, h, w) = conv_flops(&conv, 1, 1, false);
        assert_eq!((f, h, w), (3, 1, 1));
    }
}
