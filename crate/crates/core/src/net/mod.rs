//! The network family: configuration, construction, forward passes and
//! budget audits.

mod budget;
mod config;
mod ledger;
mod network;

pub use budget::{conv_flops, conv_param_count, count_flops, count_params};
pub use config::{
    check_structure, layer_specs, LayerKind, LayerSpec, NetworkConfig, Preset, StageConfig,
    DEFAULT_INPUT_SIZE, NUM_CLASSES,
};
pub use ledger::{ledger_hash, ledger_text};
pub use network::{
    BlockUnit, ConvBnUnit, HeadUnit, HubProjection, HubUnit, Network, TapedForward, TensorRole,
};

impl Network {
    pub fn ledger_text(&self) -> String {
        ledger_text(&self.layers)
    }

    pub fn ledger_hash(&self) -> [u8; 32] {
        ledger_hash(&self.layers)
    }

    pub fn count_params(&self) -> usize {
        count_params(self)
    }

    pub fn count_flops(&self, input_size: usize) -> u64 {
        count_flops(self, input_size)
    }
}

/// Ledger file covering both presets, as committed in the repository.
pub fn preset_ledger_file() -> String {
    let mut s = String::from(
        "# Architecture ledger for the L and S presets.\n\
         # Columns: id, kind, name, widths, expanded width, kernel, stride, hub targets.\n\
         # Regenerate with `covidnet ledger`.\n",
    );
    for preset in [Preset::L, Preset::S] {
        let config = NetworkConfig::preset(preset, DEFAULT_INPUT_SIZE).expect("preset");
        let layers = layer_specs(&config).expect("preset layers");
        s.push_str(&format!("\n[preset {preset}]\n"));
        s.push_str(&ledger_text(&layers));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::Mode;
    use crate::tensor::Tensor;

    #[test]
    fn print_budgets() {
        for p in [Preset::L, Preset::S] {
            let net = Network::build_preset(p, 512, 0).unwrap();
            eprintln!("{p}: params {} flops {}", net.count_params(), net.count_flops(512));
        }
    }

    #[test]
    fn presets_are_structurally_valid() {
        for p in [Preset::L, Preset::S] {
            let net = Network::build_preset(p, 64, 1).unwrap();
            check_structure(&net.layers).unwrap();
            for l in &net.layers {
                assert!(l.hub_targets.iter().all(|&t| t > l.id));
            }
        }
    }

    #[test]
    fn resolution_does_not_change_parameters() {
        let a = Network::build_preset(Preset::L, 64, 0).unwrap();
        let b = Network::build_preset(Preset::L, 512, 0).unwrap();
        assert_eq!(a.count_params(), b.count_params());
        assert_eq!(a.ledger_hash(), b.ledger_hash());
        let s = Network::build_preset(Preset::S, 64, 0).unwrap();
        assert_ne!(a.ledger_hash(), s.ledger_hash());
    }

    #[test]
    fn forward_rows_sum_to_one() {
        let mut net = Network::build_preset(Preset::S, 32, 3).unwrap();
        let x = Tensor::from_fn(&[2, 1, 32, 32], |i| ((i * 37) % 101) as f32 / 101.0);
        let p = net.forward(x.clone(), Mode::Train).unwrap();
        assert_eq!(p.shape(), &[2, 3]);
        for row in p.data().chunks(3) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
        let q = net.predict(x).unwrap();
        assert_eq!(q.shape(), &[2, 3]);
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let net = Network::build_preset(Preset::S, 32, 3).unwrap();
        assert!(net.predict(Tensor::zeros(&[1, 1, 16, 16])).is_err());
        assert!(net.predict(Tensor::zeros(&[1, 2, 32, 32])).is_err());
    }

    #[test]
    fn state_round_trip() {
        let mut net = Network::build_preset(Preset::S, 32, 3).unwrap();
        net.forward(Tensor::from_fn(&[2, 1, 32, 32], |i| (i % 7) as f32), Mode::Train)
            .unwrap();
        let state = net.state();
        let mut other = Network::build_preset(Preset::S, 32, 99).unwrap();
        assert_ne!(other, net);
        other.load_state(&state).unwrap();
        assert_eq!(other, net);
    }
}
