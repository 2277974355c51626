//! Central-difference check of the tape gradients of every model variant.

use morphnmt::autodiff::finite_diff_check;
use morphnmt::model::{AnnotatedExample, Model, ModelConfig, ModelDims, Variant};

fn main() -> morphnmt::Result<()> {
    let example = AnnotatedExample {
        source: vec![2, 5, 1, 3],
        target: vec![1, 4, 6, 3, 2],
        labels: vec![0, 2, 2, 5, 4],
    };
    for variant in Variant::ALL {
        let config = ModelConfig {
            variant,
            source_vocab: 7,
            char_vocab: 9,
            labels: 6,
            dims: ModelDims {
                source_embed: 3,
                char_embed: 3,
                hidden: 4,
                attention: 3,
                readout: 5,
                table_dim: 3,
                decoder_layers: 1,
                init_scale: 1.0,
            },
        };
        let mut model = Model::init(config, 11)?;
        let net = model.net.clone();
        let report = finite_diff_check(
            &mut model.params,
            |ps, tape| Ok(net.forward_sequence(ps, tape, &example, 0.7)?.loss),
            1e-5,
        )?;
        let (name, err) = report.worst().cloned().unwrap_or_default();
        println!(
            "{:>8}: {} entries, max relative error {:.2e} ({name}, {err:.2e})",
            variant.to_string(), report.entries_checked, report.max_rel_error
        );
    }
    Ok(())
}
