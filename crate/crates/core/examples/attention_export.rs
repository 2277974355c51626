//! Briefly trains an `m` model and writes its morphology-table attention for one test pair.

use morphnmt::eval::export_attention;
use morphnmt::model::{Model, ModelDims, Variant};
use morphnmt::pipeline::{PrepareConfig, Prepared};
use morphnmt::synth::SyntheticLangSpec;
use morphnmt::text::Split;
use morphnmt::train::{train, TrainConfig};

fn main() -> morphnmt::Result<()> {
    let parts = SyntheticLangSpec::default().generate(&[(Split::Train, 2000), (Split::Test, 5)])?;
    let prepared = Prepared::build(&parts[0].corpus, &PrepareConfig::default(), None)?;
    let dims = ModelDims { hidden: 32, attention: 32, readout: 32, ..Default::default() };
    let model = Model::init(prepared.model_config(Variant::M, dims), 3)?;
    let config = TrainConfig { epochs: 12, patience: None, ..Default::default() };
    let (model, _) = train(model, &prepared.annotate(&parts[0].corpus), &[], &prepared.chars, &config)?;

    let (src, tgt) = &parts[1].corpus.pairs[0];
    let dir = std::env::temp_dir();
    let (heatmap, top) = (dir.join("morphnmt-attention.csv"), dir.join("morphnmt-attention-top.csv"));
    let map = export_attention(&model, &prepared.annotate_pair(src, tgt), &prepared.chars, &prepared.labels, &heatmap, &top, 3)?;
    println!("{src} -> {tgt}");
    for (row, ch) in map.rows.iter().enumerate() {
        let best: Vec<String> = map.top_k(row, 2).iter().map(|&(c, w)| format!("{}:{w:.2}", map.columns[c])).collect();
        println!("  {ch:>5} {}", best.join(" "));
    }
    println!("heatmap {} / top-k {}", heatmap.display(), top.display());
    Ok(())
}
