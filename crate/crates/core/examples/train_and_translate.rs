//! Trains a small `mo` model on the synthetic task, checkpoints it and translates the test split.

use morphnmt::eval::bleu;
use morphnmt::model::{load_checkpoint, save_checkpoint, Model, ModelDims, Variant};
use morphnmt::pipeline::{PrepareConfig, Prepared};
use morphnmt::synth::SyntheticLangSpec;
use morphnmt::text::Split;
use morphnmt::train::{train, TrainConfig};

fn main() -> morphnmt::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(12);
    let parts = SyntheticLangSpec::default().generate(&[(Split::Train, 2000), (Split::Dev, 100), (Split::Test, 100)])?;
    let prepared = Prepared::build(&parts[0].corpus, &PrepareConfig::default(), None)?;
    let train_set = prepared.annotate(&parts[0].corpus);
    let dev_set = prepared.annotate(&parts[1].corpus);

    let dims = ModelDims { hidden: 48, attention: 48, readout: 48, ..Default::default() };
    let model = Model::init(prepared.model_config(Variant::Mo, dims), 1)?;
    let config = TrainConfig { epochs, ..Default::default() };
    let (model, report) = train(model, &train_set, &dev_set, &prepared.chars, &config)?;
    for row in &report.rows {
        println!("epoch {} train nll {:.4} dev nll {:.4}", row.epoch, row.train_nll, row.dev_nll.unwrap_or(f64::NAN));
    }

    let path = std::env::temp_dir().join("morphnmt-mo.ckpt");
    save_checkpoint(&path, &model, 1, &prepared.vocab_hash())?;
    let (model, header) = load_checkpoint(&path, None, Some(&prepared.vocab_hash()))?;
    println!("reloaded {} checkpoint with {} tensors", header.config.variant, header.manifest.len());

    let (sources, refs): (Vec<&str>, Vec<&str>) = parts[2].corpus.pairs.iter().map(|(s, t)| (s.as_str(), t.as_str())).unzip();
    let hyps = prepared.translate_all(&model, &sources, 5, false)?;
    for i in 0..3 {
        println!("{}\n  ref {}\n  hyp {}", sources[i], refs[i], hyps[i]);
    }
    println!("test BLEU {:.4}", bleu(&hyps, &refs)?.value);
    Ok(())
}
