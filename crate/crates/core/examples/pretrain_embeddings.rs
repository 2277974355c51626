//! Pretrains affix embeddings with the compositional language model and seeds a morphology table.

use morphnmt::embeddings::{init_morph_table, pretrain, EmbeddingConfig};
use morphnmt::pipeline::{PrepareConfig, Prepared};
use morphnmt::synth::SyntheticLangSpec;
use morphnmt::text::Split;

fn main() -> morphnmt::Result<()> {
    let train = SyntheticLangSpec::default().generate(&[(Split::Train, 1000)])?.remove(0);
    let prepared = Prepared::build(&train.corpus, &PrepareConfig::default(), None)?;
    let targets: Vec<&str> = train.corpus.pairs.iter().map(|(_, t)| t.as_str()).collect();

    let config = EmbeddingConfig { epochs: 3, ..Default::default() };
    let (lm, report) = pretrain(&targets, &prepared.segmentations, &prepared.inventory, &config)?;
    for (epoch, nll) in report.epoch_nll.iter().enumerate() {
        println!("epoch {epoch}: nll per token {nll:.4}");
    }

    let table = init_morph_table(&lm, &prepared.labels, 0.08, 1)?;
    println!("table {:?} for labels {:?}", table.shape(), prepared.labels.names());
    let path = std::env::temp_dir().join("morphnmt-affixes.tsv");
    lm.export_tsv(&path)?;
    println!("embeddings written to {}", path.display());
    Ok(())
}
