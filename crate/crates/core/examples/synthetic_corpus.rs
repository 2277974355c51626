//! Generates the synthetic suffixing language and prints a few sentence pairs.

use morphnmt::synth::SyntheticLangSpec;
use morphnmt::text::Split;

fn main() -> morphnmt::Result<()> {
    let spec = SyntheticLangSpec::default();
    let parts = spec.generate(&[(Split::Train, 2000), (Split::Dev, 200), (Split::Test, 200)])?;
    for part in &parts {
        println!("{}: {} pairs, {} word types", part.corpus.split, part.corpus.len(), part.gold.len());
    }
    let train = &parts[0];
    for (src, tgt) in train.corpus.pairs.iter().take(5) {
        println!("  {src}\n    -> {tgt}");
    }
    for word in train.corpus.pairs[0].1.split(' ') {
        println!("gold {word}: {}", train.gold[word].morphs.join("|"));
    }
    Ok(())
}
